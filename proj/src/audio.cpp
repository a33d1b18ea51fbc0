#include "cssep/audio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace cssep {

void validate(const AudioBuffer& audio) {
    if (audio.sample_rate <= 0)
        throw std::invalid_argument("AudioBuffer: sample_rate must be positive");
    for (double s : audio.samples)
        if (!std::isfinite(s))
            throw std::invalid_argument("AudioBuffer: non-finite sample");
}

double energy(const std::vector<double>& x) {
    double e = 0.0;
    for (double v : x) e += v * v;
    return e;
}

double rms(const std::vector<double>& x) {
    if (x.empty()) return 0.0;
    return std::sqrt(energy(x) / static_cast<double>(x.size()));
}

namespace {

template <typename T>
T read_le(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open WAV file: " + path);

    char tag[4];
    in.read(tag, 4);
    if (std::memcmp(tag, "RIFF", 4) != 0) throw std::runtime_error("not a RIFF file: " + path);
    read_le<uint32_t>(in);  // riff size
    in.read(tag, 4);
    if (std::memcmp(tag, "WAVE", 4) != 0) throw std::runtime_error("not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    AudioBuffer audio;

    while (in.read(tag, 4)) {
        uint32_t chunk_size = read_le<uint32_t>(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = read_le<uint16_t>(in);
            channels = read_le<uint16_t>(in);
            rate = read_le<uint32_t>(in);
            read_le<uint32_t>(in);  // byte rate
            read_le<uint16_t>(in);  // block align
            bits = read_le<uint16_t>(in);
            if (chunk_size > 16) in.seekg(chunk_size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("WAV data before fmt chunk: " + path);
            if (channels != 1) throw std::runtime_error("WAV must be mono: " + path);
            if (format == 1 && bits == 16) {
                size_t n = chunk_size / 2;
                audio.samples.resize(n);
                for (size_t i = 0; i < n; ++i)
                    audio.samples[i] = read_le<int16_t>(in) / 32768.0;
            } else if (format == 3 && bits == 32) {
                size_t n = chunk_size / 4;
                audio.samples.resize(n);
                for (size_t i = 0; i < n; ++i)
                    audio.samples[i] = read_le<float>(in);
            } else {
                throw std::runtime_error("unsupported WAV encoding (need PCM16 or float32): " + path);
            }
            audio.sample_rate = static_cast<int>(rate);
            return audio;
        } else {
            in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
        }
    }
    throw std::runtime_error("WAV has no data chunk: " + path);
}

void write_wav(const std::string& path, const AudioBuffer& audio, int bits) {
    if (bits != 16 && bits != 32) throw std::invalid_argument("write_wav: bits must be 16 or 32");
    validate(audio);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write WAV file: " + path);

    const uint32_t n = static_cast<uint32_t>(audio.samples.size());
    const uint16_t bytes = static_cast<uint16_t>(bits / 8);
    const uint32_t data_size = n * bytes;

    out.write("RIFF", 4);
    write_le<uint32_t>(out, 36 + data_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le<uint32_t>(out, 16);
    write_le<uint16_t>(out, bits == 16 ? 1 : 3);
    write_le<uint16_t>(out, 1);
    write_le<uint32_t>(out, static_cast<uint32_t>(audio.sample_rate));
    write_le<uint32_t>(out, static_cast<uint32_t>(audio.sample_rate) * bytes);
    write_le<uint16_t>(out, bytes);
    write_le<uint16_t>(out, static_cast<uint16_t>(bits));
    out.write("data", 4);
    write_le<uint32_t>(out, data_size);

    if (bits == 16) {
        for (double s : audio.samples) {
            double c = std::max(-1.0, std::min(1.0, s));
            write_le<int16_t>(out, static_cast<int16_t>(std::lround(c * 32767.0)));
        }
    } else {
        for (double s : audio.samples) write_le<float>(out, static_cast<float>(s));
    }
}

}  // namespace cssep
