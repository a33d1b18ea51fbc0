#pragma once

#include <cstdint>

#include "cssep/audio.hpp"

namespace cssep {

// Tone-sequence "speakers" for desk-scale corpora. Class 0 occupies a low
// frequency band, class 1 a high band, so an ideal magnitude mask separates
// their mixtures.
AudioBuffer synth_utterance(int speaker_class, double duration_s, int sample_rate = 16000,
                            uint64_t seed = 0);

AudioBuffer white_noise(double duration_s, double amplitude = 0.05, int sample_rate = 16000,
                        uint64_t seed = 0);

}  // namespace cssep
