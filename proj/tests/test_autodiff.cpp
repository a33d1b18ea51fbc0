#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "cssep/autodiff.hpp"

using namespace cssep;
using ad::Mat;
using ad::Var;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
    return m;
}

// Central finite differences of a scalar function of several matrices,
// compared against the analytic gradient at every coordinate.
double fd_check(const std::vector<Mat>& inputs,
                const std::function<Var(const std::vector<Var>&)>& fn, double eps = 1e-6) {
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(ad::param(m));
    Var loss = fn(vars);
    REQUIRE(loss->val.size() == 1);
    ad::backward(loss);

    double worst = 0.0;
    for (std::size_t v = 0; v < inputs.size(); ++v) {
        for (Eigen::Index i = 0; i < inputs[v].rows(); ++i)
            for (Eigen::Index j = 0; j < inputs[v].cols(); ++j) {
                auto eval = [&](double delta) {
                    std::vector<Var> pert;
                    for (std::size_t k = 0; k < inputs.size(); ++k)
                        pert.push_back(ad::constant(inputs[k]));
                    pert[v]->val(i, j) += delta;
                    return fn(pert)->val(0, 0);
                };
                const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                const double an = vars[v]->grad(i, j);
                worst = std::max(worst,
                                 std::abs(an - fd) / std::max(1.0, std::abs(an) + std::abs(fd)));
            }
    }
    return worst;
}

// Weighted sum reduces any matrix output to a scalar with fixed weights.
Var reduce(const Var& x, uint64_t seed) {
    Var w = ad::constant(random_mat(x->val.rows(), x->val.cols(), seed));
    return ad::mean_sq_err(ad::mul(x, w), Mat::Zero(x->val.rows(), x->val.cols()));
}

}  // namespace

TEST_CASE("gradients of elementwise and matrix ops") {
    Mat a = random_mat(4, 5, 1), b = random_mat(4, 5, 2), c = random_mat(5, 3, 3);
    Mat bias = random_mat(1, 5, 4);

    CHECK(fd_check({a, b}, [](const std::vector<Var>& v) {
              return reduce(ad::add(v[0], v[1]), 10);
          }) < 1e-6);
    CHECK(fd_check({a, b}, [](const std::vector<Var>& v) {
              return reduce(ad::sub(v[0], v[1]), 11);
          }) < 1e-6);
    CHECK(fd_check({a, b}, [](const std::vector<Var>& v) {
              return reduce(ad::mul(v[0], v[1]), 12);
          }) < 1e-6);
    CHECK(fd_check({a, bias}, [](const std::vector<Var>& v) {
              return reduce(ad::add_rowvec(v[0], v[1]), 13);
          }) < 1e-6);
    CHECK(fd_check({a}, [](const std::vector<Var>& v) {
              return reduce(ad::scale(v[0], -2.5), 14);
          }) < 1e-6);
    CHECK(fd_check({a, c}, [](const std::vector<Var>& v) {
              return reduce(ad::matmul(v[0], v[1]), 15);
          }) < 1e-6);
    CHECK(fd_check({a}, [](const std::vector<Var>& v) {
              return reduce(ad::transpose(v[0]), 16);
          }) < 1e-6);
}

TEST_CASE("gradients of nonlinearities") {
    Mat a = random_mat(6, 4, 21);
    CHECK(fd_check({a}, [](const std::vector<Var>& v) {
              return reduce(ad::sigmoid(v[0]), 30);
          }) < 1e-5);
    CHECK(fd_check({a}, [](const std::vector<Var>& v) {
              return reduce(ad::gelu(v[0]), 31);
          }) < 1e-5);
    CHECK(fd_check({a}, [](const std::vector<Var>& v) {
              return reduce(ad::row_softmax(v[0]), 32);
          }) < 1e-5);
}

TEST_CASE("gradients of layer norm including gain and bias") {
    Mat x = random_mat(5, 8, 41);
    Mat g = random_mat(1, 8, 42);
    Mat b = random_mat(1, 8, 43);
    CHECK(fd_check({x, g, b}, [](const std::vector<Var>& v) {
              return reduce(ad::layer_norm(v[0], v[1], v[2]), 44);
          }) < 1e-5);
}

TEST_CASE("gradients of shape ops") {
    Mat a = random_mat(4, 3, 51), b = random_mat(4, 6, 52);
    CHECK(fd_check({a, b}, [](const std::vector<Var>& v) {
              return reduce(ad::concat_cols(v[0], v[1]), 53);
          }) < 1e-6);
    CHECK(fd_check({b}, [](const std::vector<Var>& v) {
              return reduce(ad::slice_cols(v[0], 1, 4), 54);
          }) < 1e-6);
    CHECK(fd_check({a}, [](const std::vector<Var>& v) {
              return reduce(ad::repeat_rows(v[0], 2, 7), 55);
          }) < 1e-6);
}

TEST_CASE("gradients of depthwise convolution") {
    Mat x = random_mat(9, 4, 61);
    Mat w = random_mat(5, 4, 62);
    Mat b = random_mat(1, 4, 63);
    CHECK(fd_check({x, w, b}, [](const std::vector<Var>& v) {
              return reduce(ad::depthwise_conv(v[0], v[1], v[2]), 64);
          }) < 1e-5);
}

TEST_CASE("gradients of replace_rows, gather_bias, weighted_sum") {
    Mat x = random_mat(6, 3, 71);
    Mat vec = random_mat(1, 3, 72);
    std::vector<char> mask = {0, 1, 0, 1, 1, 0};
    CHECK(fd_check({x, vec}, [&mask](const std::vector<Var>& v) {
              return reduce(ad::replace_rows(v[0], mask, v[1]), 73);
          }) < 1e-6);

    Mat table = random_mat(1, 8, 74);
    Eigen::MatrixXi idx(3, 3);
    idx << 0, 3, 7, 2, 2, 5, 1, 0, 6;
    CHECK(fd_check({table}, [&idx](const std::vector<Var>& v) {
              return reduce(ad::gather_bias(v[0], idx), 75);
          }) < 1e-6);

    Mat l0 = random_mat(4, 3, 76), l1 = random_mat(4, 3, 77), w = random_mat(1, 2, 78);
    CHECK(fd_check({l0, l1, w}, [](const std::vector<Var>& v) {
              return reduce(ad::weighted_sum({v[0], v[1]}, v[2]), 79);
          }) < 1e-6);
}

TEST_CASE("gradients of the loss heads") {
    Mat pred = random_mat(5, 4, 81);
    Mat target = random_mat(5, 4, 82);
    CHECK(fd_check({pred}, [&target](const std::vector<Var>& v) {
              return ad::mean_sq_err(v[0], target);
          }) < 1e-6);

    Mat logits = random_mat(6, 5, 83);
    std::vector<int> labels = {0, 3, 1, 4, 2, 0};
    std::vector<char> mask = {1, 0, 1, 1, 0, 1};
    CHECK(fd_check({logits}, [&](const std::vector<Var>& v) {
              return ad::masked_cross_entropy(v[0], labels, mask);
          }) < 1e-5);
}

TEST_CASE("mean_sq_err value matches the closed form") {
    Mat pred = random_mat(3, 4, 91), target = random_mat(3, 4, 92);
    Var loss = ad::mean_sq_err(ad::constant(pred), target);
    CHECK(loss->val(0, 0) ==
          doctest::Approx((pred - target).squaredNorm() / pred.size()).epsilon(1e-12));
}

TEST_CASE("diamond-shaped graphs accumulate gradients once") {
    // y = x*x + x*x reused through the same node: dy/dx = 4x
    Mat xv(1, 1);
    xv << 1.5;
    Var x = ad::param(xv);
    Var sq = ad::mul(x, x);
    Var y = ad::add(sq, sq);
    ad::backward(y);
    CHECK(x->grad(0, 0) == doctest::Approx(4.0 * 1.5).epsilon(1e-12));
}

TEST_CASE("constants are not differentiated and carry no tape") {
    Var c = ad::constant(random_mat(3, 3, 101));
    Var p = ad::param(random_mat(3, 3, 102));
    Var y = ad::mul(c, p);
    CHECK_FALSE(c->requires_grad);
    CHECK(y->requires_grad);
    ad::backward(reduce(y, 103));
    CHECK(c->grad.size() == 0);

    // all-constant subgraphs build no backprop closure
    Var z = ad::mul(c, ad::constant(random_mat(3, 3, 104)));
    CHECK_FALSE(z->requires_grad);
    CHECK_FALSE(static_cast<bool>(z->backprop));
}

TEST_CASE("backward requires a scalar root") {
    Var p = ad::param(random_mat(2, 2, 111));
    CHECK_THROWS_AS(ad::backward(p), std::invalid_argument);
}

TEST_CASE("AdamW single step matches the hand-computed update") {
    Mat pv(1, 2);
    pv << 0.5, -0.25;
    Var p = ad::param(pv);
    ad::AdamW opt({p}, 0.01, 0.9, 0.999, 1e-8, 0.0);

    Mat target = Mat::Zero(1, 2);
    Var loss = ad::mean_sq_err(p, target);
    ad::backward(loss);
    Mat g = p->grad;  // 2*(p - 0)/2 = p
    CHECK(g(0, 0) == doctest::Approx(0.5));

    opt.step();
    // bias-corrected first step: update = lr * g / (|g| + eps)
    for (int j = 0; j < 2; ++j) {
        const double m_hat = g(0, j);                    // m / (1 - beta1)
        const double v_hat = g(0, j) * g(0, j);          // v / (1 - beta2)
        const double expect = pv(0, j) - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
        CHECK(p->val(0, j) == doctest::Approx(expect).epsilon(1e-9));
    }
    CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);  // grads cleared by step
}

TEST_CASE("AdamW applies decoupled weight decay") {
    Mat pv(1, 1);
    pv << 2.0;
    Var p = ad::param(pv);
    ad::AdamW opt({p}, 0.1, 0.9, 0.999, 1e-8, 0.01);
    p->ensure_grad();  // zero gradient: only decay moves the weight
    opt.step();
    CHECK(p->val(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("AdamW skips frozen parameters") {
    Var p = ad::param(random_mat(2, 2, 121));
    Mat before = p->val;
    p->requires_grad = false;
    ad::AdamW opt({p}, 0.1);
    p->ensure_grad();
    p->grad.setOnes();
    opt.step();
    CHECK((p->val - before).cwiseAbs().maxCoeff() == 0.0);
}
