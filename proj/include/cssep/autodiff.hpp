#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace cssep::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape node. Ops build closures only when a parent requires
// gradients, so forward passes over frozen parameters carry no tape.
struct Node {
    Mat val;
    Mat grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.rows() != val.rows() || grad.cols() != val.cols())
            grad = Mat::Zero(val.rows(), val.cols());
    }
};

using Var = std::shared_ptr<Node>;

Var constant(Mat v);
Var param(Mat v);

// Scalar roots only (1x1).
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var add_rowvec(const Var& a, const Var& bias);  // bias: 1 x C
Var scale(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var row_softmax(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);

// Depthwise 1-D convolution along rows (time), zero padded, odd kernel.
// x: T x C, w: K x C, bias: 1 x C.
Var depthwise_conv(const Var& x, const Var& w, const Var& bias);

// Rows where mask[t] != 0 are replaced by vec (1 x C); others pass through.
Var replace_rows(const Var& x, const std::vector<char>& mask, const Var& vec);

// Bias lookup: out(i,j) = table(0, idx(i,j)). Used for bucketed relative
// position bias in attention.
Var gather_bias(const Var& table, const Eigen::MatrixXi& idx);

// sum_l weights(0,l) * layers[l]; weights already normalized by the caller.
Var weighted_sum(const std::vector<Var>& layers, const Var& weights);

// Each row repeated `times`; output trimmed or last-row-padded to target_rows.
Var repeat_rows(const Var& x, int times, Eigen::Index target_rows);

Var mean_sq_err(const Var& pred, const Mat& target);          // -> 1x1
Var masked_cross_entropy(const Var& logits, const std::vector<int>& labels,
                         const std::vector<char>& mask);      // -> 1x1, mean over masked
Var add_scalar_vars(const std::vector<Var>& terms);           // 1x1 sum

// AdamW over a fixed parameter set. Step order is deterministic.
class AdamW {
public:
    explicit AdamW(std::vector<Var> params, double lr = 1e-3, double beta1 = 0.9,
                   double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    // Applies grads of params with requires_grad set, then zeroes all grads.
    void step();
    void zero_grad();

private:
    std::vector<Var> params_;
    std::vector<Mat> m_, v_;
    double lr_, beta1_, beta2_, eps_, wd_;
    long t_ = 0;
};

}  // namespace cssep::ad
