#include "cssep/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace cssep::ad {

namespace {

Var make_op(Mat val, std::vector<Var> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    bool any = false;
    for (const auto& p : parents)
        if (p->requires_grad) any = true;
    n->requires_grad = any;
    if (any) {
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    return n;
}

Var param(Mat v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    if (root->val.rows() != 1 || root->val.cols() != 1)
        throw std::invalid_argument("backward: root must be scalar");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_op(a->val + b->val, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad; }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_op(a->val - b->val, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (b->requires_grad) { b->ensure_grad(); b->grad -= n.grad; }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    return make_op(a->val.cwiseProduct(b->val), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad.cwiseProduct(b->val); }
        if (b->requires_grad) { b->ensure_grad(); b->grad += n.grad.cwiseProduct(a->val); }
    });
}

Var add_rowvec(const Var& a, const Var& bias) {
    if (bias->val.rows() != 1 || bias->val.cols() != a->val.cols())
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
    Mat v = a->val;
    v.rowwise() += bias->val.row(0);
    return make_op(std::move(v), {a, bias}, [a, bias](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad; }
        if (bias->requires_grad) { bias->ensure_grad(); bias->grad.row(0) += n.grad.colwise().sum(); }
    });
}

Var scale(const Var& a, double s) {
    return make_op(a->val * s, {a}, [a, s](Node& n) {
        a->ensure_grad();
        a->grad += n.grad * s;
    });
}

Var matmul(const Var& a, const Var& b) {
    if (a->val.cols() != b->val.rows())
        throw std::invalid_argument("matmul: inner dimension mismatch");
    return make_op(a->val * b->val, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) { a->ensure_grad(); a->grad += n.grad * b->val.transpose(); }
        if (b->requires_grad) { b->ensure_grad(); b->grad += a->val.transpose() * n.grad; }
    });
}

Var transpose(const Var& a) {
    return make_op(a->val.transpose(), {a}, [a](Node& n) {
        a->ensure_grad();
        a->grad += n.grad.transpose();
    });
}

Var row_softmax(const Var& a) {
    Mat y(a->val.rows(), a->val.cols());
    for (Eigen::Index r = 0; r < a->val.rows(); ++r) {
        Eigen::RowVectorXd row = a->val.row(r);
        double m = row.maxCoeff();
        Eigen::RowVectorXd e = (row.array() - m).exp();
        y.row(r) = e / e.sum();
    }
    return make_op(y, {a}, [a, y](Node& n) {
        a->ensure_grad();
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double dot = n.grad.row(r).dot(y.row(r));
            a->grad.row(r) += (y.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
        }
    });
}

Var sigmoid(const Var& a) {
    Mat y = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
    return make_op(y, {a}, [a, y](Node& n) {
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix());
    });
}

namespace {
constexpr double inv_sqrt2 = 0.7071067811865475;
constexpr double inv_sqrt2pi = 0.3989422804014327;
}  // namespace

Var gelu(const Var& a) {
    Mat y = a->val.unaryExpr(
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    return make_op(y, {a}, [a](Node& n) {
        a->ensure_grad();
        Mat d = a->val.unaryExpr([](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
        a->grad += n.grad.cwiseProduct(d);
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    const Eigen::Index T = x->val.rows(), C = x->val.cols();
    if (gain->val.cols() != C || bias->val.cols() != C)
        throw std::invalid_argument("layer_norm: gain/bias must be 1 x C");
    Mat xhat(T, C);
    Eigen::VectorXd inv_std(T);
    for (Eigen::Index r = 0; r < T; ++r) {
        double mu = x->val.row(r).mean();
        double var = (x->val.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x->val.row(r).array() - mu) * inv_std(r);
    }
    Mat y = xhat;
    for (Eigen::Index r = 0; r < T; ++r)
        y.row(r) = xhat.row(r).cwiseProduct(gain->val.row(0)) + bias->val.row(0);
    return make_op(y, {x, gain, bias}, [x, gain, bias, xhat, inv_std](Node& n) {
        const Eigen::Index T = xhat.rows(), C = xhat.cols();
        if (gain->requires_grad) {
            gain->ensure_grad();
            gain->grad.row(0) += n.grad.cwiseProduct(xhat).colwise().sum();
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += n.grad.colwise().sum();
        }
        if (x->requires_grad) {
            x->ensure_grad();
            for (Eigen::Index r = 0; r < T; ++r) {
                Eigen::RowVectorXd dxhat = n.grad.row(r).cwiseProduct(gain->val.row(0));
                double m1 = dxhat.mean();
                double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
                x->grad.row(r) +=
                    inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
            }
        }
        (void)C;
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a->val.rows() != b->val.rows())
        throw std::invalid_argument("concat_cols: row mismatch");
    Mat v(a->val.rows(), a->val.cols() + b->val.cols());
    v << a->val, b->val;
    return make_op(std::move(v), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad += n.grad.leftCols(a->val.cols());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad += n.grad.rightCols(b->val.cols());
        }
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n_cols) {
    if (start < 0 || start + n_cols > a->val.cols())
        throw std::invalid_argument("slice_cols: out of range");
    return make_op(a->val.middleCols(start, n_cols), {a}, [a, start, n_cols](Node& n) {
        a->ensure_grad();
        a->grad.middleCols(start, n_cols) += n.grad;
    });
}

Var depthwise_conv(const Var& x, const Var& w, const Var& bias) {
    const Eigen::Index T = x->val.rows(), C = x->val.cols(), K = w->val.rows();
    if (w->val.cols() != C || bias->val.cols() != C)
        throw std::invalid_argument("depthwise_conv: channel mismatch");
    if (K % 2 == 0) throw std::invalid_argument("depthwise_conv: kernel must be odd");
    const Eigen::Index H = K / 2;
    Mat y = Mat::Zero(T, C);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index k = 0; k < K; ++k) {
            Eigen::Index s = t + k - H;
            if (s >= 0 && s < T) y.row(t) += x->val.row(s).cwiseProduct(w->val.row(k));
        }
    y.rowwise() += bias->val.row(0);
    return make_op(std::move(y), {x, w, bias}, [x, w, bias, T, C, K, H](Node& n) {
        if (bias->requires_grad) {
            bias->ensure_grad();
            bias->grad.row(0) += n.grad.colwise().sum();
        }
        if (w->requires_grad) w->ensure_grad();
        if (x->requires_grad) x->ensure_grad();
        for (Eigen::Index t = 0; t < T; ++t)
            for (Eigen::Index k = 0; k < K; ++k) {
                Eigen::Index s = t + k - H;
                if (s < 0 || s >= T) continue;
                if (w->requires_grad)
                    w->grad.row(k) += n.grad.row(t).cwiseProduct(x->val.row(s));
                if (x->requires_grad)
                    x->grad.row(s) += n.grad.row(t).cwiseProduct(w->val.row(k));
            }
        (void)C;
    });
}

Var replace_rows(const Var& x, const std::vector<char>& mask, const Var& vec) {
    if (static_cast<Eigen::Index>(mask.size()) != x->val.rows())
        throw std::invalid_argument("replace_rows: mask length mismatch");
    if (vec->val.rows() != 1 || vec->val.cols() != x->val.cols())
        throw std::invalid_argument("replace_rows: vec must be 1 x C");
    Mat y = x->val;
    for (Eigen::Index t = 0; t < y.rows(); ++t)
        if (mask[t]) y.row(t) = vec->val.row(0);
    return make_op(std::move(y), {x, vec}, [x, vec, mask](Node& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (Eigen::Index t = 0; t < n.grad.rows(); ++t)
                if (!mask[t]) x->grad.row(t) += n.grad.row(t);
        }
        if (vec->requires_grad) {
            vec->ensure_grad();
            for (Eigen::Index t = 0; t < n.grad.rows(); ++t)
                if (mask[t]) vec->grad.row(0) += n.grad.row(t);
        }
    });
}

Var gather_bias(const Var& table, const Eigen::MatrixXi& idx) {
    if (table->val.rows() != 1)
        throw std::invalid_argument("gather_bias: table must be 1 x n_buckets");
    Mat y(idx.rows(), idx.cols());
    for (Eigen::Index r = 0; r < idx.rows(); ++r)
        for (Eigen::Index c = 0; c < idx.cols(); ++c)
            y(r, c) = table->val(0, idx(r, c));
    return make_op(std::move(y), {table}, [table, idx](Node& n) {
        table->ensure_grad();
        for (Eigen::Index r = 0; r < idx.rows(); ++r)
            for (Eigen::Index c = 0; c < idx.cols(); ++c)
                table->grad(0, idx(r, c)) += n.grad(r, c);
    });
}

Var weighted_sum(const std::vector<Var>& layers, const Var& weights) {
    if (layers.empty()) throw std::invalid_argument("weighted_sum: no layers");
    if (weights->val.rows() != 1 ||
        weights->val.cols() != static_cast<Eigen::Index>(layers.size()))
        throw std::invalid_argument("weighted_sum: weights must be 1 x n_layers");
    Mat y = Mat::Zero(layers[0]->val.rows(), layers[0]->val.cols());
    for (std::size_t l = 0; l < layers.size(); ++l) y += weights->val(0, l) * layers[l]->val;
    std::vector<Var> parents = layers;
    parents.push_back(weights);
    return make_op(std::move(y), std::move(parents), [layers, weights](Node& n) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l]->requires_grad) {
                layers[l]->ensure_grad();
                layers[l]->grad += weights->val(0, l) * n.grad;
            }
            if (weights->requires_grad) {
                weights->ensure_grad();
                weights->grad(0, l) += n.grad.cwiseProduct(layers[l]->val).sum();
            }
        }
    });
}

Var repeat_rows(const Var& x, int times, Eigen::Index target_rows) {
    if (times < 1) throw std::invalid_argument("repeat_rows: times must be >= 1");
    const Eigen::Index T = x->val.rows();
    Mat y(target_rows, x->val.cols());
    std::vector<Eigen::Index> src(target_rows);
    for (Eigen::Index r = 0; r < target_rows; ++r) {
        Eigen::Index s = r / times;
        src[r] = std::min(s, T - 1);
        y.row(r) = x->val.row(src[r]);
    }
    return make_op(std::move(y), {x}, [x, src](Node& n) {
        x->ensure_grad();
        for (Eigen::Index r = 0; r < n.grad.rows(); ++r)
            x->grad.row(src[r]) += n.grad.row(r);
    });
}

Var mean_sq_err(const Var& pred, const Mat& target) {
    if (pred->val.rows() != target.rows() || pred->val.cols() != target.cols())
        throw std::invalid_argument("mean_sq_err: shape mismatch");
    const double n = static_cast<double>(target.size());
    Mat diff = pred->val - target;
    Mat v(1, 1);
    v(0, 0) = diff.squaredNorm() / n;
    return make_op(std::move(v), {pred}, [pred, diff, n](Node& nn) {
        pred->ensure_grad();
        pred->grad += (2.0 / n) * nn.grad(0, 0) * diff;
    });
}

Var masked_cross_entropy(const Var& logits, const std::vector<int>& labels,
                         const std::vector<char>& mask) {
    const Eigen::Index T = logits->val.rows(), K = logits->val.cols();
    if (static_cast<Eigen::Index>(labels.size()) != T ||
        static_cast<Eigen::Index>(mask.size()) != T)
        throw std::invalid_argument("masked_cross_entropy: label/mask length mismatch");
    long n_masked = 0;
    for (char m : mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw std::invalid_argument("masked_cross_entropy: empty mask");

    Mat probs(T, K);
    double loss = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        Eigen::RowVectorXd row = logits->val.row(t);
        double m = row.maxCoeff();
        Eigen::RowVectorXd e = (row.array() - m).exp();
        probs.row(t) = e / e.sum();
        if (mask[t]) {
            if (labels[t] < 0 || labels[t] >= K)
                throw std::invalid_argument("masked_cross_entropy: label out of range");
            loss -= std::log(std::max(probs(t, labels[t]), 1e-300));
        }
    }
    Mat v(1, 1);
    v(0, 0) = loss / static_cast<double>(n_masked);
    return make_op(std::move(v), {logits},
                   [logits, probs, labels, mask, n_masked](Node& n) {
        logits->ensure_grad();
        const double s = n.grad(0, 0) / static_cast<double>(n_masked);
        for (Eigen::Index t = 0; t < probs.rows(); ++t) {
            if (!mask[t]) continue;
            logits->grad.row(t) += s * probs.row(t);
            logits->grad(t, labels[t]) -= s;
        }
    });
}

Var add_scalar_vars(const std::vector<Var>& terms) {
    if (terms.empty()) throw std::invalid_argument("add_scalar_vars: empty");
    Mat v = Mat::Zero(1, 1);
    for (const auto& t : terms) {
        if (t->val.rows() != 1 || t->val.cols() != 1)
            throw std::invalid_argument("add_scalar_vars: non-scalar term");
        v(0, 0) += t->val(0, 0);
    }
    return make_op(std::move(v), terms, [terms](Node& n) {
        for (const auto& t : terms)
            if (t->requires_grad) {
                t->ensure_grad();
                t->grad(0, 0) += n.grad(0, 0);
            }
    });
}

AdamW::AdamW(std::vector<Var> params, double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      wd_(weight_decay) {
    for (const auto& p : params_) {
        m_.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
        v_.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        Mat mhat = m_[i] / bc1;
        Mat vhat = v_[i] / bc2;
        p.val -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
        if (wd_ > 0.0) p.val -= lr_ * wd_ * p.val;
    }
    zero_grad();
}

void AdamW::zero_grad() {
    for (const auto& p : params_) {
        p->ensure_grad();
        p->grad.setZero();
    }
}

}  // namespace cssep::ad
