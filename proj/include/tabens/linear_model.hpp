#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "core.hpp"

namespace tabens {

// Multinomial logistic regression trained by full-batch gradient descent.
// Shared by the builtin linear learner and the stacking meta-learner.
struct SoftmaxRegressionOptions {
    double l2 = 1e-4;
    int max_epochs = 1000;
    double grad_tolerance = 1e-6;
    // 0 -> zero init; otherwise N(0, 0.01^2) init drawn from this seed.
    std::uint64_t init_seed = 0;
    double init_std = 0.01;
};

class SoftmaxRegression {
public:
    SoftmaxRegression() = default;
    explicit SoftmaxRegression(Matrix weights) : w_(std::move(weights)) {}

    // C x (d + 1); the last column is the bias.
    const Matrix& weights() const noexcept { return w_; }
    std::size_t classes() const noexcept { return w_.rows(); }
    std::size_t inputs() const noexcept { return w_.cols() == 0 ? 0 : w_.cols() - 1; }
    int epochs_run() const noexcept { return epochs_; }

    ProbabilityMatrix predict_proba(const Matrix& x) const {
        require(!w_.empty(), ErrorCode::NotFitted, "softmax regression not trained");
        require(x.cols() == inputs(), ErrorCode::WidthMismatch,
                "expected " + std::to_string(inputs()) + " inputs, got " + std::to_string(x.cols()));
        Matrix p(x.rows(), classes());
        std::vector<double> logits(classes());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            logits_for(x.row(i), logits);
            softmax_into(logits, p.row(i));
        }
        return ProbabilityMatrix(std::move(p));
    }

    static SoftmaxRegression train(const Matrix& x, std::span<const int> y, int class_count,
                                   const SoftmaxRegressionOptions& opt = {});

    static void softmax_into(std::span<const double> logits, std::span<double> out) {
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double s = 0.0;
        for (std::size_t c = 0; c < logits.size(); ++c) {
            out[c] = std::exp(logits[c] - mx);
            s += out[c];
        }
        for (double& v : out) v /= s;
    }

private:
    void logits_for(std::span<const double> xi, std::vector<double>& logits) const {
        const std::size_t d = inputs();
        for (std::size_t c = 0; c < classes(); ++c) {
            auto wc = w_.row(c);
            double z = wc[d];
            for (std::size_t j = 0; j < d; ++j) z += wc[j] * xi[j];
            logits[c] = z;
        }
    }

    Matrix w_;
    int epochs_ = 0;
};

namespace detail {

// Largest eigenvalue of X~^T X~ / n (X~ = [X | 1]) by power iteration; sets
// the gradient step so that descent is stable without a line search.
inline double gram_top_eigenvalue(const Matrix& x) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols() + 1;
    std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> xv(n), next(d);
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            auto r = x.row(i);
            double s = v[d - 1];
            for (std::size_t j = 0; j + 1 < d; ++j) s += r[j] * v[j];
            xv[i] = s;
        }
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = x.row(i);
            for (std::size_t j = 0; j + 1 < d; ++j) next[j] += r[j] * xv[i];
            next[d - 1] += xv[i];
        }
        double norm = 0.0;
        for (double& e : next) {
            e /= static_cast<double>(n);
            norm += e * e;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        const double prev = lambda;
        lambda = norm;
        for (std::size_t j = 0; j < d; ++j) v[j] = next[j] / norm;
        if (std::abs(lambda - prev) <= 1e-10 * lambda) break;
    }
    return lambda;
}

}  // namespace detail

inline SoftmaxRegression SoftmaxRegression::train(const Matrix& x, std::span<const int> y,
                                                  int class_count,
                                                  const SoftmaxRegressionOptions& opt) {
    require(x.rows() > 0, ErrorCode::SingularData, "cannot train on an empty matrix");
    require(x.rows() == y.size(), ErrorCode::ShapeMismatch, "rows/labels mismatch");
    require(class_count >= 1, ErrorCode::InvalidArgument, "class_count must be positive");
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    const auto C = static_cast<std::size_t>(class_count);
    for (int yi : y)
        require(yi >= 0 && yi < class_count, ErrorCode::InvalidArgument, "label outside [0, C)");

    SoftmaxRegression model;
    model.w_ = Matrix(C, d + 1, 0.0);
    if (opt.init_seed != 0) {
        SplitMix64 g(derive_seed(opt.init_seed, "softmax-init"));
        for (double& w : model.w_.data()) w = opt.init_std * g.normal();
    }

    // Softmax cross-entropy curvature is bounded by 1/2 times the Gram matrix.
    const double lipschitz = 0.5 * detail::gram_top_eigenvalue(x) + opt.l2;
    const double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    Matrix grad(C, d + 1);
    std::vector<double> logits(C), p(C);
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        std::fill(grad.data().begin(), grad.data().end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto xi = x.row(i);
            model.logits_for(xi, logits);
            softmax_into(logits, p);
            p[static_cast<std::size_t>(y[i])] -= 1.0;
            for (std::size_t c = 0; c < C; ++c) {
                auto gc = grad.row(c);
                const double r = p[c];
                for (std::size_t j = 0; j < d; ++j) gc[j] += r * xi[j];
                gc[d] += r;
            }
        }
        double gmax = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            auto gc = grad.row(c);
            auto wc = model.w_.row(c);
            for (std::size_t j = 0; j <= d; ++j) {
                gc[j] *= inv_n;
                if (j < d) gc[j] += opt.l2 * wc[j];
                gmax = std::max(gmax, std::abs(gc[j]));
            }
        }
        model.epochs_ = epoch + 1;
        if (gmax < opt.grad_tolerance) break;
        for (std::size_t k = 0; k < model.w_.data().size(); ++k)
            model.w_.data()[k] -= step * grad.data()[k];
    }
    return model;
}

}  // namespace tabens
