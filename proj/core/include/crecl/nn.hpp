#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crecl/rng.hpp"

namespace crecl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// A trainable tensor and its accumulated gradient.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    Parameter() = default;
    Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Fills with N(0, scale^2).
void init_normal(Mat& m, double scale, Rng& rng);

/// Adam with bias correction. Moment state is owned by the optimizer, so a
/// fresh optimizer starts from zero moments.
class Adam {
public:
    Adam(std::vector<Parameter*> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void zero_grad();
    void step();

    double learning_rate() const { return lr_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
};

/// Exact (erf-based) GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);
Vec gelu(const Vec& x);
Vec gelu_grad(const Vec& x);

/// Layer normalization without affine parameters.
struct LayerNormCache {
    Vec normalized;
    double inv_std = 0.0;
};
inline constexpr double kLayerNormEps = 1e-5;
Vec layer_norm(const Vec& x, LayerNormCache* cache = nullptr);
Vec layer_norm_backward(const LayerNormCache& cache, const Vec& grad_out);

Vec softmax(const Vec& logits);
double log_sum_exp(const Vec& x);

/// Euclidean normalization; `norm` receives the pre-normalization length.
Vec l2_normalize(const Vec& x, double* norm = nullptr);
/// Gradient through y = x / |x| given y and |x|.
Vec l2_normalize_backward(const Vec& y, double norm, const Vec& grad_y);

/// Probability floor inside logarithms; 0 * log 0 is taken as 0.
inline constexpr double kProbFloor = 1e-12;

} // namespace crecl
