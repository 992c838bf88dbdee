#include "crecl/nn.hpp"

#include <cmath>

namespace crecl {

void init_normal(Mat& m, double scale, Rng& rng)
{
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = scale * rng.normal();
        }
    }
}

Adam::Adam(std::vector<Parameter*> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::zero_grad()
{
    for (auto* p : params_) {
        p->zero_grad();
    }
}

void Adam::step()
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

double gelu(double x)
{
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

double gelu_grad(double x)
{
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
    return cdf + x * pdf;
}

Vec gelu(const Vec& x)
{
    return x.unaryExpr([](double v) { return gelu(v); });
}

Vec gelu_grad(const Vec& x)
{
    return x.unaryExpr([](double v) { return gelu_grad(v); });
}

Vec layer_norm(const Vec& x, LayerNormCache* cache)
{
    const double n = static_cast<double>(x.size());
    const double mean = x.mean();
    const Vec centered = x.array() - mean;
    const double var = centered.squaredNorm() / n;
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    Vec y = centered * inv_std;
    if (cache) {
        cache->normalized = y;
        cache->inv_std = inv_std;
    }
    return y;
}

Vec layer_norm_backward(const LayerNormCache& cache, const Vec& grad_out)
{
    const double n = static_cast<double>(grad_out.size());
    const Vec& y = cache.normalized;
    const double mean_g = grad_out.mean();
    const double mean_gy = grad_out.dot(y) / n;
    return cache.inv_std * (grad_out.array() - mean_g - y.array() * mean_gy).matrix();
}

Vec softmax(const Vec& logits)
{
    const double mx = logits.maxCoeff();
    Vec e = (logits.array() - mx).exp();
    return e / e.sum();
}

double log_sum_exp(const Vec& x)
{
    const double mx = x.maxCoeff();
    return mx + std::log((x.array() - mx).exp().sum());
}

Vec l2_normalize(const Vec& x, double* norm)
{
    const double n = x.norm();
    if (norm) {
        *norm = n;
    }
    return x / n;
}

Vec l2_normalize_backward(const Vec& y, double norm, const Vec& grad_y)
{
    return (grad_y - y * y.dot(grad_y)) / norm;
}

} // namespace crecl
