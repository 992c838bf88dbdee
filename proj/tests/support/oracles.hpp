#pragma once

// Reference computations used only by the tests. They are written
// independently of the library (plain loops, exhaustive search) so that a
// bug in the library cannot also hide in the expected values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "crecl/corpus.hpp"
#include "crecl/nn.hpp"
#include "crecl/rng.hpp"

namespace crecl::oracle {

inline Instance make_instance(std::string id, std::vector<std::string> tokens, Span head, Span tail,
                              std::string relation)
{
    Instance inst;
    inst.id = std::move(id);
    inst.tokens = std::move(tokens);
    inst.head = head;
    inst.tail = tail;
    inst.relation = std::move(relation);
    return inst;
}

// KL(p || q) with 0 log 0 = 0.
inline double kl(const std::vector<double>& p, const std::vector<double>& q)
{
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            s += p[i] * std::log(p[i] / q[i]);
        }
    }
    return s;
}

inline double softmax_nll(const std::vector<double>& logits, std::size_t label)
{
    double m = -std::numeric_limits<double>::infinity();
    for (const double z : logits) {
        m = std::max(m, z);
    }
    double s = 0.0;
    for (const double z : logits) {
        s += std::exp(z - m);
    }
    return -(logits[label] - m - std::log(s));
}

struct BlockError {
    std::string name;
    double relative = 0.0;
    double analytic_norm = 0.0;
};

// Central finite differences over every entry of every parameter block.
// `loss` must be a pure function of the parameter values; `accumulate`
// must add the analytic gradient of the same loss into the grads.
inline std::vector<BlockError> gradient_errors(const std::vector<Parameter*>& params,
                                               const std::function<double()>& loss,
                                               const std::function<void()>& accumulate, double eps = 1e-5)
{
    for (auto* p : params) {
        p->zero_grad();
    }
    accumulate();
    std::vector<BlockError> out;
    for (auto* p : params) {
        Mat numeric = Mat::Zero(p->value.rows(), p->value.cols());
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data()[i];
            p->value.data()[i] = saved + eps;
            const double up = loss();
            p->value.data()[i] = saved - eps;
            const double down = loss();
            p->value.data()[i] = saved;
            numeric.data()[i] = (up - down) / (2.0 * eps);
        }
        const double denom = std::max(p->grad.norm(), numeric.norm());
        const double rel = denom < 1e-12 ? 0.0 : (p->grad - numeric).norm() / denom;
        out.push_back({p->name, rel, p->grad.norm()});
    }
    return out;
}

struct Partition {
    std::vector<int> assignment;
    std::vector<Vec> centroids;
    double inertia = std::numeric_limits<double>::infinity();
};

// Minimum-inertia partition of the points into exactly k nonempty clusters,
// by enumerating all k^n labelings.
inline Partition optimal_partition(const std::vector<Vec>& points, int k)
{
    const std::size_t n = points.size();
    std::vector<int> labels(n, 0);
    Partition best;
    while (true) {
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (const int l : labels) {
            ++counts[static_cast<std::size_t>(l)];
        }
        if (std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; })) {
            std::vector<Vec> centroids(static_cast<std::size_t>(k), Vec::Zero(points.front().size()));
            for (std::size_t i = 0; i < n; ++i) {
                centroids[static_cast<std::size_t>(labels[i])] += points[i];
            }
            for (int c = 0; c < k; ++c) {
                centroids[static_cast<std::size_t>(c)] /= counts[static_cast<std::size_t>(c)];
            }
            double inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                inertia += (points[i] - centroids[static_cast<std::size_t>(labels[i])]).squaredNorm();
            }
            if (inertia < best.inertia - 1e-12) {
                best = {labels, centroids, inertia};
            }
        }
        std::size_t pos = 0;
        while (pos < n && labels[pos] == k - 1) {
            labels[pos] = 0;
            ++pos;
        }
        if (pos == n) {
            break;
        }
        ++labels[pos];
    }
    return best;
}

// Within-cluster distance sum of an exemplar set: the cheapest one-to-one
// assignment of exemplars to centroids, summing Euclidean distances.
inline double exemplar_cost(const std::vector<Vec>& exemplars, const std::vector<Vec>& centroids)
{
    std::vector<std::size_t> perm(centroids.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t j = 0; j < perm.size(); ++j) {
            s += (exemplars[perm[j]] - centroids[j]).norm();
        }
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Exemplars of the optimal partition: the member nearest each centroid.
inline std::vector<std::size_t> partition_exemplars(const std::vector<Vec>& points, const Partition& part)
{
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < part.centroids.size(); ++c) {
        std::size_t best = points.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (part.assignment[i] != static_cast<int>(c)) {
                continue;
            }
            const double d = (points[i] - part.centroids[c]).norm();
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        out.push_back(best);
    }
    return out;
}

// Every k-subset of {0..n-1}.
inline std::vector<std::vector<std::size_t>> all_subsets(std::size_t n, std::size_t k)
{
    std::vector<std::vector<std::size_t>> out;
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
    do {
        std::vector<std::size_t> s;
        for (std::size_t i = 0; i < n; ++i) {
            if (pick[i]) {
                s.push_back(i);
            }
        }
        out.push_back(std::move(s));
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return out;
}

// Fixture family for the exemplar-selection checks: n points in the plane.
// Well-separated fixtures place the points in `clusters` tight blobs far
// apart; otherwise points are uniform in the unit square.
inline std::vector<Vec> kmeans_fixture(std::uint64_t seed, std::size_t n, int clusters, bool well_separated)
{
    Rng rng(seed * 7919 + n * 31 + static_cast<std::uint64_t>(clusters));
    std::vector<Vec> points;
    for (std::size_t i = 0; i < n; ++i) {
        Vec p(2);
        if (well_separated) {
            const auto c = static_cast<double>(i % static_cast<std::size_t>(clusters));
            p << 10.0 * c + 0.2 * rng.normal(), 5.0 * c * c + 0.2 * rng.normal();
        } else {
            p << rng.uniform(), rng.uniform();
        }
        points.push_back(p);
    }
    return points;
}

} // namespace crecl::oracle
