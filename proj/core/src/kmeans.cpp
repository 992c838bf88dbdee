#include "crecl/kmeans.hpp"

#include <limits>

#include "crecl/error.hpp"

namespace crecl {
namespace {

std::vector<Vec> seed_plus_plus(std::span<const Vec> points, int k, Rng& rng)
{
    std::vector<Vec> centroids;
    centroids.push_back(points[rng.below(points.size())]);
    std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            d2[i] = std::min(d2[i], (points[i] - centroids.back()).squaredNorm());
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.below(points.size());
        } else {
            double target = rng.uniform() * total;
            pick = points.size() - 1;
            for (std::size_t i = 0; i < points.size(); ++i) {
                target -= d2[i];
                if (target < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(points[pick]);
    }
    return centroids;
}

void assign(std::span<const Vec> points, const std::vector<Vec>& centroids, std::vector<int>& assignment)
{
    for (std::size_t i = 0; i < points.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            const double d = (points[i] - centroids[c]).squaredNorm();
            if (d < best) {
                best = d;
                arg = static_cast<int>(c);
            }
        }
        assignment[i] = arg;
    }
}

void repair_empty(std::span<const Vec> points, std::vector<Vec>& centroids, std::vector<int>& assignment)
{
    const int k = static_cast<int>(centroids.size());
    for (int c = 0; c < k; ++c) {
        std::vector<int> sizes(static_cast<std::size_t>(k), 0);
        for (const int a : assignment) {
            ++sizes[static_cast<std::size_t>(a)];
        }
        if (sizes[static_cast<std::size_t>(c)] > 0) {
            continue;
        }
        double far = -1.0;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto a = static_cast<std::size_t>(assignment[i]);
            if (sizes[a] < 2) {
                continue;
            }
            const double d = (points[i] - centroids[a]).squaredNorm();
            if (d > far) {
                far = d;
                pick = i;
            }
        }
        assignment[pick] = c;
        centroids[static_cast<std::size_t>(c)] = points[pick];
    }
}

double update(std::span<const Vec> points, std::vector<Vec>& centroids, const std::vector<int>& assignment)
{
    const auto dim = points.front().size();
    std::vector<Vec> sums(centroids.size(), Vec::Zero(dim));
    std::vector<int> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        sums[static_cast<std::size_t>(assignment[i])] += points[i];
        ++counts[static_cast<std::size_t>(assignment[i])];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const Vec next = sums[c] / static_cast<double>(counts[c]);
        shift = std::max(shift, (next - centroids[c]).norm());
        centroids[c] = next;
    }
    return shift;
}

double inertia(std::span<const Vec> points, const std::vector<Vec>& centroids, const std::vector<int>& assignment)
{
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        total += (points[i] - centroids[static_cast<std::size_t>(assignment[i])]).squaredNorm();
    }
    return total;
}

// Hartigan single-point moves: relocate a point whenever that lowers the
// total inertia, accounting for both centroid shifts. Escapes many Lloyd
// fixed points at negligible cost for exemplar-sized inputs.
void hartigan(std::span<const Vec> points, std::vector<Vec>& centroids, std::vector<int>& assignment, int max_passes)
{
    std::vector<int> counts(centroids.size(), 0);
    for (const int a : assignment) {
        ++counts[static_cast<std::size_t>(a)];
    }
    for (int pass = 0; pass < max_passes; ++pass) {
        bool moved = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto a = static_cast<std::size_t>(assignment[i]);
            if (counts[a] < 2) {
                continue;
            }
            const double na = counts[a];
            const double removal = na / (na - 1.0) * (points[i] - centroids[a]).squaredNorm();
            std::size_t target = a;
            double best_gain = 1e-12 * std::max(1.0, removal);
            for (std::size_t b = 0; b < centroids.size(); ++b) {
                if (b == a) {
                    continue;
                }
                const double nb = counts[b];
                const double gain = removal - nb / (nb + 1.0) * (points[i] - centroids[b]).squaredNorm();
                if (gain > best_gain) {
                    best_gain = gain;
                    target = b;
                }
            }
            if (target == a) {
                continue;
            }
            const double nb = counts[target];
            centroids[a] = (centroids[a] * na - points[i]) / (na - 1.0);
            centroids[target] = (centroids[target] * nb + points[i]) / (nb + 1.0);
            --counts[a];
            ++counts[target];
            assignment[i] = static_cast<int>(target);
            moved = true;
        }
        if (!moved) {
            break;
        }
    }
}

KMeansResult lloyd(std::span<const Vec> points, int k, const KMeansOptions& options, Rng& rng)
{
    KMeansResult result;
    result.centroids = seed_plus_plus(points, k, rng);
    result.assignment.assign(points.size(), 0);
    for (int it = 0; it < options.max_iterations; ++it) {
        assign(points, result.centroids, result.assignment);
        repair_empty(points, result.centroids, result.assignment);
        if (update(points, result.centroids, result.assignment) <= options.tolerance) {
            result.converged = true;
            break;
        }
    }
    hartigan(points, result.centroids, result.assignment, options.max_iterations);
    // Recompute the centroids exactly after the incremental updates.
    update(points, result.centroids, result.assignment);
    result.inertia = inertia(points, result.centroids, result.assignment);
    return result;
}

} // namespace

KMeansResult kmeans(std::span<const Vec> points, int k, const KMeansOptions& options, Rng& rng)
{
    if (k < 1 || static_cast<std::size_t>(k) > points.size()) {
        throw Error("kmeans: need 1 <= k <= number of points");
    }
    const int restarts = std::max(1, options.restarts);
    KMeansResult best;
    for (int r = 0; r < restarts; ++r) {
        KMeansResult run = lloyd(points, k, options, rng);
        if (r == 0 || run.inertia < best.inertia) {
            best = std::move(run);
        }
    }
    return best;
}

} // namespace crecl
