#pragma once

#include <span>
#include <vector>

#include "crecl/nn.hpp"
#include "crecl/rng.hpp"

namespace crecl {

struct KMeansOptions {
    int restarts = 10;
    int max_iterations = 100;
    double tolerance = 1e-6;  // max centroid shift for convergence
};

struct KMeansResult {
    std::vector<int> assignment;
    std::vector<Vec> centroids;
    double inertia = 0.0;  // sum of squared distances to assigned centroids
    bool converged = false;  // Lloyd phase met the tolerance
};

/// Lloyd's algorithm with k-means++ seeding, refined by Hartigan
/// single-point moves; best of `restarts` runs by inertia. Requires 1 <= k <= points.size(). Every returned cluster is
/// nonempty: an empty cluster takes over the point farthest from its
/// current centroid.
KMeansResult kmeans(std::span<const Vec> points, int k, const KMeansOptions& options, Rng& rng);

} // namespace crecl
