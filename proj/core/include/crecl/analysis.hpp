#pragma once

#include <span>
#include <string>
#include <vector>

#include "crecl/nn.hpp"
#include "crecl/pipeline.hpp"

namespace crecl {

/// Projection onto the two leading principal axes of the centered points
/// (n x 2). Each axis is signed so its largest-magnitude loading is
/// positive. Missing axes (dimension or rank below 2) are zero columns.
Mat principal_projection(std::span<const Vec> points);

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters score 0. Requires at least two distinct labels.
double silhouette_score(std::span<const Vec> points, std::span<const std::string> labels);

struct EmbeddingRow {
    std::string id;
    std::string label;
    double x = 0.0;
    double y = 0.0;
    Vec h;
};

/// Dropout-free representations of `instances` with their 2-D projection.
std::vector<EmbeddingRow> export_embeddings(const InstanceEncoder& encoder, std::span<const Instance> instances);

/// Header id,label,x,y,h0..h{d-1}; CRLF line ends, RFC-4180 quoting.
std::string embeddings_to_csv(std::span<const EmbeddingRow> rows);

/// Silhouette of the exported rows' raw representations.
double embedding_silhouette(std::span<const EmbeddingRow> rows);

} // namespace crecl
