#include "crecl/analysis.hpp"

#include <cstdio>
#include <limits>
#include <map>

#include <Eigen/Eigenvalues>

#include "crecl/error.hpp"
#include "crecl/report.hpp"

namespace crecl {

Mat principal_projection(std::span<const Vec> points)
{
    const auto n = static_cast<Eigen::Index>(points.size());
    Mat out = Mat::Zero(n, 2);
    if (n == 0) {
        return out;
    }
    const Eigen::Index d = points.front().size();
    Mat X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (points[static_cast<std::size_t>(i)].size() != d) {
            throw Error("principal_projection: points differ in dimension");
        }
        X.row(i) = points[static_cast<std::size_t>(i)].transpose();
    }
    X.rowwise() -= X.colwise().mean();
    const Mat cov = X.transpose() * X / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
    // Eigenvalues come in increasing order.
    const Eigen::Index axes = std::min<Eigen::Index>(2, d);
    for (Eigen::Index a = 0; a < axes; ++a) {
        const Eigen::Index col = d - 1 - a;
        if (!(solver.eigenvalues()[col] > 1e-12 * std::max(1.0, solver.eigenvalues()[d - 1]))) {
            continue;
        }
        Vec axis = solver.eigenvectors().col(col);
        Eigen::Index pivot = 0;
        axis.cwiseAbs().maxCoeff(&pivot);
        if (axis[pivot] < 0.0) {
            axis = -axis;
        }
        out.col(a) = X * axis;
    }
    return out;
}

double silhouette_score(std::span<const Vec> points, std::span<const std::string> labels)
{
    if (points.size() != labels.size()) {
        throw Error("silhouette_score: one label per point required");
    }
    std::map<std::string, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        clusters[labels[i]].push_back(i);
    }
    if (clusters.size() < 2) {
        throw Error("silhouette_score: needs at least two labels");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& own = clusters.at(labels[i]);
        if (own.size() == 1) {
            continue;
        }
        double a = 0.0;
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, members] : clusters) {
            double sum = 0.0;
            for (const std::size_t j : members) {
                sum += (points[i] - points[j]).norm();
            }
            if (label == labels[i]) {
                a = sum / static_cast<double>(members.size() - 1);
            } else {
                b = std::min(b, sum / static_cast<double>(members.size()));
            }
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(points.size());
}

std::vector<EmbeddingRow> export_embeddings(const InstanceEncoder& encoder, std::span<const Instance> instances)
{
    std::vector<Vec> reps;
    reps.reserve(instances.size());
    for (const auto& inst : instances) {
        reps.push_back(encoder.represent(inst));
    }
    const Mat xy = principal_projection(reps);
    std::vector<EmbeddingRow> rows;
    rows.reserve(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        rows.push_back({instances[i].id, instances[i].relation, xy(r, 0), xy(r, 1), std::move(reps[i])});
    }
    return rows;
}

std::string embeddings_to_csv(std::span<const EmbeddingRow> rows)
{
    const Eigen::Index d = rows.empty() ? 0 : rows.front().h.size();
    std::string out = "id,label,x,y";
    for (Eigen::Index j = 0; j < d; ++j) {
        out += ",h" + std::to_string(j);
    }
    out += "\r\n";
    char buf[40];
    const auto number = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& row : rows) {
        out += csv_field(row.id) + "," + csv_field(row.label) + "," + number(row.x) + "," + number(row.y);
        for (Eigen::Index j = 0; j < row.h.size(); ++j) {
            out += "," + number(row.h[j]);
        }
        out += "\r\n";
    }
    return out;
}

double embedding_silhouette(std::span<const EmbeddingRow> rows)
{
    std::vector<Vec> points;
    std::vector<std::string> labels;
    for (const auto& row : rows) {
        points.push_back(row.h);
        labels.push_back(row.label);
    }
    return silhouette_score(points, labels);
}

} // namespace crecl
