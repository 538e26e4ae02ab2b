// SPDX-License-Identifier: Apache-2.0
//
// Case similarity over context attributes.
//
// Distances are squared generalized distances r^2 = d G d^T with
// d = a - b (or w * (a - b), element-wise, for the weighted kind) and G the
// inverse of the metric matrix: identity for euclidean, the regularized
// inverse population covariance for the Mahalanobis kinds.

#ifndef CONDANOM_SIMILARITY_HPP
#define CONDANOM_SIMILARITY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "condanom/dataset.hpp"

namespace condanom {

/// Row-major dense matrix of context vectors, one row per case.
class ContextPoints {
public:
    ContextPoints() = default;
    explicit ContextPoints(std::size_t dimension) : dimension_(dimension) {}

    ContextPoints(std::size_t dimension, std::vector<double> values)
        : dimension_(dimension), values_(std::move(values)) {
        if (dimension_ == 0 ? !values_.empty() : values_.size() % dimension_ != 0)
            throw std::invalid_argument("point buffer is not a whole number of rows");
    }

    static ContextPoints from_rows(const std::vector<std::vector<double>>& rows) {
        ContextPoints out(rows.empty() ? 0 : rows.front().size());
        for (const auto& r : rows) out.push_back(r);
        return out;
    }

    static ContextPoints from_dataset(const Dataset& data) {
        ContextPoints out(data.schema().context_arity());
        out.values_.reserve(data.size() * out.dimension_);
        for (const auto& rec : data.records()) out.push_back(context_row(rec, data.schema()));
        return out;
    }

    static std::vector<double> context_row(const CaseRecord& record, const AttributeSchema& schema) {
        auto ctx = context_of(record, schema);
        return {ctx.begin(), ctx.end()};
    }

    void push_back(std::span<const double> row) {
        if (row.size() != dimension_) throw std::invalid_argument("row dimension mismatch");
        values_.insert(values_.end(), row.begin(), row.end());
    }

    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return dimension_ == 0 ? 0 : values_.size() / dimension_; }
    std::span<const double> row(std::size_t i) const {
        return {values_.data() + i * dimension_, dimension_};
    }

private:
    std::size_t dimension_ = 0;
    std::vector<double> values_;
};

enum class MetricKind { euclidean, mahalanobis, weighted_mahalanobis };

/// Per-context-attribute importance in [0, 1]; the largest is 1 unless all are 0.
struct ImportanceWeights {
    std::vector<double> w;
};

struct MetricConfig {
    MetricKind kind = MetricKind::euclidean;
    Eigen::MatrixXd gamma_inverse;
    ImportanceWeights weights;
    double epsilon = 1e-6;

    std::size_t dimension() const noexcept { return static_cast<std::size_t>(gamma_inverse.rows()); }

    static MetricConfig euclidean(std::size_t dimension) {
        MetricConfig m;
        m.kind = MetricKind::euclidean;
        m.gamma_inverse = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dimension),
                                                    static_cast<Eigen::Index>(dimension));
        return m;
    }

    static MetricConfig mahalanobis(Eigen::MatrixXd gamma_inverse, double epsilon = 1e-6) {
        MetricConfig m;
        m.kind = MetricKind::mahalanobis;
        m.gamma_inverse = std::move(gamma_inverse);
        m.epsilon = epsilon;
        m.validate();
        return m;
    }

    static MetricConfig weighted_mahalanobis(Eigen::MatrixXd gamma_inverse, ImportanceWeights weights,
                                             double epsilon = 1e-6) {
        MetricConfig m;
        m.kind = MetricKind::weighted_mahalanobis;
        m.gamma_inverse = std::move(gamma_inverse);
        m.weights = std::move(weights);
        m.epsilon = epsilon;
        m.validate();
        return m;
    }

    void validate() const {
        if (gamma_inverse.rows() != gamma_inverse.cols()) throw std::invalid_argument("metric matrix must be square");
        if (gamma_inverse.size() > 0 && (gamma_inverse - gamma_inverse.transpose()).cwiseAbs().maxCoeff() > 1e-9)
            throw std::invalid_argument("metric matrix must be symmetric");
        if (kind == MetricKind::weighted_mahalanobis && weights.w.size() != dimension())
            throw std::invalid_argument("weight vector length does not match metric dimension");
        if (!(epsilon > 0.0)) throw std::invalid_argument("regularization epsilon must be positive");
    }
};

/// Squared generalized distance between two context vectors.
///
/// Only coordinates where the (weighted) difference is nonzero enter the
/// quadratic form, so binary contexts that differ in few attributes are
/// cheap. The summation order is fixed, which makes the result exactly
/// symmetric in (a, b) and exactly 0 for a == b.
inline double distance(const MetricConfig& metric, std::span<const double> a, std::span<const double> b) {
    const auto dim = metric.dimension();
    if (a.size() != dim || b.size() != dim)
        throw std::invalid_argument("vector dimension " + std::to_string(a.size()) + "/" + std::to_string(b.size()) +
                                    " does not match metric dimension " + std::to_string(dim));
    const bool weighted = metric.kind == MetricKind::weighted_mahalanobis;

    // Small fixed buffers cover the usual case without allocating.
    constexpr std::size_t kInline = 64;
    std::size_t inline_index[kInline];
    double inline_diff[kInline];
    std::vector<std::size_t> heap_index;
    std::vector<double> heap_diff;
    std::size_t* index = inline_index;
    double* diff = inline_diff;
    if (dim > kInline) {
        heap_index.resize(dim);
        heap_diff.resize(dim);
        index = heap_index.data();
        diff = heap_diff.data();
    }

    std::size_t nnz = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        double d = a[i] - b[i];
        if (weighted) d *= metric.weights.w[i];
        if (d != 0.0) {
            index[nnz] = i;
            diff[nnz] = d;
            ++nnz;
        }
    }

    double r2 = 0.0;
    if (metric.kind == MetricKind::euclidean) {
        for (std::size_t u = 0; u < nnz; ++u) r2 += diff[u] * diff[u];
        return r2;
    }
    const auto& g = metric.gamma_inverse;
    for (std::size_t u = 0; u < nnz; ++u) {
        double row = 0.0;
        for (std::size_t v = 0; v < nnz; ++v)
            row += g(static_cast<Eigen::Index>(index[u]), static_cast<Eigen::Index>(index[v])) * diff[v];
        r2 += diff[u] * row;
    }
    // A regularized inverse is positive definite; clamp rounding below zero.
    return std::max(r2, 0.0);
}

/// Population covariance (divisor n) of the rows of `points`.
inline Eigen::MatrixXd covariance_matrix(const ContextPoints& points) {
    const auto n = points.size();
    if (n == 0) throw std::invalid_argument("covariance of an empty dataset");
    const auto dim = static_cast<Eigen::Index>(points.dimension());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (std::size_t r = 0; r < n; ++r) mean += Eigen::Map<const Eigen::VectorXd>(points.row(r).data(), dim);
    mean /= static_cast<double>(n);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t r = 0; r < n; ++r) {
        Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(points.row(r).data(), dim) - mean;
        cov.noalias() += d * d.transpose();
    }
    return cov / static_cast<double>(n);
}

inline Eigen::MatrixXd covariance_matrix(const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("covariance of an empty dataset");
    return covariance_matrix(ContextPoints::from_dataset(data));
}

/// (sigma + epsilon I)^-1, symmetrized.
inline Eigen::MatrixXd regularized_inverse(const Eigen::MatrixXd& sigma, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("regularization epsilon must be positive");
    if (sigma.rows() != sigma.cols()) throw std::invalid_argument("matrix must be square");
    const auto n = sigma.rows();
    Eigen::MatrixXd shifted = sigma + epsilon * Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd inv = shifted.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
    return 0.5 * (inv + inv.transpose());
}

/// Two-sample Wilcoxon rank-sum z statistic with midranks for ties and
/// tie-corrected variance. `group[i]` selects the sample whose rank sum is
/// taken. Returns 0 when the variance vanishes (a constant sample) or a
/// group is empty.
inline double rank_sum_z(std::span<const double> values, std::span<const std::uint8_t> group) {
    if (values.size() != group.size()) throw std::invalid_argument("values and groups differ in length");
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });

    std::vector<double> rank(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) rank[order[t]] = midrank;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }

    double rank_sum = 0.0;
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (group[i]) {
            rank_sum += rank[i];
            ++n1;
        }
    const std::size_t n0 = n - n1;
    if (n1 == 0 || n0 == 0) return 0.0;
    const double nd = static_cast<double>(n);
    const double mean = static_cast<double>(n1) * (nd + 1.0) / 2.0;
    const double variance =
        static_cast<double>(n1) * static_cast<double>(n0) / 12.0 * ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
    if (!(variance > 1e-12)) return 0.0;
    return (rank_sum - mean) / std::sqrt(variance);
}

/// |z| of each context attribute against the target, rescaled so the
/// largest weight is 1.
inline ImportanceWeights rank_sum_weights(const Dataset& data) {
    const auto& schema = data.schema();
    if (data.empty()) throw std::invalid_argument("rank-sum weights need data");
    std::vector<std::uint8_t> group;
    group.reserve(data.size());
    for (const auto& rec : data.records()) group.push_back(rec.values[schema.target_index()]);
    const auto positives = std::count(group.begin(), group.end(), 1);
    if (positives == 0 || static_cast<std::size_t>(positives) == group.size())
        throw std::invalid_argument("target attribute '" + schema.target_name() +
                                    "' is constant; rank-sum weights need both target values");

    ImportanceWeights out;
    std::vector<double> column(data.size());
    for (std::size_t a = 0; a < schema.arity(); ++a) {
        if (a == schema.target_index()) continue;
        for (std::size_t r = 0; r < data.size(); ++r) column[r] = data.record(r).values[a];
        out.w.push_back(std::abs(rank_sum_z(column, group)));
    }
    const double top = out.w.empty() ? 0.0 : *std::max_element(out.w.begin(), out.w.end());
    if (top > 0.0)
        for (auto& x : out.w) x /= top;
    return out;
}

struct NeighborhoodResult {
    std::vector<std::size_t> neighbor_indices;
    std::vector<double> neighbor_distances;
    double target_avg_distance = 0.0;
    double population_mean = 0.0;
    double population_std = 0.0;
    bool accepted = true;
};

namespace detail {

// Sum of the k smallest entries, added in ascending order.
inline double mean_of_smallest(std::vector<double>& values, std::size_t k) {
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end());
    std::sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k));
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += values[i];
    return sum / static_cast<double>(k);
}

inline std::size_t candidates(const ContextPoints& points, std::optional<std::size_t> exclude) {
    return points.size() - (exclude && *exclude < points.size() ? 1 : 0);
}

}  // namespace detail

/// The k rows nearest to `query`, sorted by (distance, index). Row
/// `exclude`, when given, is the query's own row and is never selected.
inline NeighborhoodResult k_best_matches(const ContextPoints& points, std::span<const double> query, std::size_t k,
                                         const MetricConfig& metric, std::optional<std::size_t> exclude = std::nullopt) {
    if (k == 0) throw std::invalid_argument("k must be at least 1");
    const auto available = detail::candidates(points, exclude);
    if (k > available)
        throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(available) +
                                    " available records");
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!exclude || i != *exclude) ranked.emplace_back(distance(metric, query, points.row(i)), i);
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());

    NeighborhoodResult out;
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out.neighbor_indices.push_back(ranked[i].second);
        out.neighbor_distances.push_back(ranked[i].first);
        sum += ranked[i].first;
    }
    out.target_avg_distance = sum / static_cast<double>(k);
    return out;
}

inline NeighborhoodResult k_best_matches(const Dataset& data, const CaseRecord& query, std::size_t k,
                                         const MetricConfig& metric, std::optional<std::size_t> exclude = std::nullopt) {
    const auto row = ContextPoints::context_row(query, data.schema());
    return k_best_matches(ContextPoints::from_dataset(data), row, k, metric, exclude);
}

/// k-best matches plus the two-standard-deviation rejection test.
///
/// Every non-query row gets the mean distance to its own k best matches
/// among the other non-query rows. The query is accepted when its own
/// average is at most population mean + 2 population standard deviations
/// (divisor n) of those averages.
inline NeighborhoodResult neighborhood_quality(const ContextPoints& points, std::span<const double> query,
                                               std::size_t k, const MetricConfig& metric,
                                               std::optional<std::size_t> exclude = std::nullopt) {
    auto result = k_best_matches(points, query, k, metric, exclude);

    std::vector<std::size_t> members;
    members.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!exclude || i != *exclude) members.push_back(i);
    const std::size_t n = members.size();
    if (n < 2) throw std::invalid_argument("neighborhood test needs at least 2 records besides the query");
    if (k > n - 1)
        throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(n - 1) +
                                    " matches available to each reference record");

    // All-pairs distances among members; d(i, j) == d(j, i) exactly.
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = u + 1; v < n; ++v) {
            const double d = distance(metric, points.row(members[u]), points.row(members[v]));
            dist[u * n + v] = d;
            dist[v * n + u] = d;
        }

    std::vector<double> averages(n);
    std::vector<double> row;
    row.reserve(n);
    for (std::size_t u = 0; u < n; ++u) {
        row.clear();
        for (std::size_t v = 0; v < n; ++v)
            if (v != u) row.push_back(dist[u * n + v]);
        averages[u] = detail::mean_of_smallest(row, k);
    }

    double mean = 0.0;
    for (auto a : averages) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (auto a : averages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);

    result.population_mean = mean;
    result.population_std = std::sqrt(var);
    result.accepted = result.target_avg_distance <= mean + 2.0 * result.population_std;
    return result;
}

inline NeighborhoodResult neighborhood_quality(const Dataset& data, const CaseRecord& query, std::size_t k,
                                               const MetricConfig& metric,
                                               std::optional<std::size_t> exclude = std::nullopt) {
    const auto row = ContextPoints::context_row(query, data.schema());
    return neighborhood_quality(ContextPoints::from_dataset(data), row, k, metric, exclude);
}

}  // namespace condanom

#endif  // CONDANOM_SIMILARITY_HPP
