// SPDX-License-Identifier: Apache-2.0
//
// Conditional anomaly detection for one case, and the leave-one-out
// evaluation harness with ROC / precision-recall curves.

#ifndef CONDANOM_PIPELINE_HPP
#define CONDANOM_PIPELINE_HPP

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "condanom/bayesmodel.hpp"
#include "condanom/dataset.hpp"
#include "condanom/similarity.hpp"

namespace condanom {

enum class ModelKind { naive_bayes, learned_bbn };
enum class PopulationKind { all, mahalanobis_k, weighted_mahalanobis_k };
enum class Status { anomalous, normal, indeterminate };

inline std::string_view to_string(Status s) {
    switch (s) {
        case Status::anomalous: return "anomalous";
        case Status::normal: return "normal";
        case Status::indeterminate: return "indeterminate";
    }
    return "?";
}

inline std::string_view to_string(ModelKind m) { return m == ModelKind::naive_bayes ? "nb" : "bbn"; }

inline std::string_view to_string(PopulationKind p) {
    switch (p) {
        case PopulationKind::all: return "all";
        case PopulationKind::mahalanobis_k: return "mahalanobis";
        case PopulationKind::weighted_mahalanobis_k: return "weighted";
    }
    return "?";
}

struct DetectionConfig {
    ModelKind model_kind = ModelKind::naive_bayes;
    PopulationKind population = PopulationKind::all;
    std::size_t k = 40;
    /// p_e: a case is anomalous when its predictive probability is strictly below this.
    double threshold = 0.05;
    double prior_strength = 1.0;
    double epsilon = 1e-6;
    /// Used when leave_one_out has to learn the structure itself.
    std::size_t max_parents = 4;
    std::optional<NetworkStructure> fixed_structure;

    void validate() const {
        if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must lie in [0, 1]");
        if (k < 1) throw std::invalid_argument("k must be at least 1");
        if (!(prior_strength > 0.0)) throw std::invalid_argument("prior strength must be positive");
        if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    }
};

struct DetectionOutcome {
    std::optional<std::string> case_id;
    /// Absent when the neighborhood was rejected and no model was fit.
    std::optional<double> predictive_prob;
    Status status = Status::normal;
    std::optional<NeighborhoodResult> neighborhood;
};

/// Metric for a similarity-restricted population, estimated on `repository`.
inline MetricConfig build_metric(const Dataset& repository, PopulationKind population, double epsilon) {
    const auto gamma_inverse = regularized_inverse(covariance_matrix(repository), epsilon);
    if (population == PopulationKind::weighted_mahalanobis_k)
        return MetricConfig::weighted_mahalanobis(gamma_inverse, rank_sum_weights(repository), epsilon);
    return MetricConfig::mahalanobis(gamma_inverse, epsilon);
}

/// Scores `query` against `repository`, which must not contain the query.
inline DetectionOutcome detect_case(const Dataset& repository, const CaseRecord& query, const DetectionConfig& config) {
    config.validate();
    const auto& schema = repository.schema();
    if (query.values.size() != schema.arity())
        throw std::invalid_argument("query has " + std::to_string(query.values.size()) + " values, schema has " +
                                    std::to_string(schema.arity()));

    NetworkStructure structure;
    if (config.model_kind == ModelKind::naive_bayes) {
        structure = naive_bayes_structure(schema);
    } else {
        if (!config.fixed_structure) throw std::invalid_argument("learned_bbn detection needs a fixed structure");
        if (config.fixed_structure->size() != schema.arity())
            throw std::invalid_argument("fixed structure does not match schema arity");
        structure = *config.fixed_structure;
    }

    DetectionOutcome out;
    out.case_id = query.case_id;
    const Dataset* training = &repository;
    Dataset neighbors;
    if (config.population != PopulationKind::all) {
        if (repository.size() < config.k + 1)
            throw std::invalid_argument("repository of " + std::to_string(repository.size()) +
                                        " records is too small for k = " + std::to_string(config.k));
        const auto metric = build_metric(repository, config.population, config.epsilon);
        const auto points = ContextPoints::from_dataset(repository);
        auto hood = neighborhood_quality(points, ContextPoints::context_row(query, schema), config.k, metric);
        const bool accepted = hood.accepted;
        if (accepted) neighbors = repository.select(hood.neighbor_indices);
        out.neighborhood = std::move(hood);
        if (!accepted) {
            out.status = Status::indeterminate;
            return out;
        }
        training = &neighbors;
    }

    const auto model = fit_parameters(structure, *training, config.prior_strength);
    const double p = predictive_probability(model, query);
    out.predictive_prob = p;
    out.status = p < config.threshold ? Status::anomalous : Status::normal;
    return out;
}

/// (predictive probability, gold label). Lower probability = more anomalous.
struct LabeledScore {
    double score;
    GoldLabel label;
};

struct OperatingPoint {
    double threshold = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> precision;
};

struct RocPoint {
    double fpr, tpr, threshold;
};

struct PrPoint {
    double recall, precision, threshold;
};

/// Confusion counts at every threshold of the sweep: the distinct scores
/// plus 0 and 1 (and +inf if some score is >= 1), ascending. A case is
/// flagged at threshold t when its score is strictly below t.
inline std::vector<OperatingPoint> threshold_sweep(const std::vector<LabeledScore>& scores) {
    std::vector<double> thresholds{0.0, 1.0};
    for (const auto& s : scores) thresholds.push_back(s.score);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double top = 0.0;
    for (const auto& s : scores) top = std::max(top, s.score);
    if (top >= 1.0) thresholds.push_back(std::numeric_limits<double>::infinity());

    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    std::size_t positives = 0;
    for (const auto& s : scores) positives += s.label == GoldLabel::anomalous;
    const std::size_t negatives = scores.size() - positives;

    std::vector<OperatingPoint> out;
    out.reserve(thresholds.size());
    std::size_t next = 0, tp = 0, fp = 0;
    for (double t : thresholds) {
        while (next < sorted.size() && sorted[next].score < t) {
            (sorted[next].label == GoldLabel::anomalous ? tp : fp) += 1;
            ++next;
        }
        OperatingPoint op;
        op.threshold = t;
        op.tp = tp;
        op.fp = fp;
        op.fn = positives - tp;
        op.tn = negatives - fp;
        if (positives) op.sensitivity = static_cast<double>(tp) / static_cast<double>(positives);
        if (negatives) op.specificity = static_cast<double>(op.tn) / static_cast<double>(negatives);
        if (tp + fp) op.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        out.push_back(op);
    }
    return out;
}

/// (fpr, tpr) along the sweep; starts at (0, 0) and ends at (1, 1).
inline std::vector<RocPoint> roc_curve(const std::vector<OperatingPoint>& sweep) {
    std::vector<RocPoint> out;
    for (const auto& op : sweep)
        if (op.sensitivity && op.specificity) out.push_back({1.0 - *op.specificity, *op.sensitivity, op.threshold});
    return out;
}

/// (recall, precision) at every swept threshold that flags at least one case.
inline std::vector<PrPoint> pr_curve(const std::vector<OperatingPoint>& sweep) {
    std::vector<PrPoint> out;
    for (const auto& op : sweep)
        if (op.sensitivity && op.precision) out.push_back({*op.sensitivity, *op.precision, op.threshold});
    return out;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(const std::vector<LabeledScore>& scores) {
    std::size_t pos = 0;
    for (const auto& s : scores) pos += s.label == GoldLabel::anomalous;
    return {pos, scores.size() - pos};
}

}  // namespace detail

/// Area under the swept ROC curve by trapezoids, i.e. the Mann-Whitney
/// probability P(anomalous score < normal score) + P(tie) / 2. Accumulated
/// in integers and divided once.
inline double roc_auc(const std::vector<LabeledScore>& scores) {
    const auto [positives, negatives] = detail::class_counts(scores);
    if (positives == 0 || negatives == 0) throw std::invalid_argument("ROC AUC needs both anomalous and normal labels");
    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    // twice the area, in units of 1 / (P N)
    std::uint64_t doubled = 0;
    std::uint64_t cum_pos = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::uint64_t pos = 0, neg = 0;
        std::size_t j = i;
        for (; j < sorted.size() && sorted[j].score == sorted[i].score; ++j)
            (sorted[j].label == GoldLabel::anomalous ? pos : neg) += 1;
        doubled += neg * (2 * cum_pos + pos);
        cum_pos += pos;
        i = j;
    }
    return static_cast<double>(doubled) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

namespace detail {

template <class Height>
double pr_area(const std::vector<LabeledScore>& scores, Height height) {
    const auto [positives, negatives] = class_counts(scores);
    (void)negatives;
    if (positives == 0) throw std::invalid_argument("PR AUC needs at least one anomalous label");
    const auto points = pr_curve(threshold_sweep(scores));
    double area = 0.0;
    double recall = 0.0;
    double precision = points.front().precision;
    for (const auto& p : points) {
        area += (p.recall - recall) * height(precision, p.precision);
        recall = p.recall;
        precision = p.precision;
    }
    return area;
}

}  // namespace detail

/// Area under the PR curve: trapezoids over recall between consecutive
/// swept points, anchored at recall 0 with the first point's precision.
inline double pr_auc(const std::vector<LabeledScore>& scores) {
    return detail::pr_area(scores, [](double a, double b) { return 0.5 * (a + b); });
}

/// Conservative PR area: each recall step at the lower of its two precisions.
inline double pr_auc_step(const std::vector<LabeledScore>& scores) {
    return detail::pr_area(scores, [](double a, double b) { return std::min(a, b); });
}

/// Precision at an assumed population prior of anomalies.
inline double prevalence_adjusted_precision(double sensitivity, double false_positive_rate, double population_prior) {
    for (double v : {sensitivity, false_positive_rate, population_prior})
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("rates and prior must lie in [0, 1]");
    const double hits = sensitivity * population_prior;
    const double denominator = hits + false_positive_rate * (1.0 - population_prior);
    if (denominator == 0.0) throw std::invalid_argument("no flagged cases at this operating point");
    return hits / denominator;
}

struct ScoredCase {
    std::string case_id;
    std::optional<double> prob;
    GoldLabel gold = GoldLabel::normal;
    Status status = Status::normal;
};

struct EvalReport {
    std::vector<ScoredCase> scored_cases;
    std::vector<OperatingPoint> operating_table;
    std::vector<RocPoint> roc_points;
    std::vector<PrPoint> pr_points;
    std::optional<double> auc_roc;
    std::optional<double> auc_pr;
    std::optional<double> auc_pr_step;
    /// Indeterminate cases scored as badly as possible: anomalous ones at
    /// 1 (never flagged), normal ones at 0 (always flagged).
    std::optional<double> auc_roc_worst_case;
    std::optional<double> auc_pr_worst_case;
    std::size_t indeterminate = 0;
    std::vector<std::string> warnings;
    /// Structure used for learned_bbn runs.
    std::optional<NetworkStructure> structure;
};

struct EvalOptions {
    /// Worker threads for independent folds; 0 = hardware concurrency.
    unsigned threads = 0;
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Scores every eval case against the repository minus that case and
/// builds curves over the determinate cases.
///
/// For learned_bbn without a fixed structure, the structure is learned once
/// on the repository minus all eval cases and held fixed across folds.
inline EvalReport leave_one_out(const Dataset& eval_cases, const Dataset& repository, DetectionConfig config,
                                EvalOptions options = {}) {
    config.validate();
    if (!(eval_cases.schema() == repository.schema()))
        throw std::invalid_argument("eval cases and repository have different schemas");

    std::vector<std::size_t> repo_index(eval_cases.size());
    for (std::size_t e = 0; e < eval_cases.size(); ++e) {
        const auto& rec = eval_cases.record(e);
        if (!rec.case_id) throw DataError("eval case " + std::to_string(e) + " has no case_id");
        if (!rec.gold_label) throw DataError("eval case '" + *rec.case_id + "' has no gold label");
        auto idx = repository.find(*rec.case_id);
        if (!idx) throw DataError("eval case '" + *rec.case_id + "' is not in the repository");
        repo_index[e] = *idx;
    }

    EvalReport report;
    if (config.model_kind == ModelKind::learned_bbn && !config.fixed_structure) {
        std::vector<char> held(repository.size(), 0);
        for (auto i : repo_index) held[i] = 1;
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < repository.size(); ++i)
            if (!held[i]) keep.push_back(i);
        config.fixed_structure = learn_structure(repository.select(keep), config.max_parents, config.prior_strength);
    }
    if (config.model_kind == ModelKind::learned_bbn) report.structure = config.fixed_structure;

    std::vector<DetectionOutcome> outcomes(eval_cases.size());
    detail::parallel_for(eval_cases.size(), options.threads, [&](std::size_t e) {
        outcomes[e] = detect_case(repository.without(repo_index[e]), eval_cases.record(e), config);
    });

    std::vector<LabeledScore> determinate, worst_case;
    for (std::size_t e = 0; e < eval_cases.size(); ++e) {
        const auto& rec = eval_cases.record(e);
        const auto& o = outcomes[e];
        report.scored_cases.push_back({*rec.case_id, o.predictive_prob, *rec.gold_label, o.status});
        if (o.status == Status::indeterminate) {
            ++report.indeterminate;
            worst_case.push_back({*rec.gold_label == GoldLabel::anomalous ? 1.0 : 0.0, *rec.gold_label});
        } else {
            determinate.push_back({*o.predictive_prob, *rec.gold_label});
            worst_case.push_back(determinate.back());
        }
    }

    if (determinate.empty()) {
        if (!eval_cases.empty()) report.warnings.push_back("all eval cases are indeterminate; curves are empty");
    } else {
        report.operating_table = threshold_sweep(determinate);
        report.roc_points = roc_curve(report.operating_table);
        report.pr_points = pr_curve(report.operating_table);
    }
    const auto [pos, neg] = detail::class_counts(determinate);
    if (!determinate.empty()) {
        if (pos && neg) report.auc_roc = roc_auc(determinate);
        else report.warnings.push_back("determinate cases hold a single gold class; ROC AUC undefined");
        if (pos) {
            report.auc_pr = pr_auc(determinate);
            report.auc_pr_step = pr_auc_step(determinate);
        } else {
            report.warnings.push_back("no anomalous determinate case; PR AUC undefined");
        }
    }
    if (report.indeterminate)
        report.warnings.push_back(std::to_string(report.indeterminate) + " indeterminate case(s) excluded from curves");
    const auto [wpos, wneg] = detail::class_counts(worst_case);
    if (wpos && wneg) report.auc_roc_worst_case = roc_auc(worst_case);
    if (wpos) report.auc_pr_worst_case = pr_auc(worst_case);
    return report;
}

/// Raised when too few records qualify for anomaly injection.
class InjectionError : public DataError {
public:
    InjectionError(std::size_t achievable, std::size_t requested)
        : DataError("only " + std::to_string(achievable) + " records qualify for injection, " +
                    std::to_string(requested) + " requested"),
          achievable_(achievable) {}
    std::size_t achievable() const noexcept { return achievable_; }

private:
    std::size_t achievable_;
};

/// Flips the target of ceil(fraction * n) records whose current target
/// value has predictive probability > 0.9 under `model`, chosen uniformly
/// with `seed`. Flipped records are labeled anomalous, all others normal.
inline Dataset inject_anomalies(const Dataset& data, const BayesNetModel& model, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("injection fraction must lie in (0, 1)");
    const auto requested = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(data.size()) - 1e-9));
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (predictive_probability(model, data.record(i)) > 0.9) candidates.push_back(i);
    if (candidates.size() < requested) throw InjectionError(candidates.size(), requested);

    std::mt19937_64 rng(seed);
    detail::shuffle(candidates, rng);
    std::vector<char> flip(data.size(), 0);
    for (std::size_t j = 0; j < requested; ++j) flip[candidates[j]] = 1;

    const auto target = data.schema().target_index();
    auto records = data.records();
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (flip[i]) records[i].values[target] ^= 1;
        records[i].gold_label = flip[i] ? GoldLabel::anomalous : GoldLabel::normal;
    }
    return Dataset(data.schema(), std::move(records));
}

/// Eval-set construction used by the synthetic experiment: up to
/// `flagged_count` cases flagged by the naive Bayes detector trained on all
/// other cases at `threshold`, topped up to `total` with random unflagged
/// cases. Returned in repository order.
inline Dataset build_eval_set(const Dataset& data, std::size_t flagged_count, std::size_t total, double threshold,
                              std::uint64_t seed, double prior_strength = 1.0) {
    if (total > data.size()) throw std::invalid_argument("eval set larger than the dataset");
    // Leave-one-out naive Bayes on all cases: subtract each case's own counts.
    const auto structure = naive_bayes_structure(data.schema());
    const auto full = fit_parameters(structure, data, prior_strength);
    std::vector<std::size_t> flagged, rest;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto tables = full.tables();
        const auto& values = data.record(i).values;
        for (std::size_t node = 0; node < tables.size(); ++node)
            --tables[node].counts[parent_configuration(structure.parents(node), values)][values[node]];
        const BayesNetModel loo(data.schema(), structure, std::move(tables));
        (predictive_probability(loo, data.record(i)) < threshold ? flagged : rest).push_back(i);
    }

    std::mt19937_64 rng(seed);
    detail::shuffle(flagged, rng);
    detail::shuffle(rest, rng);
    flagged.resize(std::min({flagged.size(), flagged_count, total}));
    if (rest.size() < total - flagged.size()) throw std::invalid_argument("not enough unflagged cases");
    rest.resize(total - flagged.size());
    std::vector<std::size_t> chosen = flagged;
    chosen.insert(chosen.end(), rest.begin(), rest.end());
    std::sort(chosen.begin(), chosen.end());
    return data.select(chosen);
}

struct SyntheticSpec {
    std::size_t records = 2287;
    std::size_t max_parents = 3;
    /// Fraction of records turned into anomalies; 0 disables injection.
    double inject = 0.05;
    std::size_t eval_size = 100;
    std::size_t eval_flagged = 21;
    double eval_threshold = 0.05;
    std::uint64_t seed = 7;
};

struct SyntheticExperiment {
    BayesNetModel generator;
    /// All records; gold labels set when anomalies were injected.
    Dataset data;
    /// Labeled evaluation subset (empty without injection or with eval_size 0).
    Dataset eval;
};

/// Generating network, sampled repository, injected anomalies and eval set,
/// each stage seeded from `spec.seed`.
inline SyntheticExperiment make_synthetic_experiment(const AttributeSchema& schema, const SyntheticSpec& spec) {
    auto generator = random_model(schema, spec.max_parents, spec.seed);
    auto data = sample_from_model(generator, spec.records, spec.seed + 1);
    Dataset eval(schema, {});
    if (spec.inject > 0.0) {
        data = inject_anomalies(data, generator, spec.inject, spec.seed + 2);
        if (spec.eval_size > 0)
            eval = build_eval_set(data, spec.eval_flagged, spec.eval_size, spec.eval_threshold, spec.seed + 3);
    }
    return {std::move(generator), std::move(data), std::move(eval)};
}

namespace detail {

// Shortest round-trip decimal form; identical across runs.
inline std::string number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string number(const std::optional<double>& v) { return v ? number(*v) : std::string("NA"); }

}  // namespace detail

/// `case_id,prob,status` for one detection.
inline void write_outcome(std::ostream& out, const DetectionOutcome& o) {
    out << o.case_id.value_or("-") << ',' << detail::number(o.predictive_prob) << ',' << to_string(o.status) << '\n';
}

/// Writes scores.csv, roc.csv, pr.csv, operating.csv and summary.csv into
/// `dir` (created if missing); returns the paths written.
inline std::vector<std::filesystem::path> write_report(const EvalReport& report, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<fs::path> written;
    auto open = [&](const char* name) {
        written.push_back(dir / name);
        std::ofstream f(written.back(), std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + written.back().string());
        return f;
    };
    using detail::number;
    {
        auto f = open("scores.csv");
        f << "case_id,prob,gold,status\n";
        for (const auto& s : report.scored_cases)
            f << s.case_id << ',' << number(s.prob) << ',' << to_string(s.gold) << ',' << to_string(s.status) << '\n';
    }
    {
        auto f = open("roc.csv");
        f << "threshold,fpr,tpr\n";
        for (const auto& p : report.roc_points) f << number(p.threshold) << ',' << number(p.fpr) << ',' << number(p.tpr) << '\n';
    }
    {
        auto f = open("pr.csv");
        f << "threshold,recall,precision\n";
        for (const auto& p : report.pr_points)
            f << number(p.threshold) << ',' << number(p.recall) << ',' << number(p.precision) << '\n';
    }
    {
        auto f = open("operating.csv");
        f << "threshold,tp,fp,tn,fn,sensitivity,specificity,precision\n";
        for (const auto& op : report.operating_table)
            f << number(op.threshold) << ',' << op.tp << ',' << op.fp << ',' << op.tn << ',' << op.fn << ','
              << number(op.sensitivity) << ',' << number(op.specificity) << ',' << number(op.precision) << '\n';
    }
    {
        auto f = open("summary.csv");
        f << "auc_roc,auc_pr,auc_pr_step,auc_roc_worst_case,auc_pr_worst_case,scored,indeterminate\n"
          << number(report.auc_roc) << ',' << number(report.auc_pr) << ',' << number(report.auc_pr_step) << ','
          << number(report.auc_roc_worst_case) << ',' << number(report.auc_pr_worst_case) << ','
          << report.scored_cases.size() << ',' << report.indeterminate << '\n';
    }
    return written;
}

}  // namespace condanom

#endif  // CONDANOM_PIPELINE_HPP
