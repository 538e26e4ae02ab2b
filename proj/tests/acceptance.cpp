// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "condanom/condanom.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace condanom;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream o;
    o.precision(precision);
    o << v;
    return o.str();
}

// 1. predictive_probability vs full-joint enumeration.
Outcome prediction_oracle() {
    const auto start = Clock::now();
    std::mt19937_64 rng(1001);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int model_index = 0; model_index < 200; ++model_index) {
        const auto model = oracle::random_model(1 + rng() % 5, rng);
        const auto m = model.schema().arity();
        for (std::uint32_t state = 0; state < (1u << m); ++state) {
            CaseRecord rec;
            for (std::size_t i = 0; i < m; ++i) rec.values.push_back(state >> i & 1);
            worst = std::max(worst, std::abs(predictive_probability(model, rec) - oracle::predictive(model, rec)));
            ++checked;
        }
    }
    const double elapsed = seconds_since(start);
    return {worst <= 1e-12 && elapsed < 10.0, std::to_string(checked) + " records, max |diff| " + fmt(worst) +
                                                  " (tol 1e-12), " + fmt(elapsed, 3) + " s (limit 10 s)"};
}

// 2. log marginal likelihood vs prequential product.
Outcome scoring_oracle() {
    std::mt19937_64 rng(2002);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng() % 4, n = rng() % 21;
        std::vector<std::string> names;
        for (std::size_t i = 0; i < m; ++i) names.push_back("v" + std::to_string(i));
        std::vector<CaseRecord> recs(n);
        for (auto& r : recs)
            for (std::size_t i = 0; i < m; ++i) r.values.push_back(rng() & 1);
        const Dataset d(AttributeSchema(names, 0), recs);
        const auto s = oracle::random_model(m, rng).structure();
        const double closed = log_marginal_likelihood(s, d, 1.0);
        const double sequential = oracle::prequential_log_likelihood(s, d, 1.0);
        worst = std::max(worst, std::abs(std::exp(closed - sequential) - 1.0));
    }
    const Dataset single(AttributeSchema({"x"}, 0), {{{1}, {}, {}}, {{1}, {}, {}}, {{0}, {}, {}}});
    const double exact = std::abs(log_marginal_likelihood(NetworkStructure(1), single, 1.0) - std::log(1.0 / 12.0));
    return {worst <= 1e-9 && exact <= 1e-12, "max relative diff " + fmt(worst) + " (tol 1e-9); [1,1,0] |log diff| " +
                                                 fmt(exact) + " (tol 1e-12)"};
}

// 3. metric identities.
Outcome metric_identities() {
    std::mt19937_64 rng(3003);
    std::normal_distribution<double> g;
    double worst_i = 0.0, worst_w = 0.0;
    bool exact = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t dim = 1 + rng() % 18;
        std::vector<double> a(dim), b(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            a[i] = trial % 2 ? double(rng() & 1) : g(rng);
            b[i] = trial % 2 ? double(rng() & 1) : g(rng);
        }
        Eigen::MatrixXd x(dim, dim);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
        const auto spd = regularized_inverse(x * x.transpose(), 1e-6);
        const auto euclid = MetricConfig::euclidean(dim);
        const auto maha_i = MetricConfig::mahalanobis(Eigen::MatrixXd::Identity(dim, dim));
        const auto maha = MetricConfig::mahalanobis(spd);
        const auto ones = MetricConfig::weighted_mahalanobis(spd, {std::vector<double>(dim, 1.0)});
        worst_i = std::max(worst_i, std::abs(distance(maha_i, a, b) - distance(euclid, a, b)));
        worst_w = std::max(worst_w, std::abs(distance(ones, a, b) - distance(maha, a, b)));
        for (const auto* m : {&euclid, &maha_i, &maha, &ones})
            exact = exact && distance(*m, a, b) == distance(*m, b, a) && distance(*m, a, a) == 0.0;
    }
    return {worst_i <= 1e-9 && worst_w <= 1e-9 && exact,
            "mahalanobis(I) vs euclidean " + fmt(worst_i) + ", weighted(1) vs mahalanobis " + fmt(worst_w) +
                " (tol 1e-9); symmetry/zero exact: " + (exact ? "yes" : "no")};
}

// 4. roc_auc vs rational Mann-Whitney, every labeling of small score sets.
Outcome auc_exhaustive() {
    const auto start = Clock::now();
    std::mt19937_64 rng(4004);
    std::size_t labelings = 0, mismatches = 0;
    for (std::size_t n = 2; n <= 10; ++n) {
        for (int set = 0; set < 12; ++set) {
            // coarse grids give ties, fine grids give distinct scores
            const std::uint64_t grid = set % 3 == 0 ? 3 : set % 3 == 1 ? n : 1000;
            std::vector<double> scores(n);
            for (auto& s : scores) s = double(1 + rng() % grid) / double(grid + 1);
            for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
                std::vector<LabeledScore> labeled;
                for (std::size_t i = 0; i < n; ++i)
                    labeled.push_back({scores[i], (mask >> i & 1) ? GoldLabel::anomalous : GoldLabel::normal});
                const auto mw = oracle::mann_whitney(labeled);
                if (roc_auc(labeled) != static_cast<double>(mw.numerator) / static_cast<double>(mw.denominator))
                    ++mismatches;
                ++labelings;
            }
        }
    }
    const double elapsed = seconds_since(start);
    return {mismatches == 0 && elapsed < 30.0, std::to_string(labelings) + " labelings, " +
                                                   std::to_string(mismatches) + " mismatches, " + fmt(elapsed, 3) +
                                                   " s (limit 30 s)"};
}

// 5. structure recovery on a strong 4-node chain.
Outcome structure_recovery() {
    const AttributeSchema schema({"a", "b", "c", "d"}, 3);
    const NetworkStructure chain({{}, {0}, {1}, {2}});
    std::vector<DirichletTable> tables;
    for (std::size_t i = 0; i < 4; ++i) {
        DirichletTable t(chain.parents(i).size(), 1.0);
        if (i == 0) t.alpha[0] = {0.5, 0.5};
        else {
            t.alpha[0] = {0.9, 0.1};  // parent false -> mostly false
            t.alpha[1] = {0.1, 0.9};  // parent true -> mostly true
        }
        tables.push_back(t);
    }
    const BayesNetModel truth(schema, chain, tables);
    int successes = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto data = sample_from_model(truth, 2000, seed);
        const auto learned = learn_structure(data, 4, 1.0);
        if (log_marginal_likelihood(learned, data, 1.0) >= log_marginal_likelihood(chain, data, 1.0)) ++successes;
    }
    return {successes >= 18, std::to_string(successes) + "/20 seeds reach the true chain's score (need 18)"};
}

struct ConfigRun {
    std::string name;
    ModelKind model;
    PopulationKind population;
};

const std::vector<ConfigRun> kConfigs{
    {"nb_all", ModelKind::naive_bayes, PopulationKind::all},
    {"nb_mahalanobis", ModelKind::naive_bayes, PopulationKind::mahalanobis_k},
    {"nb_weighted", ModelKind::naive_bayes, PopulationKind::weighted_mahalanobis_k},
    {"bbn_all", ModelKind::learned_bbn, PopulationKind::all},
    {"bbn_mahalanobis", ModelKind::learned_bbn, PopulationKind::mahalanobis_k},
    {"bbn_weighted", ModelKind::learned_bbn, PopulationKind::weighted_mahalanobis_k},
};

struct EndToEnd {
    std::vector<EvalReport> reports;
    std::vector<double> seconds;
    std::size_t eval_size = 0, eval_anomalous = 0;
};

EndToEnd run_end_to_end(const fs::path& out_dir) {
    SyntheticSpec spec;  // 2287 records, max_parents 3, 5% injected, 21 flagged + 79 random, seed 7
    const auto exp = make_synthetic_experiment(port_schema(), spec);
    EndToEnd result;
    result.eval_size = exp.eval.size();
    for (const auto& r : exp.eval.records()) result.eval_anomalous += *r.gold_label == GoldLabel::anomalous;
    for (const auto& c : kConfigs) {
        DetectionConfig cfg;  // k 40, threshold 0.05, prior 1, max_parents 4
        cfg.model_kind = c.model;
        cfg.population = c.population;
        const auto start = Clock::now();
        auto report = leave_one_out(exp.eval, exp.data, cfg);
        result.seconds.push_back(seconds_since(start));
        write_report(report, out_dir / c.name);
        if (report.structure) {
            std::ofstream f(out_dir / c.name / "structure.txt", std::ios::binary);
            write_structure(f, *report.structure, port_schema());
        }
        result.reports.push_back(std::move(report));
    }
    return result;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

// 7. rejection scenario.
Outcome rejection_test() {
    // 1-D: 20 records at 0/1, query at 50 vs query inside the cluster.
    ContextPoints pts(1);
    for (int i = 0; i < 20; ++i) pts.push_back(std::vector<double>{double(i % 2)});
    const auto e = MetricConfig::euclidean(1);
    const bool far_rejected = !neighborhood_quality(pts, std::vector<double>{50}, 5, e).accepted;
    const bool near_accepted = neighborhood_quality(pts, std::vector<double>{1}, 5, e).accepted;

    // Same shape through detect_case on binary records.
    const AttributeSchema schema({"t", "a", "b", "c", "d", "e", "f"}, 0);
    std::vector<CaseRecord> recs;
    for (int i = 0; i < 20; ++i) {
        std::vector<std::uint8_t> v(7, 0);
        v[0] = i % 2;
        if (i % 4 == 1) v[1 + (i / 4) % 6] = 1;
        recs.push_back({v, {}, {}});
    }
    const Dataset repo(schema, recs);
    DetectionConfig cfg;
    cfg.population = PopulationKind::mahalanobis_k;
    cfg.k = 5;
    const auto far = detect_case(repo, {{1, 1, 1, 1, 1, 1, 1}, {}, {}}, cfg).status;
    const auto near = detect_case(repo, {{1, 0, 0, 0, 0, 0, 0}, {}, {}}, cfg).status;
    const bool pass = far_rejected && near_accepted && far == Status::indeterminate && near != Status::indeterminate;
    return {pass, std::string("1-D far ") + (far_rejected ? "rejected" : "accepted") + ", near " +
                      (near_accepted ? "accepted" : "rejected") + "; binary far -> " + std::string(to_string(far)) +
                      ", near -> " + std::string(to_string(near))};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const std::string& title, const Outcome& o) {
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << o.detail << std::endl;
        failures += !o.pass;
    };

    report(1, "prediction oracle equivalence", prediction_oracle());
    report(2, "scoring oracle equivalence", scoring_oracle());
    report(3, "metric identities", metric_identities());
    report(4, "ROC AUC exhaustive Mann-Whitney", auc_exhaustive());
    report(5, "structure recovery", structure_recovery());

    const auto root = fs::temp_directory_path() / "condanom_acceptance";
    fs::remove_all(root);
    const auto first = run_end_to_end(root / "run1");
    {
        std::ostringstream detail;
        bool pass = true;
        detail << "eval " << first.eval_size << " cases (" << first.eval_anomalous << " anomalous);";
        for (std::size_t i = 0; i < kConfigs.size(); ++i) {
            const auto& r = first.reports[i];
            pass = pass && first.seconds[i] < 300.0 && r.auc_roc.has_value();
            detail << ' ' << kConfigs[i].name << " roc=" << (r.auc_roc ? fmt(*r.auc_roc, 3) : "NA")
                   << " pr=" << (r.auc_pr ? fmt(*r.auc_pr, 3) : "NA") << " indet=" << r.indeterminate << " ("
                   << fmt(first.seconds[i], 3) << " s)";
        }
        const double nb_all = first.reports[0].auc_roc.value_or(0.0);
        const double nb_weighted = first.reports[2].auc_roc.value_or(0.0);
        pass = pass && nb_all >= 0.70 && nb_weighted >= nb_all - 0.05;
        detail << "; need each < 300 s, nb_all roc >= 0.70, nb_weighted roc >= nb_all - 0.05";
        report(6, "synthetic end-to-end", {pass, detail.str()});
    }

    report(7, "neighborhood rejection", rejection_test());

    {
        const auto second = run_end_to_end(root / "run2");
        (void)second;
        std::size_t compared = 0, differing = 0;
        for (const auto& entry : fs::recursive_directory_iterator(root / "run1")) {
            if (!entry.is_regular_file()) continue;
            const auto rel = fs::relative(entry.path(), root / "run1");
            ++compared;
            if (slurp(entry.path()) != slurp(root / "run2" / rel)) ++differing;
        }
        report(8, "determinism", {compared > 0 && differing == 0, std::to_string(compared) + " report files compared, " +
                                                                      std::to_string(differing) + " differ"});
    }
    fs::remove_all(root);

    std::cout << (failures ? "ACCEPTANCE FAILED: " + std::to_string(failures) + " criterion(s)" : "ALL CRITERIA PASS")
              << std::endl;
    return failures ? 1 : 0;
}
