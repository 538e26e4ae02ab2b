// SPDX-License-Identifier: Apache-2.0
//
// condanom: command-line front end for conditional anomaly detection.
//
// Exit status: 0 success, 1 usage error, 2 data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "condanom/condanom.hpp"

namespace fs = std::filesystem;
using namespace condanom;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

// Data error tagged with the file it came from.
struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError(path + ": cannot open for reading");
    return in;
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError(path.string() + ": cannot open for writing");
    return out;
}

template <class Fn>
auto with_file(const std::string& path, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const DataError& e) {
        throw FileError(path + ": " + e.what());
    }
}

Dataset load_dataset(const std::string& path, const std::string& target) {
    auto in = open_input(path);
    return with_file(path, [&] { return parse_dataset(in, target); });
}

Dataset load_labels(const Dataset& data, const std::string& path) {
    auto in = open_input(path);
    auto joined = with_file(path, [&] { return attach_labels(data, in); });
    for (const auto& miss : joined.unmatched) std::cerr << path << ": warning: unknown case_id, " << miss << '\n';
    return std::move(joined.dataset);
}

NetworkStructure load_structure(const std::string& path, const AttributeSchema& schema) {
    auto in = open_input(path);
    return with_file(path, [&] { return read_structure(in, schema); });
}

struct DetectionFlags {
    std::string model = "nb";
    std::string population = "all";
    std::size_t k = 40;
    double threshold = 0.05;
    double prior = 1.0;
    double epsilon = 1e-6;
    std::size_t max_parents = 4;
    std::string structure;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--model", model, "Probabilistic model")
            ->check(CLI::IsMember({"nb", "bbn"}))
            ->capture_default_str();
        cmd->add_option("--population", population, "Reference population")
            ->check(CLI::IsMember({"all", "mahalanobis", "weighted"}))
            ->capture_default_str();
        cmd->add_option("--k", k, "Neighborhood size")->check(CLI::PositiveNumber)->capture_default_str();
        cmd->add_option("--threshold", threshold, "Detection threshold p_e")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        cmd->add_option("--prior", prior, "Dirichlet pseudo-count per cell")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--epsilon", epsilon, "Covariance regularization")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--max-parents", max_parents, "In-degree bound for structure learning")->capture_default_str();
        cmd->add_option("--structure", structure, "Structure file for --model bbn (learned if omitted)")
            ->check(CLI::ExistingFile);
    }

    DetectionConfig config(const AttributeSchema& schema) const {
        DetectionConfig c;
        c.model_kind = model == "nb" ? ModelKind::naive_bayes : ModelKind::learned_bbn;
        c.population = population == "all"           ? PopulationKind::all
                       : population == "mahalanobis" ? PopulationKind::mahalanobis_k
                                                     : PopulationKind::weighted_mahalanobis_k;
        c.k = k;
        c.threshold = threshold;
        c.prior_strength = prior;
        c.epsilon = epsilon;
        c.max_parents = max_parents;
        if (!structure.empty()) c.fixed_structure = load_structure(structure, schema);
        return c;
    }
};

int run_inspect(const std::string& data_path, const std::string& target, const std::string& labels_path) {
    auto data = load_dataset(data_path, target);
    if (!labels_path.empty()) data = load_labels(data, labels_path);
    const auto& s = data.schema();
    std::cout << "attributes: " << s.arity() << " (target " << s.target_name() << ", context " << s.context_arity()
              << ")\n";
    std::cout << "records: " << data.size() << '\n';
    std::size_t ids = 0, labeled = 0, anomalous = 0;
    std::vector<std::size_t> ones(s.arity(), 0);
    for (const auto& r : data.records()) {
        ids += r.case_id.has_value();
        if (r.gold_label) {
            ++labeled;
            anomalous += *r.gold_label == GoldLabel::anomalous;
        }
        for (std::size_t i = 0; i < r.values.size(); ++i) ones[i] += r.values[i];
    }
    std::cout << "case_ids: " << ids << '\n';
    if (!labels_path.empty()) std::cout << "labeled: " << labeled << " (anomalous " << anomalous << ")\n";
    std::cout << "attribute,role,true_count\n";
    for (std::size_t i = 0; i < s.arity(); ++i)
        std::cout << s.name(i) << ',' << (i == s.target_index() ? "target" : "context") << ',' << ones[i] << '\n';
    return 0;
}

int run_detect(const std::string& data_path, const std::string& target, const std::string& case_id,
               const std::string& inline_record, const DetectionFlags& flags) {
    const auto data = load_dataset(data_path, target);
    auto config = flags.config(data.schema());
    CaseRecord query;
    Dataset repository = data;
    if (!case_id.empty()) {
        const auto idx = data.find(case_id);
        if (!idx) throw FileError(data_path + ": no case with case_id '" + case_id + "'");
        query = data.record(*idx);
        repository = data.without(*idx);
    } else {
        const auto header = [&] {
            std::string h;
            for (std::size_t i = 0; i < data.schema().arity(); ++i) h += (i ? "," : "") + data.schema().name(i);
            return h;
        }();
        query = with_file("--record", [&] { return parse_dataset(header + '\n' + inline_record + '\n', target); })
                    .record(0);
    }
    if (config.model_kind == ModelKind::learned_bbn && !config.fixed_structure)
        config.fixed_structure = learn_structure(repository, config.max_parents, config.prior_strength);
    write_outcome(std::cout, detect_case(repository, query, config));
    return 0;
}

int run_evaluate(const std::string& data_path, const std::string& labels_path, const std::string& target,
                 const std::string& out_dir, unsigned threads, const DetectionFlags& flags) {
    const auto data = load_labels(load_dataset(data_path, target), labels_path);
    std::vector<std::size_t> labeled;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data.record(i).gold_label) labeled.push_back(i);
    if (labeled.empty()) throw FileError(labels_path + ": no labeled cases to evaluate");
    const auto eval = data.select(labeled);
    const auto report = leave_one_out(eval, data, flags.config(data.schema()), {.threads = threads});

    write_report(report, out_dir);
    if (report.structure) {
        auto out = open_output(fs::path(out_dir) / "structure.txt");
        write_structure(out, *report.structure, data.schema());
    }
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    using detail::number;
    std::cout << "model=" << flags.model << " population=" << flags.population << " scored=" << report.scored_cases.size()
              << " indeterminate=" << report.indeterminate << " auc_roc=" << number(report.auc_roc)
              << " auc_pr=" << number(report.auc_pr) << '\n';
    return 0;
}

int run_learn_structure(const std::string& data_path, const std::string& target, const std::string& labels_path,
                        const std::string& out_path, std::size_t max_parents, double prior) {
    auto data = load_dataset(data_path, target);
    if (!labels_path.empty()) {
        // Hold out the labeled (evaluation) cases.
        data = load_labels(data, labels_path);
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!data.record(i).gold_label) keep.push_back(i);
        data = data.select(keep);
    }
    if (data.empty()) throw FileError(data_path + ": no records left to learn from");
    const auto s = learn_structure(data, max_parents, prior);
    auto out = open_output(out_path);
    write_structure(out, s, data.schema());
    std::cout << "edges=" << s.edge_count() << " log_marginal_likelihood="
              << detail::number(log_marginal_likelihood(s, data, prior)) << '\n';
    return 0;
}

int run_weights(const std::string& data_path, const std::string& target, const std::string& out_path) {
    const auto data = load_dataset(data_path, target);
    const auto w = rank_sum_weights(data);
    auto out = open_output(out_path);
    out << "attribute,weight\n";
    const auto names = data.schema().context_names();
    for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << ',' << detail::number(w.w[i]) << '\n';
    return 0;
}

AttributeSchema synthetic_schema(std::size_t nodes) {
    if (nodes == port_schema().arity()) return port_schema();
    std::vector<std::string> names{"target"};
    for (std::size_t i = 1; i < nodes; ++i) names.push_back("x" + std::to_string(i));
    return AttributeSchema(names, 0);
}

struct SynthFlags {
    std::size_t nodes = 19;
    std::size_t n = 2287;
    std::uint64_t seed = 7;
    std::size_t max_parents = 3;
    double inject = 0.0;
    std::size_t eval_size = 100;
    std::size_t eval_flagged = 21;
    double eval_threshold = 0.05;
    std::string out_data = "synthetic.csv";
    std::string out_labels = "labels.csv";
    std::string out_structure;
};

int run_synth(const SynthFlags& f) {
    if (f.nodes < 2) throw std::invalid_argument("--nodes must be at least 2");
    SyntheticSpec spec;
    spec.records = f.n;
    spec.max_parents = f.max_parents;
    spec.inject = f.inject;
    spec.eval_size = f.eval_size;
    spec.eval_flagged = f.eval_flagged;
    spec.eval_threshold = f.eval_threshold;
    spec.seed = f.seed;
    const auto exp = make_synthetic_experiment(synthetic_schema(f.nodes), spec);
    if (f.inject > 0.0) {
        auto out = open_output(f.out_labels);
        write_labels(out, f.eval_size > 0 ? exp.eval : exp.data);
    }
    {
        // Labels live only in the label file.
        std::vector<CaseRecord> recs = exp.data.records();
        for (auto& r : recs) r.gold_label.reset();
        auto out = open_output(f.out_data);
        write_dataset(out, Dataset(exp.data.schema(), std::move(recs)));
    }
    if (!f.out_structure.empty()) {
        auto out = open_output(f.out_structure);
        write_structure(out, exp.generator.structure(), exp.generator.schema());
    }
    std::cout << "records=" << exp.data.size() << " target=" << exp.data.schema().target_name() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional anomaly detection over binary case records"};
    app.require_subcommand(1);

    std::string data_path, labels_path, target = "Hospitalization", out_path, case_id, inline_record;
    unsigned threads = 0;
    DetectionFlags detection;

    auto* inspect = app.add_subcommand("inspect", "Print schema and dataset summary counts");
    inspect->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    inspect->add_option("--target", target, "Target attribute")->capture_default_str();
    inspect->add_option("--labels", labels_path, "Label CSV")->check(CLI::ExistingFile);

    auto* detect = app.add_subcommand("detect", "Score one case against the rest of the dataset");
    detect->add_option("--data", data_path, "Dataset CSV (the repository)")->required()->check(CLI::ExistingFile);
    detect->add_option("--target", target, "Target attribute")->capture_default_str();
    auto* by_id = detect->add_option("--case-id", case_id, "Case to score; it is excluded from the repository");
    auto* by_record = detect->add_option("--record", inline_record, "Inline record, comma-separated in schema order");
    by_id->excludes(by_record);
    detection.add_to(detect);

    DetectionFlags eval_flags;
    auto* evaluate = app.add_subcommand("evaluate", "Leave-one-out evaluation over the labeled cases");
    evaluate->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--labels", labels_path, "Label CSV (case_id,label)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--target", target, "Target attribute")->capture_default_str();
    evaluate->add_option("--out", out_path, "Report directory")->default_str("report");
    evaluate->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
    eval_flags.add_to(evaluate);

    std::size_t max_parents = 4;
    double prior = 1.0;
    auto* learn = app.add_subcommand("learn-structure", "Greedy structure search; writes a structure file");
    learn->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    learn->add_option("--target", target, "Target attribute")->capture_default_str();
    learn->add_option("--labels", labels_path, "Label CSV; labeled cases are held out")->check(CLI::ExistingFile);
    learn->add_option("--out", out_path, "Structure file")->default_str("structure.txt");
    learn->add_option("--max-parents", max_parents, "In-degree bound")->capture_default_str();
    learn->add_option("--prior", prior, "Dirichlet pseudo-count per cell")->check(CLI::PositiveNumber)->capture_default_str();

    auto* weights = app.add_subcommand("weights", "Rank-sum importance weights of context attributes");
    weights->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    weights->add_option("--target", target, "Target attribute")->capture_default_str();
    weights->add_option("--out", out_path, "Weight CSV")->default_str("weights.csv");

    SynthFlags synth_flags;
    auto* synth = app.add_subcommand("synth", "Sample a synthetic dataset from a seeded random network");
    synth->add_option("--nodes", synth_flags.nodes, "Attributes (19 uses the pneumonia schema)")->capture_default_str();
    synth->add_option("--n", synth_flags.n, "Records")->capture_default_str();
    synth->add_option("--seed", synth_flags.seed, "Seed")->capture_default_str();
    synth->add_option("--max-parents", synth_flags.max_parents, "In-degree of the generating network")
        ->capture_default_str();
    synth->add_option("--inject", synth_flags.inject, "Fraction of records to turn into anomalies")
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--eval-size", synth_flags.eval_size, "Labeled eval cases (0 = label every record)")
        ->capture_default_str();
    synth->add_option("--eval-flagged", synth_flags.eval_flagged, "Eval cases drawn from detector-flagged cases")
        ->capture_default_str();
    synth->add_option("--out-data", synth_flags.out_data, "Dataset CSV")->capture_default_str();
    synth->add_option("--out-labels", synth_flags.out_labels, "Label CSV")->capture_default_str();
    synth->add_option("--out-structure", synth_flags.out_structure, "Generating structure file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    if (detect->parsed() && case_id.empty() && inline_record.empty()) {
        std::cerr << "detect: one of --case-id or --record is required\n";
        return kUsageError;
    }
    if (out_path.empty()) {
        if (evaluate->parsed()) out_path = "report";
        if (learn->parsed()) out_path = "structure.txt";
        if (weights->parsed()) out_path = "weights.csv";
    }

    try {
        if (inspect->parsed()) return run_inspect(data_path, target, labels_path);
        if (detect->parsed()) return run_detect(data_path, target, case_id, inline_record, detection);
        if (evaluate->parsed()) return run_evaluate(data_path, labels_path, target, out_path, threads, eval_flags);
        if (learn->parsed()) return run_learn_structure(data_path, target, labels_path, out_path, max_parents, prior);
        if (weights->parsed()) return run_weights(data_path, target, out_path);
        if (synth->parsed()) return run_synth(synth_flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsageError;
}
