// SPDX-License-Identifier: Apache-2.0
//
// Binary Bayesian belief networks with Dirichlet (Beta) parameter priors.
//
// Parameters are never point-estimated: every local factor used here is the
// Dirichlet predictive (N_ijk + a_ijk) / (N_ij + a_ij), which is the closed
// form of averaging the local CPT entry over its posterior. Products over
// nodes are taken in log space.

#ifndef CONDANOM_BAYESMODEL_HPP
#define CONDANOM_BAYESMODEL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "condanom/dataset.hpp"

namespace condanom {

/// Per-node ordered parent lists. Parent order fixes the bit layout of
/// parent configurations: parent j contributes bit j.
class NetworkStructure {
public:
    NetworkStructure() = default;
    explicit NetworkStructure(std::size_t nodes) : parents_(nodes) {}

    explicit NetworkStructure(std::vector<std::vector<std::size_t>> parents) : parents_(std::move(parents)) {
        for (std::size_t child = 0; child < parents_.size(); ++child) {
            auto sorted = parents_[child];
            std::sort(sorted.begin(), sorted.end());
            if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
                throw std::invalid_argument("duplicate parent of node " + std::to_string(child));
            for (auto p : sorted) {
                if (p == child) throw std::invalid_argument("node " + std::to_string(child) + " is its own parent");
                if (p >= parents_.size()) throw std::invalid_argument("parent index out of range");
            }
        }
        if (!is_acyclic()) throw std::invalid_argument("network structure has a cycle");
    }

    std::size_t size() const noexcept { return parents_.size(); }
    const std::vector<std::size_t>& parents(std::size_t child) const { return parents_.at(child); }
    const std::vector<std::vector<std::size_t>>& all_parents() const noexcept { return parents_; }

    bool has_edge(std::size_t parent, std::size_t child) const {
        const auto& ps = parents_.at(child);
        return std::find(ps.begin(), ps.end(), parent) != ps.end();
    }

    std::size_t edge_count() const {
        std::size_t n = 0;
        for (const auto& ps : parents_) n += ps.size();
        return n;
    }

    std::size_t max_in_degree() const {
        std::size_t d = 0;
        for (const auto& ps : parents_) d = std::max(d, ps.size());
        return d;
    }

    std::vector<std::size_t> children(std::size_t node) const {
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < parents_.size(); ++c)
            if (has_edge(node, c)) out.push_back(c);
        return out;
    }

    /// Parent list kept sorted ascending.
    void add_edge(std::size_t parent, std::size_t child) {
        auto& ps = parents_.at(child);
        ps.insert(std::upper_bound(ps.begin(), ps.end(), parent), parent);
    }

    void remove_edge(std::size_t parent, std::size_t child) {
        auto& ps = parents_.at(child);
        ps.erase(std::find(ps.begin(), ps.end(), parent));
    }

    /// True when `to` is reachable from `from` along directed edges.
    bool reaches(std::size_t from, std::size_t to) const {
        std::vector<std::vector<std::size_t>> kids(parents_.size());
        for (std::size_t c = 0; c < parents_.size(); ++c)
            for (auto p : parents_[c]) kids[p].push_back(c);
        std::vector<char> seen(parents_.size(), 0);
        std::vector<std::size_t> stack{from};
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            if (v == to) return true;
            if (seen[v]) continue;
            seen[v] = 1;
            for (auto k : kids[v]) stack.push_back(k);
        }
        return false;
    }

    /// Kahn order, smallest ready index first. Empty if the graph is cyclic.
    std::vector<std::size_t> topological_order() const {
        const auto n = parents_.size();
        std::vector<std::size_t> indegree(n);
        std::vector<std::vector<std::size_t>> kids(n);
        for (std::size_t c = 0; c < n; ++c) {
            indegree[c] = parents_[c].size();
            for (auto p : parents_[c]) kids[p].push_back(c);
        }
        std::vector<std::size_t> ready, order;
        for (std::size_t v = 0; v < n; ++v)
            if (indegree[v] == 0) ready.push_back(v);
        while (!ready.empty()) {
            auto it = std::min_element(ready.begin(), ready.end());
            auto v = *it;
            ready.erase(it);
            order.push_back(v);
            for (auto k : kids[v])
                if (--indegree[k] == 0) ready.push_back(k);
        }
        if (order.size() != n) order.clear();
        return order;
    }

    bool is_acyclic() const { return parents_.empty() || !topological_order().empty(); }

    friend bool operator==(const NetworkStructure&, const NetworkStructure&) = default;

private:
    std::vector<std::vector<std::size_t>> parents_;
};

/// Target has no parents; every other node has the target as sole parent.
inline NetworkStructure naive_bayes_structure(const AttributeSchema& schema) {
    NetworkStructure s(schema.arity());
    for (std::size_t i = 0; i < schema.arity(); ++i)
        if (i != schema.target_index()) s.add_edge(schema.target_index(), i);
    return s;
}

/// Index of the parent configuration of `child` observed in `values`.
inline std::size_t parent_configuration(const std::vector<std::size_t>& parents,
                                        std::span<const std::uint8_t> values) {
    std::size_t config = 0;
    for (std::size_t j = 0; j < parents.size(); ++j)
        if (values[parents[j]]) config |= std::size_t{1} << j;
    return config;
}

/// Sufficient statistics and pseudo-counts of one node, per parent
/// configuration, indexed [config][state].
struct DirichletTable {
    std::vector<std::array<double, 2>> alpha;
    std::vector<std::array<std::uint64_t, 2>> counts;

    DirichletTable() = default;
    DirichletTable(std::size_t parent_count, double prior_strength)
        : alpha(std::size_t{1} << parent_count, {prior_strength, prior_strength}),
          counts(std::size_t{1} << parent_count, {0, 0}) {}

    std::size_t configurations() const noexcept { return alpha.size(); }

    /// Posterior predictive probability of `state` under configuration `config`.
    double predictive(std::size_t config, std::uint8_t state) const {
        const auto& a = alpha[config];
        const auto& n = counts[config];
        return (static_cast<double>(n[state]) + a[state]) /
               (static_cast<double>(n[0] + n[1]) + a[0] + a[1]);
    }

    std::uint64_t total_count() const {
        std::uint64_t t = 0;
        for (const auto& n : counts) t += n[0] + n[1];
        return t;
    }
};

class BayesNetModel {
public:
    BayesNetModel(AttributeSchema schema, NetworkStructure structure, std::vector<DirichletTable> tables)
        : schema_(std::move(schema)), structure_(std::move(structure)), tables_(std::move(tables)) {
        if (structure_.size() != schema_.arity()) throw std::invalid_argument("structure does not match schema arity");
        if (tables_.size() != structure_.size()) throw std::invalid_argument("one table per node required");
        for (std::size_t i = 0; i < tables_.size(); ++i) {
            const auto& t = tables_[i];
            if (t.configurations() != (std::size_t{1} << structure_.parents(i).size()) ||
                t.counts.size() != t.alpha.size())
                throw std::invalid_argument("table of node " + std::to_string(i) + " does not match its parents");
            for (const auto& a : t.alpha)
                if (!(a[0] > 0.0) || !(a[1] > 0.0)) throw std::invalid_argument("Dirichlet pseudo-counts must be > 0");
        }
    }

    const AttributeSchema& schema() const noexcept { return schema_; }
    const NetworkStructure& structure() const noexcept { return structure_; }
    const std::vector<DirichletTable>& tables() const noexcept { return tables_; }
    const DirichletTable& table(std::size_t node) const { return tables_.at(node); }

    /// Local Dirichlet predictive of node `i` taking its value in `values`.
    double local_predictive(std::size_t i, std::span<const std::uint8_t> values) const {
        const auto config = parent_configuration(structure_.parents(i), values);
        return tables_[i].predictive(config, values[i]);
    }

    /// Posterior-mean probability that node `i` is true given its parents in `values`.
    double probability_true(std::size_t i, std::span<const std::uint8_t> values) const {
        const auto config = parent_configuration(structure_.parents(i), values);
        return tables_[i].predictive(config, 1);
    }

private:
    AttributeSchema schema_;
    NetworkStructure structure_;
    std::vector<DirichletTable> tables_;
};

/// Conjugate update: exact tallies per node, configuration and state,
/// on top of a uniform pseudo-count `prior_strength`.
inline BayesNetModel fit_parameters(const NetworkStructure& structure, const Dataset& training,
                                    double prior_strength = 1.0) {
    if (!(prior_strength > 0.0)) throw std::invalid_argument("prior strength must be positive");
    if (structure.size() != training.schema().arity())
        throw std::invalid_argument("structure does not match dataset schema");
    std::vector<DirichletTable> tables;
    tables.reserve(structure.size());
    for (std::size_t i = 0; i < structure.size(); ++i) tables.emplace_back(structure.parents(i).size(), prior_strength);
    for (const auto& rec : training.records()) {
        for (std::size_t i = 0; i < structure.size(); ++i) {
            const auto config = parent_configuration(structure.parents(i), rec.values);
            ++tables[i].counts[config][rec.values[i]];
        }
    }
    return BayesNetModel(training.schema(), structure, std::move(tables));
}

/// p(target = record's target value | all other values, model).
///
/// Let J(a) be the product of local predictives over every node with the
/// target clamped to a; the result is J(v) / (J(0) + J(1)). Factors that do
/// not mention the target cancel, so only the target's family and its
/// children's families are evaluated.
inline double predictive_probability(const BayesNetModel& model, const CaseRecord& record) {
    const auto& schema = model.schema();
    if (record.values.size() != schema.arity())
        throw std::invalid_argument("record has " + std::to_string(record.values.size()) +
                                    " values, model expects " + std::to_string(schema.arity()));
    const auto target = schema.target_index();
    const auto children = model.structure().children(target);

    std::vector<std::uint8_t> values = record.values;
    std::array<double, 2> log_joint{};
    for (std::uint8_t a = 0; a < 2; ++a) {
        values[target] = a;
        double lj = std::log(model.local_predictive(target, values));
        for (auto c : children) lj += std::log(model.local_predictive(c, values));
        log_joint[a] = lj;
    }
    const auto actual = record.values[target];
    // 1 / (1 + J(other)/J(actual))
    return 1.0 / (1.0 + std::exp(log_joint[1 - actual] - log_joint[actual]));
}

/// Log of the Bayesian-Dirichlet marginal likelihood of one family.
inline double family_log_score(std::size_t child, const std::vector<std::size_t>& parents, const Dataset& data,
                               double prior_strength) {
    const std::size_t configs = std::size_t{1} << parents.size();
    std::vector<std::array<std::uint64_t, 2>> counts(configs, {0, 0});
    for (const auto& rec : data.records()) ++counts[parent_configuration(parents, rec.values)][rec.values[child]];
    const double a_state = prior_strength;
    const double a_config = 2.0 * prior_strength;
    double score = 0.0;
    for (const auto& n : counts) {
        const auto total = n[0] + n[1];
        if (total == 0) continue;
        score += std::lgamma(a_config) - std::lgamma(a_config + static_cast<double>(total));
        for (auto nk : n) score += std::lgamma(a_state + static_cast<double>(nk)) - std::lgamma(a_state);
    }
    return score;
}

/// log p(data | structure) with parameters integrated out (BD metric with
/// uniform pseudo-counts); the sum of per-node family scores.
inline double log_marginal_likelihood(const NetworkStructure& structure, const Dataset& data,
                                      double prior_strength = 1.0) {
    if (!(prior_strength > 0.0)) throw std::invalid_argument("prior strength must be positive");
    if (structure.size() != data.schema().arity()) throw std::invalid_argument("structure does not match dataset schema");
    double score = 0.0;
    for (std::size_t i = 0; i < structure.size(); ++i) score += family_log_score(i, structure.parents(i), data, prior_strength);
    return score;
}

enum class EdgeMove { add = 0, remove = 1, reverse = 2 };

/// Greedy hill climbing from the empty graph.
///
/// Each step scans candidate moves in (child, parent, kind) order, with
/// kinds ordered add < remove < reverse, and applies the first move whose
/// gain is the largest strictly positive one. For a reversal, (child,
/// parent) name the edge as it exists before the move.
inline NetworkStructure learn_structure(const Dataset& data, std::size_t max_parents = 4,
                                        double prior_strength = 1.0) {
    if (data.empty()) throw std::invalid_argument("structure learning needs at least one record");
    if (!(prior_strength > 0.0)) throw std::invalid_argument("prior strength must be positive");
    const std::size_t m = data.schema().arity();
    NetworkStructure g(m);

    std::map<std::pair<std::size_t, std::vector<std::size_t>>, double> cache;
    auto score = [&](std::size_t child, const std::vector<std::size_t>& parents) {
        auto key = std::make_pair(child, parents);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const double s = family_log_score(child, parents, data, prior_strength);
        cache.emplace(std::move(key), s);
        return s;
    };
    auto with = [](std::vector<std::size_t> ps, std::size_t p) {
        ps.insert(std::upper_bound(ps.begin(), ps.end(), p), p);
        return ps;
    };
    auto without = [](std::vector<std::size_t> ps, std::size_t p) {
        ps.erase(std::find(ps.begin(), ps.end(), p));
        return ps;
    };

    for (;;) {
        double best_gain = 0.0;
        std::size_t best_child = 0, best_parent = 0;
        EdgeMove best_move = EdgeMove::add;
        bool found = false;
        auto consider = [&](double gain, std::size_t c, std::size_t p, EdgeMove mv) {
            if (gain > best_gain) {
                best_gain = gain;
                best_child = c;
                best_parent = p;
                best_move = mv;
                found = true;
            }
        };

        for (std::size_t c = 0; c < m; ++c) {
            const auto& pc = g.parents(c);
            const double current_c = score(c, pc);
            for (std::size_t p = 0; p < m; ++p) {
                if (p == c) continue;
                if (!g.has_edge(p, c)) {
                    if (pc.size() >= max_parents || g.has_edge(c, p) || g.reaches(c, p)) continue;
                    consider(score(c, with(pc, p)) - current_c, c, p, EdgeMove::add);
                } else {
                    const double drop = score(c, without(pc, p)) - current_c;
                    consider(drop, c, p, EdgeMove::remove);
                    const auto& pp = g.parents(p);
                    if (pp.size() >= max_parents) continue;
                    g.remove_edge(p, c);
                    const bool cyclic = g.reaches(p, c);
                    g.add_edge(p, c);
                    if (cyclic) continue;
                    consider(drop + (score(p, with(pp, c)) - score(p, pp)), c, p, EdgeMove::reverse);
                }
            }
        }
        if (!found) break;
        switch (best_move) {
            case EdgeMove::add: g.add_edge(best_parent, best_child); break;
            case EdgeMove::remove: g.remove_edge(best_parent, best_child); break;
            case EdgeMove::reverse:
                g.remove_edge(best_parent, best_child);
                g.add_edge(best_child, best_parent);
                break;
        }
    }
    return g;
}

namespace detail {

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Uniform integer in [0, bound) by rejection; platform independent.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    for (;;) {
        const auto r = rng();
        if (r < limit) return r % bound;
    }
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

inline std::string case_id(std::size_t i, std::size_t n) {
    std::size_t width = 4;
    for (std::size_t x = 10000; x <= n; x *= 10) ++width;
    auto digits = std::to_string(i + 1);
    return "case_" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

}  // namespace detail

/// Forward-samples `n` records in topological order from the posterior-mean
/// parameters. Records get ids `case_0001`, `case_0002`, ...
inline Dataset sample_from_model(const BayesNetModel& model, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto order = model.structure().topological_order();
    std::vector<CaseRecord> records;
    records.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        CaseRecord rec;
        rec.values.assign(model.schema().arity(), 0);
        for (auto i : order) rec.values[i] = detail::uniform01(rng) < model.probability_true(i, rec.values) ? 1 : 0;
        rec.case_id = detail::case_id(r, n);
        records.push_back(std::move(rec));
    }
    return Dataset(model.schema(), std::move(records));
}

/// A seeded random generating network for synthetic experiments.
///
/// Nodes are placed in a random order with the target moved to the middle;
/// each non-first node draws between 1 and `max_parents` parents among the
/// nodes placed before it. Every conditional probability is drawn from
/// [0.02, 0.2] or [0.8, 0.98] with equal chance, so dependencies are strong.
/// Probabilities are encoded as pseudo-counts with zero observed counts.
inline BayesNetModel random_model(const AttributeSchema& schema, std::size_t max_parents, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t m = schema.arity();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    detail::shuffle(order, rng);
    auto t = std::find(order.begin(), order.end(), schema.target_index());
    std::iter_swap(t, order.begin() + static_cast<std::ptrdiff_t>(m / 2));

    NetworkStructure s(m);
    for (std::size_t pos = 1; pos < m; ++pos) {
        const std::size_t cap = std::min(pos, max_parents);
        if (cap == 0) continue;
        const std::size_t count = 1 + detail::uniform_below(rng, cap);
        std::vector<std::size_t> earlier(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pos));
        detail::shuffle(earlier, rng);
        for (std::size_t j = 0; j < count; ++j) s.add_edge(earlier[j], order[pos]);
    }

    std::vector<DirichletTable> tables;
    for (std::size_t i = 0; i < m; ++i) {
        DirichletTable table(s.parents(i).size(), 1.0);
        for (auto& a : table.alpha) {
            const double strong = 0.02 + 0.18 * detail::uniform01(rng);
            const double p_true = detail::uniform01(rng) < 0.5 ? strong : 1.0 - strong;
            a = {1.0 - p_true, p_true};
        }
        tables.push_back(std::move(table));
    }
    return BayesNetModel(schema, std::move(s), std::move(tables));
}

/// Writes one `child <- parent parent ...` line per node, in schema order.
inline void write_structure(std::ostream& out, const NetworkStructure& structure, const AttributeSchema& schema) {
    if (structure.size() != schema.arity()) throw std::invalid_argument("structure does not match schema arity");
    for (const auto& name : schema.names())
        if (name.find_first_of(" \t") != std::string::npos)
            throw std::invalid_argument("attribute name '" + name + "' contains whitespace");
    for (std::size_t c = 0; c < structure.size(); ++c) {
        out << schema.name(c) << " <-";
        for (auto p : structure.parents(c)) out << ' ' << schema.name(p);
        out << '\n';
    }
}

/// Reads the format produced by write_structure. Nodes without a line get
/// no parents; blank lines and lines starting with '#' are ignored.
inline NetworkStructure read_structure(std::istream& in, const AttributeSchema& schema) {
    std::vector<std::vector<std::size_t>> parents(schema.arity());
    std::vector<char> seen(schema.arity(), 0);
    detail::LineReader reader(in);
    std::string line;
    while (reader.next(line)) {
        std::istringstream tokens(line);
        std::string child, arrow;
        if (!(tokens >> child) || child.front() == '#') continue;
        if (!(tokens >> arrow) || arrow != "<-") throw DataError("expected 'child <- parents'", reader.number());
        auto ci = schema.index_of(child);
        if (!ci) throw DataError("unknown attribute '" + child + "'", reader.number());
        if (seen[*ci]) throw DataError("node '" + child + "' listed twice", reader.number());
        seen[*ci] = 1;
        std::string parent;
        while (tokens >> parent) {
            auto pi = schema.index_of(parent);
            if (!pi) throw DataError("unknown attribute '" + parent + "'", reader.number());
            parents[*ci].push_back(*pi);
        }
    }
    try {
        return NetworkStructure(std::move(parents));
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("invalid structure: ") + e.what());
    }
}

}  // namespace condanom

#endif  // CONDANOM_BAYESMODEL_HPP
