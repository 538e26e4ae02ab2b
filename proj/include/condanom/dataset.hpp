// SPDX-License-Identifier: Apache-2.0
//
// Binary case records: schema, CSV ingestion, gold-label joining.

#ifndef CONDANOM_DATASET_HPP
#define CONDANOM_DATASET_HPP

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace condanom {

/// Error raised for malformed input data. Carries the 1-based line and
/// column of the offending cell when known (0 = unknown).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
        : std::runtime_error(format(what, line, column)), line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    static std::string format(const std::string& what, std::size_t line, std::size_t column) {
        if (line == 0) return what;
        std::string out = what + " at line " + std::to_string(line);
        if (column != 0) out += ", column " + std::to_string(column);
        return out;
    }

    std::size_t line_;
    std::size_t column_;
};

enum class GoldLabel { normal, anomalous };

inline std::string_view to_string(GoldLabel label) {
    return label == GoldLabel::anomalous ? "anomalous" : "normal";
}

/// Ordered attribute names with one designated target. Every attribute
/// is binary.
class AttributeSchema {
public:
    AttributeSchema() = default;

    AttributeSchema(std::vector<std::string> names, std::size_t target_index)
        : names_(std::move(names)), target_index_(target_index) {
        if (names_.empty()) throw DataError("schema has no attributes");
        if (target_index_ >= names_.size()) throw DataError("target index out of range");
        std::unordered_set<std::string> seen;
        for (const auto& name : names_) {
            if (name.empty()) throw DataError("empty attribute name");
            if (!seen.insert(name).second) throw DataError("duplicate attribute name '" + name + "'");
        }
    }

    static AttributeSchema with_target(std::vector<std::string> names, std::string_view target) {
        auto it = std::find(names.begin(), names.end(), target);
        if (it == names.end()) throw DataError("unknown target attribute '" + std::string(target) + "'");
        auto index = static_cast<std::size_t>(it - names.begin());
        return AttributeSchema(std::move(names), index);
    }

    std::size_t arity() const noexcept { return names_.size(); }
    std::size_t context_arity() const noexcept { return names_.empty() ? 0 : names_.size() - 1; }
    std::size_t target_index() const noexcept { return target_index_; }
    const std::string& target_name() const { return names_.at(target_index_); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) return std::nullopt;
        return static_cast<std::size_t>(it - names_.begin());
    }

    /// Names of the non-target attributes, in schema order.
    std::vector<std::string> context_names() const {
        std::vector<std::string> out;
        out.reserve(context_arity());
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (i != target_index_) out.push_back(names_[i]);
        return out;
    }

    friend bool operator==(const AttributeSchema&, const AttributeSchema&) = default;

private:
    std::vector<std::string> names_;
    std::size_t target_index_ = 0;
};

/// One case. Values are 0/1 bytes aligned with the schema.
struct CaseRecord {
    std::vector<std::uint8_t> values;
    std::optional<std::string> case_id;
    std::optional<GoldLabel> gold_label;

    friend bool operator==(const CaseRecord&, const CaseRecord&) = default;
};

class Dataset {
public:
    Dataset() = default;

    Dataset(AttributeSchema schema, std::vector<CaseRecord> records)
        : schema_(std::move(schema)), records_(std::move(records)) {
        std::unordered_set<std::string> ids;
        for (std::size_t r = 0; r < records_.size(); ++r) {
            const auto& rec = records_[r];
            if (rec.values.size() != schema_.arity())
                throw DataError("record " + std::to_string(r) + " has " + std::to_string(rec.values.size()) +
                                " values, schema has " + std::to_string(schema_.arity()));
            for (auto v : rec.values)
                if (v > 1) throw DataError("record " + std::to_string(r) + " holds a non-binary value");
            if (rec.case_id && !ids.insert(*rec.case_id).second)
                throw DataError("duplicate case_id '" + *rec.case_id + "'");
        }
    }

    const AttributeSchema& schema() const noexcept { return schema_; }
    const std::vector<CaseRecord>& records() const noexcept { return records_; }
    const CaseRecord& record(std::size_t i) const { return records_.at(i); }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    std::optional<std::size_t> find(std::string_view case_id) const {
        for (std::size_t i = 0; i < records_.size(); ++i)
            if (records_[i].case_id && *records_[i].case_id == case_id) return i;
        return std::nullopt;
    }

    /// Copy of this dataset without record `index`.
    Dataset without(std::size_t index) const {
        std::vector<CaseRecord> rest;
        rest.reserve(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i)
            if (i != index) rest.push_back(records_[i]);
        return Dataset(schema_, std::move(rest));
    }

    /// Subset in the given index order.
    Dataset select(std::span<const std::size_t> indices) const {
        std::vector<CaseRecord> out;
        out.reserve(indices.size());
        for (auto i : indices) out.push_back(records_.at(i));
        return Dataset(schema_, std::move(out));
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    AttributeSchema schema_;
    std::vector<CaseRecord> records_;
};

/// Values of `record` with the target position removed.
inline std::vector<std::uint8_t> context_of(const CaseRecord& record, const AttributeSchema& schema) {
    std::vector<std::uint8_t> out;
    out.reserve(schema.context_arity());
    for (std::size_t i = 0; i < record.values.size(); ++i)
        if (i != schema.target_index()) out.push_back(record.values[i]);
    return out;
}

/// The pneumonia admission schema: `Hospitalization` plus 18 binary
/// findings (2 demographic, 5 co-existing illnesses, 4 physical exam,
/// 7 lab/radiographic). Thresholds are folded into identifier-safe names.
inline AttributeSchema port_schema() {
    return AttributeSchema::with_target(
        {
            "Hospitalization",
            // demographic
            "Age_gt_50",
            "Gender_male",
            // co-existing illnesses
            "Congestive_heart_failure",
            "Cerebrovascular_disease",
            "Neoplastic_disease",
            "Renal_disease",
            "Liver_disease",
            // physical examination
            "Pulse_ge_125",
            "Respiratory_rate_ge_30",
            "Systolic_bp_lt_90",
            "Temperature_lt_35_or_gt_40",
            // lab and radiographic findings
            "Bun_ge_30",
            "Glucose_ge_250",
            "Hematocrit_lt_30",
            "Sodium_lt_130",
            "Arterial_po2_lt_60",
            "Arterial_ph_lt_7_35",
            "Pleural_effusion",
        },
        "Hospitalization");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            return cells;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::optional<std::uint8_t> parse_binary(std::string_view cell) {
    if (cell == "0") return 0;
    if (cell == "1") return 1;
    auto l = lower(cell);
    if (l == "false") return 0;
    if (l == "true") return 1;
    return std::nullopt;
}

// Reads lines, strips a UTF-8 BOM and trailing CR, tracks line numbers.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    bool next(std::string& line) {
        if (!std::getline(in_, line)) return false;
        ++number_;
        if (number_ == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    }

    std::size_t number() const noexcept { return number_; }

private:
    std::istream& in_;
    std::size_t number_ = 0;
};

}  // namespace detail

/// Parses a dataset CSV. The header row is mandatory; an optional first
/// column named `case_id` carries opaque identifiers. Blank lines are skipped.
inline Dataset parse_dataset(std::istream& in, std::string_view target_name) {
    detail::LineReader reader(in);
    std::string line;
    bool have_header = false;
    while (reader.next(line)) {
        if (!detail::trim(line).empty()) {
            have_header = true;
            break;
        }
    }
    if (!have_header) throw DataError("missing header row");
    const std::size_t header_line = reader.number();

    auto header = detail::split_commas(line);
    const bool has_ids = !header.empty() && header.front() == "case_id";
    std::vector<std::string> names;
    std::unordered_set<std::string_view> seen;
    for (std::size_t c = has_ids ? 1 : 0; c < header.size(); ++c) {
        if (header[c].empty()) throw DataError("empty header name", header_line, c + 1);
        if (!seen.insert(header[c]).second)
            throw DataError("duplicate header name '" + std::string(header[c]) + "'", header_line, c + 1);
        names.emplace_back(header[c]);
    }
    if (names.empty()) throw DataError("header has no attribute columns", header_line);
    auto target = std::find(names.begin(), names.end(), target_name);
    if (target == names.end())
        throw DataError("unknown target attribute '" + std::string(target_name) + "'", header_line);
    AttributeSchema schema(names, static_cast<std::size_t>(target - names.begin()));

    const std::size_t columns = header.size();
    std::vector<CaseRecord> records;
    std::unordered_map<std::string, std::size_t> id_lines;
    while (reader.next(line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_commas(line);
        if (cells.size() != columns) throw DataError("ragged row", reader.number());
        CaseRecord rec;
        rec.values.reserve(schema.arity());
        std::size_t c = 0;
        if (has_ids) {
            if (!cells[0].empty()) {
                std::string id(cells[0]);
                auto [it, fresh] = id_lines.emplace(id, reader.number());
                if (!fresh)
                    throw DataError("duplicate case_id '" + id + "' (first seen at line " +
                                        std::to_string(it->second) + ")",
                                    reader.number(), 1);
                rec.case_id = std::move(id);
            }
            c = 1;
        }
        for (; c < cells.size(); ++c) {
            auto v = detail::parse_binary(cells[c]);
            if (!v) throw DataError("non-binary value '" + std::string(cells[c]) + "'", reader.number(), c + 1);
            rec.values.push_back(*v);
        }
        records.push_back(std::move(rec));
    }
    return Dataset(std::move(schema), std::move(records));
}

inline Dataset parse_dataset(std::string_view text, std::string_view target_name) {
    std::istringstream in{std::string(text)};
    return parse_dataset(in, target_name);
}

/// Writes `data` in the format read by parse_dataset. A `case_id` column
/// is emitted when any record carries an id.
inline void write_dataset(std::ostream& out, const Dataset& data) {
    const bool has_ids = std::any_of(data.records().begin(), data.records().end(),
                                     [](const CaseRecord& r) { return r.case_id.has_value(); });
    if (has_ids) out << "case_id,";
    const auto& names = data.schema().names();
    for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
    out << '\n';
    for (const auto& rec : data.records()) {
        if (has_ids) out << rec.case_id.value_or("") << ',';
        for (std::size_t i = 0; i < rec.values.size(); ++i) out << (i ? "," : "") << int(rec.values[i]);
        out << '\n';
    }
}

struct LabelJoin {
    Dataset dataset;
    /// Label rows whose case_id is not in the dataset, as "line N: id".
    std::vector<std::string> unmatched;
};

/// Joins a `case_id,label` CSV onto `dataset`. Only gold labels change.
/// An optional `case_id,label` header row is recognized.
inline LabelJoin attach_labels(const Dataset& dataset, std::istream& labels) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (const auto& id = dataset.record(i).case_id) index.emplace(*id, i);

    auto records = dataset.records();
    LabelJoin out;
    detail::LineReader reader(labels);
    std::string line;
    bool first = true;
    while (reader.next(line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_commas(line);
        if (first) {
            first = false;
            if (cells.size() == 2 && cells[0] == "case_id" && cells[1] == "label") continue;
        }
        if (cells.size() != 2) throw DataError("label row must have 2 columns", reader.number());
        GoldLabel label;
        auto value = detail::lower(cells[1]);
        if (value == "anomalous")
            label = GoldLabel::anomalous;
        else if (value == "normal")
            label = GoldLabel::normal;
        else
            throw DataError("malformed label '" + std::string(cells[1]) + "'", reader.number(), 2);
        auto it = index.find(std::string(cells[0]));
        if (it == index.end()) {
            out.unmatched.push_back("line " + std::to_string(reader.number()) + ": " + std::string(cells[0]));
            continue;
        }
        records[it->second].gold_label = label;
    }
    out.dataset = Dataset(dataset.schema(), std::move(records));
    return out;
}

inline LabelJoin attach_labels(const Dataset& dataset, std::string_view text) {
    std::istringstream in{std::string(text)};
    return attach_labels(dataset, in);
}

/// Writes `case_id,label` rows for every labeled record that has an id.
inline void write_labels(std::ostream& out, const Dataset& data) {
    out << "case_id,label\n";
    for (const auto& rec : data.records())
        if (rec.case_id && rec.gold_label) out << *rec.case_id << ',' << to_string(*rec.gold_label) << '\n';
}

}  // namespace condanom

#endif  // CONDANOM_DATASET_HPP
