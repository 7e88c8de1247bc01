#include "nlgrowth/dataset.hpp"

#include "nlgrowth/errors.hpp"
#include "nlgrowth/stats.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace nlgrowth {

const LongitudinalVar* ColumnRoles::find(const std::string& name) const {
    for (const auto& v : longitudinal)
        if (v.name == name) return &v;
    return nullptr;
}

LongitudinalDataset::LongitudinalDataset(std::vector<std::string> columns, ColumnRoles roles,
                                         std::vector<IndividualRecord> individuals)
    : columns_(std::move(columns)), roles_(std::move(roles)), individuals_(std::move(individuals)) {
    for (int i = 0; i < static_cast<int>(columns_.size()); ++i) column_index_[columns_[i]] = i;
    validate();
}

int LongitudinalDataset::column_index(const std::string& col) const {
    auto it = column_index_.find(col);
    if (it == column_index_.end()) throw MissingColumn(col);
    return it->second;
}

std::optional<double> LongitudinalDataset::cell(const IndividualRecord& rec,
                                                const std::string& col) const {
    return rec.values[static_cast<std::size_t>(column_index(col))];
}

std::vector<bool> LongitudinalDataset::mask(const IndividualRecord& rec,
                                            const std::string& var) const {
    const LongitudinalVar* v = roles_.find(var);
    if (!v) throw UnknownRole(var);
    std::vector<bool> m(v->value_cols.size());
    for (std::size_t j = 0; j < v->value_cols.size(); ++j)
        m[j] = cell(rec, v->value_cols[j]).has_value();
    return m;
}

std::pair<std::vector<double>, std::vector<int>>
LongitudinalDataset::observed_subvector(const IndividualRecord& rec, const std::string& var) const {
    const LongitudinalVar* v = roles_.find(var);
    if (!v) throw UnknownRole(var);
    std::vector<double> vals;
    std::vector<int> idx;
    for (std::size_t j = 0; j < v->value_cols.size(); ++j) {
        auto c = cell(rec, v->value_cols[j]);
        if (c.has_value()) {
            vals.push_back(*c);
            idx.push_back(static_cast<int>(j) + 1);
        }
    }
    return {vals, idx};
}

std::vector<double> LongitudinalDataset::times(const IndividualRecord& rec,
                                               const std::string& var) const {
    const LongitudinalVar* v = roles_.find(var);
    if (!v) throw UnknownRole(var);
    std::vector<double> t(v->time_cols.size(), std::nan(""));
    for (std::size_t j = 0; j < v->time_cols.size(); ++j) {
        auto c = cell(rec, v->time_cols[j]);
        if (c.has_value()) t[j] = *c;
    }
    return t;
}

void LongitudinalDataset::validate() const {
    for (const auto& v : roles_.longitudinal) {
        if (v.value_cols.size() != v.time_cols.size())
            throw Error("variable '" + v.name + "': value and time column counts differ");
        for (const auto& c : v.value_cols) column_index(c);
        for (const auto& c : v.time_cols) column_index(c);
    }
    for (const auto& c : roles_.tic_cols) column_index(c);
    for (const auto& c : roles_.class_tic_cols) column_index(c);

    for (const auto& rec : individuals_) {
        if (rec.values.size() != columns_.size())
            throw Error("row '" + rec.id + "' has wrong cell count");
        for (const auto& v : roles_.longitudinal) {
            double prev = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < v.value_cols.size(); ++j) {
                const auto y = rec.values[static_cast<std::size_t>(column_index_.at(v.value_cols[j]))];
                const auto t = rec.values[static_cast<std::size_t>(column_index_.at(v.time_cols[j]))];
                if (y.has_value() && !t.has_value())
                    throw OrphanObservation("individual '" + rec.id + "': " + v.value_cols[j] +
                                            " observed but " + v.time_cols[j] + " is missing");
                if (t.has_value()) {
                    if (*t <= prev)
                        throw NonMonotoneTimes("individual '" + rec.id + "': times of '" + v.name +
                                               "' are not strictly increasing at " + v.time_cols[j]);
                    prev = *t;
                }
            }
        }
    }
}

std::uint64_t LongitudinalDataset::fingerprint() const {
    std::uint64_t h = fnv1a("nlgrowth-data", 13);
    for (const auto& c : columns_) h = fnv1a(c.data(), c.size(), h);
    for (const auto& rec : individuals_) {
        h = fnv1a(rec.id.data(), rec.id.size(), h);
        for (const auto& v : rec.values) {
            const double d = v.has_value() ? *v : std::numeric_limits<double>::quiet_NaN();
            h = fnv1a(&d, sizeof(d), h);
        }
    }
    return h;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

} // namespace

LongitudinalDataset load_wide_csv(const std::string& path, const ColumnRoles& roles) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("empty file: " + path);
    const std::vector<std::string> header = split_csv_line(line);

    std::vector<IndividualRecord> recs;
    int id_idx = -1;
    if (!roles.id_col.empty()) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == roles.id_col) id_idx = static_cast<int>(i);
        if (id_idx < 0) throw MissingColumn(roles.id_col);
    }

    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        cells.resize(header.size());
        IndividualRecord rec;
        rec.id = id_idx >= 0 && !cells[static_cast<std::size_t>(id_idx)].empty()
                     ? cells[static_cast<std::size_t>(id_idx)]
                     : std::to_string(row + 1);
        rec.values.resize(header.size());
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (static_cast<int>(i) == id_idx) continue;
            const std::string& s = cells[i];
            if (is_missing_token(s)) continue;
            try {
                std::size_t pos = 0;
                const double d = std::stod(s, &pos);
                if (pos != s.size()) throw std::invalid_argument(s);
                rec.values[i] = d;
            } catch (const std::exception&) {
                throw Error("row " + std::to_string(row + 2) + ", column '" + header[i] +
                            "': cannot parse '" + s + "'");
            }
        }
        recs.push_back(std::move(rec));
        ++row;
    }
    return LongitudinalDataset(header, roles, std::move(recs));
}

void write_wide_csv(const LongitudinalDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open file for writing: " + path);
    const auto& cols = data.columns();
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (i) out << ',';
        out << cols[i];
    }
    out << '\n';
    char buf[40];
    const auto& roles = data.roles();
    int id_idx = -1;
    if (!roles.id_col.empty()) id_idx = data.column_index(roles.id_col);
    for (const auto& rec : data.individuals()) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (i) out << ',';
            if (static_cast<int>(i) == id_idx && !rec.values[i].has_value()) {
                out << rec.id;
                continue;
            }
            if (rec.values[i].has_value()) {
                // 17 significant digits round-trip any finite double
                std::snprintf(buf, sizeof(buf), "%.17g", *rec.values[i]);
                out << buf;
            }
        }
        out << '\n';
    }
}

} // namespace nlgrowth
