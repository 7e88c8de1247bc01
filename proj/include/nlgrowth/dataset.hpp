#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nlgrowth {

// A longitudinal variable measured at J waves: value columns plus the time
// (definition-variable) columns, in wave order. `waves` carries the global
// wave indices (0-based) so that multi-outcome models can pair occasions.
struct LongitudinalVar {
    std::string name;
    std::vector<std::string> value_cols;
    std::vector<std::string> time_cols;
    std::vector<int> waves;

    int wave_count() const { return static_cast<int>(value_cols.size()); }
};

// Column-role map for a wide-format file. TICs (and class TICs for mixture
// models) are single columns.
struct ColumnRoles {
    std::vector<LongitudinalVar> longitudinal;
    std::vector<std::string> tic_cols;
    std::vector<std::string> class_tic_cols;
    std::string id_col; // optional; row index is used when empty

    const LongitudinalVar* find(const std::string& name) const;
};

// One row of the wide file. `values` is aligned to the dataset's column
// order; a disengaged optional is a missing cell.
struct IndividualRecord {
    std::string id;
    std::vector<std::optional<double>> values;
};

class LongitudinalDataset {
public:
    LongitudinalDataset() = default;
    LongitudinalDataset(std::vector<std::string> columns, ColumnRoles roles,
                        std::vector<IndividualRecord> individuals);

    const std::vector<std::string>& columns() const { return columns_; }
    const ColumnRoles& roles() const { return roles_; }
    const std::vector<IndividualRecord>& individuals() const { return individuals_; }
    int n_individuals() const { return static_cast<int>(individuals_.size()); }

    int column_index(const std::string& col) const; // throws MissingColumn
    std::optional<double> cell(const IndividualRecord& rec, const std::string& col) const;

    // Observedness mask over the waves of a longitudinal variable.
    std::vector<bool> mask(const IndividualRecord& rec, const std::string& var) const;

    // Present values of a longitudinal variable with their original wave
    // indices (1-based), order preserved.
    std::pair<std::vector<double>, std::vector<int>>
    observed_subvector(const IndividualRecord& rec, const std::string& var) const;

    // Time values over all waves of a variable; NaN marks a missing time.
    std::vector<double> times(const IndividualRecord& rec, const std::string& var) const;

    // Stable content hash used to detect cross-fit dataset mismatches.
    std::uint64_t fingerprint() const;

private:
    void validate() const;

    std::vector<std::string> columns_;
    ColumnRoles roles_;
    std::vector<IndividualRecord> individuals_;
    std::map<std::string, int> column_index_;
};

// Reads a wide-format CSV (UTF-8, header row, one row per individual).
// Empty cells and the literal token "NA" are missing.
LongitudinalDataset load_wide_csv(const std::string& path, const ColumnRoles& roles);

// Writes the dataset back out; finite numeric cells survive a round trip
// bit-exactly.
void write_wide_csv(const LongitudinalDataset& data, const std::string& path);

} // namespace nlgrowth
