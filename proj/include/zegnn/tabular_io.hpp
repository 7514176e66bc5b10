#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace zegnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Column roles of a tabular spatial dataset. Column lists keep their order;
// that order defines the covariate index j used everywhere downstream.
struct RoleSchema {
    std::string outcome;
    std::string coord_x;
    std::string coord_y;
    std::vector<std::string> burden_cols;
    std::vector<std::string> capacity_cols;
    // Optional integer column carrying known regime labels.
    std::string regime_col;

    // Throws SchemaError if the roles overlap or a block is empty.
    void validate() const;
    std::vector<std::string> covariate_names() const;
};

// Parses the key-value schema format (`key = value`, `#` comments).
// Recognised keys: outcome, coord_x, coord_y, burden, capacity, regime.
RoleSchema parse_schema(const std::string& text);
RoleSchema load_schema(const std::string& path);
std::string format_schema(const RoleSchema& schema);

// Known generating fields of a synthetic scenario. Gradient matrices are
// N x p in covariate order (burden block first, then capacity block).
struct GroundTruthFields {
    Vector E;
    Vector S;
    Vector F;
    std::vector<int> regime;
    Matrix grad_F;
    Matrix grad_E;
    Matrix grad_S;
};

struct SpatialDataset {
    Matrix coords;      // N x 2
    Matrix x_burden;    // N x p_E
    Matrix x_capacity;  // N x p_S
    Vector y;
    std::optional<std::vector<int>> regime_labels;
    std::optional<GroundTruthFields> truth;
    std::vector<std::string> burden_names;
    std::vector<std::string> capacity_names;

    int n() const { return static_cast<int>(y.size()); }
    int p_burden() const { return static_cast<int>(x_burden.cols()); }
    int p_capacity() const { return static_cast<int>(x_capacity.cols()); }
    int p() const { return p_burden() + p_capacity(); }
    // [x_burden | x_capacity]
    Matrix covariates() const;
    std::vector<std::string> covariate_names() const;
};

// Rows `ids` of `data`, in the given order; truth and labels follow.
SpatialDataset subset(const SpatialDataset& data, std::span<const int> ids);

// Minimal RFC-4180 reader: header row required, quoted fields allowed.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Throws SchemaError naming `name` if absent.
    int column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::string& path);

SpatialDataset load_dataset(const std::string& csv_path, const RoleSchema& schema);
SpatialDataset parse_dataset(const CsvTable& table, const RoleSchema& schema);

// Writes the dataset with the schema's column names; doubles use the
// shortest representation that parses back to the identical value.
std::string format_dataset_csv(const SpatialDataset& data, const RoleSchema& schema);

// Shortest round-trip decimal form of a double.
std::string format_double(double value);

// Whole-file helpers. write_file_atomic writes a sibling temp file and renames.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& contents);

// Population (divide-by-N) z-score.
struct Standardized {
    Vector z;
    double mean = 0.0;
    double sd = 1.0;
};

Standardized standardize(const Vector& values);
Vector destandardize(const Vector& z, double mean, double sd);

// Per-column population moments, fitted on a row subset and reusable on any rows.
struct ColumnMoments {
    Vector mean;
    Vector sd;

    static ColumnMoments fit(const Matrix& values);
    Matrix apply(const Matrix& values) const;
};

}  // namespace zegnn
