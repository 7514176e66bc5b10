#include "zegnn/tabular_io.hpp"

#include "zegnn/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace zegnn {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

double parse_real(const std::string& cell, size_t row, const std::string& column) {
    const std::string s = trim(cell);
    double value = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    if (!s.empty() && *begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw ParseError("row " + std::to_string(row) + ", column '" + column +
                         "': not a finite real: '" + cell + "'");
    }
    return value;
}

int parse_int(const std::string& cell, size_t row, const std::string& column) {
    const std::string s = trim(cell);
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("row " + std::to_string(row) + ", column '" + column +
                         "': not an integer: '" + cell + "'");
    }
    return value;
}

std::string quote_if_needed(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

void RoleSchema::validate() const {
    if (outcome.empty()) throw SchemaError("schema: 'outcome' is not set");
    if (coord_x.empty()) throw SchemaError("schema: 'coord_x' is not set");
    if (coord_y.empty()) throw SchemaError("schema: 'coord_y' is not set");
    if (burden_cols.empty()) throw SchemaError("schema: burden block is empty");
    if (capacity_cols.empty()) throw SchemaError("schema: capacity block is empty");
    std::set<std::string> seen;
    auto claim = [&](const std::string& name) {
        if (!seen.insert(name).second) {
            throw SchemaError("schema: column '" + name + "' is assigned more than one role");
        }
    };
    claim(outcome);
    claim(coord_x);
    claim(coord_y);
    for (const auto& c : burden_cols) claim(c);
    for (const auto& c : capacity_cols) claim(c);
    if (!regime_col.empty()) claim(regime_col);
}

std::vector<std::string> RoleSchema::covariate_names() const {
    std::vector<std::string> names = burden_cols;
    names.insert(names.end(), capacity_cols.begin(), capacity_cols.end());
    return names;
}

RoleSchema parse_schema(const std::string& text) {
    RoleSchema schema;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw SchemaError("schema line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "outcome") {
            schema.outcome = value;
        } else if (key == "coord_x") {
            schema.coord_x = value;
        } else if (key == "coord_y") {
            schema.coord_y = value;
        } else if (key == "burden") {
            schema.burden_cols = split_list(value);
        } else if (key == "capacity") {
            schema.capacity_cols = split_list(value);
        } else if (key == "regime") {
            schema.regime_col = value;
        } else {
            throw SchemaError("schema line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    schema.validate();
    return schema;
}

RoleSchema load_schema(const std::string& path) {
    return parse_schema(read_file(path));
}

std::string format_schema(const RoleSchema& schema) {
    std::string out;
    out += "outcome = " + schema.outcome + "\n";
    out += "coord_x = " + schema.coord_x + "\n";
    out += "coord_y = " + schema.coord_y + "\n";
    out += "burden = " + join(schema.burden_cols) + "\n";
    out += "capacity = " + join(schema.capacity_cols) + "\n";
    if (!schema.regime_col.empty()) out += "regime = " + schema.regime_col + "\n";
    return out;
}

Matrix SpatialDataset::covariates() const {
    Matrix x(n(), p());
    x << x_burden, x_capacity;
    return x;
}

std::vector<std::string> SpatialDataset::covariate_names() const {
    std::vector<std::string> names = burden_names;
    names.insert(names.end(), capacity_names.begin(), capacity_names.end());
    return names;
}

SpatialDataset subset(const SpatialDataset& data, std::span<const int> ids) {
    const auto m = static_cast<Eigen::Index>(ids.size());
    SpatialDataset out;
    out.coords.resize(m, 2);
    out.x_burden.resize(m, data.p_burden());
    out.x_capacity.resize(m, data.p_capacity());
    out.y.resize(m);
    out.burden_names = data.burden_names;
    out.capacity_names = data.capacity_names;
    for (Eigen::Index r = 0; r < m; ++r) {
        const int i = ids[r];
        if (i < 0 || i >= data.n()) throw ParameterError("subset: row id out of range");
        out.coords.row(r) = data.coords.row(i);
        out.x_burden.row(r) = data.x_burden.row(i);
        out.x_capacity.row(r) = data.x_capacity.row(i);
        out.y(r) = data.y(i);
    }
    if (data.regime_labels) {
        std::vector<int> labels;
        labels.reserve(ids.size());
        for (int i : ids) labels.push_back((*data.regime_labels)[i]);
        out.regime_labels = std::move(labels);
    }
    if (data.truth) {
        const auto& t = *data.truth;
        GroundTruthFields s;
        s.E.resize(m);
        s.S.resize(m);
        s.F.resize(m);
        s.grad_F.resize(m, t.grad_F.cols());
        s.grad_E.resize(m, t.grad_E.cols());
        s.grad_S.resize(m, t.grad_S.cols());
        for (Eigen::Index r = 0; r < m; ++r) {
            const int i = ids[r];
            s.E(r) = t.E(i);
            s.S(r) = t.S(i);
            s.F(r) = t.F(i);
            s.grad_F.row(r) = t.grad_F.row(i);
            s.grad_E.row(r) = t.grad_E.row(i);
            s.grad_S.row(r) = t.grad_S.row(i);
            if (!t.regime.empty()) s.regime.push_back(t.regime[i]);
        }
        out.truth = std::move(s);
    }
    return out;
}

int CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<int>(it - header.begin());
}

CsvTable parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        const bool blank = record.size() == 1 && trim(record[0]).empty();
        if (!blank) records.push_back(std::move(record));
        record.clear();
    };
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
        } else if (c == '\r') {
            // swallowed; CRLF endings
        } else {
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) throw ParseError("csv: unterminated quoted field");
    if (!field.empty() || !record.empty()) end_record();
    if (records.empty()) throw ParseError("csv: missing header row");

    CsvTable table;
    table.header = std::move(records.front());
    for (auto& h : table.header) h = trim(h);
    for (size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != table.header.size()) {
            throw ParseError("row " + std::to_string(r) + ": expected " +
                             std::to_string(table.header.size()) + " fields, got " +
                             std::to_string(records[r].size()));
        }
        table.rows.push_back(std::move(records[r]));
    }
    return table;
}

CsvTable read_csv(const std::string& path) {
    return parse_csv(read_file(path));
}

SpatialDataset parse_dataset(const CsvTable& table, const RoleSchema& schema) {
    schema.validate();
    const int c_y = table.column(schema.outcome);
    const int c_cx = table.column(schema.coord_x);
    const int c_cy = table.column(schema.coord_y);
    std::vector<int> c_e, c_s;
    for (const auto& name : schema.burden_cols) c_e.push_back(table.column(name));
    for (const auto& name : schema.capacity_cols) c_s.push_back(table.column(name));
    const int c_reg = schema.regime_col.empty() ? -1 : table.column(schema.regime_col);

    const auto n = static_cast<Eigen::Index>(table.rows.size());
    if (n < 1) throw ParseError("dataset has no rows");
    SpatialDataset data;
    data.coords.resize(n, 2);
    data.x_burden.resize(n, static_cast<Eigen::Index>(c_e.size()));
    data.x_capacity.resize(n, static_cast<Eigen::Index>(c_s.size()));
    data.y.resize(n);
    data.burden_names = schema.burden_cols;
    data.capacity_names = schema.capacity_cols;
    std::vector<int> labels;
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = table.rows[r];
        const auto ur = static_cast<size_t>(r) + 1;
        data.y(r) = parse_real(row[c_y], ur, schema.outcome);
        data.coords(r, 0) = parse_real(row[c_cx], ur, schema.coord_x);
        data.coords(r, 1) = parse_real(row[c_cy], ur, schema.coord_y);
        for (size_t j = 0; j < c_e.size(); ++j) {
            data.x_burden(r, static_cast<Eigen::Index>(j)) = parse_real(row[c_e[j]], ur, schema.burden_cols[j]);
        }
        for (size_t j = 0; j < c_s.size(); ++j) {
            data.x_capacity(r, static_cast<Eigen::Index>(j)) = parse_real(row[c_s[j]], ur, schema.capacity_cols[j]);
        }
        if (c_reg >= 0) labels.push_back(parse_int(row[c_reg], ur, schema.regime_col));
    }
    if (c_reg >= 0) data.regime_labels = std::move(labels);
    return data;
}

SpatialDataset load_dataset(const std::string& csv_path, const RoleSchema& schema) {
    return parse_dataset(read_csv(csv_path), schema);
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw ParameterError("format_double: conversion failed");
    return std::string(buf, ptr);
}

std::string format_dataset_csv(const SpatialDataset& data, const RoleSchema& schema) {
    if (static_cast<int>(schema.burden_cols.size()) != data.p_burden() ||
        static_cast<int>(schema.capacity_cols.size()) != data.p_capacity()) {
        throw SchemaError("schema block sizes do not match dataset");
    }
    const bool with_regime = !schema.regime_col.empty() && data.regime_labels.has_value();
    std::vector<std::string> header{schema.outcome, schema.coord_x, schema.coord_y};
    header.insert(header.end(), schema.burden_cols.begin(), schema.burden_cols.end());
    header.insert(header.end(), schema.capacity_cols.begin(), schema.capacity_cols.end());
    if (with_regime) header.push_back(schema.regime_col);

    std::string out;
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) out += ',';
        out += quote_if_needed(header[i]);
    }
    out += '\n';
    for (int r = 0; r < data.n(); ++r) {
        out += format_double(data.y(r));
        out += ',' + format_double(data.coords(r, 0));
        out += ',' + format_double(data.coords(r, 1));
        for (int j = 0; j < data.p_burden(); ++j) out += ',' + format_double(data.x_burden(r, j));
        for (int j = 0; j < data.p_capacity(); ++j) out += ',' + format_double(data.x_capacity(r, j));
        if (with_regime) out += ',' + std::to_string((*data.regime_labels)[r]);
        out += '\n';
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw SchemaError("cannot write '" + path + "'");
        out << contents;
        if (!out) throw SchemaError("write failed for '" + path + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw SchemaError("cannot write '" + path + "'");
    }
}

Standardized standardize(const Vector& values) {
    const auto n = values.size();
    if (n < 2) throw DegenerateError("standardize: need at least 2 values");
    Standardized s;
    s.mean = values.mean();
    const double var = (values.array() - s.mean).square().sum() / static_cast<double>(n);
    s.sd = std::sqrt(var);
    if (!(s.sd > 0.0)) throw DegenerateError("standardize: constant column (sd = 0)");
    s.z = (values.array() - s.mean) / s.sd;
    return s;
}

Vector destandardize(const Vector& z, double mean, double sd) {
    return (z.array() * sd + mean).matrix();
}

ColumnMoments ColumnMoments::fit(const Matrix& values) {
    ColumnMoments m;
    m.mean.resize(values.cols());
    m.sd.resize(values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        const Standardized s = standardize(values.col(j));
        m.mean(j) = s.mean;
        m.sd(j) = s.sd;
    }
    return m;
}

Matrix ColumnMoments::apply(const Matrix& values) const {
    if (values.cols() != mean.size()) throw ParameterError("ColumnMoments: column count mismatch");
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        out.col(j) = (values.col(j).array() - mean(j)) / sd(j);
    }
    return out;
}

}  // namespace zegnn
