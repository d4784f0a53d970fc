#include "cellularity/feature_table.hpp"

#include <fstream>
#include <stdexcept>

#include "cellularity/csv.hpp"
#include "json.hpp"

namespace cellularity {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("feature matrix size mismatch");
}

void FeatureMatrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw std::invalid_argument("row has " + std::to_string(values.size()) + " values, expected " +
                                std::to_string(cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path) {
  const std::size_t n = table.ids.size();
  if (table.features.rows() != n || (table.targets && table.targets->size() != n)) {
    throw std::invalid_argument("feature table columns have inconsistent lengths");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const std::size_t cols = n == 0 ? kFeatureCount : table.features.cols();
  out << "patch_id";
  for (std::size_t c = 0; c < cols; ++c) out << ',' << feature_column_name(c);
  if (table.targets) out << ",target";
  out << '\n';
  for (std::size_t r = 0; r < n; ++r) {
    out << table.ids[r];
    for (double v : table.features.row(r)) out << ',' << csv::format_double(v);
    if (table.targets) out << ',' << csv::format_double((*table.targets)[r]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
  const csv::Table raw = csv::read(path);
  if (raw.header.empty() || raw.header[0] != "patch_id") {
    throw FormatError(path.string() + ":1: first column must be patch_id");
  }
  const auto target_col = raw.column("target");
  std::size_t width = 0;
  for (std::size_t c = 1; c < raw.header.size(); ++c) {
    if (target_col && c == *target_col) continue;
    if (raw.header[c] != feature_column_name(width)) {
      throw FormatError(path.string() + ":1: unexpected column \"" + raw.header[c] + "\"");
    }
    ++width;
  }
  if (target_col && *target_col != raw.header.size() - 1) {
    throw FormatError(path.string() + ":1: target must be the last column");
  }

  FeatureTable table;
  table.features = FeatureMatrix(0, width);
  if (target_col) table.targets.emplace();
  std::vector<double> row(width);
  for (const auto& r : raw.rows) {
    table.ids.push_back(r.fields[0]);
    for (std::size_t c = 0; c < width; ++c) {
      const auto v = csv::parse_double(r.fields[c + 1]);
      if (!v) {
        throw FormatError(path.string() + ":" + std::to_string(r.line) + ": bad number \"" +
                          r.fields[c + 1] + "\"");
      }
      row[c] = *v;
    }
    table.features.append_row(row);
    if (target_col) {
      const auto t = csv::parse_double(r.fields[*target_col]);
      if (!t) {
        throw FormatError(path.string() + ":" + std::to_string(r.line) + ": bad target \"" +
                          r.fields[*target_col] + "\"");
      }
      table.targets->push_back(*t);
    }
  }
  return table;
}

std::filesystem::path schema_sidecar_path(const std::filesystem::path& features_csv) {
  auto p = features_csv;
  p.replace_extension(".schema.json");
  return p;
}

void write_feature_schema(const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kFeatureSchemaVersion;
  doc["n_features"] = kFeatureCount;
  auto cols = nlohmann::ordered_json::array();
  for (const auto& c : feature_columns()) {
    nlohmann::ordered_json col;
    col["name"] = c.name;
    col["channel"] = to_string(c.channel);
    col["family"] = to_string(c.family);
    col["threshold"] = c.threshold ? nlohmann::ordered_json(*c.threshold) : nullptr;
    cols.push_back(std::move(col));
  }
  doc["columns"] = std::move(cols);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << doc.dump(2) << '\n';
}

std::string read_feature_schema_version(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  try {
    const auto doc = nlohmann::json::parse(in);
    return doc.at("schema_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed feature schema: " + e.what());
  }
}

std::vector<std::pair<std::string, double>> read_id_value_csv(const std::filesystem::path& path,
                                                              const std::string& value_column) {
  const csv::Table raw = csv::read(path);
  const auto id_col = raw.column("patch_id");
  const auto val_col = raw.column(value_column);
  if (!id_col || !val_col) {
    throw FormatError(path.string() + ":1: expected columns patch_id and " + value_column);
  }
  std::vector<std::pair<std::string, double>> out;
  out.reserve(raw.rows.size());
  for (const auto& r : raw.rows) {
    const auto v = csv::parse_double(r.fields[*val_col]);
    if (!v) {
      throw FormatError(path.string() + ":" + std::to_string(r.line) + ": bad number \"" +
                        r.fields[*val_col] + "\"");
    }
    out.emplace_back(r.fields[*id_col], *v);
  }
  return out;
}

}  // namespace cellularity
