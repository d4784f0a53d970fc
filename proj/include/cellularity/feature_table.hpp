#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellularity/features.hpp"

namespace cellularity {

/// Dense row-major matrix of feature values, one row per sample.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void append_row(std::span<const double> values);

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Contents of a feature CSV: "patch_id,f000,...,fNNN[,target]".
struct FeatureTable {
  std::vector<std::string> ids;
  FeatureMatrix features;
  std::optional<std::vector<double>> targets;
};

void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable read_feature_csv(const std::filesystem::path& path);

/// Sidecar describing each column's (channel, family, threshold).
std::filesystem::path schema_sidecar_path(const std::filesystem::path& features_csv);
void write_feature_schema(const std::filesystem::path& path);
/// Version tag recorded in a sidecar written by write_feature_schema.
std::string read_feature_schema_version(const std::filesystem::path& path);

/// Reads a two-column "patch_id,<value column>" style CSV, keyed by id.
/// The value column is looked up by name.
std::vector<std::pair<std::string, double>> read_id_value_csv(const std::filesystem::path& path,
                                                              const std::string& value_column);

}  // namespace cellularity
