#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cellularity/pixel_map.hpp"

namespace cellularity {

inline constexpr std::array<double, 7> kAreaThresholds = {0.02, 0.04, 0.08, 0.16,
                                                          0.24, 0.32, 0.5};
inline constexpr std::array<double, 6> kBlobThresholds = {0.02, 0.04, 0.08, 0.16, 0.24, 0.5};

// Per channel: (area, activation) per area threshold, (count, center
// activation) per blob threshold, then the total activation.
inline constexpr std::size_t kFeaturesPerChannel =
    kAreaThresholds.size() * 2 + kBlobThresholds.size() * 2 + 1;
inline constexpr std::size_t kFeatureCount = kNucleusChannels.size() * kFeaturesPerChannel;
static_assert(kFeaturesPerChannel == 27);
static_assert(kFeatureCount == 81);

inline constexpr std::string_view kFeatureSchemaVersion = "cellfeat-v1";

/// LoG scale matched to a disk of the given diameter: a scale-normalized LoG
/// responds most strongly to a disk of radius r at sigma = r / sqrt(2).
inline double matched_log_sigma(double diameter = 15.0) {
  return diameter / (2.0 * std::sqrt(2.0));
}

/// Responses at or below this are treated as flat.
inline constexpr double kMinBlobResponse = 1e-6;

struct ThresholdStats {
  std::size_t area = 0;
  double activation = 0.0;
};

/// Pixels with value >= t: their count and the sum of their values.
ThresholdStats threshold_stats(std::span<const float> values, double t);

/// Sum of all values, accumulated in row-major order.
double total_activation(std::span<const float> values);

struct Blob {
  double cx = 0.0;  // sub-pixel column
  double cy = 0.0;  // sub-pixel row
  int px = 0;       // peak pixel
  int py = 0;
  double response = 0.0;         // sigma^2 * (-Laplacian of the smoothed map)
  float center_activation = 0.0f;  // map value at the peak pixel
};

/// Scale-normalized negative LoG of the plane: sigma^2 * -(Gxx + Gyy) * map,
/// Gaussian truncated at 4 sigma, symmetric reflection at the borders.
/// Throws std::invalid_argument when the kernel is wider than the plane.
std::vector<float> log_response(const Plane<float>& plane, double sigma);

/// All strict 8-neighbourhood maxima of the LoG response above
/// kMinBlobResponse, after suppressing any maximum that lies within `sigma`
/// of a stronger one. Ordered by decreasing response.
std::vector<Blob> detect_blobs(const Plane<float>& plane, double sigma = matched_log_sigma());

/// detect_blobs filtered to blobs whose center activation is >= t.
std::vector<Blob> log_blobs(const Plane<float>& plane, double t,
                            double sigma = matched_log_sigma());

struct FeatureVector81 {
  std::array<double, kFeatureCount> values{};
  std::string_view schema_version = kFeatureSchemaVersion;
};

struct FeatureOptions {
  double log_sigma = matched_log_sigma();
};

/// Requires the Normal, Lymphocyte and Malignant channels; Background is ignored.
FeatureVector81 extract_features(const PixelMap& map, const FeatureOptions& options = {});

enum class FeatureFamily { Area, Activation, BlobCount, BlobActivation, TotalActivation };
std::string_view to_string(FeatureFamily f);

struct FeatureColumn {
  std::string name;  // f000 .. f080
  Channel channel = Channel::Normal;
  FeatureFamily family = FeatureFamily::Area;
  std::optional<double> threshold;
};

/// Column metadata in canonical order.
const std::array<FeatureColumn, kFeatureCount>& feature_columns();
std::string feature_column_name(std::size_t index);

/// Index of a feature by (channel, family, threshold).
std::size_t feature_index(Channel channel, FeatureFamily family,
                          std::optional<double> threshold = std::nullopt);

}  // namespace cellularity
