#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "cellularity/pixel_map.hpp"

namespace cellularity {

inline constexpr double kLossEpsilon = 1e-7;

/// Weights of the composite segmentation loss.
///
/// Each class loss is (1 - alpha) * BCE - alpha * J, and the total is the
/// class-weighted mean of class losses. BCE is a per-pixel mean, so alpha
/// balances two quantities that do not depend on the patch size.
struct LossConfig {
  double alpha = 0.15;
  // Indexed by Channel: Normal, Lymphocyte, Malignant, Background.
  std::array<double, 4> class_weights = {1.0, 1.0, 4.0, 1.0};
  double epsilon = kLossEpsilon;

  double weight(Channel c) const { return class_weights[index_of(c)]; }
  double weight_sum() const;
  /// Throws std::invalid_argument on an out-of-range field.
  void validate() const;
};

/// Four dense double-precision planes in canonical channel order. Holds
/// predictions and targets for the loss, and its gradient, whose entries are
/// not confined to [0,1].
struct ClassMaps {
  int width = 0;
  int height = 0;
  std::array<std::vector<double>, 4> planes;

  static ClassMaps zeros(int width, int height);
  /// Copies the four canonical channels (looked up by name) into doubles.
  static ClassMaps from(const PixelMap& map);

  std::span<const double> operator[](Channel c) const { return planes[index_of(c)]; }
  std::span<double> operator[](Channel c) { return planes[index_of(c)]; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
};

/// Mean binary cross entropy, with predictions clamped to [eps, 1 - eps].
double bce(std::span<const double> target, std::span<const double> pred,
           double eps = kLossEpsilon);

/// Soft Jaccard: mean over pixels of y*p / (y + p - y*p). Terms whose
/// denominator is below eps contribute 0.
double soft_jaccard(std::span<const double> target, std::span<const double> pred,
                    double eps = kLossEpsilon);

double class_loss(std::span<const double> target, std::span<const double> pred,
                  const LossConfig& cfg);

double total_loss(const ClassMaps& target, const ClassMaps& pred, const LossConfig& cfg);
double total_loss(const PixelMap& target, const PixelMap& pred, const LossConfig& cfg);

/// d(total_loss)/d(pred) for every pixel and class. Exact where pred lies
/// strictly inside (eps, 1 - eps); outside, the BCE clamp makes the BCE part 0.
ClassMaps total_loss_grad(const ClassMaps& target, const ClassMaps& pred, const LossConfig& cfg);

/// Hard Jaccard index per channel: |{pred >= t} & {truth = 1}| / |union|,
/// 1 when both sets are empty. Channels are matched by name.
std::map<Channel, double> jaccard_index(const PixelMap& pred, const PixelMap& truth,
                                        double threshold = 0.5);

struct GradientCheck {
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  Channel worst_channel = Channel::Normal;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares total_loss_grad against central differences of total_loss at
/// `samples` coordinates drawn from `seed`. Relative error is
/// |a - n| / max(|a|, |n|, 1e-12).
GradientCheck check_gradient(const ClassMaps& target, const ClassMaps& pred, const LossConfig& cfg,
                             std::size_t samples, std::uint64_t seed, double step = 1e-5);

/// Random binary target and a prediction drawn uniformly from [lo, hi].
struct RandomLossCase {
  ClassMaps target;
  ClassMaps pred;
};
RandomLossCase random_loss_case(int size, std::uint64_t seed, double lo = 0.01, double hi = 0.99);

}  // namespace cellularity
