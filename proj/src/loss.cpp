#include "cellularity/loss.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace cellularity {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw FormatError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + " pixels");
  }
  if (a.empty()) throw FormatError("loss over an empty raster");
}

void require_same_shape(const ClassMaps& a, const ClassMaps& b) {
  if (a.width != b.width || a.height != b.height) {
    throw FormatError("dimension mismatch: " + std::to_string(a.width) + "x" +
                      std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                      std::to_string(b.height));
  }
  for (Channel c : kAllChannels) require_same_size(a[c], b[c]);
}

}  // namespace

double LossConfig::weight_sum() const {
  double v = 0.0;
  for (double w : class_weights) v += w;
  return v;
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0,1]");
  for (double w : class_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("class weights must be finite and non-negative");
    }
  }
  if (!(weight_sum() > 0.0)) throw std::invalid_argument("class weights must not all be zero");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw std::invalid_argument("epsilon must lie in (0,0.5)");
}

ClassMaps ClassMaps::zeros(int width, int height) {
  ClassMaps m;
  m.width = width;
  m.height = height;
  for (auto& p : m.planes) p.assign(m.pixel_count(), 0.0);
  return m;
}

ClassMaps ClassMaps::from(const PixelMap& map) {
  ClassMaps m;
  m.width = map.width();
  m.height = map.height();
  for (Channel c : kAllChannels) {
    const auto src = map.channel(c);
    m.planes[index_of(c)].assign(src.begin(), src.end());
  }
  return m;
}

double bce(std::span<const double> target, std::span<const double> pred, double eps) {
  require_same_size(target, pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double y = target[i];
    const double p = std::clamp(pred[i], eps, 1.0 - eps);
    sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(target.size());
}

double soft_jaccard(std::span<const double> target, std::span<const double> pred, double eps) {
  require_same_size(target, pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double y = target[i];
    const double p = pred[i];
    const double den = y + p - y * p;
    if (den >= eps) sum += y * p / den;
  }
  return sum / static_cast<double>(target.size());
}

double class_loss(std::span<const double> target, std::span<const double> pred,
                  const LossConfig& cfg) {
  return (1.0 - cfg.alpha) * bce(target, pred, cfg.epsilon) -
         cfg.alpha * soft_jaccard(target, pred, cfg.epsilon);
}

double total_loss(const ClassMaps& target, const ClassMaps& pred, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(target, pred);
  double weighted = 0.0;
  for (Channel c : kAllChannels) {
    weighted += cfg.weight(c) * class_loss(target[c], pred[c], cfg);
  }
  return weighted / cfg.weight_sum();
}

double total_loss(const PixelMap& target, const PixelMap& pred, const LossConfig& cfg) {
  return total_loss(ClassMaps::from(target), ClassMaps::from(pred), cfg);
}

ClassMaps total_loss_grad(const ClassMaps& target, const ClassMaps& pred, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(target, pred);
  const double n = static_cast<double>(target.pixel_count());
  const double eps = cfg.epsilon;
  ClassMaps grad = ClassMaps::zeros(target.width, target.height);
  for (Channel c : kAllChannels) {
    const double scale = cfg.weight(c) / cfg.weight_sum() / n;
    const auto y = target[c];
    const auto p = pred[c];
    auto g = grad[c];
    for (std::size_t i = 0; i < y.size(); ++i) {
      double d_bce = 0.0;
      if (p[i] > eps && p[i] < 1.0 - eps) d_bce = -y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]);
      double d_jac = 0.0;
      const double den = y[i] + p[i] - y[i] * p[i];
      if (den >= eps) d_jac = y[i] * y[i] / (den * den);
      g[i] = scale * ((1.0 - cfg.alpha) * d_bce - cfg.alpha * d_jac);
    }
  }
  return grad;
}

std::map<Channel, double> jaccard_index(const PixelMap& pred, const PixelMap& truth,
                                        double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("jaccard threshold must lie in (0,1)");
  }
  if (pred.width() != truth.width() || pred.height() != truth.height()) {
    throw FormatError("dimension mismatch between prediction and truth");
  }
  if (pred.channels().size() != truth.channels().size()) {
    throw FormatError("channel-set mismatch between prediction and truth");
  }
  std::map<Channel, double> out;
  for (Channel c : pred.channels()) {
    if (!truth.has(c)) {
      throw FormatError("truth has no " + std::string(to_string(c)) + " channel");
    }
    const auto p = pred.channel(c);
    const auto t = truth.channel(c);
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (t[i] != 0.0f && t[i] != 1.0f) {
        throw FormatError("truth channel " + std::string(to_string(c)) + " is not binary at index " +
                          std::to_string(i));
      }
      const bool a = p[i] >= threshold;
      const bool b = t[i] == 1.0f;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
    out[c] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

GradientCheck check_gradient(const ClassMaps& target, const ClassMaps& pred, const LossConfig& cfg,
                             std::size_t samples, std::uint64_t seed, double step) {
  const ClassMaps analytic = total_loss_grad(target, pred, cfg);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_channel(0, kAllChannels.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_pixel(0, target.pixel_count() - 1);

  GradientCheck result;
  ClassMaps probe = pred;
  for (std::size_t s = 0; s < samples; ++s) {
    const Channel c = kAllChannels[pick_channel(rng)];
    const std::size_t i = pick_pixel(rng);
    const double original = probe[c][i];
    probe[c][i] = original + step;
    const double up = total_loss(target, probe, cfg);
    probe[c][i] = original - step;
    const double down = total_loss(target, probe, cfg);
    probe[c][i] = original;

    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[c][i];
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
    ++result.coordinates;
    if (rel > result.max_relative_error || s == 0) {
      result.max_relative_error = rel;
      result.worst_channel = c;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

RandomLossCase random_loss_case(int size, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> prob(lo, hi);
  RandomLossCase out{ClassMaps::zeros(size, size), ClassMaps::zeros(size, size)};
  for (Channel c : kAllChannels) {
    for (std::size_t i = 0; i < out.target.pixel_count(); ++i) {
      out.target[c][i] = coin(rng) ? 1.0 : 0.0;
      out.pred[c][i] = prob(rng);
    }
  }
  return out;
}

}  // namespace cellularity
