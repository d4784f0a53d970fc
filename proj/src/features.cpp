#include "cellularity/features.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace cellularity {

namespace {

int reflect(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}

struct LogKernels {
  int radius = 0;
  std::vector<float> smooth;  // G, taps 0..radius
  std::vector<float> second;  // G'', taps 0..radius
};

LogKernels make_kernels(double sigma) {
  LogKernels k;
  k.radius = static_cast<int>(std::ceil(4.0 * sigma));
  const int r = k.radius;
  std::vector<double> g(static_cast<std::size_t>(r) + 1);
  double total = 0.0;
  for (int i = 0; i <= r; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += (i == 0 ? 1.0 : 2.0) * g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;

  const double s2 = sigma * sigma;
  std::vector<double> g2(g.size());
  double mean = 0.0;
  for (int i = 0; i <= r; ++i) {
    g2[static_cast<std::size_t>(i)] = (i * i - s2) / (s2 * s2) * g[static_cast<std::size_t>(i)];
    mean += (i == 0 ? 1.0 : 2.0) * g2[static_cast<std::size_t>(i)];
  }
  // Zero-sum second derivative, so flat regions give exactly flat responses.
  mean /= static_cast<double>(2 * r + 1);
  for (auto& v : g2) v -= mean;

  k.smooth.assign(g.begin(), g.end());
  k.second.assign(g2.begin(), g2.end());
  return k;
}

// Symmetric horizontal convolution of every row with two kernels at once.
void convolve_rows(const Plane<float>& in, const LogKernels& k, std::vector<float>& out_smooth,
                   std::vector<float>& out_second) {
  const int w = in.width;
  const int r = k.radius;
  std::vector<float> pad(static_cast<std::size_t>(w + 2 * r));
  for (int y = 0; y < in.height; ++y) {
    const float* row = in.values.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
    for (int j = 0; j < w + 2 * r; ++j) pad[static_cast<std::size_t>(j)] = row[reflect(j - r, w)];

    float* a = out_smooth.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
    float* b = out_second.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
    const float* centre = pad.data() + r;
    for (int x = 0; x < w; ++x) {
      a[x] = k.smooth[0] * centre[x];
      b[x] = k.second[0] * centre[x];
    }
    for (int t = 1; t <= r; ++t) {
      const float gs = k.smooth[static_cast<std::size_t>(t)];
      const float gd = k.second[static_cast<std::size_t>(t)];
      const float* lo = centre - t;
      const float* hi = centre + t;
      for (int x = 0; x < w; ++x) {
        const float pair = lo[x] + hi[x];
        a[x] += gs * pair;
        b[x] += gd * pair;
      }
    }
  }
}

// out += kernel (vertical, symmetric) applied to src.
void accumulate_columns(const std::vector<float>& src, int w, int h,
                        const std::vector<float>& kernel, std::vector<float>& out) {
  const int r = static_cast<int>(kernel.size()) - 1;
  const auto row = [&](int y) {
    return src.data() + static_cast<std::size_t>(reflect(y, h)) * static_cast<std::size_t>(w);
  };
  for (int y = 0; y < h; ++y) {
    float* o = out.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
    const float* c = row(y);
    const float k0 = kernel[0];
    for (int x = 0; x < w; ++x) o[x] += k0 * c[x];
    for (int t = 1; t <= r; ++t) {
      const float kt = kernel[static_cast<std::size_t>(t)];
      const float* up = row(y - t);
      const float* dn = row(y + t);
      for (int x = 0; x < w; ++x) o[x] += kt * (up[x] + dn[x]);
    }
  }
}

bool is_strict_maximum(const std::vector<float>& resp, int w, int h, int x, int y) {
  const float v = resp[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
                       static_cast<std::size_t>(x)];
  for (int dy = -1; dy <= 1; ++dy) {
    const int yy = y + dy;
    if (yy < 0 || yy >= h) continue;
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = x + dx;
      if ((dx == 0 && dy == 0) || xx < 0 || xx >= w) continue;
      if (resp[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) +
               static_cast<std::size_t>(xx)] >= v) {
        return false;
      }
    }
  }
  return true;
}

// Vertex of the parabola through three samples, as an offset in [-0.5, 0.5].
double parabolic_offset(double left, double centre, double right) {
  const double curvature = left - 2.0 * centre + right;
  if (!(curvature < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / curvature, -0.5, 0.5);
}

void check_threshold(double t) {
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("threshold must lie in (0,1)");
}

}  // namespace

ThresholdStats threshold_stats(std::span<const float> values, double t) {
  check_threshold(t);
  ThresholdStats s;
  for (float v : values) {
    if (v >= t) {
      ++s.area;
      s.activation += v;
    }
  }
  return s;
}

double total_activation(std::span<const float> values) {
  double sum = 0.0;
  for (float v : values) sum += v;
  return sum;
}

std::vector<float> log_response(const Plane<float>& plane, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be > 0");
  const LogKernels k = make_kernels(sigma);
  const int w = plane.width;
  const int h = plane.height;
  if (2 * k.radius + 1 > std::min(w, h)) {
    throw std::invalid_argument("LoG kernel of width " + std::to_string(2 * k.radius + 1) +
                                " exceeds the " + std::to_string(w) + "x" + std::to_string(h) +
                                " map");
  }
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<float> smooth_x(n), second_x(n);
  convolve_rows(plane, k, smooth_x, second_x);

  std::vector<float> laplacian(n, 0.0f);
  accumulate_columns(second_x, w, h, k.smooth, laplacian);  // Gxx
  accumulate_columns(smooth_x, w, h, k.second, laplacian);  // Gyy

  const float scale = static_cast<float>(-sigma * sigma);
  for (auto& v : laplacian) v *= scale;
  return laplacian;
}

std::vector<Blob> detect_blobs(const Plane<float>& plane, double sigma) {
  const std::vector<float> resp = log_response(plane, sigma);
  const int w = plane.width;
  const int h = plane.height;
  const auto at = [&](int x, int y) {
    return static_cast<double>(
        resp[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)]);
  };

  std::vector<Blob> candidates;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (at(x, y) <= kMinBlobResponse || !is_strict_maximum(resp, w, h, x, y)) continue;
      Blob b;
      b.px = x;
      b.py = y;
      b.response = at(x, y);
      b.cx = x + ((x > 0 && x + 1 < w) ? parabolic_offset(at(x - 1, y), b.response, at(x + 1, y))
                                       : 0.0);
      b.cy = y + ((y > 0 && y + 1 < h) ? parabolic_offset(at(x, y - 1), b.response, at(x, y + 1))
                                       : 0.0);
      b.center_activation = plane.at(x, y);
      candidates.push_back(b);
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Blob& a, const Blob& b) { return a.response > b.response; });

  // Greedy suppression on a grid of sigma-sized cells.
  const double cell = std::max(sigma, 1.0);
  const int gw = static_cast<int>(std::ceil(w / cell)) + 1;
  const int gh = static_cast<int>(std::ceil(h / cell)) + 1;
  std::vector<std::vector<std::size_t>> grid(static_cast<std::size_t>(gw) *
                                             static_cast<std::size_t>(gh));
  std::vector<Blob> kept;
  const double limit = sigma * sigma;
  for (const Blob& b : candidates) {
    const int gx = static_cast<int>(b.px / cell);
    const int gy = static_cast<int>(b.py / cell);
    bool suppressed = false;
    for (int yy = std::max(0, gy - 1); yy <= std::min(gh - 1, gy + 1) && !suppressed; ++yy) {
      for (int xx = std::max(0, gx - 1); xx <= std::min(gw - 1, gx + 1) && !suppressed; ++xx) {
        for (std::size_t idx : grid[static_cast<std::size_t>(yy) * static_cast<std::size_t>(gw) +
                                    static_cast<std::size_t>(xx)]) {
          const double dx = kept[idx].px - b.px;
          const double dy = kept[idx].py - b.py;
          if (dx * dx + dy * dy <= limit) {
            suppressed = true;
            break;
          }
        }
      }
    }
    if (suppressed) continue;
    grid[static_cast<std::size_t>(gy) * static_cast<std::size_t>(gw) + static_cast<std::size_t>(gx)]
        .push_back(kept.size());
    kept.push_back(b);
  }
  return kept;
}

std::vector<Blob> log_blobs(const Plane<float>& plane, double t, double sigma) {
  check_threshold(t);
  std::vector<Blob> blobs = detect_blobs(plane, sigma);
  std::erase_if(blobs, [t](const Blob& b) { return b.center_activation < t; });
  return blobs;
}

FeatureVector81 extract_features(const PixelMap& map, const FeatureOptions& options) {
  FeatureVector81 fv;
  std::size_t k = 0;
  for (Channel c : kNucleusChannels) {
    if (!map.has(c)) {
      throw FormatError("feature extraction needs a " + std::string(to_string(c)) + " channel");
    }
    const Plane<float> plane = map.plane(c);

    std::array<double, kAreaThresholds.size()> area{};
    std::array<double, kAreaThresholds.size()> activation{};
    double total = 0.0;
    for (float v : plane.values) {
      for (std::size_t i = 0; i < kAreaThresholds.size(); ++i) {
        if (v >= kAreaThresholds[i]) {
          area[i] += 1.0;
          activation[i] += v;
        }
      }
      total += v;
    }
    for (std::size_t i = 0; i < kAreaThresholds.size(); ++i) {
      fv.values[k++] = area[i];
      fv.values[k++] = activation[i];
    }

    const std::vector<Blob> blobs = detect_blobs(plane, options.log_sigma);
    for (double t : kBlobThresholds) {
      double count = 0.0;
      double centre_sum = 0.0;
      for (const Blob& b : blobs) {
        if (b.center_activation >= t) {
          count += 1.0;
          centre_sum += b.center_activation;
        }
      }
      fv.values[k++] = count;
      fv.values[k++] = centre_sum;
    }
    fv.values[k++] = total;
  }
  return fv;
}

std::string_view to_string(FeatureFamily f) {
  switch (f) {
    case FeatureFamily::Area: return "area";
    case FeatureFamily::Activation: return "activation";
    case FeatureFamily::BlobCount: return "blob_count";
    case FeatureFamily::BlobActivation: return "blob_activation";
    case FeatureFamily::TotalActivation: return "total_activation";
  }
  return "?";
}

std::string feature_column_name(std::size_t index) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "f%03zu", index);
  return buf;
}

const std::array<FeatureColumn, kFeatureCount>& feature_columns() {
  static const auto columns = [] {
    std::array<FeatureColumn, kFeatureCount> cols;
    std::size_t k = 0;
    const auto add = [&](Channel c, FeatureFamily f, std::optional<double> t) {
      cols[k] = {feature_column_name(k), c, f, t};
      ++k;
    };
    for (Channel c : kNucleusChannels) {
      for (double t : kAreaThresholds) {
        add(c, FeatureFamily::Area, t);
        add(c, FeatureFamily::Activation, t);
      }
      for (double t : kBlobThresholds) {
        add(c, FeatureFamily::BlobCount, t);
        add(c, FeatureFamily::BlobActivation, t);
      }
      add(c, FeatureFamily::TotalActivation, std::nullopt);
    }
    return cols;
  }();
  return columns;
}

std::size_t feature_index(Channel channel, FeatureFamily family, std::optional<double> threshold) {
  const auto& cols = feature_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i].channel == channel && cols[i].family == family && cols[i].threshold == threshold) {
      return i;
    }
  }
  throw std::invalid_argument("no such feature column");
}

}  // namespace cellularity
