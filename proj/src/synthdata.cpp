#include "cellularity/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "cellularity/agreement.hpp"
#include "cellularity/csv.hpp"
#include "cellularity/feature_table.hpp"
#include "cellularity/parallel.hpp"

namespace cellularity::synth {

namespace {

constexpr int kPlacementAttempts = 10000;

int mirror(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::size_t disk_pixel_count(int diameter) {
  const int reach = diameter / 2;
  std::size_t count = 0;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      if (4LL * (dx * dx + dy * dy) <= static_cast<long long>(diameter) * diameter) ++count;
    }
  }
  return count;
}

void place_nuclei(std::mt19937_64& rng, const SynthParams& p, Channel cls, int count,
                  std::vector<AnnotatedPoint>& points) {
  std::uniform_int_distribution<int> ux(0, p.width - 1);
  std::uniform_int_distribution<int> uy(0, p.height - 1);
  const long long sep2 = static_cast<long long>(p.min_separation) * p.min_separation;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const int x = ux(rng);
      const int y = uy(rng);
      const bool clear = std::none_of(points.begin(), points.end(), [&](const AnnotatedPoint& q) {
        const long long dx = q.x - x;
        const long long dy = q.y - y;
        return dx * dx + dy * dy < sep2;
      });
      if (clear) {
        points.push_back({x, y, cls});
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error("cannot place nucleus " + std::to_string(points.size() + 1) +
                               ": patch too crowded for minimum separation " +
                               std::to_string(p.min_separation));
    }
  }
}

SynthPatch build_patch(const SynthParams& p, std::size_t index, const NucleusCounts& counts,
                       std::mt19937_64& rng) {
  SynthPatch patch;
  patch.id = patch_id(index);
  patch.annotations.patch_id = patch.id;
  auto& points = patch.annotations.points;
  place_nuclei(rng, p, Channel::Normal, counts.normal, points);
  place_nuclei(rng, p, Channel::Lymphocyte, counts.lymphocyte, points);
  place_nuclei(rng, p, Channel::Malignant, counts.malignant, points);

  const PixelMap masks = synthesize_masks(patch.annotations, p.width, p.height, p.diameter);
  const auto malignant = masks.channel(Channel::Malignant);
  patch.malignant_area = static_cast<std::size_t>(std::count(malignant.begin(), malignant.end(), 1.0f));

  const double fraction =
      static_cast<double>(patch.malignant_area) / static_cast<double>(masks.pixel_count());
  patch.clean_cellularity = std::clamp(fraction * p.resolved_scale(), 0.0, 1.0);

  const std::size_t n = masks.pixel_count();
  std::normal_distribution<double> map_noise(0.0, 1.0);
  std::vector<std::vector<float>> data(kAllChannels.size());
  std::vector<float> nucleus_max(n, 0.0f);
  for (Channel c : kNucleusChannels) {
    std::vector<float> plane = p.softness_sigma > 0.0
                                   ? gaussian_blur(masks.plane(c), p.softness_sigma)
                                   : std::vector<float>(masks.channel(c).begin(), masks.channel(c).end());
    for (std::size_t i = 0; i < n; ++i) nucleus_max[i] = std::max(nucleus_max[i], plane[i]);
    data[index_of(c)] = std::move(plane);
  }
  auto& background = data[index_of(Channel::Background)];
  background.resize(n);
  for (std::size_t i = 0; i < n; ++i) background[i] = 1.0f - nucleus_max[i];

  if (p.map_noise_sigma > 0.0) {
    for (Channel c : kAllChannels) {
      for (auto& v : data[index_of(c)]) {
        v = static_cast<float>(v + p.map_noise_sigma * map_noise(rng));
      }
    }
  }
  for (auto& plane : data) {
    for (auto& v : plane) v = std::clamp(v, 0.0f, 1.0f);
  }
  patch.maps = PixelMap(p.width, p.height, {kAllChannels.begin(), kAllChannels.end()},
                        std::move(data));

  std::normal_distribution<double> label_noise(0.0, 1.0);
  const double noise = p.label_noise_sigma > 0.0 ? p.label_noise_sigma * label_noise(rng) : 0.0;
  patch.true_cellularity = std::clamp(patch.clean_cellularity + noise, 0.0, 1.0);
  return patch;
}

}  // namespace

double SynthParams::resolved_scale() const {
  if (cellularity_scale) return *cellularity_scale;
  if (malignant.max <= 0) return 1.0;
  // Expected union coverage of `max` randomly placed disks.
  const double density = static_cast<double>(malignant.max) *
                         static_cast<double>(disk_pixel_count(diameter)) /
                         (static_cast<double>(width) * static_cast<double>(height));
  return 1.0 / (1.0 - std::exp(-density));
}

void SynthParams::validate() const {
  if (width < 64 || height < 64) throw std::invalid_argument("synthetic patches must be >= 64x64");
  for (const auto& r : {normal, lymphocyte, malignant}) {
    if (r.min < 0 || r.max < r.min) throw std::invalid_argument("invalid nucleus count range");
  }
  if (diameter < 1) throw std::invalid_argument("disk diameter must be >= 1");
  if (!(softness_sigma >= 0.0) || !(map_noise_sigma >= 0.0) || !(label_noise_sigma >= 0.0)) {
    throw std::invalid_argument("sigmas must be >= 0");
  }
  if (min_separation < 0) throw std::invalid_argument("minimum separation must be >= 0");
  if (cellularity_scale && !(*cellularity_scale > 0.0)) {
    throw std::invalid_argument("cellularity scale must be > 0");
  }
}

std::string patch_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%05zu", index);
  return buf;
}

nlohmann::ordered_json to_json(const SynthParams& p) {
  nlohmann::ordered_json j;
  j["width"] = p.width;
  j["height"] = p.height;
  j["normal"] = {p.normal.min, p.normal.max};
  j["lymphocyte"] = {p.lymphocyte.min, p.lymphocyte.max};
  j["malignant"] = {p.malignant.min, p.malignant.max};
  j["diameter"] = p.diameter;
  j["softness_sigma"] = p.softness_sigma;
  j["map_noise_sigma"] = p.map_noise_sigma;
  j["label_noise_sigma"] = p.label_noise_sigma;
  j["min_separation"] = p.min_separation;
  j["cellularity_scale"] = p.resolved_scale();
  j["seed"] = p.seed;
  return j;
}

SynthPatch generate_patch(const SynthParams& params, std::size_t index) {
  params.validate();
  std::mt19937_64 rng(agreement::mix_seed(params.seed, index));
  const auto draw = [&](const CountRange& r) {
    return std::uniform_int_distribution<int>(r.min, r.max)(rng);
  };
  NucleusCounts counts;
  counts.normal = draw(params.normal);
  counts.lymphocyte = draw(params.lymphocyte);
  counts.malignant = draw(params.malignant);
  return build_patch(params, index, counts, rng);
}

SynthPatch generate_patch(const SynthParams& params, std::size_t index,
                          const NucleusCounts& counts) {
  params.validate();
  if (counts.normal < 0 || counts.lymphocyte < 0 || counts.malignant < 0) {
    throw std::invalid_argument("nucleus counts must be >= 0");
  }
  std::mt19937_64 rng(agreement::mix_seed(params.seed, index));
  return build_patch(params, index, counts, rng);
}

std::vector<SynthPatch> generate(const SynthParams& params, std::size_t n, int threads) {
  params.validate();
  std::vector<SynthPatch> patches(n);
  parallel_for(n, threads, [&](std::size_t i) { patches[i] = generate_patch(params, i); });
  return patches;
}

void emit_dataset(const std::vector<SynthPatch>& patches, const SynthParams& params,
                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "maps");
  for (const auto& p : patches) save_pmap(p.maps, dir / "maps" / (p.id + ".pmap"));

  std::vector<PointAnnotationSet> sets;
  sets.reserve(patches.size());
  for (const auto& p : patches) sets.push_back(p.annotations);
  write_annotations(sets, dir / "annotations.csv");

  std::ofstream targets(dir / "targets.csv", std::ios::trunc);
  if (!targets) throw std::runtime_error("cannot write " + (dir / "targets.csv").string());
  targets << "patch_id,true_cellularity,clean_cellularity\n";
  for (const auto& p : patches) {
    targets << p.id << ',' << csv::format_double(p.true_cellularity) << ','
            << csv::format_double(p.clean_cellularity) << '\n';
  }
  if (!targets) throw std::runtime_error("write failed: " + (dir / "targets.csv").string());

  nlohmann::ordered_json manifest;
  manifest["kind"] = "synthetic-dataset";
  manifest["n"] = patches.size();
  manifest["params"] = to_json(params);
  manifest["pmap_dtype"] = "f32le";
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset ds;
  const auto truth = read_id_value_csv(dir / "targets.csv", "true_cellularity");
  const auto clean = read_id_value_csv(dir / "targets.csv", "clean_cellularity");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    LoadedPatch p;
    p.id = truth[i].first;
    p.maps = load_pmap(dir / "maps" / (p.id + ".pmap"));
    p.true_cellularity = truth[i].second;
    p.clean_cellularity = clean[i].second;
    ds.patches.push_back(std::move(p));
  }
  ds.annotations = parse_annotations(dir / "annotations.csv");
  return ds;
}

std::vector<float> gaussian_blur(const Plane<float>& plane, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("blur sigma must be > 0");
  const int r = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(r) + 1);
  double total = 0.0;
  for (int i = 0; i <= r; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += (i == 0 ? 1.0 : 2.0) * k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;

  const int w = plane.width;
  const int h = plane.height;
  const auto idx = [w](int x, int y) {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
  };
  std::vector<float> tmp(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = k[0] * plane.at(x, y);
      for (int t = 1; t <= r; ++t) {
        acc += k[static_cast<std::size_t>(t)] *
               (plane.at(mirror(x - t, w), y) + plane.at(mirror(x + t, w), y));
      }
      tmp[idx(x, y)] = static_cast<float>(acc);
    }
  }
  std::vector<float> out(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = k[0] * tmp[idx(x, y)];
      for (int t = 1; t <= r; ++t) {
        acc += k[static_cast<std::size_t>(t)] * (tmp[idx(x, mirror(y - t, h))] + tmp[idx(x, mirror(y + t, h))]);
      }
      out[idx(x, y)] = std::clamp(static_cast<float>(acc), 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace cellularity::synth
