#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cellularity/annotations.hpp"
#include "cellularity/pixel_map.hpp"
#include "json.hpp"

namespace cellularity::synth {

struct CountRange {
  int min = 0;
  int max = 0;
  friend bool operator==(const CountRange&, const CountRange&) = default;
};

struct SynthParams {
  int width = 256;
  int height = 256;
  CountRange normal{0, 40};
  CountRange lymphocyte{0, 40};
  CountRange malignant{0, 160};
  int diameter = kDefaultNucleusDiameter;
  double softness_sigma = 1.0;     // Gaussian blur of the disks, pixels
  double map_noise_sigma = 0.03;   // additive noise on every map value
  double label_noise_sigma = 0.02; // additive noise on the cellularity target
  int min_separation = 8;          // between any two nucleus centres, pixels
  // Multiplies the malignant area fraction. When unset it is chosen so a
  // patch with the maximum malignant count sits near cellularity 1.
  std::optional<double> cellularity_scale;
  std::uint64_t seed = 0;

  double resolved_scale() const;
  void validate() const;
  friend bool operator==(const SynthParams&, const SynthParams&) = default;
};

struct NucleusCounts {
  int normal = 0;
  int lymphocyte = 0;
  int malignant = 0;
};

struct SynthPatch {
  std::string id;
  PixelMap maps;
  PointAnnotationSet annotations;
  std::size_t malignant_area = 0;  // pixels in the union of malignant disks
  double clean_cellularity = 0.0;  // before label noise
  double true_cellularity = 0.0;
};

std::string patch_id(std::size_t index);

nlohmann::ordered_json to_json(const SynthParams& params);

/// Patch `index` of the dataset defined by params.seed; independent of how
/// many other patches are generated or in which order.
SynthPatch generate_patch(const SynthParams& params, std::size_t index);

/// Same, with the nucleus counts fixed instead of drawn. Malignant nuclei are
/// placed last, so raising the malignant count only adds disks.
SynthPatch generate_patch(const SynthParams& params, std::size_t index,
                          const NucleusCounts& counts);

std::vector<SynthPatch> generate(const SynthParams& params, std::size_t n, int threads = 1);

/// Writes maps/<id>.pmap, annotations.csv, targets.csv and manifest.json.
void emit_dataset(const std::vector<SynthPatch>& patches, const SynthParams& params,
                  const std::filesystem::path& dir);

struct LoadedPatch {
  std::string id;
  PixelMap maps;
  double true_cellularity = 0.0;
  double clean_cellularity = 0.0;
};

struct LoadedDataset {
  std::vector<LoadedPatch> patches;
  std::vector<PointAnnotationSet> annotations;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

/// Gaussian blur with symmetric reflection, kernel truncated at 4 sigma.
std::vector<float> gaussian_blur(const Plane<float>& plane, double sigma);

}  // namespace cellularity::synth
