#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cellularity/pixel_map.hpp"

namespace cellularity {

struct AnnotatedPoint {
  int x = 0;  // pixel column
  int y = 0;  // pixel row
  Channel cls = Channel::Malignant;

  friend bool operator==(const AnnotatedPoint&, const AnnotatedPoint&) = default;
};

/// Point-wise weak labels for one patch.
struct PointAnnotationSet {
  std::string patch_id;
  std::vector<AnnotatedPoint> points;

  friend bool operator==(const PointAnnotationSet&, const PointAnnotationSet&) = default;
};

struct Extent {
  int width = 0;
  int height = 0;
};

inline constexpr int kDefaultNucleusDiameter = 15;

/// Reads a "patch_id,x,y,class" CSV. One set per distinct patch_id, in order
/// of first appearance; points keep file order. When `bounds` is given, every
/// coordinate must fall inside it. Errors name the offending line.
std::vector<PointAnnotationSet> parse_annotations(const std::filesystem::path& path,
                                                  std::optional<Extent> bounds = std::nullopt);

void write_annotations(const std::vector<PointAnnotationSet>& sets,
                       const std::filesystem::path& path);

/// Rasterizes each point as a binary disk: pixel (px,py) belongs to the disk
/// when (px-x)^2 + (py-y)^2 <= (diameter/2)^2. Disks are clipped at the patch
/// border and classes may overlap. Background is the complement of the union.
PixelMap synthesize_masks(const PointAnnotationSet& ann, int width, int height,
                          int diameter = kDefaultNucleusDiameter);

/// Pixel count of the union of disks of one class, with the rule above.
std::size_t disk_union_area(const PointAnnotationSet& ann, Channel cls, int width, int height,
                            int diameter = kDefaultNucleusDiameter);

}  // namespace cellularity
