#include "cellularity/annotations.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "cellularity/csv.hpp"

namespace cellularity {

namespace {

constexpr std::string_view kHeader = "patch_id,x,y,class";
constexpr long long kMaxCoord = std::numeric_limits<int>::max();

void rasterize_disk(std::vector<float>& plane, int width, int height, int cx, int cy,
                    int diameter) {
  const int reach = diameter / 2;
  const long long limit = static_cast<long long>(diameter) * diameter;
  const int y0 = std::max(0, cy - reach);
  const int y1 = std::min(height - 1, cy + reach);
  const int x0 = std::max(0, cx - reach);
  const int x1 = std::min(width - 1, cx + reach);
  for (int y = y0; y <= y1; ++y) {
    const long long dy = y - cy;
    for (int x = x0; x <= x1; ++x) {
      const long long dx = x - cx;
      if (4 * (dx * dx + dy * dy) <= limit) {
        plane[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
              static_cast<std::size_t>(x)] = 1.0f;
      }
    }
  }
}

void check_geometry(int width, int height, int diameter) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("mask dimensions must be positive");
  if (diameter < 1) throw std::invalid_argument("disk diameter must be >= 1");
}

}  // namespace

std::vector<PointAnnotationSet> parse_annotations(const std::filesystem::path& path,
                                                  std::optional<Extent> bounds) {
  const csv::Table table = csv::read(path);
  if (table.header != csv::split(kHeader)) {
    throw FormatError(path.string() + ":1: expected header \"" + std::string(kHeader) + "\"");
  }

  std::vector<PointAnnotationSet> sets;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& row : table.rows) {
    const auto where = path.string() + ":" + std::to_string(row.line) + ": ";
    const auto& f = row.fields;
    const auto x = csv::parse_int(f[1]);
    const auto y = csv::parse_int(f[2]);
    if (!x || !y) throw FormatError(where + "non-integer coordinate (" + f[1] + "," + f[2] + ")");
    const auto cls = parse_channel(f[3]);
    if (!cls || *cls == Channel::Background) {
      throw FormatError(where + "unknown class token \"" + f[3] + "\"");
    }
    const bool negative = *x < 0 || *y < 0;
    const bool outside = bounds && (*x >= bounds->width || *y >= bounds->height);
    if (negative || outside || *x > kMaxCoord || *y > kMaxCoord) {
      throw FormatError(where + "coordinate (" + f[1] + "," + f[2] + ") outside patch bounds");
    }

    auto [it, inserted] = index.try_emplace(f[0], sets.size());
    if (inserted) sets.push_back({f[0], {}});
    sets[it->second].points.push_back({static_cast<int>(*x), static_cast<int>(*y), *cls});
  }
  return sets;
}

void write_annotations(const std::vector<PointAnnotationSet>& sets,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << kHeader << '\n';
  for (const auto& set : sets) {
    for (const auto& p : set.points) {
      out << set.patch_id << ',' << p.x << ',' << p.y << ',' << to_string(p.cls) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

PixelMap synthesize_masks(const PointAnnotationSet& ann, int width, int height, int diameter) {
  check_geometry(width, height, diameter);
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<std::vector<float>> data(kAllChannels.size(), std::vector<float>(n, 0.0f));
  for (const auto& p : ann.points) {
    if (p.cls == Channel::Background) {
      throw std::invalid_argument("annotation point cannot have class Background");
    }
    rasterize_disk(data[index_of(p.cls)], width, height, p.x, p.y, diameter);
  }
  auto& background = data[index_of(Channel::Background)];
  for (std::size_t i = 0; i < n; ++i) {
    const bool nucleus = data[index_of(Channel::Normal)][i] > 0.0f ||
                         data[index_of(Channel::Lymphocyte)][i] > 0.0f ||
                         data[index_of(Channel::Malignant)][i] > 0.0f;
    background[i] = nucleus ? 0.0f : 1.0f;
  }
  return PixelMap(width, height, {kAllChannels.begin(), kAllChannels.end()}, std::move(data));
}

std::size_t disk_union_area(const PointAnnotationSet& ann, Channel cls, int width, int height,
                            int diameter) {
  check_geometry(width, height, diameter);
  std::vector<float> plane(static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
                           0.0f);
  for (const auto& p : ann.points) {
    if (p.cls == cls) rasterize_disk(plane, width, height, p.x, p.y, diameter);
  }
  return static_cast<std::size_t>(std::count(plane.begin(), plane.end(), 1.0f));
}

}  // namespace cellularity
