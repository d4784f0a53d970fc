#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cellularity {

/// Segmentation classes, in the canonical channel order.
enum class Channel { Normal, Lymphocyte, Malignant, Background };

inline constexpr std::array<Channel, 4> kAllChannels = {
    Channel::Normal, Channel::Lymphocyte, Channel::Malignant, Channel::Background};
inline constexpr std::array<Channel, 3> kNucleusChannels = {
    Channel::Normal, Channel::Lymphocyte, Channel::Malignant};

std::string_view to_string(Channel c);
std::optional<Channel> parse_channel(std::string_view name);
constexpr std::size_t index_of(Channel c) { return static_cast<std::size_t>(c); }

/// Raised for malformed inputs: bad headers, out-of-range values, dimension
/// or channel mismatches.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Read-only view of a single raster plane.
template <typename T>
struct Plane {
  int width = 0;
  int height = 0;
  std::span<const T> values;

  std::size_t size() const { return values.size(); }
  T at(int x, int y) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

/// Multi-channel probability map. Every value lies in [0,1]; channel names are
/// unique and addressed by name. Immutable once constructed.
class PixelMap {
 public:
  PixelMap() = default;

  /// `data` holds one row-major plane per entry of `channels`. Throws
  /// FormatError if any invariant is violated.
  PixelMap(int width, int height, std::vector<Channel> channels,
           std::vector<std::vector<float>> data);

  /// Map of the given size with every channel filled by `fill`.
  static PixelMap filled(int width, int height, std::vector<Channel> channels, float fill);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  const std::vector<Channel>& channels() const { return channels_; }
  bool has(Channel c) const;

  /// Throws FormatError if the channel is absent.
  std::span<const float> channel(Channel c) const;
  Plane<float> plane(Channel c) const { return {width_, height_, channel(c)}; }
  float at(Channel c, int x, int y) const { return plane(c).at(x, y); }

  /// Planes in declared channel order.
  const std::vector<std::vector<float>>& data() const { return data_; }

  friend bool operator==(const PixelMap&, const PixelMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Channel> channels_;
  std::vector<std::vector<float>> data_;
};

// PMAP container: one JSON header line, then channel-major row-major f32le.
PixelMap load_pmap(const std::filesystem::path& path);
void save_pmap(const PixelMap& map, const std::filesystem::path& path);

/// Header line (including the trailing newline) that save_pmap writes.
std::string pmap_header(const PixelMap& map);

/// Halves both dimensions; each output pixel is the mean of its 2x2 block.
PixelMap downscale2(const PixelMap& map);

}  // namespace cellularity
