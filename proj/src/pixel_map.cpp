#include "cellularity/pixel_map.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cellularity {

namespace {

constexpr std::string_view kMagic = "PMAP1";
constexpr std::string_view kDtype = "f32le";
constexpr std::size_t kMaxHeaderBytes = 1 << 16;

bool in_unit_interval(float v) { return v >= 0.0f && v <= 1.0f; }

std::uint32_t to_little_endian(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::little) {
    return bits;
  } else {
    return ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) |
           (bits >> 24);
  }
}

}  // namespace

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::Normal: return "Normal";
    case Channel::Lymphocyte: return "Lymphocyte";
    case Channel::Malignant: return "Malignant";
    case Channel::Background: return "Background";
  }
  return "?";
}

std::optional<Channel> parse_channel(std::string_view name) {
  for (Channel c : kAllChannels) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

PixelMap::PixelMap(int width, int height, std::vector<Channel> channels,
                   std::vector<std::vector<float>> data)
    : width_(width), height_(height), channels_(std::move(channels)), data_(std::move(data)) {
  if (width_ <= 0 || height_ <= 0) {
    throw FormatError("pixel map dimensions must be positive, got " + std::to_string(width_) +
                      "x" + std::to_string(height_));
  }
  if (channels_.size() != data_.size()) {
    throw FormatError("pixel map has " + std::to_string(channels_.size()) + " channel names but " +
                      std::to_string(data_.size()) + " planes");
  }
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (channels_[i] == channels_[j]) {
        throw FormatError("duplicate channel " + std::string(to_string(channels_[i])));
      }
    }
  }
  const std::size_t n = pixel_count();
  for (std::size_t c = 0; c < data_.size(); ++c) {
    const auto& plane = data_[c];
    if (plane.size() != n) {
      throw FormatError("channel " + std::string(to_string(channels_[c])) + " has " +
                        std::to_string(plane.size()) + " values, expected " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_unit_interval(plane[i])) {
        std::ostringstream msg;
        msg << "value " << plane[i] << " outside [0,1] in channel " << to_string(channels_[c])
            << " at index " << i;
        throw FormatError(msg.str());
      }
    }
  }
}

PixelMap PixelMap::filled(int width, int height, std::vector<Channel> channels, float fill) {
  const std::size_t n =
      static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0));
  std::vector<std::vector<float>> data(channels.size(), std::vector<float>(n, fill));
  return PixelMap(width, height, std::move(channels), std::move(data));
}

bool PixelMap::has(Channel c) const {
  return std::find(channels_.begin(), channels_.end(), c) != channels_.end();
}

std::span<const float> PixelMap::channel(Channel c) const {
  auto it = std::find(channels_.begin(), channels_.end(), c);
  if (it == channels_.end()) {
    throw FormatError("pixel map has no " + std::string(to_string(c)) + " channel");
  }
  return data_[static_cast<std::size_t>(it - channels_.begin())];
}

std::string pmap_header(const PixelMap& map) {
  nlohmann::ordered_json header;
  header["magic"] = kMagic;
  header["width"] = map.width();
  header["height"] = map.height();
  auto names = nlohmann::ordered_json::array();
  for (Channel c : map.channels()) names.push_back(to_string(c));
  header["channels"] = std::move(names);
  header["dtype"] = kDtype;
  return header.dump() + "\n";
}

void save_pmap(const PixelMap& map, const std::filesystem::path& path) {
  if (map.channels().empty()) {
    throw FormatError("refusing to save a pixel map without channels: " + path.string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());

  const std::string header = pmap_header(map);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  std::vector<char> buffer(map.pixel_count() * sizeof(float));
  for (const auto& plane : map.data()) {
    for (std::size_t i = 0; i < plane.size(); ++i) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(plane[i]));
      std::memcpy(buffer.data() + i * sizeof(float), &bits, sizeof(bits));
    }
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

PixelMap load_pmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());

  std::string header_line;
  for (char ch; in.get(ch);) {
    if (ch == '\n') break;
    header_line.push_back(ch);
    if (header_line.size() > kMaxHeaderBytes) {
      throw FormatError(path.string() + ": PMAP header exceeds " +
                        std::to_string(kMaxHeaderBytes) + " bytes");
    }
  }
  if (!in) throw FormatError(path.string() + ": missing PMAP header line");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed PMAP header: " + e.what());
  }

  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw FormatError(path.string() + ": malformed PMAP header: " + what);
  };
  require(header.is_object(), "not a JSON object");
  require(header.value("magic", "") == kMagic, "bad magic");
  require(header.value("dtype", "") == kDtype, "unsupported dtype");
  require(header.contains("width") && header["width"].is_number_integer(), "width");
  require(header.contains("height") && header["height"].is_number_integer(), "height");
  require(header.contains("channels") && header["channels"].is_array(), "channels");

  const auto width = header["width"].get<std::int64_t>();
  const auto height = header["height"].get<std::int64_t>();
  require(width > 0 && height > 0 && width <= (1 << 20) && height <= (1 << 20),
          "dimensions out of range");

  std::vector<Channel> channels;
  for (const auto& name : header["channels"]) {
    require(name.is_string(), "channel name is not a string");
    auto c = parse_channel(name.get<std::string>());
    require(c.has_value(), "unknown channel " + name.get<std::string>());
    channels.push_back(*c);
  }
  require(!channels.empty(), "no channels");

  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const std::size_t expected = n * channels.size() * sizeof(float);
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::size_t>(in.tellg() - payload_start);
  if (payload_bytes != expected) {
    throw FormatError(path.string() + ": payload is " + std::to_string(payload_bytes) +
                      " bytes, header declares " + std::to_string(expected));
  }
  in.seekg(payload_start);

  std::vector<char> buffer(n * sizeof(float));
  std::vector<std::vector<float>> data;
  data.reserve(channels.size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!in) throw FormatError(path.string() + ": truncated payload");
    std::vector<float> plane(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, buffer.data() + i * sizeof(float), sizeof(bits));
      plane[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    data.push_back(std::move(plane));
  }

  try {
    return PixelMap(static_cast<int>(width), static_cast<int>(height), std::move(channels),
                    std::move(data));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

PixelMap downscale2(const PixelMap& map) {
  if (map.width() % 2 != 0 || map.height() % 2 != 0) {
    throw FormatError("downscale2 needs even dimensions, got " + std::to_string(map.width()) + "x" +
                      std::to_string(map.height()));
  }
  const int w = map.width() / 2;
  const int h = map.height() / 2;
  const auto src_w = static_cast<std::size_t>(map.width());
  std::vector<std::vector<float>> data;
  data.reserve(map.channels().size());
  for (const auto& src : map.data()) {
    std::vector<float> dst(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
      const float* row0 = src.data() + static_cast<std::size_t>(2 * y) * src_w;
      const float* row1 = row0 + src_w;
      for (int x = 0; x < w; ++x) {
        const double sum = static_cast<double>(row0[2 * x]) + row0[2 * x + 1] + row1[2 * x] +
                           row1[2 * x + 1];
        dst[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
            static_cast<std::size_t>(x)] = static_cast<float>(sum / 4.0);
      }
    }
    data.push_back(std::move(dst));
  }
  return PixelMap(w, h, map.channels(), std::move(data));
}

}  // namespace cellularity
