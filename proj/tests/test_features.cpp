#include <algorithm>
#include <random>
#include <cmath>
#include <set>

#include "cellularity/annotations.hpp"
#include "cellularity/features.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cellularity;

namespace {

PixelMap planted(int size, const std::vector<std::array<int, 2>>& centres, float level = 1.0f) {
  PointAnnotationSet ann{"p", {}};
  for (const auto& c : centres) ann.points.push_back({c[0], c[1], Channel::Malignant});
  const PixelMap masks = synthesize_masks(ann, size, size);
  std::vector<std::vector<float>> data;
  for (Channel c : kAllChannels) {
    auto v = std::vector<float>(masks.channel(c).begin(), masks.channel(c).end());
    if (c == Channel::Malignant) {
      for (auto& x : v) x *= level;
    }
    data.push_back(std::move(v));
  }
  return {size, size, {kAllChannels.begin(), kAllChannels.end()}, std::move(data)};
}

}  // namespace

TEST_CASE("schema is 3 channels x (7x2 + 6x2 + 1)") {
  CHECK(kAreaThresholds.size() == 7);
  CHECK(kBlobThresholds.size() == 6);
  CHECK(kFeatureCount == 3 * (7 * 2 + 6 * 2 + 1));
  const auto& cols = feature_columns();
  std::set<std::string> names;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    CHECK(cols[i].name == feature_column_name(i));
    names.insert(cols[i].name);
    CHECK(feature_index(cols[i].channel, cols[i].family, cols[i].threshold) == i);
  }
  CHECK(names.size() == 81);
  CHECK(feature_column_name(0) == "f000");
  CHECK(feature_column_name(80) == "f080");
  CHECK(cols[0].channel == Channel::Normal);
  CHECK(cols[27].channel == Channel::Lymphocyte);
  CHECK(cols[54].channel == Channel::Malignant);
  CHECK(cols[26].family == FeatureFamily::TotalActivation);
}

TEST_CASE("threshold stats equal a brute-force scan exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PixelMap m = testutil::random_map(32, 24, seed);
    for (Channel c : kNucleusChannels) {
      for (double t : {0.001, 0.02, 0.5, 0.99}) {
        const auto got = threshold_stats(m.channel(c), t);
        const auto want = oracle::scan_threshold(m.plane(c), t);
        CHECK(got.area == want.area);
        CHECK(got.activation == want.activation);
      }
      CHECK(total_activation(m.channel(c)) == oracle::scan_total(m.plane(c)));
    }
  }
}

TEST_CASE("extracted vector equals the column-by-column oracle") {
  const PixelMap m = testutil::random_map(64, 56, 11);
  const auto fv = extract_features(m);
  CHECK(fv.values == oracle::features(m));
  CHECK(fv.schema_version == kFeatureSchemaVersion);

  const PixelMap p = planted(96, {{30, 30}, {70, 60}});
  CHECK(extract_features(p).values == oracle::features(p));
}

TEST_CASE("blob detection recovers planted disks") {
  const std::vector<std::array<int, 2>> centres = {{40, 40}, {80, 45}, {42, 90}, {90, 95}, {20, 120}};
  for (std::size_t k : {0u, 1u, 2u, 5u}) {
    const std::vector<std::array<int, 2>> sub(centres.begin(), centres.begin() + k);
    const PixelMap m = planted(140, sub);
    const auto blobs = log_blobs(m.plane(Channel::Malignant), 0.5);
    REQUIRE(blobs.size() == k);
    for (const auto& c : sub) {
      bool found = false;
      for (const auto& b : blobs) found |= std::hypot(b.cx - c[0], b.cy - c[1]) <= 1.0;
      CHECK(found);
    }
  }
}

TEST_CASE("flat maps have no blobs") {
  for (float level : {0.0f, 0.3f, 1.0f}) {
    const PixelMap m = PixelMap::filled(64, 64, {kAllChannels.begin(), kAllChannels.end()}, level);
    CHECK(detect_blobs(m.plane(Channel::Normal)).empty());
  }
}

TEST_CASE("blob counts fall as the threshold rises") {
  const PixelMap m = testutil::random_map(80, 80, 5);
  std::size_t prev = SIZE_MAX;
  for (double t : kBlobThresholds) {
    const std::size_t n = log_blobs(m.plane(Channel::Malignant), t).size();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("dim disks pass low thresholds only") {
  const PixelMap m = planted(80, {{40, 40}}, 0.1f);
  CHECK(log_blobs(m.plane(Channel::Malignant), 0.08).size() == 1);
  CHECK(log_blobs(m.plane(Channel::Malignant), 0.16).empty());
}

TEST_CASE("planes smaller than the LoG kernel are rejected") {
  const PixelMap m = PixelMap::filled(20, 20, {kAllChannels.begin(), kAllChannels.end()}, 0.f);
  CHECK_THROWS_AS(extract_features(m), std::invalid_argument);
}

TEST_CASE("missing nucleus channel is an error") {
  const PixelMap m = PixelMap::filled(64, 64, {Channel::Normal, Channel::Malignant}, 0.f);
  CHECK_THROWS_AS(extract_features(m), FormatError);
}

TEST_CASE("documented threshold values") {
  const PixelMap zero = PixelMap::filled(64, 64, {kAllChannels.begin(), kAllChannels.end()}, 0.f);
  const auto s0 = threshold_stats(zero.channel(Channel::Normal), 0.5);
  CHECK(s0.area == 0);
  CHECK(s0.activation == 0.0);
  for (double v : extract_features(zero).values) CHECK(v == 0.0);

  const PixelMap flat = PixelMap::filled(16, 16, {Channel::Normal}, 0.3f);
  const auto a = threshold_stats(flat.channel(Channel::Normal), 0.16);
  CHECK(a.area == 256);
  CHECK(a.activation == doctest::Approx(76.8).epsilon(1e-6));
  CHECK(threshold_stats(flat.channel(Channel::Normal), 0.32).area == 0);
}

TEST_CASE("single malignant disk leaves other channels at zero") {
  const PixelMap m = planted(64, {{32, 32}});
  const auto fv = extract_features(m);
  for (std::size_t i = 0; i < 54; ++i) CHECK(fv.values[i] == 0.0);
  for (double t : kBlobThresholds) {
    CHECK(fv.values[feature_index(Channel::Malignant, FeatureFamily::BlobCount, t)] == 1.0);
  }
  const auto blobs = log_blobs(m.plane(Channel::Malignant), 0.5);
  REQUIRE(blobs.size() == 1);
  CHECK(std::hypot(blobs[0].cx - 32, blobs[0].cy - 32) <= 1.0);
}

TEST_CASE("two disks 30 px apart give two blobs") {
  const PixelMap m = planted(100, {{35, 50}, {65, 50}});
  CHECK(log_blobs(m.plane(Channel::Malignant), 0.5).size() == 2);
}

TEST_CASE("feature monotonicity and bounds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PixelMap m = testutil::random_map(64, 64, 300 + seed);
    const auto fv = extract_features(m);
    for (Channel c : kNucleusChannels) {
      double prev_area = 1e300, prev_act = 1e300, prev_count = 1e300;
      for (double t : kAreaThresholds) {
        const double area = fv.values[feature_index(c, FeatureFamily::Area, t)];
        const double act = fv.values[feature_index(c, FeatureFamily::Activation, t)];
        CHECK(area <= prev_area);
        CHECK(act <= prev_act);
        CHECK(act <= area);
        CHECK(act >= t * area);
        prev_area = area;
        prev_act = act;
      }
      CHECK(fv.values[feature_index(c, FeatureFamily::Activation, 0.02)] <=
            fv.values[feature_index(c, FeatureFamily::TotalActivation)]);
      for (double t : kBlobThresholds) {
        const double count = fv.values[feature_index(c, FeatureFamily::BlobCount, t)];
        CHECK(count <= prev_count);
        prev_count = count;
      }
    }
  }
}

TEST_CASE("pixel permutations and flips preserve pointwise features") {
  const PixelMap m = planted(96, {{30, 30}, {60, 70}, {75, 20}});
  const auto base = extract_features(m);

  std::vector<std::vector<float>> flipped, shuffled;
  std::mt19937_64 rng(4);
  for (const auto& plane : m.data()) {
    std::vector<float> f(plane.size());
    for (int y = 0; y < 96; ++y) {
      for (int x = 0; x < 96; ++x) f[static_cast<std::size_t>(y * 96 + x)] = plane[static_cast<std::size_t>(y * 96 + (95 - x))];
    }
    flipped.push_back(std::move(f));
    auto s = plane;
    std::shuffle(s.begin(), s.end(), rng);
    shuffled.push_back(std::move(s));
  }
  const auto fl = extract_features(PixelMap(96, 96, m.channels(), flipped));
  const auto sh = extract_features(PixelMap(96, 96, m.channels(), shuffled));
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto family = feature_columns()[i].family;
    if (family == FeatureFamily::BlobCount) CHECK(fl.values[i] == base.values[i]);
    if (family == FeatureFamily::Area || family == FeatureFamily::TotalActivation) {
      CHECK(fl.values[i] == base.values[i]);
      CHECK(sh.values[i] == base.values[i]);
    }
    if (family == FeatureFamily::Activation) {
      CHECK(fl.values[i] == doctest::Approx(base.values[i]).epsilon(1e-12));
      CHECK(sh.values[i] == doctest::Approx(base.values[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("blob invariants") {
  const PixelMap m = testutil::random_map(80, 64, 8);
  for (const Blob& b : detect_blobs(m.plane(Channel::Lymphocyte))) {
    CHECK(b.response > 0.0);
    CHECK(b.cx >= 0.0);
    CHECK(b.cx <= 79.0);
    CHECK(b.cy >= 0.0);
    CHECK(b.cy <= 63.0);
    CHECK(std::abs(b.cx - b.px) <= 0.5);
    CHECK(std::abs(b.cy - b.py) <= 0.5);
    CHECK(b.center_activation == m.at(Channel::Lymphocyte, b.px, b.py));
  }
}
