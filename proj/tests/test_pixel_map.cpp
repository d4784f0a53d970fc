#include <cstring>
#include <cmath>
#include <limits>

#include "cellularity/csv.hpp"
#include "cellularity/feature_table.hpp"
#include "cellularity/pixel_map.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cellularity;

TEST_CASE("pixel map rejects broken invariants") {
  const std::vector<Channel> one = {Channel::Malignant};
  CHECK_THROWS_AS(PixelMap(0, 3, one, {std::vector<float>(0)}), FormatError);
  CHECK_THROWS_AS(PixelMap(2, 2, one, {std::vector<float>(3, 0.f)}), FormatError);
  CHECK_THROWS_AS(PixelMap(2, 2, {Channel::Normal, Channel::Normal},
                           {std::vector<float>(4, 0.f), std::vector<float>(4, 0.f)}),
                  FormatError);
  CHECK_THROWS_AS(PixelMap(1, 1, one, {std::vector<float>{1.5f}}), FormatError);
  CHECK_THROWS_AS(PixelMap(1, 1, one, {std::vector<float>{-0.01f}}), FormatError);
  CHECK_THROWS_AS(PixelMap(1, 1, one, {std::vector<float>{std::nanf("")}}), FormatError);
  CHECK_NOTHROW(PixelMap(1, 1, one, {std::vector<float>{1.0f}}));
}

TEST_CASE("out-of-range error names channel and index") {
  try {
    PixelMap(2, 1, {Channel::Lymphocyte}, {std::vector<float>{0.2f, 2.0f}});
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("Lymphocyte") != std::string::npos);
    CHECK(msg.find('1') != std::string::npos);
  }
}

TEST_CASE("channels are addressed by name, not position") {
  const PixelMap m(1, 1, {Channel::Background, Channel::Normal},
                   {std::vector<float>{0.25f}, std::vector<float>{0.75f}});
  CHECK(m.at(Channel::Normal, 0, 0) == 0.75f);
  CHECK(m.at(Channel::Background, 0, 0) == 0.25f);
  CHECK_FALSE(m.has(Channel::Malignant));
  CHECK_THROWS_AS(m.channel(Channel::Malignant), FormatError);
}

TEST_CASE("PMAP round trip is bit exact") {
  testutil::TempDir dir("pmap");
  const PixelMap m = testutil::random_map(17, 9, 3);
  save_pmap(m, dir / "a.pmap");
  const PixelMap back = load_pmap(dir / "a.pmap");
  CHECK(back == m);
  save_pmap(back, dir / "b.pmap");
  CHECK(testutil::slurp(dir / "a.pmap") == testutil::slurp(dir / "b.pmap"));
  const std::string bytes = testutil::slurp(dir / "a.pmap");
  CHECK(bytes.size() == pmap_header(m).size() + 17 * 9 * 4 * sizeof(float));
}

TEST_CASE("PMAP loader rejects malformed files") {
  testutil::TempDir dir("pmapbad");
  const PixelMap m = testutil::random_map(4, 4, 1);
  save_pmap(m, dir / "ok.pmap");
  const std::string good = testutil::slurp(dir / "ok.pmap");

  testutil::write_text(dir / "trunc.pmap", good.substr(0, good.size() - 1));
  CHECK_THROWS_AS(load_pmap(dir / "trunc.pmap"), FormatError);
  testutil::write_text(dir / "long.pmap", good + "x");
  CHECK_THROWS_AS(load_pmap(dir / "long.pmap"), FormatError);

  std::string magic = good;
  magic.replace(magic.find("PMAP1"), 5, "PMAP9");
  testutil::write_text(dir / "magic.pmap", magic);
  CHECK_THROWS_AS(load_pmap(dir / "magic.pmap"), FormatError);

  std::string chan = good;
  chan.replace(chan.find("Normal"), 6, "Stroma");
  testutil::write_text(dir / "chan.pmap", chan);
  CHECK_THROWS_AS(load_pmap(dir / "chan.pmap"), FormatError);

  std::string value = good;
  const float big = 3.0f;
  std::memcpy(value.data() + pmap_header(m).size(), &big, sizeof big);
  testutil::write_text(dir / "value.pmap", value);
  CHECK_THROWS_AS(load_pmap(dir / "value.pmap"), FormatError);

  testutil::write_text(dir / "empty.pmap", "");
  CHECK_THROWS_AS(load_pmap(dir / "empty.pmap"), FormatError);
}

TEST_CASE("downscale2 averages 2x2 blocks") {
  const PixelMap m(2, 2, {Channel::Malignant}, {std::vector<float>{0.0f, 1.0f, 0.5f, 0.5f}});
  const PixelMap d = downscale2(m);
  CHECK(d.width() == 1);
  CHECK(d.height() == 1);
  CHECK(d.at(Channel::Malignant, 0, 0) == 0.5f);
  CHECK_THROWS_AS(downscale2(PixelMap::filled(3, 2, {Channel::Normal}, 0.f)), FormatError);
}

TEST_CASE("csv number formatting round trips") {
  for (double v : {0.0, 0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5}) {
    CHECK(csv::parse_double(csv::format_double(v)) == v);
  }
  CHECK_FALSE(csv::parse_double("1.0x"));
  CHECK_FALSE(csv::parse_double(""));
  CHECK_FALSE(csv::parse_int("3.5"));
  CHECK(csv::parse_int("-7") == -7);
}

TEST_CASE("feature csv round trip") {
  testutil::TempDir dir("fcsv");
  FeatureTable t;
  t.features = FeatureMatrix(0, 3);
  t.ids = {"a", "b"};
  const std::vector<double> r0 = {0.1, 1.0 / 3.0, 7.0};
  const std::vector<double> r1 = {1e-12, 0.0, 2.0};
  t.features.append_row(r0);
  t.features.append_row(r1);
  t.targets = std::vector<double>{0.25, 0.75};
  write_feature_csv(t, dir / "f.csv");
  const FeatureTable back = read_feature_csv(dir / "f.csv");
  CHECK(back.ids == t.ids);
  CHECK(back.features == t.features);
  CHECK(back.targets == t.targets);
}

TEST_CASE("downscale2 equals a brute-force block mean") {
  const PixelMap m = testutil::random_map(8, 8, 21);
  const PixelMap d = downscale2(m);
  double mass_in = 0.0, mass_out = 0.0;
  for (Channel c : kAllChannels) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        const double mean = (static_cast<double>(m.at(c, 2 * x, 2 * y)) + m.at(c, 2 * x + 1, 2 * y) +
                             m.at(c, 2 * x, 2 * y + 1) + m.at(c, 2 * x + 1, 2 * y + 1)) /
                            4.0;
        CHECK(d.at(c, x, y) == static_cast<float>(mean));
        mass_out += d.at(c, x, y);
      }
    }
    for (float v : m.channel(c)) mass_in += v;
  }
  CHECK(std::abs(4 * mass_out - mass_in) <= 4 * 64 * 1e-7);

  const PixelMap flat = PixelMap::filled(6, 4, {Channel::Normal}, 0.4f);
  const PixelMap half = downscale2(flat);
  for (float v : half.channel(Channel::Normal)) CHECK(v == 0.4f);
}

TEST_CASE("PMAP zero map and file size arithmetic") {
  testutil::TempDir dir("pmapsize");
  const PixelMap zeros = PixelMap::filled(2, 2, {Channel::Normal}, 0.0f);
  save_pmap(zeros, dir / "z.pmap");
  const PixelMap back = load_pmap(dir / "z.pmap");
  for (float v : back.channel(Channel::Normal)) CHECK(v == 0.0f);

  const PixelMap big = PixelMap::filled(512, 512, {kAllChannels.begin(), kAllChannels.end()}, 0.5f);
  save_pmap(big, dir / "big.pmap");
  CHECK(std::filesystem::file_size(dir / "big.pmap") == pmap_header(big).size() + 4u * 512 * 512 * 4);

  CHECK_THROWS_AS(save_pmap(PixelMap(1, 1, {}, {}), dir / "none.pmap"), FormatError);
}
