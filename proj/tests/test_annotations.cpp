#include "cellularity/annotations.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cellularity;

TEST_CASE("disk rasterization matches a per-pixel distance scan") {
  for (int d : {1, 2, 7, 14, 15, 16}) {
    PointAnnotationSet ann{"p", {{0, 0, Channel::Malignant},
                                 {20, 13, Channel::Malignant},
                                 {39, 29, Channel::Malignant},
                                 {5, 28, Channel::Normal}}};
    const PixelMap masks = synthesize_masks(ann, 40, 30, d);
    const auto expect = oracle::disk_mask({{0, 0}, {20, 13}, {39, 29}}, 40, 30, d);
    const auto got = masks.channel(Channel::Malignant);
    CHECK(std::equal(got.begin(), got.end(), expect.begin(), expect.end()));

    std::size_t area = 0;
    for (float v : expect) area += v > 0.5f;
    CHECK(disk_union_area(ann, Channel::Malignant, 40, 30, d) == area);

    const auto normal = oracle::disk_mask({{5, 28}}, 40, 30, d);
    const auto bg = masks.channel(Channel::Background);
    for (std::size_t i = 0; i < bg.size(); ++i) {
      const bool nucleus = expect[i] > 0.5f || normal[i] > 0.5f;
      CHECK(bg[i] == (nucleus ? 0.0f : 1.0f));
    }
  }
}

TEST_CASE("a 15 px disk away from borders covers 177 pixels") {
  PointAnnotationSet ann{"p", {{30, 30, Channel::Lymphocyte}}};
  CHECK(disk_union_area(ann, Channel::Lymphocyte, 64, 64) == 177);
}

TEST_CASE("overlapping classes keep both channels set") {
  PointAnnotationSet ann{"p", {{10, 10, Channel::Normal}, {12, 10, Channel::Malignant}}};
  const PixelMap m = synthesize_masks(ann, 24, 24);
  CHECK(m.at(Channel::Normal, 11, 10) == 1.0f);
  CHECK(m.at(Channel::Malignant, 11, 10) == 1.0f);
  CHECK(m.at(Channel::Background, 11, 10) == 0.0f);
}

TEST_CASE("invalid diameter is rejected") {
  PointAnnotationSet ann{"p", {}};
  CHECK_THROWS_AS(synthesize_masks(ann, 8, 8, 0), std::invalid_argument);
}

TEST_CASE("annotation csv parsing and errors") {
  testutil::TempDir dir("ann");
  testutil::write_text(dir / "ok.csv",
                       "patch_id,x,y,class\nb,1,2,Malignant\na,3,4,Normal\nb,5,6,Lymphocyte\n");
  const auto sets = parse_annotations(dir / "ok.csv", Extent{10, 10});
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].patch_id == "b");
  CHECK(sets[0].points.size() == 2);
  CHECK(sets[0].points[1] == AnnotatedPoint{5, 6, Channel::Lymphocyte});

  write_annotations(sets, dir / "out.csv");
  CHECK(parse_annotations(dir / "out.csv") == sets);

  const auto expect_line = [&](const std::string& body, const std::string& needle) {
    testutil::write_text(dir / "bad.csv", "patch_id,x,y,class\na,1,1,Normal\n" + body);
    try {
      parse_annotations(dir / "bad.csv", Extent{10, 10});
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(":3:") != std::string::npos);
      CHECK(msg.find(needle) != std::string::npos);
    }
  };
  expect_line("a,1,1,Stroma\n", "Stroma");
  expect_line("a,1.5,1,Normal\n", "non-integer");
  expect_line("a,10,1,Normal\n", "outside");
  expect_line("a,-1,1,Normal\n", "outside");
}

TEST_CASE("header-only file and single row") {
  testutil::TempDir dir("ann2");
  testutil::write_text(dir / "h.csv", "patch_id,x,y,class\n");
  CHECK(parse_annotations(dir / "h.csv").empty());
  testutil::write_text(dir / "one.csv", "patch_id,x,y,class\np1,10,20,Malignant\n");
  const auto one = parse_annotations(dir / "one.csv");
  REQUIRE(one.size() == 1);
  CHECK(one[0].points == std::vector<AnnotatedPoint>{{10, 20, Channel::Malignant}});
}

TEST_CASE("empty set gives all-background masks") {
  const PixelMap m = synthesize_masks(PointAnnotationSet{"e", {}}, 16, 12);
  for (float v : m.channel(Channel::Background)) CHECK(v == 1.0f);
  for (Channel c : kNucleusChannels) {
    for (float v : m.channel(c)) CHECK(v == 0.0f);
  }
}

TEST_CASE("masks ignore point order and duplicates, and follow translation") {
  PointAnnotationSet a{"a", {{10, 12, Channel::Normal}, {25, 30, Channel::Malignant},
                             {40, 14, Channel::Lymphocyte}}};
  PointAnnotationSet b{"b", {a.points[2], a.points[0], a.points[1], a.points[0]}};
  CHECK(synthesize_masks(a, 64, 48) == synthesize_masks(b, 64, 48));

  PointAnnotationSet shifted = a;
  for (auto& p : shifted.points) {
    p.x += 5;
    p.y += 3;
  }
  const PixelMap m0 = synthesize_masks(a, 64, 48);
  const PixelMap m1 = synthesize_masks(shifted, 64, 48);
  for (Channel c : kAllChannels) {
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 55; ++x) CHECK(m0.at(c, x, y) == m1.at(c, x + 5, y + 3));
    }
  }
}
