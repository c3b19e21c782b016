#include <gtest/gtest.h>

#include <set>

#include "focuskit/focuskit.hpp"
#include "oracles.hpp"

using namespace focuskit;

namespace {

PersonAnnotation invisible_person() {
  PersonAnnotation p;
  p.image_id = "x.png";
  for (auto& j : p.joints) j = {-1, -1};
  p.center = {8, 8};
  p.scale = 0.1;
  return p;
}

bool in_unit_range(const Heatmap& hm) {
  return std::all_of(hm.values.begin(), hm.values.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

}  // namespace

TEST(PartGroups, Defaults) {
  const auto g = default_part_groups();
  ASSERT_EQ(g.size(), 7u);
  EXPECT_EQ(g[1].name, "head");
  EXPECT_EQ(g[1].joints, (std::vector<int>{8, 9}));
  std::array<int, kNumJoints> membership{};
  for (std::size_t i = 1; i < g.size(); ++i) {
    for (int j : g[i].joints) ++membership[static_cast<std::size_t>(j)];
  }
  for (int m : membership) {
    EXPECT_GE(m, 1);
    EXPECT_LE(m, 2);
  }
  EXPECT_NO_THROW(validate(g));
}

TEST(PartGroups, UncoveredJointRejected) {
  PartGroups g = {{"head", {8, 9}}};
  EXPECT_THROW(validate(g), ValidationError);
}

TEST(FitEllipse, BoxCorners) {
  const std::vector<Point> pts = {{0, 0}, {10, 0}, {0, 20}, {10, 20}};
  const auto e = fit_ellipse(pts, 1.25, 4);
  EXPECT_DOUBLE_EQ(e.x0, 5);
  EXPECT_DOUBLE_EQ(e.y0, 10);
  EXPECT_DOUBLE_EQ(e.a, 6.25);
  EXPECT_DOUBLE_EQ(e.b, 12.5);
}

TEST(FitEllipse, SinglePointHitsFloor) {
  const std::vector<Point> pts = {{10, 10}};
  const auto e = fit_ellipse(pts, 1.25, 4);
  EXPECT_DOUBLE_EQ(e.x0, 10);
  EXPECT_DOUBLE_EQ(e.a, 4);
  EXPECT_DOUBLE_EQ(e.b, 4);
}

TEST(FitEllipse, EmptyIsDegenerate) {
  EXPECT_THROW(fit_ellipse(std::vector<Point>{}, 1.25, 4), DegenerateInputError);
}

TEST(Gaussian, AnalyticValues) {
  const Ellipse e{3, 4, 8, 6};
  EXPECT_DOUBLE_EQ(gaussian_at(3, 4, e), 1.0);
  EXPECT_NEAR(gaussian_at(3 + 4, 4, e), 0.606531, 1e-6);
  EXPECT_NEAR(gaussian_at(3 + 4, 4 + 3, e), 0.367879, 1e-6);
}

TEST(PartHeatmap, NoVisibleJointsIsSkipped) {
  const auto p = invisible_person();
  const std::vector<int> group = {8, 9};
  const auto r = part_heatmap(p, group, 16, 16, 1.25, 4);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.heatmap, Heatmap(16, 16));
}

TEST(PartHeatmap, PeakAtCentre) {
  std::mt19937_64 rng(1);
  const auto groups = default_part_groups();
  for (int trial = 0; trial < 50; ++trial) {
    auto p = oracle::random_person(rng, 32, 32);
    for (const auto& g : groups) {
      const auto pts = visible_points(p, g.joints);
      if (pts.empty()) continue;
      const auto e = fit_ellipse(pts, 1.25, 4);
      const auto r = part_heatmap(p, g.joints, 32, 32, 1.25, 4);
      const int cx = static_cast<int>(std::lround(e.x0)), cy = static_cast<int>(std::lround(e.y0));
      float mx = 0;
      for (float v : r.heatmap.values) mx = std::max(mx, v);
      EXPECT_LE(mx, 1.0f);
      if (e.x0 == cx && e.y0 == cy) {
        EXPECT_EQ(r.heatmap.at(cx, cy), 1.0f);
      }
      EXPECT_EQ(r.heatmap.at(cx, cy), mx) << g.name;
    }
  }
}

TEST(PartHeatmap, MatchesOracleOn32) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_person(rng, 32, 32);
    const PartGroups single = {{"right-arm", {10, 11, 12}}};
    const auto r = part_heatmap(p, single[0].joints, 32, 32, 1.25, 4);
    EXPECT_LT(oracle::max_abs_diff(r.heatmap, oracle::person_heatmap(p, 32, 32, single, 1.25, 4)), 1e-6);
  }
}

TEST(PersonHeatmap, AllInvisibleIsZeroWithFlag) {
  const auto r = person_heatmap(invisible_person(), 16, 16, default_part_groups());
  EXPECT_TRUE(r.no_visible_joints);
  EXPECT_EQ(r.skipped_groups.size(), 7u);
  EXPECT_EQ(r.heatmap, Heatmap(16, 16));
}

TEST(PersonHeatmap, SingleVisibleJoint) {
  auto p = invisible_person();
  p.joints_vis[9] = 1;
  p.joints[9] = {10, 7};
  const auto r = person_heatmap(p, 24, 24, default_part_groups());
  EXPECT_EQ(r.heatmap.at(10, 7), 1.0f);
  EXPECT_LT(oracle::max_abs_diff(r.heatmap, oracle::person_heatmap(p, 24, 24, default_part_groups(), 1.25, 4)), 1e-6);
  // whole-body and head stack two identical floor-sized Gaussians
  EXPECT_NEAR(r.heatmap.at(13, 7), 2 * std::exp(-9.0 / 8.0), 1e-6);
}

TEST(PersonHeatmap, OracleOn64) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_person(rng, 64, 64, 0.7);
    const auto r = person_heatmap(p, 64, 64, default_part_groups());
    EXPECT_LT(oracle::max_abs_diff(r.heatmap, oracle::person_heatmap(p, 64, 64, default_part_groups(), 1.25, 4)), 1e-6);
    EXPECT_TRUE(in_unit_range(r.heatmap));
  }
}

TEST(PersonHeatmap, WholeBodyExclusionMatchesOracle) {
  std::mt19937_64 rng(30);
  HeatmapConfig cfg;
  cfg.include_whole_body = false;
  cfg.padding = 1.5;
  cfg.min_semi_axis = 2.5;
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_person(rng, 40, 30);
    const auto r = person_heatmap(p, 40, 30, default_part_groups(), cfg);
    EXPECT_LT(oracle::max_abs_diff(r.heatmap, oracle::person_heatmap(p, 40, 30, default_part_groups(), 1.5, 2.5, false)),
              1e-6);
  }
}

TEST(PersonHeatmap, TranslationEquivariance) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_person(rng, 32, 32);
    const int dx = 5, dy = -3;
    auto q = p;
    for (int j = 0; j < kNumJoints; ++j) {
      if (q.visible(j)) q.joints[static_cast<std::size_t>(j)] = {p.joints[j].x + dx, p.joints[j].y + dy};
    }
    const auto a = person_heatmap(p, 48, 48, default_part_groups()).heatmap;
    const auto b = person_heatmap(q, 48, 48, default_part_groups()).heatmap;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 48; ++x) {
        const int tx = x + dx, ty = y + dy;
        if (tx < 0 || ty < 0 || tx >= 48 || ty >= 48) continue;
        ASSERT_NEAR(a.at(x, y), b.at(tx, ty), 1e-6);
      }
    }
  }
}

TEST(PartHeatmap, MonotoneDecayAlongAxes) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_person(rng, 48, 48, 1.0);
    const std::vector<int> group = {0, 1, 2};
    const auto e = fit_ellipse(visible_points(p, group), 1.25, 4);
    const auto hm = part_heatmap(p, group, 48, 48, 1.25, 4).heatmap;
    const int cx = static_cast<int>(std::lround(e.x0)), cy = static_cast<int>(std::lround(e.y0));
    const int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& d : dirs) {
      float prev = hm.at(cx, cy);
      for (int s = 1;; ++s) {
        const int x = cx + d[0] * s, y = cy + d[1] * s;
        if (x < 0 || y < 0 || x >= 48 || y >= 48 || !inside(x, y, e)) break;
        EXPECT_LE(hm.at(x, y), prev);
        prev = hm.at(x, y);
      }
    }
  }
}

TEST(SceneHeatmap, OnePersonEqualsPersonHeatmap) {
  std::mt19937_64 rng(6);
  const auto p = oracle::random_person(rng, 32, 32);
  EXPECT_EQ(scene_heatmap({p}, 32, 32, default_part_groups()).heatmap,
            person_heatmap(p, 32, 32, default_part_groups()).heatmap);
}

TEST(SceneHeatmap, TwoPersonsSumAndClip) {
  std::mt19937_64 rng(7);
  const auto a = oracle::random_person(rng, 32, 32);
  const auto b = oracle::random_person(rng, 32, 32);
  const auto scene = scene_heatmap({a, b}, 32, 32, default_part_groups());
  const auto ra = oracle::person_heatmap(a, 32, 32, default_part_groups(), 1.25, 4);
  const auto rb = oracle::person_heatmap(b, 32, 32, default_part_groups(), 1.25, 4);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_NEAR(scene.heatmap.values[i], std::min(1.0, ra[i] + rb[i]), 1e-6);
  }
}

TEST(SceneHeatmap, ZeroVisibleSample) {
  Sample s;
  s.image_id = "x.png";
  s.image = ImageGrid(16, 16, 3);
  s.persons = {invisible_person()};
  const auto r = scene_heatmap(s, default_part_groups());
  EXPECT_EQ(r.persons_without_visible_joints, 1);
  EXPECT_EQ(r.heatmap, Heatmap(16, 16));
}

TEST(BoxHeatmap, CentreAndOutside) {
  const auto hm = box_heatmap({16, 16}, 0.1, 32, 32);
  EXPECT_EQ(hm.at(16, 16), 1.0f);
  EXPECT_EQ(hm.at(0, 0), 0.0f);
  EXPECT_EQ(hm.at(16, 5), 0.0f);
  EXPECT_GT(hm.at(16, 6), 0.0f);
}

TEST(BoxHeatmap, MatchesDirectEvaluation) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 31), us(0.02, 0.2);
  for (int trial = 0; trial < 20; ++trial) {
    const Point c{u(rng), u(rng)};
    const double scale = us(rng);
    const auto hm = box_heatmap(c, scale, 32, 32);
    const double a = 100 * scale, sigma = a / 2;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const double dx = x - c.x, dy = y - c.y;
        const double want = (dx * dx + dy * dy) / (a * a) <= 1
                                ? std::exp(-(dx * dx) / (2 * sigma * sigma) - (dy * dy) / (2 * sigma * sigma))
                                : 0.0;
        ASSERT_NEAR(hm.at(x, y), want, 1e-6);
      }
    }
  }
}

TEST(ApplyHeatmap, Cases) {
  ImageGrid img(2, 1, 3, 0.8f);
  EXPECT_EQ(apply_heatmap(img, Heatmap(2, 1, 1.0f)), img);
  EXPECT_EQ(apply_heatmap(img, Heatmap(2, 1, 0.0f)), ImageGrid(2, 1, 3, 0.0f));
  EXPECT_FLOAT_EQ(apply_heatmap(img, Heatmap(2, 1, 0.5f)).at(1, 0, 2), 0.4f);
}

TEST(ApplyHeatmap, MismatchNamesBothShapes) {
  try {
    apply_heatmap(ImageGrid(4, 3, 3), Heatmap(3, 4));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("4x3"), std::string::npos);
    EXPECT_NE(msg.find("3x4"), std::string::npos);
  }
}

TEST(Fhm1, TwoByTwoPayloadSize) {
  Heatmap hm(2, 2);
  hm.values = {0, 0.5f, 1, 0.25f};
  const auto bytes = encode_fhm1(hm);
  ASSERT_EQ(bytes.size(), 12u + 16u);
  EXPECT_EQ(bytes.substr(0, 4), "FHM1");
  EXPECT_EQ(bytes.substr(4, 8), std::string("\x02\x00\x00\x00\x02\x00\x00\x00", 8));
  EXPECT_EQ(bytes.substr(12 + 4, 4), std::string("\x00\x00\x00\x3f", 4));
}

TEST(Fhm1, RoundTripBitExact) {
  oracle::TempDir dir;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0, 1);
  Heatmap hm(37, 11);
  for (auto& v : hm.values) v = u(rng);
  write_heatmap(hm, dir / "h.fhm");
  const auto back = read_heatmap(dir / "h.fhm");
  EXPECT_EQ(std::memcmp(back.values.data(), hm.values.data(), hm.values.size() * 4), 0);
  EXPECT_EQ(back, hm);
}

TEST(Fhm1, BadMagicAndTruncation) {
  Heatmap hm(2, 2, 0.5f);
  auto bytes = encode_fhm1(hm);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_fhm1(bad, "bad"), FormatError);
  EXPECT_THROW(decode_fhm1(bytes.substr(0, bytes.size() - 1), "short"), FormatError);
  EXPECT_THROW(decode_fhm1(bytes + "x", "long"), FormatError);
}

TEST(Pgm, Rounding) {
  oracle::TempDir dir;
  Heatmap hm(3, 1);
  hm.values = {0, 0.5f, 1};
  write_pgm(hm, dir / "h.pgm");
  const auto bytes = read_file(dir / "h.pgm");
  EXPECT_EQ(bytes, std::string("P5\n3 1\n255\n") + std::string("\x00\x80\xff", 3));
}
