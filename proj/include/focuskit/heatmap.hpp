#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "focuskit/dataset.hpp"
#include "focuskit/error.hpp"
#include "focuskit/image.hpp"
#include "focuskit/util.hpp"

// ROI heatmaps drawn from pose keypoints.
//
// Pixel (x, y) is evaluated at integer coordinates, i.e. pixel centres sit
// on the same grid as the keypoint annotations. Every part contributes an
// axis-aligned ellipse indicator times a Gaussian whose standard deviations
// are half the semi-axes, so the ellipse boundary lies at two sigma.

namespace focuskit {

struct Ellipse {
  double x0 = 0;
  double y0 = 0;
  double a = 1;  // semi-axis along x
  double b = 1;  // semi-axis along y
};

struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  Heatmap() = default;
  Heatmap(int w, int h, float fill = 0.0f) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw ValidationError(fmt::format("heatmap dimensions must be positive, got {}x{}", w, h));
  }

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Heatmap&) const = default;
};

struct PartGroup {
  std::string name;
  std::vector<int> joints;
};

using PartGroups = std::vector<PartGroup>;

inline constexpr std::string_view kWholeBody = "whole-body";

inline PartGroups default_part_groups() {
  return {
      {std::string(kWholeBody), {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}},
      {"head", {8, 9}},
      {"torso", {2, 3, 6, 7, 12, 13}},
      {"right-arm", {10, 11, 12}},
      {"left-arm", {13, 14, 15}},
      {"right-leg", {0, 1, 2}},
      {"left-leg", {3, 4, 5}},
  };
}

inline void validate(const PartGroups& groups) {
  std::array<bool, kNumJoints> covered{};
  for (const auto& g : groups) {
    for (int j : g.joints) {
      if (j < 0 || j >= kNumJoints) throw ValidationError(fmt::format("group '{}' has joint index {}", g.name, j));
      covered[static_cast<std::size_t>(j)] = true;
    }
  }
  for (int j = 0; j < kNumJoints; ++j) {
    if (!covered[static_cast<std::size_t>(j)]) throw ValidationError(fmt::format("joint {} belongs to no group", j));
  }
}

struct HeatmapConfig {
  double padding = 1.25;
  double min_semi_axis = 4.0;
  bool include_whole_body = true;
};

/// Axis-aligned bounding box midpoint with padded half-extents, each floored
/// at `min_semi_axis`.
inline Ellipse fit_ellipse(std::span<const Point> points, double padding, double min_semi_axis) {
  if (points.empty()) throw DegenerateInputError("cannot fit an ellipse to zero points");
  if (!(padding >= 1.0)) throw ValidationError(fmt::format("padding must be >= 1, got {}", padding));
  if (!(min_semi_axis > 0.0)) throw ValidationError(fmt::format("minimum semi-axis must be > 0, got {}", min_semi_axis));
  double xmin = points[0].x, xmax = xmin, ymin = points[0].y, ymax = ymin;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  return {(xmin + xmax) / 2, (ymin + ymax) / 2, std::max(padding * (xmax - xmin) / 2, min_semi_axis),
          std::max(padding * (ymax - ymin) / 2, min_semi_axis)};
}

inline double gaussian_at(double x, double y, const Ellipse& e) {
  const double sx = e.a / 2, sy = e.b / 2;
  const double dx = x - e.x0, dy = y - e.y0;
  return std::exp(-(dx * dx) / (2 * sx * sx) - (dy * dy) / (2 * sy * sy));
}

inline bool inside(double x, double y, const Ellipse& e) {
  const double u = (x - e.x0) / e.a, v = (y - e.y0) / e.b;
  return u * u + v * v <= 1.0;
}

namespace detail {

// Adds indicator x Gaussian of `e` into `acc`, visiting only the ellipse's
// bounding box.
inline void accumulate_ellipse(std::vector<double>& acc, int w, int h, const Ellipse& e) {
  const int x_lo = std::max(0, static_cast<int>(std::ceil(e.x0 - e.a)));
  const int x_hi = std::min(w - 1, static_cast<int>(std::floor(e.x0 + e.a)));
  const int y_lo = std::max(0, static_cast<int>(std::ceil(e.y0 - e.b)));
  const int y_hi = std::min(h - 1, static_cast<int>(std::floor(e.y0 + e.b)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      if (inside(x, y, e)) acc[static_cast<std::size_t>(y) * w + x] += gaussian_at(x, y, e);
    }
  }
}

inline Heatmap clip_to_heatmap(const std::vector<double>& acc, int w, int h) {
  Heatmap hm(w, h);
  for (std::size_t i = 0; i < acc.size(); ++i) hm.values[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
  return hm;
}

}  // namespace detail

/// Indicator x Gaussian of a single ellipse over a w x h grid.
inline Heatmap ellipse_heatmap(const Ellipse& e, int w, int h) {
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  detail::accumulate_ellipse(acc, w, h, e);
  return detail::clip_to_heatmap(acc, w, h);
}

struct PartHeatmap {
  Heatmap heatmap;
  bool skipped = false;  // group had no visible joints
};

inline std::vector<Point> visible_points(const PersonAnnotation& p, std::span<const int> group) {
  std::vector<Point> pts;
  for (int j : group) {
    if (p.visible(j)) pts.push_back(p.joints[static_cast<std::size_t>(j)]);
  }
  return pts;
}

inline PartHeatmap part_heatmap(const PersonAnnotation& p, std::span<const int> group, int w, int h,
                                double padding, double min_semi_axis) {
  const auto pts = visible_points(p, group);
  if (pts.empty()) return {Heatmap(w, h), true};
  return {ellipse_heatmap(fit_ellipse(pts, padding, min_semi_axis), w, h), false};
}

struct PersonHeatmap {
  Heatmap heatmap;
  bool no_visible_joints = false;
  std::vector<std::string> skipped_groups;
};

/// Sum of the part maps (whole-body map included unless disabled), clipped
/// to [0, 1].
inline PersonHeatmap person_heatmap(const PersonAnnotation& p, int w, int h, const PartGroups& groups,
                                    const HeatmapConfig& cfg = {}) {
  PersonHeatmap out;
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  out.no_visible_joints = p.visible_count() == 0;
  for (const auto& g : groups) {
    if (!cfg.include_whole_body && g.name == kWholeBody) continue;
    const auto pts = visible_points(p, g.joints);
    if (pts.empty()) {
      out.skipped_groups.push_back(g.name);
      continue;
    }
    detail::accumulate_ellipse(acc, w, h, fit_ellipse(pts, cfg.padding, cfg.min_semi_axis));
  }
  out.heatmap = detail::clip_to_heatmap(acc, w, h);
  return out;
}

struct SceneHeatmap {
  Heatmap heatmap;
  int persons_without_visible_joints = 0;
};

inline SceneHeatmap scene_heatmap(const std::vector<PersonAnnotation>& persons, int w, int h,
                                  const PartGroups& groups, const HeatmapConfig& cfg = {}) {
  SceneHeatmap out;
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  for (const auto& p : persons) {
    auto ph = person_heatmap(p, w, h, groups, cfg);
    out.persons_without_visible_joints += ph.no_visible_joints;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += ph.heatmap.values[i];
  }
  out.heatmap = detail::clip_to_heatmap(acc, w, h);
  return out;
}

inline SceneHeatmap scene_heatmap(const Sample& s, const PartGroups& groups, const HeatmapConfig& cfg = {}) {
  validate(s);
  return scene_heatmap(s.persons, s.image.width, s.image.height, groups, cfg);
}

/// Bounding-box variant: one ellipse inscribed in the square MPII person box
/// of side 200 * scale centred at `center`.
inline Heatmap box_heatmap(Point center, double scale, int w, int h) {
  if (!(scale > 0)) throw ValidationError(fmt::format("scale must be positive, got {}", scale));
  const double half = 100.0 * scale;
  return ellipse_heatmap({center.x, center.y, half, half}, w, h);
}

inline Heatmap box_scene_heatmap(const std::vector<PersonAnnotation>& persons, int w, int h) {
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  for (const auto& p : persons) {
    detail::accumulate_ellipse(acc, w, h, {p.center.x, p.center.y, 100.0 * p.scale, 100.0 * p.scale});
  }
  return detail::clip_to_heatmap(acc, w, h);
}

/// Hadamard masking: the heatmap is broadcast across channels.
inline ImageGrid apply_heatmap(const ImageGrid& img, const Heatmap& hm) {
  if (img.width != hm.width || img.height != hm.height) {
    throw ValidationError(
        fmt::format("image {}x{} and heatmap {}x{} differ in size", img.width, img.height, hm.width, hm.height));
  }
  ImageGrid out = img;
  const std::size_t pixels = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < pixels; ++i) {
    for (int c = 0; c < img.channels; ++c) out.values[i * img.channels + c] *= hm.values[i];
  }
  return out;
}

// FHM1: "FHM1", u32 width, u32 height, width*height f32, all little-endian,
// row-major from the top-left.
inline std::string encode_fhm1(const Heatmap& hm) {
  std::string out = "FHM1";
  out.reserve(12 + hm.values.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(hm.width));
  put_u32(out, static_cast<std::uint32_t>(hm.height));
  for (float v : hm.values) put_f32(out, v);
  return out;
}

inline Heatmap decode_fhm1(std::string_view bytes, std::string origin) {
  ByteReader r(bytes, std::move(origin));
  if (r.remaining() < 4 || r.take(4) != "FHM1") throw FormatError(r.origin() + ": bad magic (expected FHM1)");
  const std::uint32_t w = r.u32(), h = r.u32();
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
    throw FormatError(fmt::format("{}: implausible dimensions {}x{}", r.origin(), w, h));
  }
  Heatmap hm(static_cast<int>(w), static_cast<int>(h));
  for (auto& v : hm.values) v = r.f32();
  if (r.remaining() != 0) throw FormatError(fmt::format("{}: {} trailing bytes", r.origin(), r.remaining()));
  return hm;
}

inline void write_heatmap(const Heatmap& hm, const fs::path& path) { write_file_atomic(path, encode_fhm1(hm)); }

inline Heatmap read_heatmap(const fs::path& path) { return decode_fhm1(read_file(path), path.string()); }

/// 8-bit binary PGM for eyeballing; value = round(v * 255).
inline void write_pgm(const Heatmap& hm, const fs::path& path) {
  std::string out = fmt::format("P5\n{} {}\n255\n", hm.width, hm.height);
  for (float v : hm.values) out += static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  write_file_atomic(path, out);
}

}  // namespace focuskit
