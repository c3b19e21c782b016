#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "focuskit/error.hpp"
#include "focuskit/image.hpp"
#include "focuskit/util.hpp"

namespace focuskit {

inline constexpr int kNumJoints = 16;

/// MPII joint order.
inline constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "right ankle", "right knee",  "right hip",      "left hip",      "left knee",  "left ankle",
    "pelvis",      "thorax",      "upper neck",     "head top",      "right wrist", "right elbow",
    "right shoulder", "left shoulder", "left elbow", "left wrist"};

struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

/// One annotated person in MMPose's MPII layout. Invisible joints keep their
/// coordinates as given (usually -1); nothing is imputed.
struct PersonAnnotation {
  std::string image_id;
  std::array<Point, kNumJoints> joints{};
  std::array<int, kNumJoints> joints_vis{};
  Point center;
  double scale = 1.0;
  std::optional<std::string> activity;

  bool visible(int j) const { return joints_vis[static_cast<std::size_t>(j)] == 1; }
  int visible_count() const {
    int n = 0;
    for (int v : joints_vis) n += v == 1;
    return n;
  }
  bool operator==(const PersonAnnotation&) const = default;
};

struct Sample {
  std::string image_id;
  ImageGrid image;
  std::vector<PersonAnnotation> persons;
  std::optional<std::string> description;
};

inline void validate(const PersonAnnotation& p) {
  if (!(p.scale > 0) || !std::isfinite(p.scale)) {
    throw ValidationError(fmt::format("scale must be positive, got {}", p.scale));
  }
  for (int j = 0; j < kNumJoints; ++j) {
    const int v = p.joints_vis[static_cast<std::size_t>(j)];
    if (v != 0 && v != 1) throw ValidationError(fmt::format("joint {} visibility must be 0 or 1, got {}", j, v));
    const auto& pt = p.joints[static_cast<std::size_t>(j)];
    if (v == 1 && !(std::isfinite(pt.x) && std::isfinite(pt.y))) {
      throw ValidationError(fmt::format("visible joint {} has non-finite coordinates", j));
    }
  }
  if (!std::isfinite(p.center.x) || !std::isfinite(p.center.y)) {
    throw ValidationError("center has non-finite coordinates");
  }
}

inline void validate(const Sample& s) {
  if (s.persons.empty()) throw ValidationError(fmt::format("sample '{}' has no persons", s.image_id));
  for (const auto& p : s.persons) {
    if (p.image_id != s.image_id) {
      throw ValidationError(fmt::format("person of image '{}' grouped under '{}'", p.image_id, s.image_id));
    }
  }
}

namespace detail {

inline Point point_from_json(const json& j, std::string_view what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ValidationError(fmt::format("{} must be a [x, y] number pair", what));
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline PersonAnnotation person_from_json(const json& rec) {
  if (!rec.is_object()) throw ValidationError("record is not an object");
  for (const char* key : {"image", "joints", "joints_vis", "center", "scale"}) {
    if (!rec.contains(key)) throw ValidationError(fmt::format("missing field '{}'", key));
  }
  PersonAnnotation p;
  if (!rec["image"].is_string()) throw ValidationError("field 'image' must be a string");
  p.image_id = rec["image"].get<std::string>();
  const auto& joints = rec["joints"];
  const auto& vis = rec["joints_vis"];
  if (!joints.is_array() || joints.size() != kNumJoints) {
    throw ValidationError(fmt::format("expected {} joints, got {}", kNumJoints, joints.is_array() ? joints.size() : 0));
  }
  if (!vis.is_array() || vis.size() != kNumJoints) {
    throw ValidationError(
        fmt::format("expected {} visibility flags, got {}", kNumJoints, vis.is_array() ? vis.size() : 0));
  }
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    p.joints[j] = detail::point_from_json(joints[j], fmt::format("joint {}", j));
    if (!vis[j].is_number()) throw ValidationError(fmt::format("visibility flag {} is not a number", j));
    const double v = vis[j].get<double>();
    if (v != 0.0 && v != 1.0) throw ValidationError(fmt::format("joint {} visibility must be 0 or 1, got {}", j, v));
    p.joints_vis[j] = static_cast<int>(v);
  }
  p.center = detail::point_from_json(rec["center"], "center");
  if (!rec["scale"].is_number()) throw ValidationError("field 'scale' must be a number");
  p.scale = rec["scale"].get<double>();
  if (rec.contains("activity") && !rec["activity"].is_null()) {
    if (!rec["activity"].is_string()) throw ValidationError("field 'activity' must be a string");
    p.activity = rec["activity"].get<std::string>();
  }
  validate(p);
  return p;
}

inline ordered_json person_to_json(const PersonAnnotation& p) {
  ordered_json rec;
  rec["image"] = p.image_id;
  auto joints = ordered_json::array();
  for (const auto& pt : p.joints) joints.push_back({pt.x, pt.y});
  rec["joints"] = std::move(joints);
  rec["joints_vis"] = p.joints_vis;
  rec["center"] = {p.center.x, p.center.y};
  rec["scale"] = p.scale;
  if (p.activity) rec["activity"] = *p.activity;
  return rec;
}

inline std::vector<PersonAnnotation> parse_annotations(std::string_view text, std::string_view origin) {
  const json doc = parse_json(text, origin);
  if (!doc.is_array()) throw ValidationError(fmt::format("{}: expected a JSON array of records", origin));
  std::vector<PersonAnnotation> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    try {
      out.push_back(person_from_json(doc[i]));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}: record {}: {}", origin, i, e.what()));
    }
  }
  return out;
}

inline std::vector<PersonAnnotation> load_annotations(const fs::path& path) {
  return parse_annotations(read_file(path), path.string());
}

inline void write_annotations(const fs::path& path, const std::vector<PersonAnnotation>& annotations) {
  auto doc = ordered_json::array();
  for (const auto& p : annotations) doc.push_back(person_to_json(p));
  write_file_atomic(path, doc.dump(2) + "\n");
}

struct PersonGroup {
  std::string image_id;
  std::vector<PersonAnnotation> persons;
};

/// Groups records by image id, in order of first appearance; persons keep
/// their input order.
inline std::vector<PersonGroup> group_persons(const std::vector<PersonAnnotation>& annotations) {
  std::vector<PersonGroup> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& p : annotations) {
    auto [it, inserted] = index.try_emplace(p.image_id, groups.size());
    if (inserted) groups.push_back({p.image_id, {}});
    groups[it->second].persons.push_back(p);
  }
  return groups;
}

inline std::vector<Sample> group_by_image(const std::vector<PersonAnnotation>& annotations,
                                          const fs::path& images_dir) {
  std::vector<Sample> samples;
  std::vector<std::string> missing;
  auto groups = group_persons(annotations);
  for (const auto& g : groups) {
    if (!fs::is_regular_file(images_dir / g.image_id)) missing.push_back(g.image_id);
  }
  if (!missing.empty()) {
    throw IoError(fmt::format("missing image file(s) in '{}': {}", images_dir.string(), fmt::join(missing, ", ")));
  }
  samples.reserve(groups.size());
  for (auto& g : groups) {
    Sample s;
    s.image_id = g.image_id;
    s.image = load_image(images_dir / g.image_id);
    s.persons = std::move(g.persons);
    samples.push_back(std::move(s));
  }
  return samples;
}

struct Description {
  std::string image_id;
  std::string text;
  bool operator==(const Description&) const = default;
};

inline std::vector<Description> load_descriptions(const fs::path& path) {
  const json doc = load_json_file(path);
  if (!doc.is_array()) throw ValidationError(path.string() + ": expected a JSON array");
  std::vector<Description> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    if (!rec.is_object() || !rec.contains("image") || !rec.contains("description") || !rec["image"].is_string() ||
        !rec["description"].is_string()) {
      throw ValidationError(fmt::format("{}: entry {} needs string fields 'image' and 'description'", path.string(), i));
    }
    out.push_back({rec["image"].get<std::string>(), rec["description"].get<std::string>()});
  }
  return out;
}

inline void write_descriptions(const fs::path& path, const std::vector<Description>& entries) {
  auto doc = ordered_json::array();
  for (const auto& d : entries) doc.push_back({{"image", d.image_id}, {"description", d.text}});
  write_file_atomic(path, doc.dump(2) + "\n");
}

struct AttachReport {
  std::vector<std::string> unmatched;  // sample ids with no description
};

/// Sets Sample::description from an {image, description} file. Duplicate ids
/// in the file are an error; samples without an entry are left untouched and
/// listed in the report.
inline AttachReport attach_descriptions(std::vector<Sample>& samples, const fs::path& descriptions) {
  std::map<std::string, std::string> by_id;
  for (auto& d : load_descriptions(descriptions)) {
    if (!by_id.emplace(d.image_id, std::move(d.text)).second) {
      throw ValidationError(fmt::format("{}: duplicate image id '{}'", descriptions.string(), d.image_id));
    }
  }
  AttachReport report;
  for (auto& s : samples) {
    auto it = by_id.find(s.image_id);
    if (it == by_id.end()) {
      report.unmatched.push_back(s.image_id);
    } else {
      s.description = it->second;
    }
  }
  return report;
}

}  // namespace focuskit
