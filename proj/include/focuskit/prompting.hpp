#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "focuskit/dataset.hpp"
#include "focuskit/error.hpp"
#include "focuskit/util.hpp"

namespace focuskit::prompting {

/// The literal slot that marks a structured response template.
inline constexpr std::string_view kCountSlot = "[num2word($count)]";

enum class Layout { Mpii, Cub };

/// Persona-style prompt description. `input_format` says what the model is
/// given; `role_detail` is an optional clause appended to the role (CUB).
/// An empty `response_format` selects the plain (unstructured) variant.
struct PromptSpec {
  std::string name;
  Layout layout = Layout::Mpii;
  std::string role;
  std::string role_detail;
  std::string dataset_name;
  std::string dataset_description;
  std::string input_format;
  std::string target;
  std::string required_content;
  std::string captioning_objective;
  std::string response_format;
  std::string response_restrictions;
  std::string intended_usage;

  bool operator==(const PromptSpec&) const = default;
};

struct PromptBundle {
  std::string system_prompt;
  std::string user_prompt;
  std::string sample_id;
};

inline void validate(const PromptSpec& s) {
  const std::pair<const char*, const std::string*> required[] = {
      {"role", &s.role},
      {"dataset_name", &s.dataset_name},
      {"dataset_description", &s.dataset_description},
      {"input_format", &s.input_format},
      {"target", &s.target},
      {"required_content", &s.required_content},
      {"captioning_objective", &s.captioning_objective},
      {"response_restrictions", &s.response_restrictions},
      {"intended_usage", &s.intended_usage},
  };
  for (const auto& [field, value] : required) {
    if (value->empty()) throw ValidationError(fmt::format("prompt spec '{}': field '{}' is empty", s.name, field));
  }
  if (s.layout == Layout::Mpii && !s.response_format.empty() &&
      s.response_format.find(kCountSlot) == std::string::npos) {
    throw ValidationError(
        fmt::format("prompt spec '{}': structured response_format must contain {}", s.name, kCountSlot));
  }
  if (s.layout == Layout::Cub && s.response_format.empty()) {
    throw ValidationError(fmt::format("prompt spec '{}': response_format is empty", s.name));
  }
}

inline std::string indefinite_article(std::string_view word) {
  if (word.empty()) return "a";
  switch (std::tolower(static_cast<unsigned char>(word[0]))) {
    case 'a': case 'e': case 'i': case 'o': case 'u':
      return "an";
    default:
      return "a";
  }
}

inline std::string mpii_keypoint_legend() {
  std::string out = fmt::format("{} keypoints in order: ", kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) {
    if (j > 0) out += ", ";
    out += fmt::format("{} - {}", j, kJointNames[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline PromptSpec mpii_structured_spec() {
  PromptSpec s;
  s.name = "mpii-structured";
  s.layout = Layout::Mpii;
  s.role = "expert human activity and pose analyzer";
  s.dataset_name = "MPII Human Pose";
  s.dataset_description = mpii_keypoint_legend();
  s.input_format = "a set of 2D keypoint coordinates from MPII dataset as (x,y) with -1 for invisible joints";
  s.target = "body poses";
  s.required_content = "relative limb locations";
  s.captioning_objective = "human activity recognition";
  s.response_format =
      "\"There are [num2word($count)] people in image who are [getVerb($activity) parseName($activity)]. "
      "[General attributes describing $activity in keypoints context.]\" For each person in image: "
      "\"The [parseLocation($center,$scale)] person is [predictStateFromContext()] with their [limb]...\" "
      "For each limb (left leg, right leg, left arm, right arm, torso, head): "
      "\"[Describe how these limbs are positioned relative to other limbs, bend angles, and other similar pose "
      "information.]\"";
  s.response_restrictions = "Use concise, precise, and gender-neutral language.";
  s.intended_usage = "training a pose-aware vision-language model";
  return s;
}

inline PromptSpec mpii_plain_spec() {
  PromptSpec s = mpii_structured_spec();
  s.name = "mpii-plain";
  s.response_format.clear();
  return s;
}

inline PromptSpec cub_spec() {
  PromptSpec s;
  s.name = "cub";
  s.layout = Layout::Cub;
  s.role = "ornithologist";
  s.role_detail = ", a branch of zoology that concerns the study of birds";
  s.dataset_name = "CUB";
  s.dataset_description = "200 bird species annotated with part locations and attributes";
  s.input_format = "the following annotations of an image from the CUB dataset";
  s.target = "bird";
  s.required_content =
      "shape/size (use part locations to infer), color, unique characteristics or distinct markings";
  s.captioning_objective = "bird classification";
  s.response_format = "Your response should be a natural language paragraph starting with \"a photo of...\".";
  s.response_restrictions =
      "Use simple, clear, and concise language. Do not include raw numbers from the annotation, but you may use "
      "them to inform your description using words.";
  s.intended_usage = "teach bird classification";
  return s;
}

inline std::vector<std::string> preset_names() { return {"mpii-structured", "mpii-plain", "cub"}; }

inline PromptSpec preset(std::string_view name) {
  if (name == "mpii-structured" || name == "structured") return mpii_structured_spec();
  if (name == "mpii-plain" || name == "plain") return mpii_plain_spec();
  if (name == "cub") return cub_spec();
  throw ValidationError(fmt::format("unknown prompt preset '{}' (known: {})", name, fmt::join(preset_names(), ", ")));
}

inline ordered_json to_json(const PromptSpec& s) {
  ordered_json j;
  j["name"] = s.name;
  j["layout"] = s.layout == Layout::Mpii ? "mpii" : "cub";
  j["role"] = s.role;
  j["role_detail"] = s.role_detail;
  j["dataset_name"] = s.dataset_name;
  j["dataset_description"] = s.dataset_description;
  j["input_format"] = s.input_format;
  j["target"] = s.target;
  j["required_content"] = s.required_content;
  j["captioning_objective"] = s.captioning_objective;
  j["response_format"] = s.response_format;
  j["response_restrictions"] = s.response_restrictions;
  j["intended_usage"] = s.intended_usage;
  return j;
}

/// Missing fields fall back to the preset named by "base" (default
/// mpii-structured).
inline PromptSpec spec_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("prompt spec must be a JSON object");
  PromptSpec s = preset(j.value("base", std::string("mpii-structured")));
  auto str = [&](const char* key, std::string& field) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) throw ValidationError(fmt::format("prompt spec field '{}' must be a string", key));
    field = j[key].get<std::string>();
  };
  str("name", s.name);
  if (j.contains("layout")) {
    const auto layout = j["layout"].get<std::string>();
    if (layout == "mpii") s.layout = Layout::Mpii;
    else if (layout == "cub") s.layout = Layout::Cub;
    else throw ValidationError(fmt::format("unknown prompt layout '{}'", layout));
  }
  str("role", s.role);
  str("role_detail", s.role_detail);
  str("dataset_name", s.dataset_name);
  str("dataset_description", s.dataset_description);
  str("input_format", s.input_format);
  str("target", s.target);
  str("required_content", s.required_content);
  str("captioning_objective", s.captioning_objective);
  str("response_format", s.response_format);
  str("response_restrictions", s.response_restrictions);
  str("intended_usage", s.intended_usage);
  validate(s);
  return s;
}

namespace detail {

// Single-line JSON with ", " and ": " separators.
inline void dump_spaced(const ordered_json& j, std::string& out) {
  if (j.is_object()) {
    out += '{';
    bool first = true;
    for (const auto& [k, v] : j.items()) {
      if (!first) out += ", ";
      first = false;
      out += ordered_json(k).dump();
      out += ": ";
      dump_spaced(v, out);
    }
    out += '}';
  } else if (j.is_array()) {
    out += '[';
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out += ", ";
      dump_spaced(j[i], out);
    }
    out += ']';
  } else {
    out += j.dump();
  }
}

}  // namespace detail

/// One-line JSON of the prompt attributes for one image: activity, people
/// count, then per person the named keypoints, visibility, center and scale.
inline std::string serialize_annotations(const Sample& s) {
  validate(s);
  ordered_json doc;
  const auto& first = s.persons.front();
  doc["activity"] = first.activity ? ordered_json(*first.activity) : ordered_json(nullptr);
  doc["count"] = s.persons.size();
  auto people = ordered_json::array();
  for (const auto& p : s.persons) {
    ordered_json person;
    ordered_json keypoints;
    for (int j = 0; j < kNumJoints; ++j) {
      const auto& pt = p.joints[static_cast<std::size_t>(j)];
      keypoints[fmt::format("{} - {}", j, kJointNames[static_cast<std::size_t>(j)])] = {pt.x, pt.y};
    }
    person["keypoints"] = std::move(keypoints);
    person["visibility"] = p.joints_vis;
    person["center"] = {p.center.x, p.center.y};
    person["scale"] = p.scale;
    people.push_back(std::move(person));
  }
  doc["people"] = std::move(people);
  std::string out;
  detail::dump_spaced(doc, out);
  return out;
}

/// Persona, keypoint legend, response template and restrictions go into the
/// system prompt; the serialized annotations are the user prompt.
inline PromptBundle build_mpii_prompt(const PromptSpec& spec, const Sample& s) {
  validate(spec);
  if (spec.layout != Layout::Mpii) throw ValidationError(fmt::format("spec '{}' is not an MPII layout", spec.name));
  std::string sys = fmt::format("You are {} {}{} with deep understanding of {} dataset, which has {}. ",
                                indefinite_article(spec.role), spec.role, spec.role_detail, spec.dataset_name,
                                spec.dataset_description);
  sys += fmt::format("Given {}, you will precisely describe {} in terms of {}. ", spec.input_format, spec.target,
                     spec.required_content);
  if (!spec.response_format.empty()) {
    sys += fmt::format("Your descriptions will follow this template: {} ", spec.response_format);
  }
  sys += spec.response_restrictions;
  return {std::move(sys), serialize_annotations(s), s.image_id};
}

/// Single user message with the attributes embedded between the instruction
/// and the response guidance.
inline PromptBundle build_cub_prompt(const PromptSpec& spec, std::string_view attributes, std::string sample_id = {}) {
  validate(spec);
  if (spec.layout != Layout::Cub) throw ValidationError(fmt::format("spec '{}' is not a CUB layout", spec.name));
  if (attributes.empty()) throw ValidationError("CUB prompt needs a non-empty attribute string");
  std::string user = fmt::format("You are an experienced {}{}, with a deep understanding of the {} dataset. ", spec.role,
                                 spec.role_detail, spec.dataset_name);
  user += fmt::format(
      "Given {}, describe the {} in the image in terms of {}, and any other discriminatory attributes necessary for "
      "{}: \"{}\"\n\n",
      spec.input_format, spec.target, spec.required_content, spec.captioning_objective, attributes);
  user += fmt::format(
      "{} Draw on your professional expertise as {} {}, image-specific features mentioned in the annotation, general "
      "facts known about the {}, and any other relevant knowledge that can be used to {}. {}",
      spec.response_format, indefinite_article(spec.role), spec.role, spec.target, spec.intended_usage,
      spec.response_restrictions);
  return {"", std::move(user), std::move(sample_id)};
}

}  // namespace focuskit::prompting
