#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "focuskit/error.hpp"
#include "focuskit/image.hpp"
#include "focuskit/model.hpp"
#include "focuskit/util.hpp"

namespace focuskit::zeroshot {

struct TaskTemplate {
  std::string name;
  std::string pattern;  // exactly one "{}" slot
  std::vector<std::string> classes;
};

inline std::size_t count_slots(std::string_view pattern) {
  std::size_t n = 0;
  for (auto pos = pattern.find("{}"); pos != std::string_view::npos; pos = pattern.find("{}", pos + 2)) ++n;
  return n;
}

inline void validate(const TaskTemplate& t) {
  if (count_slots(t.pattern) != 1) {
    throw ValidationError(fmt::format("template '{}' must contain exactly one {{}} slot: '{}'", t.name, t.pattern));
  }
  if (t.classes.empty()) throw ValidationError(fmt::format("template '{}' has no classes", t.name));
  std::set<std::string> seen;
  for (const auto& c : t.classes) {
    if (!seen.insert(c).second) throw ValidationError(fmt::format("template '{}': duplicate class '{}'", t.name, c));
  }
}

/// Substitutes the class string verbatim; articles are left as written.
inline std::string fill(std::string_view pattern, std::string_view cls) {
  const auto pos = pattern.find("{}");
  if (pos == std::string_view::npos) throw ValidationError(fmt::format("pattern '{}' has no slot", pattern));
  std::string out(pattern.substr(0, pos));
  out += cls;
  out += pattern.substr(pos + 2);
  return out;
}

/// Sentence templates for the four built-in tasks, without classes.
inline std::vector<TaskTemplate> builtin_templates() {
  return {
      {"activity", "a photo of a person {}", {}},
      {"age", "a photo of a {} person", {}},
      {"emotion-face", "a photo of a/an {} looking face", {}},
      {"emotion-body", "a photo of a person who is feeling {}", {}},
  };
}

inline TaskTemplate builtin_template(std::string_view name, std::vector<std::string> classes = {}) {
  for (auto t : builtin_templates()) {
    if (t.name == name) {
      t.classes = std::move(classes);
      return t;
    }
  }
  throw ValidationError(fmt::format("unknown template '{}'", name));
}

struct Prediction {
  std::vector<int> ranked;      // class indices, best first
  std::vector<double> scores;   // cosine of each ranked class
};

/// Class-sentence embeddings, computed once per template and reused.
template <class T>
struct ClassEmbeddings {
  std::vector<std::string> classes;
  std::vector<std::vector<T>> rows;
};

template <class T>
ClassEmbeddings<T> embed_classes(const model::ModelParams<T>& params, const TaskTemplate& tpl) {
  validate(tpl);
  ClassEmbeddings<T> out;
  out.classes = tpl.classes;
  for (const auto& c : tpl.classes) out.rows.push_back(model::encode_text(params, fill(tpl.pattern, c)));
  return out;
}

inline double cosine_of_units(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return std::clamp(s, -1.0, 1.0);
}

inline double cosine_of_units(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return std::clamp(s, -1.0, 1.0);
}

/// Ranks classes by cosine similarity to an image embedding; equal scores
/// keep the lower class index first.
template <class T>
Prediction rank(std::span<const T> image_embedding, const ClassEmbeddings<T>& classes) {
  const std::size_t k = classes.rows.size();
  std::vector<double> score(k);
  for (std::size_t c = 0; c < k; ++c) score[c] = cosine_of_units(image_embedding, std::span<const T>(classes.rows[c]));
  Prediction p;
  p.ranked.resize(k);
  std::iota(p.ranked.begin(), p.ranked.end(), 0);
  std::stable_sort(p.ranked.begin(), p.ranked.end(), [&](int a, int b) { return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)]; });
  for (int c : p.ranked) p.scores.push_back(score[static_cast<std::size_t>(c)]);
  return p;
}

/// Zero-shot prediction from the image alone; inference never sees a heatmap.
template <class T>
Prediction predict(const model::ModelParams<T>& params, const ImageGrid& img, const ClassEmbeddings<T>& classes) {
  const auto e = model::encode_image(params, img);
  return rank<T>(e, classes);
}

template <class T>
Prediction predict(const model::ModelParams<T>& params, const ImageGrid& img, const TaskTemplate& tpl) {
  return predict(params, img, embed_classes(params, tpl));
}

inline double topk_accuracy(std::span<const Prediction> preds, std::span<const int> labels, int k) {
  if (preds.size() != labels.size()) {
    throw ValidationError(fmt::format("{} predictions but {} labels", preds.size(), labels.size()));
  }
  if (preds.empty()) throw ValidationError("top-k accuracy needs at least one prediction");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& r = preds[i].ranked;
    if (k < 1 || k > static_cast<int>(r.size())) {
      throw ValidationError(fmt::format("k={} outside 1..{}", k, r.size()));
    }
    hits += std::find(r.begin(), r.begin() + k, labels[i]) != r.begin() + k;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct LabeledImage {
  std::string id;
  ImageGrid image;
  std::string label;
};

struct ClassReport {
  std::string name;
  int support = 0;
  int correct = 0;              // true label within the top k
  std::vector<int> confusion;   // top-1 prediction counts, indexed by class
  double accuracy() const { return support == 0 ? 0.0 : static_cast<double>(correct) / support; }
};

struct EvalReport {
  std::string template_name;
  int k = 1;
  double accuracy = 0;
  int samples = 0;
  std::vector<ClassReport> per_class;
};

inline ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["template"] = r.template_name;
  j["k"] = r.k;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  auto classes = ordered_json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"class", c.name},
                       {"support", c.support},
                       {"correct", c.correct},
                       {"accuracy", c.accuracy()},
                       {"confusion", c.confusion}});
  }
  j["per_class"] = std::move(classes);
  return j;
}

template <class T>
EvalReport evaluate(const model::ModelParams<T>& params, std::span<const LabeledImage> data, const TaskTemplate& tpl,
                    int k) {
  validate(tpl);
  if (data.empty()) throw ValidationError("evaluation set is empty");
  if (k < 1 || k > static_cast<int>(tpl.classes.size())) {
    throw ValidationError(fmt::format("k={} outside 1..{}", k, tpl.classes.size()));
  }
  std::vector<int> labels;
  for (const auto& d : data) {
    const auto it = std::find(tpl.classes.begin(), tpl.classes.end(), d.label);
    if (it == tpl.classes.end()) {
      throw ValidationError(fmt::format("sample '{}': label '{}' is not one of the template classes", d.id, d.label));
    }
    labels.push_back(static_cast<int>(it - tpl.classes.begin()));
  }
  const auto classes = embed_classes(params, tpl);
  std::vector<Prediction> preds;
  preds.reserve(data.size());
  for (const auto& d : data) preds.push_back(predict(params, d.image, classes));

  EvalReport r;
  r.template_name = tpl.name;
  r.k = k;
  r.samples = static_cast<int>(data.size());
  r.accuracy = topk_accuracy(preds, labels, k);
  const std::size_t nc = tpl.classes.size();
  for (const auto& c : tpl.classes) r.per_class.push_back({c, 0, 0, std::vector<int>(nc, 0)});
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& cr = r.per_class[static_cast<std::size_t>(labels[i])];
    ++cr.support;
    const auto& ranked = preds[i].ranked;
    cr.correct += std::find(ranked.begin(), ranked.begin() + k, labels[i]) != ranked.begin() + k;
    ++cr.confusion[static_cast<std::size_t>(ranked.front())];
  }
  return r;
}

/// Upper-inclusive age boundaries supplied by the evaluation config, e.g.
/// [{"name": "child", "max": 12}, {"name": "adult", "max": 200}].
struct AgeBucket {
  std::string name;
  double max = 0;
};

inline std::vector<AgeBucket> age_buckets_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw ValidationError("age_buckets must be a non-empty array");
  std::vector<AgeBucket> out;
  for (const auto& b : j) {
    if (!b.is_object() || !b.contains("name") || !b.contains("max")) {
      throw ValidationError("each age bucket needs 'name' and 'max'");
    }
    out.push_back({b["name"].get<std::string>(), b["max"].get<double>()});
    if (out.size() > 1 && !(out.back().max > out[out.size() - 2].max)) {
      throw ValidationError("age bucket boundaries must increase");
    }
  }
  return out;
}

inline std::string age_bucket(double age, std::span<const AgeBucket> buckets) {
  for (const auto& b : buckets) {
    if (age <= b.max) return b.name;
  }
  throw ValidationError(fmt::format("age {} exceeds every bucket boundary", age));
}

}  // namespace focuskit::zeroshot
