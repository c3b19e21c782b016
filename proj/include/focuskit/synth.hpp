#pragma once

#include <array>
#include <string>
#include <vector>

#include "focuskit/error.hpp"
#include "focuskit/heatmap.hpp"
#include "focuskit/image.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/util.hpp"

// Synthetic subject/background task: a uniform-noise background with one
// flat, class-tinted square "subject" at a random location. The heatmap is
// the ellipse + Gaussian fitted to the subject's corner pixels, so the class
// signal lives under the heatmap.

namespace focuskit::synth {

struct SynthConfig {
  int classes = 4;
  int per_class = 64;
  int image_size = 32;
  int subject_size = 8;
  double noise = 1.0;      // background = 0.5 + noise * (u - 0.5), u ~ U[0,1)
  double contrast = 0.35;  // subject = 0.5 + contrast * (class colour - 0.5)
  std::uint64_t seed = 0;
  double padding = 1.25;
  double min_semi_axis = 4.0;
};

inline void validate(const SynthConfig& c) {
  if (c.classes < 1) throw ValidationError("classes must be >= 1");
  if (c.per_class < 1) throw ValidationError("per_class must be >= 1");
  if (c.image_size < 1) throw ValidationError("image_size must be >= 1");
  if (c.subject_size < 1) throw ValidationError("subject_size must be >= 1");
  if (c.subject_size > c.image_size) {
    throw ValidationError(fmt::format("subject patch {} is larger than the image {}", c.subject_size, c.image_size));
  }
  if (!(c.noise >= 0 && c.noise <= 1)) throw ValidationError("noise must lie in [0, 1]");
  if (!(c.contrast >= 0 && c.contrast <= 1)) throw ValidationError("contrast must lie in [0, 1]");
}

inline SynthConfig config_from_json(const json& j, SynthConfig c = {}) {
  if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "classes") c.classes = value.get<int>();
      else if (key == "per_class") c.per_class = value.get<int>();
      else if (key == "image_size") c.image_size = value.get<int>();
      else if (key == "subject_size") c.subject_size = value.get<int>();
      else if (key == "noise") c.noise = value.get<double>();
      else if (key == "contrast") c.contrast = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "padding") c.padding = value.get<double>();
      else if (key == "min_semi_axis") c.min_semi_axis = value.get<double>();
      else throw ValidationError(fmt::format("unknown synth config key '{}'", key));
    }
  } catch (const json::type_error& e) {
    throw ValidationError(fmt::format("synth config: {}", e.what()));
  }
  validate(c);
  return c;
}

inline ordered_json to_json(const SynthConfig& c) {
  ordered_json j;
  j["classes"] = c.classes;
  j["per_class"] = c.per_class;
  j["image_size"] = c.image_size;
  j["subject_size"] = c.subject_size;
  j["noise"] = c.noise;
  j["contrast"] = c.contrast;
  j["seed"] = c.seed;
  j["padding"] = c.padding;
  j["min_semi_axis"] = c.min_semi_axis;
  return j;
}

inline std::string classword(int c) {
  static const std::array<std::string_view, 6> words = {"running", "jumping", "sitting", "waving", "climbing", "dancing"};
  if (c >= 0 && c < static_cast<int>(words.size())) return std::string(words[static_cast<std::size_t>(c)]);
  return fmt::format("class{}", c);
}

inline std::string caption(int c) { return "a photo of a person " + classword(c); }

/// Class colour in [0,1]^3. The first six are the primaries and secondaries;
/// later classes draw from a fixed-seed generator.
inline std::array<double, 3> class_colour(int c) {
  static const std::array<std::array<double, 3>, 6> table = {
      {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1}}};
  if (c >= 0 && c < static_cast<int>(table.size())) return table[static_cast<std::size_t>(c)];
  SplitMix64 rng(0xC0105EEDULL + static_cast<std::uint64_t>(c));
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

struct SynthSample {
  std::string id;
  int label = 0;
  ImageGrid image;
  Heatmap heatmap;
  std::string caption;
};

/// Samples in class-major order. Every pixel of a background draws from one
/// SplitMix64 stream seeded with `seed`, followed by the subject offset.
inline std::vector<SynthSample> generate(const SynthConfig& cfg) {
  validate(cfg);
  SplitMix64 rng(cfg.seed);
  const int s = cfg.image_size, p = cfg.subject_size;
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(cfg.classes) * cfg.per_class);
  for (int c = 0; c < cfg.classes; ++c) {
    const auto colour = class_colour(c);
    for (int k = 0; k < cfg.per_class; ++k) {
      SynthSample smp;
      smp.id = fmt::format("c{}_{:04}", c, k);
      smp.label = c;
      smp.caption = caption(c);
      smp.image = ImageGrid(s, s, 3);
      for (auto& v : smp.image.values) v = static_cast<float>(0.5 + cfg.noise * (rng.uniform() - 0.5));
      const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(s - p + 1)));
      const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(s - p + 1)));
      for (int y = oy; y < oy + p; ++y) {
        for (int x = ox; x < ox + p; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            smp.image.at(x, y, ch) = static_cast<float>(0.5 + cfg.contrast * (colour[static_cast<std::size_t>(ch)] - 0.5));
          }
        }
      }
      const Point corners[] = {{static_cast<double>(ox), static_cast<double>(oy)},
                               {static_cast<double>(ox + p - 1), static_cast<double>(oy + p - 1)}};
      smp.heatmap = ellipse_heatmap(fit_ellipse(corners, cfg.padding, cfg.min_semi_axis), s, s);
      out.push_back(std::move(smp));
    }
  }
  return out;
}

struct WrittenDataset {
  fs::path samples_file;  // training list: [{image, heatmap, text, label}]
  fs::path labels_file;   // evaluation list: [{image, label}]
  std::vector<fs::path> files;
};

/// Lays a dataset out as images/<id>.png, heatmaps/<id>.fhm, samples.json
/// and labels.json under `dir`.
inline WrittenDataset write_dataset(const std::vector<SynthSample>& samples, const fs::path& dir) {
  WrittenDataset w;
  auto train = ordered_json::array();
  auto labels = ordered_json::array();
  for (const auto& s : samples) {
    const std::string img = "images/" + s.id + ".png";
    const std::string hm = "heatmaps/" + s.id + ".fhm";
    write_png(s.image, dir / img);
    write_heatmap(s.heatmap, dir / hm);
    w.files.push_back(dir / img);
    w.files.push_back(dir / hm);
    train.push_back({{"image", img}, {"heatmap", hm}, {"text", s.caption}, {"label", classword(s.label)}});
    labels.push_back({{"image", img}, {"label", classword(s.label)}});
  }
  w.samples_file = dir / "samples.json";
  w.labels_file = dir / "labels.json";
  write_file_atomic(w.samples_file, train.dump(2) + "\n");
  write_file_atomic(w.labels_file, labels.dump(2) + "\n");
  w.files.push_back(w.samples_file);
  w.files.push_back(w.labels_file);
  return w;
}

}  // namespace focuskit::synth
