#pragma once

#include <algorithm>
#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>

#include "focuskit/focuskit.hpp"

namespace focuskit::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2 };

namespace detail {

inline void emit(const ordered_json& report, const std::optional<fs::path>& out_file, std::ostream& out) {
  if (out_file) {
    write_file_atomic(*out_file, report.dump(2) + "\n");
  } else {
    out << report.dump(2) << "\n";
  }
}

inline json optional_config(const std::optional<fs::path>& path) {
  if (!path) return json::object();
  return load_json_file(*path);
}

/// Preset name, or a path to a JSON spec file.
inline prompting::PromptSpec load_spec(const std::string& arg) {
  if (fs::is_regular_file(arg)) return prompting::spec_from_json(load_json_file(arg));
  return prompting::preset(arg);
}

inline Heatmap resize_heatmap(const Heatmap& hm, int size) {
  if (hm.width == size && hm.height == size) return hm;
  ImageGrid g(hm.width, hm.height, 1);
  g.values = hm.values;
  const auto r = resize_bilinear(g, size, size);
  Heatmap out(size, size);
  out.values = r.values;
  return out;
}

inline ImageGrid load_for_model(const fs::path& path, int size) {
  return resize_bilinear(load_image(path), size, size);
}

/// MPII samples without pixels; prompt building only needs the annotations.
inline std::vector<Sample> annotation_samples(const fs::path& annotations) {
  std::vector<Sample> out;
  for (auto& g : group_persons(load_annotations(annotations))) {
    Sample s;
    s.image_id = g.image_id;
    s.persons = std::move(g.persons);
    out.push_back(std::move(s));
  }
  return out;
}

inline fs::path with_extension(const std::string& image_id, const std::string& ext) {
  fs::path p(image_id);
  p.replace_extension(ext);
  return p;
}

inline std::atomic<evalservice::RatingServer*> g_server{nullptr};

inline void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

inline void init_logging() {
  if (!spdlog::get("focuskit")) {
    auto logger = spdlog::stderr_color_mt("focuskit");
    spdlog::set_default_logger(logger);
  }
  spdlog::set_level(spdlog::level::warn);
}

}  // namespace detail

struct GlobalOptions {
  std::optional<int> threads;  // cap on worker threads; training defaults to 1
  bool verbose = false;
};

// heatmap ---------------------------------------------------------------

struct HeatmapArgs {
  fs::path annotations, images, out;
  std::optional<fs::path> config;
  std::string variant = "keypoint";
  double padding = 1.25;
  double floor = 4.0;
  bool no_whole_body = false;
  bool pgm = false;
};

inline int run_heatmap(HeatmapArgs a, const CLI::App& cmd, std::ostream& out) {
  RunManifest manifest;
  manifest.subcommand = "heatmap";
  const json cfg = detail::optional_config(a.config);
  HeatmapConfig hc;
  hc.padding = cmd.count("--padding") ? a.padding : cfg.value("padding", hc.padding);
  hc.min_semi_axis = cmd.count("--floor") ? a.floor : cfg.value("min_semi_axis", hc.min_semi_axis);
  hc.include_whole_body = cmd.count("--no-whole-body") ? false : cfg.value("include_whole_body", true);
  const std::string variant = cmd.count("--variant") ? a.variant : cfg.value("variant", a.variant);
  if (variant != "keypoint" && variant != "box") throw ValidationError(fmt::format("unknown variant '{}'", variant));
  const auto samples = group_by_image(load_annotations(a.annotations), a.images);
  const auto groups = default_part_groups();
  int warned = 0;
  auto files = ordered_json::array();
  for (const auto& s : samples) {
    Heatmap hm;
    if (variant == "box") {
      hm = box_scene_heatmap(s.persons, s.image.width, s.image.height);
    } else {
      auto scene = scene_heatmap(s, groups, hc);
      warned += scene.persons_without_visible_joints;
      if (scene.persons_without_visible_joints > 0) {
        spdlog::warn("{}: {} person(s) without visible joints", s.image_id, scene.persons_without_visible_joints);
      }
      hm = std::move(scene.heatmap);
    }
    const auto path = a.out / detail::with_extension(s.image_id, ".fhm");
    write_heatmap(hm, path);
    manifest.add_output(path);
    if (a.pgm) {
      const auto pgm = a.out / detail::with_extension(s.image_id, ".pgm");
      write_pgm(hm, pgm);
      manifest.add_output(pgm);
    }
    files.push_back({{"image", s.image_id}, {"heatmap", path.string()}});
  }
  manifest.config = {{"variant", variant},
                     {"padding", hc.padding},
                     {"min_semi_axis", hc.min_semi_axis},
                     {"include_whole_body", hc.include_whole_body}};
  manifest.add_input(a.annotations);
  manifest.add_input(a.images);
  manifest.write(manifest_path_for(a.out, true));
  ordered_json report;
  report["heatmaps"] = samples.size();
  report["persons_without_visible_joints"] = warned;
  report["files"] = std::move(files);
  detail::emit(report, std::nullopt, out);
  return kOk;
}

// prompt ----------------------------------------------------------------

struct PromptArgs {
  std::string spec = "mpii-structured";
  std::optional<fs::path> annotations;
  std::optional<std::string> attributes;
  std::optional<fs::path> attributes_file;
  std::optional<std::string> image_id;
  std::optional<fs::path> llm;
  std::optional<std::string> model;
  std::optional<std::string> base_url;
  std::optional<fs::path> out;
  int concurrency = 1;
};

inline std::vector<prompting::PromptBundle> build_bundles(const PromptArgs& a, const prompting::PromptSpec& spec) {
  std::vector<prompting::PromptBundle> bundles;
  if (spec.layout == prompting::Layout::Cub) {
    std::string attrs;
    if (a.attributes) attrs = *a.attributes;
    else if (a.attributes_file) attrs = read_file(*a.attributes_file);
    else throw ValidationError("the cub spec needs --attributes or --attributes-file");
    while (!attrs.empty() && (attrs.back() == '\n' || attrs.back() == '\r')) attrs.pop_back();
    bundles.push_back(prompting::build_cub_prompt(spec, attrs, a.image_id.value_or("")));
    return bundles;
  }
  if (!a.annotations) throw ValidationError(fmt::format("spec '{}' needs --annotations", spec.name));
  for (const auto& s : detail::annotation_samples(*a.annotations)) {
    if (a.image_id && s.image_id != *a.image_id) continue;
    bundles.push_back(prompting::build_mpii_prompt(spec, s));
  }
  if (bundles.empty()) {
    throw ValidationError(a.image_id ? fmt::format("no annotations for image '{}'", *a.image_id)
                                     : std::string("annotation file holds no records"));
  }
  return bundles;
}

inline llm::LlmConfig llm_config(const PromptArgs& a) {
  llm::LlmConfig c = a.llm ? llm::config_from_json(load_json_file(*a.llm)) : llm::LlmConfig{};
  if (a.model) c.model_name = *a.model;
  if (a.base_url) c.base_url = *a.base_url;
  llm::validate(c);
  return c;
}

inline void prompt_manifest(RunManifest& m, const PromptArgs& a, const prompting::PromptSpec& spec) {
  m.config = {{"spec", prompting::to_json(spec)}};
  if (a.annotations) m.add_input(*a.annotations);
  if (a.attributes_file) m.add_input(*a.attributes_file);
}

inline int run_prompt_build(const PromptArgs& a, std::ostream& out) {
  const auto spec = detail::load_spec(a.spec);
  auto doc = ordered_json::array();
  for (const auto& b : build_bundles(a, spec)) {
    doc.push_back({{"sample_id", b.sample_id}, {"system_prompt", b.system_prompt}, {"user_prompt", b.user_prompt}});
  }
  detail::emit(doc, a.out, out);
  if (a.out) {
    RunManifest m;
    m.subcommand = "prompt build";
    prompt_manifest(m, a, spec);
    m.add_output(*a.out);
    m.write(manifest_path_for(*a.out, false));
  }
  return kOk;
}

inline int run_prompt_send(const PromptArgs& a, std::ostream& out) {
  const auto spec = detail::load_spec(a.spec);
  const auto cfg = llm_config(a);
  const auto bundles = build_bundles(a, spec);
  if (bundles.size() > 1) throw ValidationError("prompt send takes one sample; select it with --image-id");
  const auto text = llm::request_description(cfg, bundles.front());
  ordered_json report{{"sample_id", bundles.front().sample_id}, {"description", text}};
  detail::emit(report, a.out, out);
  if (a.out) {
    RunManifest m;
    m.subcommand = "prompt send";
    prompt_manifest(m, a, spec);
    m.config["llm"] = llm::to_json(cfg);
    m.add_output(*a.out);
    m.write(manifest_path_for(*a.out, false));
  }
  return kOk;
}

inline int run_prompt_caption(const PromptArgs& a, const GlobalOptions& g, std::ostream& out) {
  const auto spec = detail::load_spec(a.spec);
  if (spec.layout != prompting::Layout::Mpii) throw ValidationError("prompt caption works on MPII specs");
  if (!a.annotations) throw ValidationError("prompt caption needs --annotations");
  if (!a.out) throw ValidationError("prompt caption needs --out");
  const auto cfg = llm_config(a);
  const auto samples = detail::annotation_samples(*a.annotations);
  llm::CaptionOptions opts;
  opts.concurrency = g.threads ? std::min(a.concurrency, *g.threads) : a.concurrency;
  const auto report = llm::caption_dataset(cfg, spec, samples, *a.out, opts);
  RunManifest m;
  m.subcommand = "prompt caption";
  prompt_manifest(m, a, spec);
  m.config["llm"] = llm::to_json(cfg);
  m.config["concurrency"] = opts.concurrency;
  m.add_output(*a.out);
  m.write(manifest_path_for(*a.out, false));
  detail::emit(llm::to_json(report), std::nullopt, out);
  return report.failed > 0 ? kIo : kOk;
}

// metrics ---------------------------------------------------------------

struct MetricsArgs {
  fs::path texts;
  std::optional<fs::path> embeddings;
  std::optional<fs::path> ckpt;
  std::optional<fs::path> images;
  std::optional<fs::path> out;
};

inline int run_metrics(const MetricsArgs& a, std::ostream& out) {
  const json doc = load_json_file(a.texts);
  if (!doc.is_array()) throw ValidationError(a.texts.string() + ": expected a JSON array");
  std::vector<std::string> texts;
  std::vector<std::string> ids;
  for (const auto& t : doc) {
    if (t.is_string()) {
      texts.push_back(t.get<std::string>());
    } else if (t.is_object() && t.contains("description") && t["description"].is_string()) {
      texts.push_back(t["description"].get<std::string>());
      ids.push_back(t.value("image", std::string()));
    } else {
      throw ValidationError(a.texts.string() + ": entries must be strings or {image, description} objects");
    }
  }
  std::vector<textmetrics::EmbeddingPair> pairs;
  if (a.embeddings) {
    const json pj = load_json_file(*a.embeddings);
    if (!pj.is_array()) throw ValidationError(a.embeddings->string() + ": expected a JSON array of pairs");
    for (const auto& p : pj) {
      if (!p.is_object() || !p.contains("image") || !p.contains("text")) {
        throw ValidationError(a.embeddings->string() + ": each pair needs 'image' and 'text' vectors");
      }
      pairs.push_back({p["image"].get<std::vector<double>>(), p["text"].get<std::vector<double>>()});
    }
  } else if (a.ckpt) {
    if (!a.images) throw ValidationError("--ckpt needs --images to locate the captioned images");
    if (ids.size() != texts.size()) throw ValidationError("--ckpt needs texts in {image, description} form");
    const auto params = model::load_checkpoint(*a.ckpt);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto img = detail::load_for_model(*a.images / ids[i], params.config.image_size);
      const auto ei = model::encode_image(params, img);
      const auto et = model::encode_text(params, texts[i]);
      pairs.push_back({std::vector<double>(ei.begin(), ei.end()), std::vector<double>(et.begin(), et.end())});
    }
  }
  const auto report = textmetrics::corpus_report(texts, pairs);
  detail::emit(textmetrics::to_json(report), a.out, out);
  if (a.out) {
    RunManifest m;
    m.subcommand = "metrics";
    m.add_input(a.texts);
    if (a.embeddings) m.add_input(*a.embeddings);
    if (a.ckpt) m.add_input(*a.ckpt);
    m.add_output(*a.out);
    m.write(manifest_path_for(*a.out, false));
  }
  return kOk;
}

// train -----------------------------------------------------------------

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path data;
  fs::path out;
  int epochs = 0;
  std::uint64_t seed = 0;
  double lr = 0;
  int batch_size = 0;
  bool no_roi = false;
};

/// Reads <dir>/samples.json: [{image, heatmap, text}], paths relative to dir.
inline std::vector<model::Example> load_training_data(const fs::path& dir, const model::ModelConfig& cfg) {
  const fs::path list = dir / "samples.json";
  const json doc = load_json_file(list);
  if (!doc.is_array() || doc.empty()) throw ValidationError(list.string() + ": expected a non-empty JSON array");
  std::vector<model::Example> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& r = doc[i];
    if (!r.is_object() || !r.contains("image") || !r.contains("text")) {
      throw ValidationError(fmt::format("{}: entry {} needs 'image' and 'text'", list.string(), i));
    }
    model::Example ex;
    ex.image = detail::load_for_model(dir / r["image"].get<std::string>(), cfg.image_size);
    ex.text = r["text"].get<std::string>();
    if (r.contains("heatmap")) {
      ex.heatmap = detail::resize_heatmap(read_heatmap(dir / r["heatmap"].get<std::string>()), cfg.image_size);
    } else if (cfg.roi_active()) {
      throw ValidationError(fmt::format("{}: entry {} lacks a heatmap but the ROI branch is on", list.string(), i));
    } else {
      ex.heatmap = Heatmap(cfg.image_size, cfg.image_size, 1.0f);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline int run_train(const TrainArgs& a, const CLI::App& cmd, const GlobalOptions& g, std::ostream& out) {
  auto cfg = model::config_from_json(detail::optional_config(a.config));
  if (cmd.count("--epochs")) cfg.epochs = a.epochs;
  if (cmd.count("--seed")) cfg.seed = a.seed;
  if (cmd.count("--lr")) cfg.lr = a.lr;
  if (cmd.count("--batch-size")) cfg.batch_size = a.batch_size;
  if (a.no_roi) cfg.use_roi = cfg.use_roi_text_loss = false;
  model::validate(cfg);
  const auto data = load_training_data(a.data, cfg);
  model::TrainOptions opts;
  opts.threads = g.threads.value_or(1);
  opts.on_epoch = [](int epoch, double loss) { spdlog::info("epoch {} loss {:.6f}", epoch, loss); };
  const auto result = model::train(cfg, data, opts);
  model::save_checkpoint(result.params, a.out);
  RunManifest m;
  m.subcommand = "train";
  m.config = model::to_json(cfg);
  m.config["threads"] = opts.threads;
  m.add_input(a.data);
  if (a.config) m.add_input(*a.config);
  m.add_output(a.out);
  m.write(manifest_path_for(a.out, false));
  ordered_json report;
  report["checkpoint"] = a.out.string();
  report["examples"] = data.size();
  report["epochs"] = cfg.epochs;
  report["epoch_losses"] = result.epoch_losses;
  report["final_loss"] = result.epoch_losses.empty() ? ordered_json(nullptr) : ordered_json(result.epoch_losses.back());
  detail::emit(report, std::nullopt, out);
  return kOk;
}

// eval ------------------------------------------------------------------

struct EvalArgs {
  fs::path ckpt;
  fs::path data;
  std::optional<fs::path> config;
  std::string template_name = "activity";
  std::optional<std::string> pattern;
  std::vector<std::string> classes;
  int k = 1;
  std::optional<fs::path> out;
};

inline int run_eval(const EvalArgs& a, const CLI::App& cmd, std::ostream& out) {
  const json cfg = detail::optional_config(a.config);
  const auto params = model::load_checkpoint(a.ckpt);
  std::vector<zeroshot::AgeBucket> buckets;
  if (cfg.contains("age_buckets")) buckets = zeroshot::age_buckets_from_json(cfg["age_buckets"]);

  const json doc = load_json_file(a.data);
  if (!doc.is_array() || doc.empty()) throw ValidationError(a.data.string() + ": expected a non-empty JSON array");
  const fs::path root = a.data.has_parent_path() ? a.data.parent_path() : fs::path(".");
  std::vector<zeroshot::LabeledImage> data;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& r = doc[i];
    if (!r.is_object() || !r.contains("image") || !r.contains("label")) {
      throw ValidationError(fmt::format("{}: entry {} needs 'image' and 'label'", a.data.string(), i));
    }
    std::string label;
    if (r["label"].is_string()) {
      label = r["label"].get<std::string>();
    } else if (r["label"].is_number()) {
      if (buckets.empty()) throw ValidationError(fmt::format("entry {}: numeric label needs age_buckets in --config", i));
      label = zeroshot::age_bucket(r["label"].get<double>(), buckets);
    } else {
      throw ValidationError(fmt::format("entry {}: label must be a string or number", i));
    }
    const auto id = r["image"].get<std::string>();
    data.push_back({id, detail::load_for_model(root / id, params.config.image_size), label});
  }

  zeroshot::TaskTemplate tpl;
  const std::string name = cmd.count("--template") ? a.template_name : cfg.value("template", a.template_name);
  std::optional<std::string> pattern = a.pattern;
  if (!pattern && cfg.contains("pattern")) pattern = cfg["pattern"].get<std::string>();
  tpl = pattern ? zeroshot::TaskTemplate{name, *pattern, {}} : zeroshot::builtin_template(name);
  if (!a.classes.empty()) {
    tpl.classes = a.classes;
  } else if (cfg.contains("classes")) {
    tpl.classes = cfg["classes"].get<std::vector<std::string>>();
  } else if (!buckets.empty()) {
    for (const auto& b : buckets) tpl.classes.push_back(b.name);
  } else {
    std::set<std::string> distinct;
    for (const auto& d : data) distinct.insert(d.label);
    tpl.classes.assign(distinct.begin(), distinct.end());
  }
  const int k = cmd.count("--k") ? a.k : cfg.value("k", a.k);
  const auto report = zeroshot::evaluate(params, data, tpl, k);
  auto j = zeroshot::to_json(report);
  j["pattern"] = tpl.pattern;
  detail::emit(j, a.out, out);
  if (a.out) {
    RunManifest m;
    m.subcommand = "eval";
    m.config = {{"template", tpl.name}, {"pattern", tpl.pattern}, {"classes", tpl.classes}, {"k", k}};
    m.add_input(a.ckpt);
    m.add_input(a.data);
    m.add_output(*a.out);
    m.write(manifest_path_for(*a.out, false));
  }
  return kOk;
}

// rate ------------------------------------------------------------------

struct RateArgs {
  fs::path tasks;
  fs::path journal;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> ui;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  std::string format = "json";
};

inline int run_rate_serve(const RateArgs& a, std::ostream& out) {
  evalservice::RatingStore store(evalservice::load_tasks(a.tasks), a.journal, a.seed);
  evalservice::ServerOptions so;
  so.host = a.host;
  so.port = a.port;
  so.ui_dir = a.ui;
  evalservice::RatingServer server(store, so);
  const int port = server.bind();
  RunManifest m;
  m.subcommand = "rate serve";
  m.config = {{"host", a.host}, {"port", port}, {"seed", a.seed}};
  m.add_input(a.tasks);
  m.add_output(a.journal);
  m.write(manifest_path_for(a.journal, false));
  out << fmt::format("serving {} tasks on http://{}:{}/", store.tasks().tasks.size(), a.host, port) << std::endl;
  detail::g_server = &server;
  auto prev_int = std::signal(SIGINT, detail::stop_server);
  auto prev_term = std::signal(SIGTERM, detail::stop_server);
  server.listen();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  detail::g_server = nullptr;
  return kOk;
}

inline int run_rate_report(const RateArgs& a, std::ostream& out) {
  evalservice::RatingStore store(evalservice::load_tasks(a.tasks), a.journal, a.seed);
  const auto records = store.records();
  if (a.format == "csv") {
    const auto csv = evalservice::export_csv(records, store.tasks());
    if (a.out) write_file_atomic(*a.out, csv);
    else out << csv;
  } else if (a.format == "ratings-json") {
    const auto js = evalservice::export_json(records, store.tasks());
    if (a.out) write_file_atomic(*a.out, js);
    else out << js;
  } else if (a.format == "json") {
    detail::emit(evalservice::to_json(evalservice::aggregate(records, store.tasks())), a.out, out);
  } else {
    throw ValidationError(fmt::format("unknown report format '{}'", a.format));
  }
  if (a.out) {
    RunManifest m;
    m.subcommand = "rate report";
    m.config = {{"format", a.format}};
    m.add_input(a.tasks);
    if (fs::exists(a.journal)) m.add_input(a.journal);
    m.add_output(*a.out);
    m.write(manifest_path_for(*a.out, false));
  }
  return kOk;
}

// synth -----------------------------------------------------------------

struct SynthArgs {
  std::optional<fs::path> config;
  fs::path out;
  int classes = 0, per_class = 0, image_size = 0, subject_size = 0;
  double noise = 0, contrast = 0;
  std::uint64_t seed = 0;
};

inline int run_synth(const SynthArgs& a, const CLI::App& cmd, std::ostream& out) {
  auto cfg = synth::config_from_json(detail::optional_config(a.config));
  if (cmd.count("--classes")) cfg.classes = a.classes;
  if (cmd.count("--per-class")) cfg.per_class = a.per_class;
  if (cmd.count("--image-size")) cfg.image_size = a.image_size;
  if (cmd.count("--subject-size")) cfg.subject_size = a.subject_size;
  if (cmd.count("--noise")) cfg.noise = a.noise;
  if (cmd.count("--contrast")) cfg.contrast = a.contrast;
  if (cmd.count("--seed")) cfg.seed = a.seed;
  synth::validate(cfg);
  const auto samples = synth::generate(cfg);
  const auto written = synth::write_dataset(samples, a.out);
  RunManifest m;
  m.subcommand = "synth";
  m.config = synth::to_json(cfg);
  if (a.config) m.add_input(*a.config);
  m.add_output(written.samples_file);
  m.add_output(written.labels_file);
  m.write(manifest_path_for(a.out, true));
  ordered_json report{{"samples", samples.size()},
                      {"classes", cfg.classes},
                      {"samples_file", written.samples_file.string()},
                      {"labels_file", written.labels_file.string()}};
  detail::emit(report, std::nullopt, out);
  return kOk;
}

// dispatch --------------------------------------------------------------

/// Parses argv and runs one subcommand. Exit codes: 0 success, 1 usage or
/// validation error, 2 I/O or transport error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  detail::init_logging();
  CLI::App app{"focuskit: subject-guided contrastive pretraining toolkit", "focuskit"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--threads", g.threads, "Cap on worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbose, "Log progress to stderr");

  HeatmapArgs ha;
  auto* heatmap = app.add_subcommand("heatmap", "Render ROI heatmaps from keypoint annotations");
  heatmap->add_option("--annotations", ha.annotations, "Annotation JSON")->required();
  heatmap->add_option("--images", ha.images, "Image directory")->required();
  heatmap->add_option("--out", ha.out, "Output directory")->required();
  heatmap->add_option("--config", ha.config, "Heatmap config JSON");
  heatmap->add_option("--variant", ha.variant, "keypoint or box")->check(CLI::IsMember({"keypoint", "box"}));
  heatmap->add_option("--padding", ha.padding, "Ellipse padding factor");
  heatmap->add_option("--floor", ha.floor, "Minimum semi-axis in pixels");
  heatmap->add_flag("--no-whole-body", ha.no_whole_body, "Leave the whole-body ellipse out of the sum");
  heatmap->add_flag("--pgm", ha.pgm, "Also write 8-bit PGM previews");

  PromptArgs pa;
  auto* prompt = app.add_subcommand("prompt", "Build prompts and query a chat-completion endpoint");
  prompt->require_subcommand(1);
  auto add_prompt_common = [&](CLI::App* sub) {
    sub->add_option("--spec", pa.spec, "Preset (mpii-structured, mpii-plain, cub) or spec JSON file");
    sub->add_option("--annotations", pa.annotations, "Annotation JSON");
    sub->add_option("--image-id", pa.image_id, "Restrict to one image");
    sub->add_option("--out", pa.out, "Output file");
  };
  auto add_llm = [&](CLI::App* sub) {
    sub->add_option("--llm", pa.llm, "LLM config JSON");
    sub->add_option("--model", pa.model, "Model name override");
    sub->add_option("--base-url", pa.base_url, "Endpoint base URL override");
  };
  auto* build = prompt->add_subcommand("build", "Print assembled prompts");
  add_prompt_common(build);
  build->add_option("--attributes", pa.attributes, "CUB attribute string");
  build->add_option("--attributes-file", pa.attributes_file, "File holding the CUB attribute string");
  auto* send = prompt->add_subcommand("send", "Send one prompt and print the description");
  add_prompt_common(send);
  add_llm(send);
  send->add_option("--attributes", pa.attributes, "CUB attribute string");
  send->add_option("--attributes-file", pa.attributes_file, "File holding the CUB attribute string");
  auto* caption = prompt->add_subcommand("caption", "Caption every annotated image, resumably");
  add_prompt_common(caption);
  add_llm(caption);
  caption->add_option("--concurrency", pa.concurrency, "Requests in flight")->check(CLI::PositiveNumber);

  MetricsArgs ma;
  auto* metrics = app.add_subcommand("metrics", "Caption quality metrics");
  metrics->add_option("--texts", ma.texts, "JSON array of strings or {image, description}")->required();
  metrics->add_option("--embeddings", ma.embeddings, "JSON array of {image, text} embedding pairs");
  metrics->add_option("--ckpt", ma.ckpt, "Checkpoint used to embed image/description pairs");
  metrics->add_option("--images", ma.images, "Image directory for --ckpt");
  metrics->add_option("--out", ma.out, "Report file");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the triple encoder");
  train->add_option("--config", ta.config, "Model config JSON");
  train->add_option("--data", ta.data, "Directory holding samples.json")->required();
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--epochs", ta.epochs)->check(CLI::NonNegativeNumber);
  train->add_option("--seed", ta.seed);
  train->add_option("--lr", ta.lr);
  train->add_option("--batch-size", ta.batch_size)->check(CLI::PositiveNumber);
  train->add_flag("--no-roi", ta.no_roi, "Single-loss baseline (ROI branch and loss off)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Zero-shot evaluation");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval->add_option("--data", ea.data, "JSON array of {image, label}")->required();
  eval->add_option("--config", ea.config, "Evaluation config JSON (template, classes, k, age_buckets)");
  eval->add_option("--template", ea.template_name, "activity, age, emotion-face or emotion-body");
  eval->add_option("--pattern", ea.pattern, "Custom sentence pattern with one {} slot");
  eval->add_option("--classes", ea.classes, "Class list")->delimiter(',');
  eval->add_option("--k", ea.k, "Top-k")->check(CLI::PositiveNumber);
  eval->add_option("--out", ea.out, "Report file");

  RateArgs ra;
  auto* rate = app.add_subcommand("rate", "Caption rating service");
  rate->require_subcommand(1);
  auto* serve = rate->add_subcommand("serve", "Serve the rating API");
  serve->add_option("--tasks", ra.tasks, "Tasks JSON")->required();
  serve->add_option("--journal", ra.journal, "Ratings journal (JSON lines)")->required();
  serve->add_option("--host", ra.host);
  serve->add_option("--port", ra.port)->check(CLI::Range(0, 65535));
  serve->add_option("--ui", ra.ui, "Directory of the rater UI bundle");
  serve->add_option("--seed", ra.seed, "Seed of the per-rater task order");
  auto* report = rate->add_subcommand("report", "Aggregate or export ratings");
  report->add_option("--tasks", ra.tasks, "Tasks JSON")->required();
  report->add_option("--journal", ra.journal, "Ratings journal")->required();
  report->add_option("--format", ra.format, "json (aggregate), csv or ratings-json (export)")
      ->check(CLI::IsMember({"json", "csv", "ratings-json"}));
  report->add_option("--out", ra.out, "Output file");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic subject/background dataset");
  synth->add_option("--config", sa.config, "Synth config JSON");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--classes", sa.classes)->check(CLI::PositiveNumber);
  synth->add_option("--per-class", sa.per_class)->check(CLI::PositiveNumber);
  synth->add_option("--image-size", sa.image_size)->check(CLI::PositiveNumber);
  synth->add_option("--subject-size", sa.subject_size)->check(CLI::PositiveNumber);
  synth->add_option("--noise", sa.noise);
  synth->add_option("--contrast", sa.contrast);
  synth->add_option("--seed", sa.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err) == 0 ? kOk : kValidation;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kValidation;
  }

  if (g.verbose) spdlog::set_level(spdlog::level::info);
  try {
    if (*heatmap) return run_heatmap(ha, *heatmap, out);
    if (*build) return run_prompt_build(pa, out);
    if (*send) return run_prompt_send(pa, out);
    if (*caption) return run_prompt_caption(pa, g, out);
    if (*metrics) return run_metrics(ma, out);
    if (*train) return run_train(ta, *train, g, out);
    if (*eval) return run_eval(ea, *eval, out);
    if (*serve) return run_rate_serve(ra, out);
    if (*report) return run_rate_report(ra, out);
    if (*synth) return run_synth(sa, *synth, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
  err << app.help();
  return kValidation;
}

}  // namespace focuskit::cli
