#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "focuskit/util.hpp"

#ifndef FOCUSKIT_VERSION
#define FOCUSKIT_VERSION "0.0.0"
#endif
#ifndef FOCUSKIT_BUILD_HASH
#define FOCUSKIT_BUILD_HASH "unknown"
#endif

namespace focuskit {

inline std::string version_string() { return fmt::format("{}+{}", FOCUSKIT_VERSION, FOCUSKIT_BUILD_HASH); }

/// Provenance record written beside the outputs of every CLI run.
struct RunManifest {
  std::string subcommand;
  ordered_json config = ordered_json::object();
  std::vector<std::pair<std::string, std::string>> inputs;  // (path, sha256)
  std::vector<std::string> outputs;
  std::string version = version_string();
  UtcTime started = utc_now();
  double wall_time_s = 0;

  void add_input(const fs::path& p) { inputs.emplace_back(p.string(), digest_path(p)); }
  void add_output(const fs::path& p) { outputs.push_back(p.string()); }

  ordered_json to_json() const {
    ordered_json j;
    j["subcommand"] = subcommand;
    j["version"] = version;
    j["started"] = format_utc(started);
    j["wall_time_s"] = wall_time_s;
    j["config"] = config;
    auto in = ordered_json::array();
    for (const auto& [path, digest] : inputs) in.push_back({{"path", path}, {"sha256", digest}});
    j["inputs"] = std::move(in);
    j["outputs"] = outputs;
    return j;
  }

  void write(const fs::path& path) {
    wall_time_s = std::chrono::duration<double>(utc_now() - started).count();
    write_file_atomic(path, to_json().dump(2) + "\n");
  }
};

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
inline fs::path manifest_path_for(const fs::path& out, bool out_is_dir) {
  if (out_is_dir) return out / "manifest.json";
  fs::path p = out;
  p += ".manifest.json";
  return p;
}

}  // namespace focuskit
