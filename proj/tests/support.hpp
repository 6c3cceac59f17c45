#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "attrib/io.hpp"
#include "attrib/pipeline.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path data_dir() { return ATTRIB_DATA_DIR; }
inline fs::path mini_dir() { return data_dir() / "mini"; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("attrib_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// The bundled mini config with absolute input paths and a caller-chosen
// output directory.
inline nlohmann::json mini_config_json(const fs::path& output_dir) {
  auto j = nlohmann::json::parse(attrib::io::read_file(mini_dir() / "config.json"));
  for (auto& [k, v] : j["paths"].items()) v = (mini_dir() / v.get<std::string>()).lexically_normal().string();
  j["paths"]["output_dir"] = output_dir.string();
  return j;
}

inline fs::path write_mini_config(const fs::path& dir, const fs::path& output_dir) {
  fs::path p = dir / "config.json";
  attrib::io::write_file(p, mini_config_json(output_dir).dump(2));
  return p;
}

inline void run_full_pipeline(const attrib::pipeline::RunConfig& cfg) {
  attrib::pipeline::cmd_ingest(cfg);
  attrib::pipeline::cmd_prune(cfg);
  attrib::pipeline::cmd_topics(cfg);
  attrib::pipeline::cmd_train(cfg);
  attrib::pipeline::cmd_eval(cfg);
}

}  // namespace testsupport
