#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "impact_gate/json_util.hpp"

namespace impact_gate::testing {

inline std::filesystem::path fixture(const std::string &relative) {
  return std::filesystem::path(IMPACT_GATE_FIXTURES) / relative;
}

inline std::filesystem::path resource(const std::string &relative) {
  return std::filesystem::path(IMPACT_GATE_RESOURCES) / relative;
}

inline Json fixture_json(const std::string &relative) { return Json::parse(read_file(fixture(relative))); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    std::random_device device;
    path_ = std::filesystem::temp_directory_path() /
            ("impact_gate_test_" + std::to_string(device()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ignored;
    std::filesystem::remove_all(path_, ignored);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  [[nodiscard]] const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

} // namespace impact_gate::testing
