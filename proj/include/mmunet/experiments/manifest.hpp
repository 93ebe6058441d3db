#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmunet/config.hpp"

namespace mmunet::experiments {

/// Everything needed to rerun a command: name, full effective config, seed
/// and source version. Contains nothing time-dependent, so identical runs
/// write identical manifests.
struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  KvMap config;
};

/// `git describe` of the source tree at configure time.
std::string source_version();

std::string format_manifest(const Manifest& m);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// <dir>/manifest.txt
void write_manifest(const std::filesystem::path& dir, const Manifest& m);

}  // namespace mmunet::experiments
