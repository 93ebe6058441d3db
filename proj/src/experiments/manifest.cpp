#include "mmunet/experiments/manifest.hpp"

#include <fstream>
#include <sstream>

#include "mmunet/error.hpp"

#ifndef MMU_GIT_DESCRIBE
#define MMU_GIT_DESCRIBE "unknown"
#endif

namespace mmunet::experiments {

std::string source_version() { return MMU_GIT_DESCRIBE; }

std::string format_manifest(const Manifest& m) {
  KvMap kv = m.config;
  kv["command"] = m.command;
  kv["seed"] = std::to_string(m.seed);
  kv["source_version"] = source_version();
  return format_kv(kv);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  write_text(dir / "manifest.txt", format_manifest(m));
}

}  // namespace mmunet::experiments
