#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "mmunet/tensor.hpp"

namespace mmunet {

/// Flat key=value configuration. '#' starts a comment; blank lines are skipped.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv(std::string_view text);
KvMap read_kv_file(const std::filesystem::path& path);
std::string format_kv(const KvMap& kv);

/// printf %.<digits>g; 17 digits round-trip a double.
std::string format_real(double v, int digits = 17);

/// Typed reads from a KvMap that remember which keys were consumed, so a
/// command can reject typos after every config section has read its fields.
class KvReader {
 public:
  explicit KvReader(const KvMap& kv) : kv_(kv) {}

  void read(const std::string& key, std::size_t& out);
  void read(const std::string& key, double& out);
  void read(const std::string& key, float& out);
  void read(const std::string& key, bool& out);
  void read(const std::string& key, std::string& out);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  /// Throws ConfigError listing keys nobody read.
  void reject_unused() const;

 private:
  const std::string* lookup(const std::string& key);

  const KvMap& kv_;
  std::set<std::string> used_;
};

}  // namespace mmunet
