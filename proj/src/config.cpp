#include "mmunet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmunet/error.hpp"

namespace mmunet {

// Seeds are read through the size_t overload.
static_assert(std::is_same_v<std::uint64_t, std::size_t>);

namespace {
std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace

KvMap parse_kv(std::string_view text) {
  KvMap kv;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

KvMap read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str());
}

std::string format_kv(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string format_real(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

const std::string* KvReader::lookup(const std::string& key) {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

namespace {
template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}
}  // namespace

void KvReader::read(const std::string& key, std::size_t& out) {
  if (const auto* v = lookup(key)) out = parse_number<std::size_t>(key, *v);
}

void KvReader::read(const std::string& key, double& out) {
  if (const auto* v = lookup(key)) out = parse_number<double>(key, *v);
}

void KvReader::read(const std::string& key, float& out) {
  if (const auto* v = lookup(key)) out = parse_number<float>(key, *v);
}

void KvReader::read(const std::string& key, bool& out) {
  const auto* v = lookup(key);
  if (!v) return;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") {
    out = true;
  } else if (*v == "false" || *v == "0" || *v == "no" || *v == "off") {
    out = false;
  } else {
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
  }
}

void KvReader::read(const std::string& key, std::string& out) {
  if (const auto* v = lookup(key)) out = *v;
}

void KvReader::reject_unused() const {
  std::string unknown;
  for (const auto& [k, _] : kv_)
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

}  // namespace mmunet
