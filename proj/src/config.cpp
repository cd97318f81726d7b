#include "protograde/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "protograde/errors.hpp"

namespace protograde {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

double parse_number(const std::string& raw, const std::string& what) {
  const std::string text = trim(raw);
  if (text == "inf" || text == "+inf" || text == "infinity") return std::numeric_limits<double>::infinity();
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    const double num = parse_number(text.substr(0, slash), what);
    const double den = parse_number(text.substr(slash + 1), what);
    if (den == 0.0) throw ConfigError(what + ": division by zero in '" + text + "'");
    return num / den;
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(what + ": '" + text + "' is not a number");
  }
  if (used != text.size()) throw ConfigError(what + ": '" + text + "' is not a number");
  return v;
}

std::string format_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.contains(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::set_default(const std::string& key, std::string value) {
  if (!contains(key)) values_[key] = std::move(value);
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key) const { return parse_number(get_string(key), key); }

long long KeyValueConfig::get_int(const std::string& key) const {
  const double v = get_double(key);
  if (std::floor(v) != v || std::abs(v) > 9.0e15) throw ConfigError(key + ": expected an integer");
  return static_cast<long long>(v);
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get_string(key))) out.push_back(parse_number(item, key));
  return out;
}

std::vector<long long> KeyValueConfig::get_int_list(const std::string& key) const {
  std::vector<long long> out;
  for (double v : get_double_list(key)) {
    if (std::floor(v) != v) throw ConfigError(key + ": expected integers");
    out.push_back(static_cast<long long>(v));
  }
  return out;
}

void KeyValueConfig::reject_unknown(const std::set<std::string>& allowed) const {
  for (const auto& [key, value] : values_)
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + key + "'");
}

std::string KeyValueConfig::to_text() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

std::string KeyValueConfig::hash() const { return hex64(fnv1a64(to_text())); }

}  // namespace protograde
