#include "ss3d/io/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ss3d/common/error.hpp"

namespace ss3d {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), "E_CONFIG",
          "key '" + key + "' expects a number, got '" + text + "'");
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig cfg;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, "E_CONFIG", "line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    require(!key.empty(), "E_CONFIG", "line " + std::to_string(number) + ": empty key");
    require(!cfg.has(key), "E_CONFIG", "line " + std::to_string(number) + ": duplicate key '" + key + "'");
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "E_IO", "cannot open " + path);
  return parse(in);
}

const std::string* KeyValueConfig::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  return v ? to_double(key, *v) : fallback;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  require(ec == std::errc() && ptr == v->data() + v->size(), "E_CONFIG",
          "key '" + key + "' expects an integer, got '" + *v + "'");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  fail("E_CONFIG", "key '" + key + "' expects true or false, got '" + *v + "'");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

void KeyValueConfig::check_all_used() const {
  for (const auto& [key, value] : values_) {
    require(used_.count(key) != 0, "E_CONFIG", "unknown config key '" + key + "'");
  }
}

void KeyValueConfig::write(std::ostream& out) const {
  for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
}

void KeyValueConfig::save(const std::string& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), "E_IO", "cannot open " + path);
  write(out);
  require(static_cast<bool>(out), "E_IO", "failed to write " + path);
}

}  // namespace ss3d
