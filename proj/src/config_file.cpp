#include "lip/config_file.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "lip/error.hpp"

namespace lip {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_text(buf.str(), path);
}

KeyValueFile KeyValueFile::parse_text(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key or value");
    }
    if (kv.values_.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    kv.values_[key] = {value, line_no, false};
  }
  return kv;
}

void KeyValueFile::get(const std::string& key, double& out) {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  it->second.consumed = true;
  try {
    std::size_t pos = 0;
    out = std::stod(it->second.value, &pos);
    if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ":" + std::to_string(it->second.line) + ": key '" + key +
                      "' needs a number, got '" + it->second.value + "'");
  }
}

void KeyValueFile::get_u64(const std::string& key, std::uint64_t& out) {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  it->second.consumed = true;
  try {
    std::size_t pos = 0;
    out = std::stoull(it->second.value, &pos);
    if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ":" + std::to_string(it->second.line) + ": key '" + key +
                      "' needs an unsigned integer, got '" + it->second.value + "'");
  }
}

void KeyValueFile::get(const std::string& key, std::string& out) {
  auto it = values_.find(key);
  if (it == values_.end()) return;
  it->second.consumed = true;
  out = it->second.value;
}

void KeyValueFile::finish() const {
  for (const auto& [key, item] : values_) {
    if (!item.consumed) {
      throw ConfigError(origin_ + ":" + std::to_string(item.line) + ": unknown key '" + key +
                        "'");
    }
  }
}

}  // namespace lip
