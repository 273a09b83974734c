#pragma once

#include <concepts>
#include <cstdint>
#include <map>
#include <string>

namespace lip {

// Flat "key = value" settings file. '#' starts a comment; blank lines are
// skipped. Line numbers are kept for error messages; unknown keys are the
// caller's to reject via KeyValueFile::finish().
class KeyValueFile {
 public:
  static KeyValueFile parse_file(const std::string& path);
  static KeyValueFile parse_text(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  // Typed getters consume the key; absent keys leave `out` untouched.
  void get(const std::string& key, double& out);
  void get(const std::string& key, std::string& out);
  template <typename T>
    requires std::unsigned_integral<T>
  void get(const std::string& key, T& out) {
    std::uint64_t v = out;
    get_u64(key, v);
    out = static_cast<T>(v);
  }
  // Throws ConfigError naming the first unconsumed key and its line number.
  void finish() const;

 private:
  void get_u64(const std::string& key, std::uint64_t& out);

  struct Item {
    std::string value;
    int line = 0;
    bool consumed = false;
  };
  std::string origin_;
  std::map<std::string, Item> values_;
};

}  // namespace lip
