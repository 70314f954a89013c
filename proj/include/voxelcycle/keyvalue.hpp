#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace voxelcycle {

// Line-oriented `key = value` text. '#' starts a comment; blank lines are
// ignored; later duplicates override earlier ones.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

  void set(const std::string& key, const std::string& value);

  // Keys starting with `prefix`, prefix stripped. They count as used here;
  // the returned object tracks its own unused keys.
  KeyValues section(const std::string& prefix) const;

  // Keys never read through a getter; callers reject these as typos.
  std::vector<std::string> unused_keys() const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string to_string() const;

 private:
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

std::string format_double(double v);

}  // namespace voxelcycle
