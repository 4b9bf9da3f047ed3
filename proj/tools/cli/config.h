#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmnerf::cli {

// Malformed flags, config files, or values. Maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat `key = value` config. Blank lines and lines starting with '#' are
// ignored; keys are [A-Za-z0-9_.]+ and may appear once.
class FlatConfig {
 public:
  FlatConfig() = default;
  static FlatConfig Parse(const std::string& text, const std::string& origin = "config");
  static FlatConfig Load(const std::string& path);

  // "key=value" override; replaces an existing entry.
  void Override(const std::string& assignment);
  void Set(const std::string& key, const std::string& value);

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  std::string GetString(const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  int GetInt(const std::string& key, int fallback) const;
  std::uint64_t GetU64(const std::string& key, std::uint64_t fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;
  std::vector<int> GetIntList(const std::string& key, const std::vector<int>& fallback) const;

  // Throws UsageError naming any key no getter asked for.
  void RejectUnused() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Sorted "key=value\n" lines; independent of the order in the file.
  std::string Canonical() const;
  // FNV-1a 64 of Canonical() as 16 hex digits.
  std::string Hash() const;

 private:
  const std::string* Find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

std::uint64_t Fnv1a64(const std::string& bytes);

}  // namespace rmnerf::cli
