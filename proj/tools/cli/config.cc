#include "config.h"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rmnerf::cli {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool ValidKey(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  }
  return true;
}

[[noreturn]] void BadValue(const std::string& key, const std::string& value, const char* want) {
  throw UsageError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

}  // namespace

std::uint64_t Fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

FlatConfig FlatConfig::Parse(const std::string& text, const std::string& origin) {
  FlatConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    const std::string key = Trim(t.substr(0, eq));
    if (!ValidKey(key)) throw UsageError(where + ": invalid key '" + key + "'");
    if (cfg.values_.count(key)) throw UsageError(where + ": duplicate key '" + key + "'");
    cfg.values_[key] = Trim(t.substr(eq + 1));
  }
  return cfg;
}

FlatConfig FlatConfig::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str(), path);
}

void FlatConfig::Override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = Trim(assignment.substr(0, eq));
  if (!ValidKey(key)) throw UsageError("--set: invalid key '" + key + "'");
  values_[key] = Trim(assignment.substr(eq + 1));
}

void FlatConfig::Set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string* FlatConfig::Find(const std::string& key) const {
  used_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string FlatConfig::GetString(const std::string& key, const std::string& fallback) const {
  const std::string* v = Find(key);
  return v ? *v : fallback;
}

double FlatConfig::GetDouble(const std::string& key, double fallback) const {
  const std::string* v = Find(key);
  if (!v) return fallback;
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v->c_str(), &end);
  if (v->empty() || *end != '\0' || errno == ERANGE || !std::isfinite(d)) {
    BadValue(key, *v, "a finite number");
  }
  return d;
}

int FlatConfig::GetInt(const std::string& key, int fallback) const {
  const std::string* v = Find(key);
  if (!v) return fallback;
  int out = 0;
  const auto r = std::from_chars(v->data(), v->data() + v->size(), out);
  if (r.ec != std::errc() || r.ptr != v->data() + v->size()) BadValue(key, *v, "an integer");
  return out;
}

std::uint64_t FlatConfig::GetU64(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = Find(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto r = std::from_chars(v->data(), v->data() + v->size(), out);
  if (r.ec != std::errc() || r.ptr != v->data() + v->size()) {
    BadValue(key, *v, "an unsigned integer");
  }
  return out;
}

bool FlatConfig::GetBool(const std::string& key, bool fallback) const {
  const std::string* v = Find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  BadValue(key, *v, "true or false");
}

std::vector<int> FlatConfig::GetIntList(const std::string& key,
                                        const std::vector<int>& fallback) const {
  const std::string* v = Find(key);
  if (!v) return fallback;
  std::vector<int> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = Trim(item);
    int x = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
      BadValue(key, *v, "a comma-separated integer list");
    }
    out.push_back(x);
  }
  if (out.empty()) BadValue(key, *v, "a non-empty integer list");
  return out;
}

void FlatConfig::RejectUnused() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) throw UsageError("unknown config key '" + key + "'");
  }
}

std::string FlatConfig::Canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
  return out;
}

std::string FlatConfig::Hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(Fnv1a64(Canonical())));
  return buf;
}

}  // namespace rmnerf::cli
