#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace artistid {

/// Flat `key=value` document. Insertion order is preserved so emitted files
/// are byte-deterministic. Lines starting with '#' and blank lines are
/// ignored when parsing.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text);
  static KeyValueDoc load(const std::filesystem::path& path);

  void set(std::string key, std::string value);
  bool contains(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  const std::string& require(std::string_view key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Value codecs shared by every key/value consumer.
std::string format_real(double v);
std::string format_real(float v);
double parse_real(std::string_view s, std::string_view what);
std::int64_t parse_int(std::string_view s, std::string_view what);
std::vector<std::string> split_list(std::string_view s, char sep = ',');
std::vector<std::int64_t> parse_int_list(std::string_view s, std::string_view what);
std::vector<double> parse_real_list(std::string_view s, std::string_view what);

template <typename Range>
std::string join_list(const Range& values, char sep = ',') {
  std::string out;
  bool first = true;
  for (const auto& v : values) {
    if (!first) out.push_back(sep);
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += format_real(v);
    } else if constexpr (std::is_convertible_v<decltype(v), std::string_view>) {
      out += std::string_view(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

}  // namespace artistid
