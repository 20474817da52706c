#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ccgan {

/// Order-preserving INI text: "[section]" headers, "key = value" lines,
/// '#' or ';' comments. Keys are addressed as "section.key".
class IniDocument {
 public:
  struct Entry {
    std::string key;  // section.key
    std::string value;
    std::size_t line = 0;  // 0 when set programmatically
  };

  /// Throws ConfigError("<origin>:<line>: ...") on malformed lines or duplicate keys.
  static IniDocument parse(const std::string& text, const std::string& origin = "<config>");

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  const Entry* find(const std::string& key) const;
  bool contains(const std::string& key) const { return find(key) != nullptr; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// Canonical text grouped by section in first-appearance order.
  std::string to_text() const;

 private:
  std::vector<Entry> entries_;
};

}  // namespace ccgan
