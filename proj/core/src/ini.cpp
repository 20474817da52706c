#include "ccgan/ini.hpp"

#include <algorithm>
#include <sstream>

#include "ccgan/error.hpp"

namespace ccgan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

IniDocument IniDocument::parse(const std::string& text, const std::string& origin) {
  IniDocument doc;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail("missing key before '='");
    if (section.empty()) fail("key '" + key + "' appears before any [section]");
    const std::string full = section + "." + key;
    if (doc.find(full)) fail("duplicate key '" + full + "'");
    doc.entries_.push_back({full, trim(line.substr(eq + 1)), line_no});
  }
  return doc;
}

void IniDocument::set(const std::string& key, const std::string& value) {
  if (key.find('.') == std::string::npos) {
    throw ConfigError("config key '" + key + "' must be of the form section.key");
  }
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.key == key; });
  if (it != entries_.end()) {
    it->value = value;
  } else {
    entries_.push_back({key, value, 0});
  }
}

std::optional<std::string> IniDocument::get(const std::string& key) const {
  if (const Entry* e = find(key)) return e->value;
  return std::nullopt;
}

const IniDocument::Entry* IniDocument::find(const std::string& key) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.key == key; });
  return it == entries_.end() ? nullptr : &*it;
}

std::string IniDocument::to_text() const {
  std::vector<std::string> sections;
  for (const auto& e : entries_) {
    const auto sec = e.key.substr(0, e.key.find('.'));
    if (std::find(sections.begin(), sections.end(), sec) == sections.end()) sections.push_back(sec);
  }
  std::ostringstream os;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (i) os << '\n';
    os << '[' << sections[i] << "]\n";
    for (const auto& e : entries_) {
      const auto dot = e.key.find('.');
      if (e.key.substr(0, dot) == sections[i]) os << e.key.substr(dot + 1) << " = " << e.value << '\n';
    }
  }
  return os.str();
}

}  // namespace ccgan
