#pragma once

// JSONL readers: corpus lines {"text": ...} and pair lines {"source", "target"}.

#include <filesystem>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace spectramix {

struct TextPair {
  std::string source;
  std::string target;  // empty when the file carries sources only
};

namespace detail {

template <class F>
void for_each_json_line(std::istream& in, const std::string& origin, F&& f) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return in;
}

}  // namespace detail

inline std::vector<std::string> read_text_jsonl(std::istream& in, const std::string& origin = "<stream>") {
  std::vector<std::string> out;
  detail::for_each_json_line(in, origin, [&](const nlohmann::json& j) { out.push_back(j.at("text").get<std::string>()); });
  return out;
}

inline std::vector<std::string> read_text_jsonl(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return read_text_jsonl(in, path.string());
}

/// `require_target` = false accepts lines without "target" (generation input).
inline std::vector<TextPair> read_pairs_jsonl(std::istream& in, bool require_target = true,
                                              const std::string& origin = "<stream>") {
  std::vector<TextPair> out;
  detail::for_each_json_line(in, origin, [&](const nlohmann::json& j) {
    TextPair p{j.at("source").get<std::string>(), {}};
    if (require_target || j.contains("target")) p.target = j.at("target").get<std::string>();
    out.push_back(std::move(p));
  });
  return out;
}

inline std::vector<TextPair> read_pairs_jsonl(const std::filesystem::path& path, bool require_target = true) {
  auto in = detail::open_input(path);
  return read_pairs_jsonl(in, require_target, path.string());
}

}  // namespace spectramix
