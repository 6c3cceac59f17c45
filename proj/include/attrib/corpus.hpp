#pragma once

// Comment corpus: ingestion of exported comment dumps, sentence splitting,
// tokenization, corpus statistics and sentence-level annotation labels.

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "attrib/error.hpp"
#include "attrib/io.hpp"

namespace attrib {

struct Sentence {
  std::size_t index = 0;
  std::string text;
  std::vector<std::string> tokens;
  // Broad-category ids. Meaningful only when `annotated` is set; an annotated
  // sentence with no labels is an explicit negative.
  std::set<std::string> labels;
  bool annotated = false;

  bool positive() const { return annotated && !labels.empty(); }
};

struct Comment {
  std::string id;
  std::string video_id;
  std::string author_id;
  std::string raw_text;
  std::vector<Sentence> sentences;
};

struct SentenceKey {
  std::string comment_id;
  std::size_t sentence_index = 0;

  auto operator<=>(const SentenceKey&) const = default;
};

struct CorpusStats {
  std::size_t n_comments = 0;
  std::size_t n_sentences = 0;
  std::size_t n_labeled_positive_sentences = 0;
  std::map<std::string, std::size_t> document_frequency;

  std::size_t df(const std::string& token) const {
    auto it = document_frequency.find(token);
    return it == document_frequency.end() ? 0 : it->second;
  }
};

enum class DumpFormat { JsonArray, JsonLines };

namespace text {

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?' || c == '\n'; }

// Splits on . ! ? and newline. Runs of terminators act as one boundary;
// segments are trimmed and empty ones dropped.
inline std::vector<std::string> sentence_split(std::string_view raw) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= raw.size(); ++i) {
    if (i == raw.size() || is_terminator(raw[i])) {
      std::string_view seg = io::trim(raw.substr(start, i - start));
      if (!seg.empty()) out.emplace_back(seg);
      start = i + 1;
    }
  }
  return out;
}

// Bytes >= 0x80 count as token characters so multi-byte UTF-8 letters stay
// inside their word; only ASCII is case-folded.
inline bool is_token_char(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    auto c = static_cast<unsigned char>(ch);
    if (is_token_char(c)) {
      cur.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace text

inline std::vector<Sentence> make_sentences(std::string_view raw) {
  std::vector<Sentence> out;
  auto parts = text::sentence_split(raw);
  out.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Sentence s;
    s.index = i;
    s.tokens = text::tokenize(parts[i]);
    s.text = std::move(parts[i]);
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline bool has_space(std::string_view s) {
  for (char c : s)
    if (io::is_space(c)) return true;
  return false;
}

inline Comment comment_from_record(const nlohmann::json& rec, std::size_t index) {
  auto bad = [&](const std::string& why) -> Error {
    return Error(concat("malformed record ", index, ": ", why));
  };
  if (!rec.is_object()) throw bad("not an object");
  auto field = [&](const char* name, bool required) -> std::string {
    auto it = rec.find(name);
    if (it == rec.end() || it->is_null()) {
      if (required) throw bad(concat("missing field '", name, "'"));
      return {};
    }
    if (!it->is_string()) throw bad(concat("field '", name, "' is not a string"));
    return it->get<std::string>();
  };
  Comment c;
  c.id = field("id", true);
  c.video_id = field("video_id", false);
  c.author_id = field("author_id", false);
  c.raw_text = field("text", true);
  if (c.id.empty() || has_space(c.id)) throw bad("id must be nonempty and contain no whitespace");
  c.sentences = make_sentences(c.raw_text);
  return c;
}

}  // namespace detail

inline DumpFormat detect_format(std::string_view content) {
  std::string_view t = io::trim(content);
  return (!t.empty() && t.front() == '[') ? DumpFormat::JsonArray : DumpFormat::JsonLines;
}

// Parses a comment dump held in memory. Record indices in errors are 0-based
// (array position, or non-blank line ordinal for the line format).
inline std::vector<Comment> parse_dump(std::string_view content, DumpFormat format) {
  std::vector<Comment> out;
  std::unordered_set<std::string> seen;
  auto add = [&](Comment c) {
    if (!seen.insert(c.id).second) detail::fail("duplicate id: ", c.id);
    out.push_back(std::move(c));
  };
  if (format == DumpFormat::JsonArray) {
    if (io::trim(content).empty()) return out;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
      detail::fail("malformed comment dump: ", e.what());
    }
    if (!doc.is_array()) detail::fail("malformed comment dump: top level is not an array");
    for (std::size_t i = 0; i < doc.size(); ++i) add(detail::comment_from_record(doc[i], i));
    return out;
  }
  std::size_t index = 0;
  for (std::string_view line : io::lines(content)) {
    if (io::trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      detail::fail("malformed record ", index, ": invalid JSON");
    }
    add(detail::comment_from_record(rec, index));
    ++index;
  }
  return out;
}

inline std::vector<Comment> ingest(const std::filesystem::path& path, DumpFormat format) {
  return parse_dump(io::read_file(path), format);
}

inline std::vector<Comment> ingest(const std::filesystem::path& path) {
  std::string content = io::read_file(path);
  return parse_dump(content, detect_format(content));
}

// Keeps comments whose share of function-word tokens is at least min_ratio.
// A comment without tokens has ratio 0.
inline std::vector<Comment> english_heuristic_filter(const std::vector<Comment>& comments,
                                                     const std::unordered_set<std::string>& function_words,
                                                     double min_ratio) {
  if (!(min_ratio >= 0.0 && min_ratio <= 1.0)) detail::fail("min_ratio must lie in [0, 1]");
  std::vector<Comment> out;
  for (const auto& c : comments) {
    std::size_t total = 0, hits = 0;
    for (const auto& s : c.sentences) {
      total += s.tokens.size();
      for (const auto& t : s.tokens) hits += function_words.count(t);
    }
    double ratio = total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
    if (ratio >= min_ratio) out.push_back(c);
  }
  return out;
}

inline constexpr double kDefaultEnglishMinRatio = 0.1;

inline CorpusStats compute_stats(const std::vector<Comment>& comments) {
  CorpusStats st;
  st.n_comments = comments.size();
  for (const auto& c : comments) {
    for (const auto& s : c.sentences) {
      ++st.n_sentences;
      if (s.positive()) ++st.n_labeled_positive_sentences;
      std::set<std::string_view> present(s.tokens.begin(), s.tokens.end());
      for (auto t : present) ++st.document_frequency[std::string(t)];
    }
  }
  return st;
}

// Label file: tab-separated `comment_id  sentence_index  category_id|NONE`;
// lines starting with '#' and blank lines are skipped. Returns a new corpus
// with every sentence mentioned marked as annotated.
inline std::vector<Comment> apply_annotations(std::vector<Comment> comments, std::string_view content,
                                              const std::set<std::string>& category_ids) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < comments.size(); ++i) by_id.emplace(comments[i].id, i);
  std::size_t line_no = 0;
  for (std::string_view line : io::lines(content)) {
    ++line_no;
    std::string_view t = io::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto cols = io::split_char(t, '\t');
    auto row_error = [&](const std::string& why) {
      detail::fail("label row ", line_no, " (", std::string(t), "): ", why);
    };
    if (cols.size() != 3) row_error("expected 3 tab-separated columns");
    std::string cid(io::trim(cols[0]));
    auto it = by_id.find(cid);
    if (it == by_id.end()) row_error("unknown comment_id " + cid);
    auto idx = io::parse_int(io::trim(cols[1]));
    Comment& c = comments[it->second];
    if (!idx || *idx < 0 || static_cast<std::size_t>(*idx) >= c.sentences.size())
      row_error("sentence_index out of range");
    std::string cat(io::trim(cols[2]));
    Sentence& s = c.sentences[static_cast<std::size_t>(*idx)];
    s.annotated = true;
    if (cat == "NONE") continue;
    if (!category_ids.count(cat)) row_error("unknown category_id " + cat);
    s.labels.insert(cat);
  }
  return comments;
}

inline std::vector<Comment> load_annotations(std::vector<Comment> comments, const std::filesystem::path& path,
                                             const std::set<std::string>& category_ids) {
  return apply_annotations(std::move(comments), io::read_file(path), category_ids);
}

inline std::unordered_set<std::string> load_word_list(const std::filesystem::path& path) {
  std::unordered_set<std::string> out;
  const std::string content = io::read_file(path);
  for (auto line : io::lines(content)) {
    auto t = io::trim(line);
    if (!t.empty() && t.front() != '#') out.emplace(t);
  }
  return out;
}

// Normalized corpus: one JSON object per line with the comment fields and its
// sentences (text + tokens). Keys are emitted in sorted order.
inline std::string serialize_corpus(const std::vector<Comment>& comments) {
  std::string out;
  for (const auto& c : comments) {
    nlohmann::json j;
    j["id"] = c.id;
    j["video_id"] = c.video_id;
    j["author_id"] = c.author_id;
    j["text"] = c.raw_text;
    j["sentences"] = nlohmann::json::array();
    for (const auto& s : c.sentences)
      j["sentences"].push_back({{"index", s.index}, {"text", s.text}, {"tokens", s.tokens}});
    out += j.dump();
    out += '\n';
  }
  return out;
}

// Reads a normalized corpus; sentences are recomputed from `text` and checked
// against the stored ones.
inline std::vector<Comment> parse_normalized_corpus(std::string_view content) {
  auto comments = parse_dump(content, DumpFormat::JsonLines);
  std::size_t index = 0;
  for (std::string_view line : io::lines(content)) {
    if (io::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    const Comment& c = comments[index];
    auto it = j.find("sentences");
    if (it != j.end()) {
      if (!it->is_array() || it->size() != c.sentences.size())
        detail::fail("normalized corpus record ", index, ": sentence count does not match text");
      for (std::size_t k = 0; k < c.sentences.size(); ++k)
        if ((*it)[k].value("text", std::string{}) != c.sentences[k].text)
          detail::fail("normalized corpus record ", index, ": sentence ", k, " does not match text");
    }
    ++index;
  }
  return comments;
}

inline std::string serialize_stats(const CorpusStats& st) {
  std::string out;
  out += "n_comments\t" + std::to_string(st.n_comments) + "\n";
  out += "n_sentences\t" + std::to_string(st.n_sentences) + "\n";
  out += "n_labeled_positive_sentences\t" + std::to_string(st.n_labeled_positive_sentences) + "\n";
  for (const auto& [tok, n] : st.document_frequency) out += "df\t" + tok + "\t" + std::to_string(n) + "\n";
  return out;
}

}  // namespace attrib
