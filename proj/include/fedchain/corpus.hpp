#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedchain/errors.hpp"
#include "fedchain/rng.hpp"
#include "fedchain/tinylm.hpp"

// Synthetic sentence corpus with a planted labeling rule, plus a CSV loader
// for external text/label data.
//
// The rule: label 1 iff the sentence contains a positive-marker word and no
// negative-marker word. Filler words use only the letters a-h, positive
// markers are the only words containing 'z', negative markers the only words
// containing 'q' - so the rule is linearly recoverable from byte unigrams and
// the whole alphabet stays small relative to the embedding width.

namespace fedchain::corpus {

using tinylm::Example;

inline constexpr std::array<std::string_view, 10> kFillerWords = {
    "ace", "bad", "cafe", "dab", "egg", "fad", "gab", "beach", "chafe", "decaf"};
inline constexpr std::array<std::string_view, 3> kPositiveMarkers = {"zag", "gaze", "haze"};
inline constexpr std::array<std::string_view, 3> kNegativeMarkers = {"qed", "qaff", "cheq"};

inline bool contains_word(std::string_view text, std::string_view word) {
  std::size_t pos = 0;
  while ((pos = text.find(word, pos)) != std::string_view::npos) {
    bool left_ok = pos == 0 || text[pos - 1] == ' ';
    std::size_t end = pos + word.size();
    bool right_ok = end == text.size() || text[end] == ' ';
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

// Ground-truth lookup classifier; scores 100% on any generated corpus.
inline int rule_label(std::string_view text) {
  bool positive = false;
  for (auto w : kPositiveMarkers)
    if (contains_word(text, w)) positive = true;
  for (auto w : kNegativeMarkers)
    if (contains_word(text, w)) return 0;
  return positive ? 1 : 0;
}

inline std::vector<Example> generate_corpus(std::uint64_t seed, std::size_t n_samples,
                                            double class_balance = 0.5) {
  if (n_samples < 2) throw ModuleError("BadCorpusSize", "need at least 2 samples");
  Rng rng(seed ^ 0xc0ffee5eedull);
  std::vector<Example> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const int label = rng.uniform() < class_balance ? 1 : 0;
    const std::size_t n_words = 5 + rng.below(5);  // 5..9 words, <= 64 bytes
    std::vector<std::string_view> words;
    words.reserve(n_words);
    for (std::size_t k = 0; k < n_words; ++k)
      words.push_back(kFillerWords[rng.below(kFillerWords.size())]);
    auto place = [&](std::string_view w) { words[rng.below(words.size())] = w; };
    if (label == 1) {
      place(kPositiveMarkers[rng.below(kPositiveMarkers.size())]);
    } else if (rng.uniform() < 0.5) {
      // negative marker, sometimes alongside a positive one
      std::size_t neg_at = rng.below(words.size());
      words[neg_at] = kNegativeMarkers[rng.below(kNegativeMarkers.size())];
      if (rng.uniform() < 0.5 && words.size() > 1) {
        std::size_t pos_at = rng.below(words.size());
        if (pos_at == neg_at) pos_at = (pos_at + 1) % words.size();
        words[pos_at] = kPositiveMarkers[rng.below(kPositiveMarkers.size())];
      }
    }
    std::string text;
    for (std::size_t k = 0; k < words.size(); ++k) {
      if (k > 0) text.push_back(' ');
      text.append(words[k]);
    }
    out.push_back({std::move(text), label});
  }
  return out;
}

// Labels anti-correlated with the planted rule; the evaluation-side
// construction used by the retrain-from-scratch comparison.
inline std::vector<Example> flip_labels(std::vector<Example> data) {
  for (auto& ex : data) ex.label = 1 - ex.label;
  return data;
}

struct MissingColumnError : ModuleError {
  explicit MissingColumnError(const std::string& col)
      : ModuleError("MissingColumn", "column not found: " + col) {}
};

struct BadLabelError : ModuleError {
  explicit BadLabelError(std::size_t row, const std::string& value)
      : ModuleError("BadLabel(" + std::to_string(row) + ")",
                    "label must be 0 or 1, got \"" + value + "\""),
        row(row) {}
  std::size_t row;
};

namespace detail {

// Minimal RFC 4180 row split: quoted fields, doubled quotes, embedded commas.
inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace detail

// Loads (text, label) rows; data rows are numbered from 1 for diagnostics.
inline std::vector<Example> load_csv_corpus(const std::string& path,
                                            const std::string& text_column,
                                            const std::string& label_column,
                                            std::size_t limit = SIZE_MAX) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file: " + path);
  auto header = detail::split_csv_row(line);
  std::optional<std::size_t> text_idx, label_idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == text_column) text_idx = i;
    if (header[i] == label_column) label_idx = i;
  }
  if (!text_idx) throw MissingColumnError(text_column);
  if (!label_idx) throw MissingColumnError(label_column);

  std::vector<Example> out;
  std::size_t row = 0;
  while (out.size() < limit && std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto fields = detail::split_csv_row(line);
    if (fields.size() <= std::max(*text_idx, *label_idx))
      throw BadLabelError(row, "<missing field>");
    const std::string& label_str = fields[*label_idx];
    int label;
    if (label_str == "0")
      label = 0;
    else if (label_str == "1")
      label = 1;
    else
      throw BadLabelError(row, label_str);
    out.push_back({fields[*text_idx], label});
  }
  return out;
}

}  // namespace fedchain::corpus
