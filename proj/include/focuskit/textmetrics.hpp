#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "focuskit/error.hpp"
#include "focuskit/util.hpp"

namespace focuskit::textmetrics {

struct TokenizedText {
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> tokens;  // concatenation of sentences
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

inline std::string normalise_word(std::string_view raw) {
  std::size_t b = 0, e = raw.size();
  while (b < e && !is_alnum(raw[b])) ++b;
  while (e > b && !is_alnum(raw[e - 1])) --e;
  std::string w(raw.substr(b, e - b));
  for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return w;
}

// Pairwise sum over sorted values: deterministic and independent of input
// order.
inline double ordered_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto rec = [&](auto&& self, std::size_t lo, std::size_t hi) -> double {
    if (hi - lo <= 8) {
      double s = 0;
      for (std::size_t i = lo; i < hi; ++i) s += v[i];
      return s;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    return self(self, lo, mid) + self(self, mid, hi);
  };
  return rec(rec, 0, v.size());
}

}  // namespace detail

/// Sentences end at '.', '!' or '?' followed by whitespace or end of text.
/// Words split on whitespace, lose surrounding punctuation and are
/// lowercased; empty words and sentences are dropped.
inline TokenizedText tokenize(std::string_view text) {
  TokenizedText out;
  std::vector<std::string> current;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !detail::is_space(text[j])) ++j;
    const std::string_view raw = text.substr(i, j - i);
    if (auto w = detail::normalise_word(raw); !w.empty()) current.push_back(std::move(w));
    // A terminator at the end of a whitespace-delimited chunk is, by
    // construction, followed by whitespace or end of text.
    std::size_t k = raw.size();
    while (k > 0 && (raw[k - 1] == '"' || raw[k - 1] == '\'' || raw[k - 1] == ')')) --k;
    if (k > 0 && detail::is_terminator(raw[k - 1]) && !current.empty()) {
      out.sentences.push_back(std::move(current));
      current.clear();
    }
    i = j;
  }
  if (!current.empty()) out.sentences.push_back(std::move(current));
  for (const auto& s : out.sentences) out.tokens.insert(out.tokens.end(), s.begin(), s.end());
  return out;
}

inline bool is_vowel(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case 'a': case 'e': case 'i': case 'o': case 'u': case 'y':
      return true;
    default:
      return false;
  }
}

/// Maximal vowel groups (a e i o u y), less one for a lone terminal 'e'
/// when more than one group exists; at least 1.
inline int syllables(std::string_view word) {
  int groups = 0;
  bool prev = false;
  for (char c : word) {
    const bool v = is_vowel(c);
    if (v && !prev) ++groups;
    prev = v;
  }
  const std::size_t n = word.size();
  if (groups > 1 && n >= 2 && std::tolower(static_cast<unsigned char>(word[n - 1])) == 'e' && !is_vowel(word[n - 2])) {
    --groups;
  }
  return std::max(groups, 1);
}

/// Grade-level formula: 0.39 * words/sentences + 11.8 * syllables/words - 15.59.
inline double flesch_kincaid(const TokenizedText& t) {
  if (t.sentences.empty() || t.tokens.empty()) throw UndefinedMetricError("readability needs at least one sentence");
  long syl = 0;
  for (const auto& w : t.tokens) syl += syllables(w);
  const double words = static_cast<double>(t.tokens.size());
  return 0.39 * (words / static_cast<double>(t.sentences.size())) + 11.8 * (static_cast<double>(syl) / words) - 15.59;
}

namespace detail {

inline double mtld_factors(std::span<const std::string> tokens, double threshold, bool reverse) {
  double factors = 0;
  std::unordered_set<std::string_view> types;
  std::size_t count = 0;
  double ttr = 1.0;
  const std::size_t n = tokens.size();
  for (std::size_t k = 0; k < n; ++k) {
    types.insert(tokens[reverse ? n - 1 - k : k]);
    ++count;
    ttr = static_cast<double>(types.size()) / static_cast<double>(count);
    if (ttr < threshold) {
      factors += 1;
      types.clear();
      count = 0;
      ttr = 1.0;
    }
  }
  if (count > 0) factors += (1.0 - ttr) / (1.0 - threshold);
  return factors;
}

}  // namespace detail

/// Bidirectional MTLD: mean of token_count / factor_count over the forward
/// and reversed token streams.
inline double mtld(const TokenizedText& t, double threshold = 0.72) {
  if (t.tokens.empty()) throw UndefinedMetricError("lexical diversity needs at least one token");
  if (!(threshold > 0 && threshold < 1)) throw ValidationError("MTLD threshold must lie in (0, 1)");
  const double fwd = detail::mtld_factors(t.tokens, threshold, false);
  const double bwd = detail::mtld_factors(t.tokens, threshold, true);
  if (fwd == 0 && bwd == 0) throw UndefinedMetricError("lexical diversity undefined: no factors in either direction");
  const double n = static_cast<double>(t.tokens.size());
  // A direction with zero factors cannot occur when the other has some (both
  // reduce to "all tokens distinct"), but guard the division anyway.
  if (fwd == 0) return n / bwd;
  if (bwd == 0) return n / fwd;
  return (n / fwd + n / bwd) / 2;
}

/// Fraction of word trigrams that repeat an earlier one.
inline double repetition_3gram(const TokenizedText& t) {
  if (t.tokens.size() < 3) throw UndefinedMetricError("3-gram repetition needs at least three tokens");
  std::set<std::tuple<std::string_view, std::string_view, std::string_view>> distinct;
  const std::size_t total = t.tokens.size() - 2;
  for (std::size_t i = 0; i < total; ++i) distinct.emplace(t.tokens[i], t.tokens[i + 1], t.tokens[i + 2]);
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

/// 100 * max(0, cosine similarity).
inline double correlation_score(std::span<const double> e_img, std::span<const double> e_txt) {
  if (e_img.size() != e_txt.size()) {
    throw ValidationError(fmt::format("embedding sizes differ: {} vs {}", e_img.size(), e_txt.size()));
  }
  double dot = 0, ni = 0, nt = 0;
  for (std::size_t i = 0; i < e_img.size(); ++i) {
    dot += e_img[i] * e_txt[i];
    ni += e_img[i] * e_img[i];
    nt += e_txt[i] * e_txt[i];
  }
  if (ni == 0 || nt == 0) throw ValidationError("correlation undefined for a zero-norm embedding");
  return 100.0 * std::max(0.0, dot / (std::sqrt(ni) * std::sqrt(nt)));
}

struct EmbeddingPair {
  std::vector<double> image;
  std::vector<double> text;
};

struct MetricSummary {
  std::optional<double> mean;  // empty when no text satisfied the precondition
  int included = 0;
  int excluded = 0;
};

struct MetricsReport {
  MetricSummary readability;
  MetricSummary diversity;
  MetricSummary repetition;
  std::optional<MetricSummary> correlation;
  int texts = 0;
};

namespace detail {

template <class F>
MetricSummary summarise(std::span<const TokenizedText> texts, F&& metric) {
  MetricSummary s;
  std::vector<double> values;
  for (const auto& t : texts) {
    try {
      values.push_back(metric(t));
    } catch (const UndefinedMetricError&) {
      ++s.excluded;
    }
  }
  s.included = static_cast<int>(values.size());
  if (!values.empty()) s.mean = ordered_sum(std::move(values)) / s.included;
  return s;
}

}  // namespace detail

/// Arithmetic means of the per-text metrics. Texts that fail a metric's
/// precondition are left out of that metric's mean and counted as excluded.
inline MetricsReport corpus_report(std::span<const std::string> texts, std::span<const EmbeddingPair> pairs = {}) {
  if (texts.empty()) throw ValidationError("corpus report needs at least one text");
  std::vector<TokenizedText> tok;
  tok.reserve(texts.size());
  for (const auto& t : texts) tok.push_back(tokenize(t));
  MetricsReport r;
  r.texts = static_cast<int>(texts.size());
  r.readability = detail::summarise(tok, [](const TokenizedText& t) { return flesch_kincaid(t); });
  r.diversity = detail::summarise(tok, [](const TokenizedText& t) { return mtld(t); });
  r.repetition = detail::summarise(tok, [](const TokenizedText& t) { return repetition_3gram(t); });
  if (!pairs.empty()) {
    MetricSummary c;
    std::vector<double> values;
    for (const auto& p : pairs) values.push_back(correlation_score(p.image, p.text));
    c.included = static_cast<int>(values.size());
    c.mean = detail::ordered_sum(std::move(values)) / c.included;
    r.correlation = c;
  }
  if (!r.readability.mean && !r.diversity.mean && !r.repetition.mean) {
    throw UndefinedMetricError("every text failed every metric");
  }
  return r;
}

inline ordered_json to_json(const MetricsReport& r) {
  auto summary = [](const MetricSummary& s) {
    ordered_json j;
    j["mean"] = s.mean ? ordered_json(*s.mean) : ordered_json(nullptr);
    j["included"] = s.included;
    j["excluded"] = s.excluded;
    return j;
  };
  ordered_json j;
  j["texts"] = r.texts;
  j["readability"] = summary(r.readability);
  j["diversity"] = summary(r.diversity);
  j["repetition"] = summary(r.repetition);
  j["correlation"] = r.correlation ? summary(*r.correlation) : ordered_json(nullptr);
  return j;
}

}  // namespace focuskit::textmetrics
