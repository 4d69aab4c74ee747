#pragma once

// Candidate-block segmentation: finds display-math groups, inline math
// clusters and table regions in a serialized text stream. Spans are measured
// in Unicode scalar values.

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cmdb/util/utf8.hpp"

namespace cmdb::ingest {

enum class BlockKind { display_math, inline_math_cluster, table_region };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::display_math: return "display_math";
    case BlockKind::inline_math_cluster: return "inline_math_cluster";
    case BlockKind::table_region: return "table_region";
  }
  return "display_math";
}

inline bool block_kind_from_string(std::string_view s, BlockKind& out) {
  if (s == "display_math") out = BlockKind::display_math;
  else if (s == "inline_math_cluster") out = BlockKind::inline_math_cluster;
  else if (s == "table_region") out = BlockKind::table_region;
  else return false;
  return true;
}

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  friend bool operator==(const Span&, const Span&) = default;
};

struct CandidateBlock {
  std::string block_id;
  Span span;
  std::string raw_text;
  BlockKind kind = BlockKind::display_math;
  friend bool operator==(const CandidateBlock&, const CandidateBlock&) = default;
};

struct Segmentation {
  std::vector<CandidateBlock> blocks;
  std::vector<std::string> warnings;
};

namespace detail {

inline constexpr std::array<std::u32string_view, 17> kDisplayEnvs = {
    U"equation", U"equation*", U"align", U"align*", U"gather", U"gather*",
    U"multline", U"multline*", U"eqnarray", U"eqnarray*", U"displaymath",
    U"flalign", U"flalign*", U"alignat", U"alignat*", U"dmath", U"math"};
inline constexpr std::array<std::u32string_view, 6> kTableEnvs = {
    U"table", U"table*", U"tabular", U"tabular*", U"tabularx", U"longtable"};

template <std::size_t N>
bool contains(const std::array<std::u32string_view, N>& set, std::u32string_view name) {
  return std::find(set.begin(), set.end(), name) != set.end();
}

inline bool starts_at(std::u32string_view text, std::size_t pos, std::u32string_view what) {
  return text.substr(pos, what.size()) == what;
}

/// Position just past the matching \end{name}, honouring nested
/// environments of the same name; npos if unmatched.
inline std::size_t find_env_end(std::u32string_view text, std::size_t from,
                                std::u32string_view name) {
  const std::u32string open = U"\\begin{" + std::u32string(name) + U"}";
  const std::u32string close = U"\\end{" + std::u32string(name) + U"}";
  int depth = 1;
  std::size_t pos = from;
  while (pos < text.size()) {
    const std::size_t o = text.find(open, pos);
    const std::size_t c = text.find(close, pos);
    if (c == std::u32string_view::npos) return std::u32string_view::npos;
    if (o != std::u32string_view::npos && o < c) {
      ++depth;
      pos = o + open.size();
      continue;
    }
    if (--depth == 0) return c + close.size();
    pos = c + close.size();
  }
  return std::u32string_view::npos;
}

/// Next unescaped occurrence of `what` at or after `from`.
inline std::size_t find_unescaped(std::u32string_view text, std::size_t from,
                                  std::u32string_view what) {
  std::size_t pos = from;
  while ((pos = text.find(what, pos)) != std::u32string_view::npos) {
    std::size_t backslashes = 0;
    for (std::size_t k = pos; k > 0 && text[k - 1] == U'\\'; --k) ++backslashes;
    if (backslashes % 2 == 0) return pos;
    ++pos;
  }
  return pos;
}

inline bool is_greek_or_math(char32_t c) {
  return (c >= 0x0370 && c <= 0x03FF) || (c >= 0x2200 && c <= 0x22FF) ||
         (c >= 0x2070 && c <= 0x209F) || c == U'·' || c == U'×' || c == U'±' ||
         c == U'∞' || c == U'′';
}

inline bool is_relation(char32_t c) {
  return c == U'=' || c == U'<' || c == U'>' || c == U'≤' || c == U'≥' || c == U'≈' ||
         c == U'∝' || c == U'≠' || c == U'≡';
}

inline bool is_operator_char(char32_t c) {
  return is_relation(c) || c == U'+' || c == U'-' || c == U'*' || c == U'/' || c == U'^' ||
         c == U'_' || c == U'(' || c == U')' || c == U'[' || c == U']' || c == U'|' ||
         c == U'−' || c == U'\'';
}

inline bool is_ascii_alpha(char32_t c) {
  return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
}

inline bool is_function_word(std::u32string_view w) {
  static constexpr std::array<std::u32string_view, 16> fns = {
      U"exp", U"ln", U"log", U"sin", U"cos", U"tan", U"sinh", U"cosh",
      U"tanh", U"max", U"min", U"sqrt", U"det", U"tr", U"sgn", U"lim"};
  return std::find(fns.begin(), fns.end(), w) != fns.end();
}

inline bool is_stopword(std::u32string_view w) {
  static constexpr std::array<std::u32string_view, 22> words = {
      U"a", U"A", U"an", U"as", U"at", U"be", U"by", U"do", U"if", U"in", U"is",
      U"it", U"of", U"on", U"or", U"so", U"to", U"up", U"we", U"no", U"I", U"In"};
  return std::find(words.begin(), words.end(), w) != words.end();
}

inline std::u32string_view strip_punct(std::u32string_view t) {
  while (!t.empty() && (t.back() == U',' || t.back() == U'.' || t.back() == U';' ||
                        t.back() == U':')) {
    t.remove_suffix(1);
  }
  return t;
}

/// Token that plausibly belongs to a formula written without delimiters.
inline bool is_mathish(std::u32string_view raw) {
  const std::u32string_view t = strip_punct(raw);
  if (t.empty() || is_stopword(t)) return false;
  bool math_signal = false;
  std::size_t i = 0;
  while (i < t.size()) {
    const char32_t c = t[i];
    if (is_ascii_alpha(c)) {
      std::size_t j = i;
      while (j < t.size() && is_ascii_alpha(t[j])) ++j;
      const std::u32string_view run = t.substr(i, j - i);
      if (run.size() > 2 && !is_function_word(run)) return false;
      if (run.size() <= 2) math_signal = true;
      i = j;
      continue;
    }
    if (is_greek_or_math(c) || is_operator_char(c) || (c >= U'0' && c <= U'9') || c == U'.') {
      math_signal = true;
    } else {
      return false;
    }
    ++i;
  }
  return math_signal;
}

inline bool has_relation(std::u32string_view t) {
  return std::any_of(t.begin(), t.end(), is_relation);
}

inline bool is_number_token(std::u32string_view raw) {
  std::u32string_view t = strip_punct(raw);
  if (!t.empty() && (t.front() == U'-' || t.front() == U'+' || t.front() == U'−')) t.remove_prefix(1);
  if (t.empty()) return false;
  bool digit = false;
  for (char32_t c : t) {
    if (c >= U'0' && c <= U'9') digit = true;
    else if (c != U'.' && c != U'e' && c != U'E' && c != U'-' && c != U'%') return false;
  }
  return digit;
}

struct Token {
  std::size_t start;
  std::size_t end;
};

inline std::vector<Token> split_tokens(std::u32string_view text, std::size_t b, std::size_t e) {
  std::vector<Token> out;
  std::size_t i = b;
  while (i < e) {
    while (i < e && utf8::is_space(text[i])) ++i;
    if (i >= e) break;
    std::size_t j = i;
    while (j < e && !utf8::is_space(text[j])) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

}  // namespace detail

/// Segments candidate blocks. Deterministic; the returned blocks are sorted,
/// non-overlapping, and each raw_text equals the span's slice of `text`.
inline Segmentation segment_candidates(std::string_view utf8_text, std::string_view doc_id) {
  using namespace detail;
  const std::u32string text = utf8::decode(utf8_text);
  const std::u32string_view tv(text);
  Segmentation seg;
  struct Found {
    Span span;
    BlockKind kind;
  };
  std::vector<Found> found;
  std::vector<bool> covered(text.size(), false);
  auto mark = [&](std::size_t s, std::size_t e, BlockKind k) {
    found.push_back({{s, e}, k});
    for (std::size_t k2 = s; k2 < e; ++k2) covered[k2] = true;
  };
  auto warn = [&](const std::string& what, std::size_t at) {
    seg.warnings.push_back("UnbalancedDelimiters: " + what + " at char " + std::to_string(at) +
                           " has no closing delimiter; block skipped");
  };

  // Pass 1: explicit LaTeX delimiters.
  std::size_t i = 0;
  while (i < tv.size()) {
    const char32_t c = tv[i];
    if (c == U'\\' && i + 1 < tv.size()) {
      const char32_t n = tv[i + 1];
      if (n == U'\\' || n == U'$') {
        i += 2;
        continue;
      }
      if (n == U'[' || n == U'(') {
        const std::u32string_view close = n == U'[' ? U"\\]" : U"\\)";
        const std::size_t end = find_unescaped(tv, i + 2, close);
        if (end == std::u32string_view::npos) {
          warn(n == U'[' ? "\\[" : "\\(", i);
          i += 2;
          continue;
        }
        mark(i, end + 2, n == U'[' ? BlockKind::display_math : BlockKind::inline_math_cluster);
        i = end + 2;
        continue;
      }
      if (starts_at(tv, i, U"\\begin{")) {
        const std::size_t name_start = i + 7;
        const std::size_t name_end = tv.find(U'}', name_start);
        if (name_end != std::u32string_view::npos) {
          const std::u32string_view name = tv.substr(name_start, name_end - name_start);
          const bool display = contains(kDisplayEnvs, name);
          const bool table = contains(kTableEnvs, name);
          if (display || table) {
            const std::size_t end = find_env_end(tv, name_end + 1, name);
            if (end == std::u32string_view::npos) {
              warn("\\begin{" + utf8::encode(name) + "}", i);
              i = name_end + 1;
              continue;
            }
            mark(i, end, display ? BlockKind::display_math : BlockKind::table_region);
            i = end;
            continue;
          }
        }
      }
      ++i;
      continue;
    }
    if (c == U'$') {
      if (i + 1 < tv.size() && tv[i + 1] == U'$') {
        const std::size_t end = find_unescaped(tv, i + 2, U"$$");
        if (end == std::u32string_view::npos) {
          warn("$$", i);
          i += 2;
          continue;
        }
        mark(i, end + 2, BlockKind::display_math);
        i = end + 2;
        continue;
      }
      // Inline math may not cross a paragraph break.
      std::size_t end = find_unescaped(tv, i + 1, U"$");
      const std::size_t para = tv.find(U"\n\n", i + 1);
      if (end != std::u32string_view::npos && para != std::u32string_view::npos && para < end) {
        end = std::u32string_view::npos;
      }
      if (end == std::u32string_view::npos || end == i + 1) {
        warn("$", i);
        ++i;
        continue;
      }
      mark(i, end + 1, BlockKind::inline_math_cluster);
      i = end + 1;
      continue;
    }
    ++i;
  }

  // Pass 2: per-line heuristics over text not claimed above.
  std::size_t line_start = 0;
  struct Line {
    std::size_t start, end;
    std::size_t numeric;
    bool free;
  };
  std::vector<Line> lines;
  while (line_start <= tv.size()) {
    std::size_t line_end = tv.find(U'\n', line_start);
    if (line_end == std::u32string_view::npos) line_end = tv.size();
    bool free = true;
    for (std::size_t k = line_start; k < line_end; ++k) {
      if (covered[k]) {
        free = false;
        break;
      }
    }
    std::size_t numeric = 0;
    const auto toks = split_tokens(tv, line_start, line_end);
    if (free) {
      for (const auto& t : toks) {
        if (is_number_token(tv.substr(t.start, t.end - t.start))) ++numeric;
      }
    }
    lines.push_back({line_start, line_end, numeric, free});

    // Inline clusters around relation symbols.
    std::vector<bool> in_cluster(toks.size(), false);
    for (std::size_t r = 0; r < toks.size(); ++r) {
      const auto tok = tv.substr(toks[r].start, toks[r].end - toks[r].start);
      bool tok_free = true;
      for (std::size_t k = toks[r].start; k < toks[r].end; ++k) tok_free = tok_free && !covered[k];
      if (!tok_free || !has_relation(tok) || !is_mathish(tok)) continue;
      const bool standalone = std::all_of(tok.begin(), tok.end(), is_relation);
      auto usable = [&](std::size_t idx) {
        for (std::size_t k = toks[idx].start; k < toks[idx].end; ++k) {
          if (covered[k]) return false;
        }
        return is_mathish(tv.substr(toks[idx].start, toks[idx].end - toks[idx].start));
      };
      if (standalone && (r == 0 || r + 1 >= toks.size() || !usable(r - 1) || !usable(r + 1))) {
        continue;
      }
      std::size_t lo = r;
      std::size_t hi = r;
      while (lo > 0 && usable(lo - 1)) --lo;
      while (hi + 1 < toks.size() && usable(hi + 1)) ++hi;
      for (std::size_t k = lo; k <= hi; ++k) in_cluster[k] = true;
    }
    for (std::size_t k = 0; k < toks.size();) {
      if (!in_cluster[k]) {
        ++k;
        continue;
      }
      std::size_t m = k;
      while (m + 1 < toks.size() && in_cluster[m + 1]) ++m;
      const std::size_t s = toks[k].start;
      std::size_t e = toks[m].end;
      while (e > s && (tv[e - 1] == U',' || tv[e - 1] == U'.' || tv[e - 1] == U';' ||
                       tv[e - 1] == U':')) {
        --e;
      }
      mark(s, e, BlockKind::inline_math_cluster);
      k = m + 1;
    }
    if (line_end == tv.size()) break;
    line_start = line_end + 1;
  }

  // Table heuristic: >= 3 consecutive free lines with the same number
  // (>= 2) of numeric columns.
  for (std::size_t l = 0; l < lines.size();) {
    if (!lines[l].free || lines[l].numeric < 2) {
      ++l;
      continue;
    }
    std::size_t m = l;
    while (m + 1 < lines.size() && lines[m + 1].free && lines[m + 1].numeric == lines[l].numeric) {
      ++m;
    }
    if (m - l + 1 >= 3) {
      const std::size_t s = lines[l].start;
      const std::size_t e = lines[m].end;
      bool clear = true;
      for (std::size_t k = s; k < e; ++k) clear = clear && !covered[k];
      if (clear) mark(s, e, BlockKind::table_region);
    }
    l = m + 1;
  }

  std::sort(found.begin(), found.end(),
            [](const Found& a, const Found& b) { return a.span.start < b.span.start; });
  std::size_t index = 0;
  std::size_t last_end = 0;
  for (const auto& f : found) {
    if (f.span.start < last_end || f.span.end <= f.span.start) continue;
    CandidateBlock b;
    b.block_id = std::string(doc_id) + "#" + std::to_string(index++);
    b.span = f.span;
    b.kind = f.kind;
    b.raw_text = utf8::encode(tv.substr(f.span.start, f.span.end - f.span.start));
    seg.blocks.push_back(std::move(b));
    last_end = f.span.end;
  }
  return seg;
}

}  // namespace cmdb::ingest
