#pragma once

// LaTeX math tokenizer plus the two consumers built on it: symbol
// extraction for grounding checks and syntactic canonicalization for
// equation matching. The grammar is documented in docs/tokenizer.md.

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "cmdb/error.hpp"

namespace cmdb::latex {

enum class TokenKind { identifier, number, op, function, group_open, group_close };

inline const char* to_string(TokenKind k) {
  switch (k) {
    case TokenKind::identifier: return "id";
    case TokenKind::number: return "num";
    case TokenKind::op: return "op";
    case TokenKind::function: return "fn";
    case TokenKind::group_open: return "group";
    case TokenKind::group_close: return "/group";
  }
  return "?";
}

struct Token {
  TokenKind kind;
  std::string text;
  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenStream {
  std::vector<Token> tokens;
  std::vector<std::string> warnings;  // e.g. "UnknownCommand: \foo"
};

namespace detail {

inline const std::unordered_set<std::string_view>& greek() {
  static const std::unordered_set<std::string_view> s = {
      "alpha", "beta", "gamma", "delta", "epsilon", "varepsilon", "zeta", "eta",
      "theta", "vartheta", "iota", "kappa", "lambda", "mu", "nu", "xi", "pi",
      "varpi", "rho", "varrho", "sigma", "varsigma", "tau", "upsilon", "phi",
      "varphi", "chi", "psi", "omega", "Gamma", "Delta", "Theta", "Lambda", "Xi",
      "Pi", "Sigma", "Upsilon", "Phi", "Psi", "Omega", "ell", "hbar"};
  return s;
}

inline const std::unordered_set<std::string_view>& functions() {
  static const std::unordered_set<std::string_view> s = {
      "frac", "dfrac", "tfrac", "exp", "ln", "log", "lg", "sin", "cos", "tan", "sec",
      "csc", "cot", "sinh", "cosh", "tanh", "coth", "arcsin", "arccos", "arctan",
      "sqrt", "partial", "max", "min", "sup", "inf", "sum", "prod", "int", "iint",
      "oint", "lim", "det", "nabla", "sgn", "operatorname", "Delta_op"};
  return s;
}

inline const std::unordered_set<std::string_view>& operators() {
  static const std::unordered_set<std::string_view> s = {
      "cdot", "times", "leq", "geq", "le", "ge", "neq", "ne", "approx", "sim", "simeq",
      "propto", "pm", "mp", "equiv", "to", "rightarrow", "Rightarrow", "leftarrow",
      "ll", "gg", "div", "ast", "circ", "otimes", "oplus", "colon", "mid",
      "parallel", "langle", "rangle", "lvert", "rvert", "vert", "Vert", "cdots",
      "ldots", "dots", "star", "bullet", "wedge", "vee", "cap", "cup", "in", "subset"};
  return s;
}

/// Commands that wrap one argument into a single decorated symbol.
inline const std::unordered_set<std::string_view>& accents() {
  static const std::unordered_set<std::string_view> s = {
      "dot", "ddot", "hat", "bar", "tilde", "vec", "overline", "underline", "mathbf",
      "boldsymbol", "bm", "mathcal", "mathrm", "mathit", "mathsf", "mathbb", "breve",
      "check", "widehat", "widetilde", "acute", "grave"};
  return s;
}

/// Commands dropped together with their braced argument.
inline const std::unordered_set<std::string_view>& skipped_with_arg() {
  static const std::unordered_set<std::string_view> s = {
      "text", "textrm", "textit", "textbf", "mbox", "label", "tag", "hspace", "vspace",
      "mathrlap", "intertext"};
  return s;
}

/// Commands dropped on their own (spacing, sizing, layout).
inline const std::unordered_set<std::string_view>& skipped() {
  static const std::unordered_set<std::string_view> s = {
      "quad", "qquad", "left", "right", "big", "Big", "bigg", "Bigg", "bigl", "bigr",
      "Bigl", "Bigr", "biggl", "biggr", "displaystyle", "textstyle", "scriptstyle",
      "limits", "nolimits", "nonumber", "notag", "middle", "allowbreak", "qed"};
  return s;
}

class Tokenizer {
public:
  explicit Tokenizer(std::string_view src) : s_(src) {}

  TokenStream run() {
    TokenStream out;
    int depth = 0;
    while (true) {
      skip_space();
      if (i_ >= s_.size()) break;
      const std::size_t before = out.tokens.size();
      read_atom(out, depth, /*top_level=*/true);
      (void)before;
    }
    if (depth != 0) throw Error(errc::unbalanced_braces, "unbalanced braces: missing '}'");
    return out;
  }

private:
  void skip_space() {
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (std::isspace(static_cast<unsigned char>(c)) || c == '~' || c == '&') {
        ++i_;
      } else if (c == '\\' && i_ + 1 < s_.size() &&
                 (s_[i_ + 1] == ',' || s_[i_ + 1] == ';' || s_[i_ + 1] == ':' ||
                  s_[i_ + 1] == '!' || s_[i_ + 1] == ' ' || s_[i_ + 1] == '\\')) {
        i_ += 2;
      } else {
        break;
      }
    }
  }

  std::string read_command_name() {
    // at '\'
    ++i_;
    if (i_ >= s_.size()) return {};
    if (!std::isalpha(static_cast<unsigned char>(s_[i_]))) return std::string(1, s_[i_++]);
    const std::size_t start = i_;
    while (i_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[i_]))) ++i_;
    return std::string(s_.substr(start, i_ - start));
  }

  /// Raw text of a balanced {...} group starting at i_ (which must be '{').
  std::string read_braced_raw() {
    int depth = 0;
    const std::size_t start = i_;
    for (; i_ < s_.size(); ++i_) {
      if (s_[i_] == '\\') {
        ++i_;
        continue;
      }
      if (s_[i_] == '{') ++depth;
      if (s_[i_] == '}' && --depth == 0) {
        ++i_;
        return std::string(s_.substr(start + 1, i_ - start - 2));
      }
    }
    throw Error(errc::unbalanced_braces, "unbalanced braces in group");
  }

  /// Compact text for an argument: its tokens concatenated without spaces.
  static std::string compact(std::string_view raw, std::vector<std::string>& warnings) {
    Tokenizer inner(raw);
    TokenStream ts = inner.run();
    for (auto& w : ts.warnings) warnings.push_back(std::move(w));
    std::string out;
    for (const auto& t : ts.tokens) out += t.text;
    return out;
  }

  std::size_t compact_count(std::string_view raw) {
    Tokenizer inner(raw);
    return inner.run().tokens.size();
  }

  /// Argument of an accent or subscript: a braced group or a single atom.
  std::string read_argument(std::vector<std::string>& warnings, bool& single) {
    skip_space();
    if (i_ >= s_.size()) {
      single = true;
      return {};
    }
    if (s_[i_] == '{') {
      const std::string raw = read_braced_raw();
      single = compact_count(raw) == 1;
      return compact(raw, warnings);
    }
    TokenStream ts;
    int depth = 0;
    read_atom(ts, depth, false);
    for (auto& w : ts.warnings) warnings.push_back(std::move(w));
    single = true;
    return ts.tokens.empty() ? std::string() : ts.tokens.front().text;
  }

  void attach_suffixes(Token& tok, std::vector<std::string>& warnings) {
    for (;;) {
      if (i_ < s_.size() && s_[i_] == '\'') {
        tok.text.push_back('\'');
        ++i_;
        continue;
      }
      if (i_ < s_.size() && s_[i_] == '_') {
        ++i_;
        bool single = true;
        const std::string arg = read_argument(warnings, single);
        tok.text += single ? "_" + arg : "_{" + arg + "}";
        continue;
      }
      break;
    }
  }

  bool next_starts_identifier() const {
    if (i_ >= s_.size()) return false;
    if (std::isalpha(static_cast<unsigned char>(s_[i_]))) return true;
    if (s_[i_] == '\\') {
      std::size_t j = i_ + 1;
      while (j < s_.size() && std::isalpha(static_cast<unsigned char>(s_[j]))) ++j;
      const std::string_view name = s_.substr(i_ + 1, j - i_ - 1);
      return greek().count(name) > 0 || accents().count(name) > 0;
    }
    return false;
  }

  void read_atom(TokenStream& out, int& depth, bool top_level) {
    skip_space();
    if (i_ >= s_.size()) return;
    const char c = s_[i_];
    if (c == '{') {
      ++i_;
      ++depth;
      out.tokens.push_back({TokenKind::group_open, "{"});
      return;
    }
    if (c == '}') {
      if (depth == 0) throw Error(errc::unbalanced_braces, "unbalanced braces: unexpected '}'");
      ++i_;
      --depth;
      out.tokens.push_back({TokenKind::group_close, "}"});
      return;
    }
    if (c == '(' || c == '[') {
      ++i_;
      out.tokens.push_back({TokenKind::group_open, std::string(1, c)});
      return;
    }
    if (c == ')' || c == ']') {
      ++i_;
      out.tokens.push_back({TokenKind::group_close, std::string(1, c)});
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_ + 1])))) {
      const std::size_t start = i_;
      while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) ++i_;
      if (i_ + 1 < s_.size() && s_[i_] == '.' && std::isdigit(static_cast<unsigned char>(s_[i_ + 1]))) {
        ++i_;
        while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) ++i_;
      }
      out.tokens.push_back({TokenKind::number, std::string(s_.substr(start, i_ - start))});
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      ++i_;
      if (c == 'd' && top_level && next_starts_identifier()) {
        out.tokens.push_back({TokenKind::function, "d"});
        return;
      }
      Token tok{TokenKind::identifier, std::string(1, c)};
      attach_suffixes(tok, out.warnings);
      out.tokens.push_back(std::move(tok));
      return;
    }
    if (c == '\\') {
      const std::size_t cmd_start = i_;
      const std::string name = read_command_name();
      if (name == "{" || name == "}" || name == "|") {
        out.tokens.push_back({TokenKind::op, "\\" + name});
        return;
      }
      if (name.size() == 1 && !std::isalpha(static_cast<unsigned char>(name[0]))) {
        // \, \; etc. are consumed by skip_space; anything else is a literal.
        out.tokens.push_back({TokenKind::op, "\\" + name});
        return;
      }
      if (skipped().count(name)) {
        if (name == "left" || name == "right" || name.rfind("big", 0) == 0 ||
            name.rfind("Big", 0) == 0) {
          // The delimiter that follows stays; "." is the invisible one.
          skip_space();
          if (i_ < s_.size() && s_[i_] == '.') ++i_;
        }
        return;
      }
      if (skipped_with_arg().count(name)) {
        skip_space();
        if (i_ < s_.size() && s_[i_] == '{') read_braced_raw();
        return;
      }
      if (name == "infty") {
        Token tok{TokenKind::number, "\\infty"};
        out.tokens.push_back(std::move(tok));
        return;
      }
      if (greek().count(name)) {
        Token tok{TokenKind::identifier, "\\" + name};
        attach_suffixes(tok, out.warnings);
        out.tokens.push_back(std::move(tok));
        return;
      }
      if (name == "operatorname") {
        bool single = true;
        const std::string arg = read_argument(out.warnings, single);
        out.tokens.push_back({TokenKind::function, "\\operatorname{" + arg + "}"});
        return;
      }
      if (accents().count(name)) {
        bool single = true;
        const std::string arg = read_argument(out.warnings, single);
        if (name == "mathrm" && arg == "d") {
          out.tokens.push_back({TokenKind::function, "d"});
          return;
        }
        if (name == "mathrm" && (arg == "e" || arg == "exp")) {
          out.tokens.push_back({TokenKind::function, "\\exp"});
          return;
        }
        Token tok{TokenKind::identifier, "\\" + name + "{" + arg + "}"};
        attach_suffixes(tok, out.warnings);
        out.tokens.push_back(std::move(tok));
        return;
      }
      if (functions().count(name)) {
        out.tokens.push_back({TokenKind::function, "\\" + name});
        return;
      }
      if (operators().count(name)) {
        out.tokens.push_back({TokenKind::op, "\\" + name});
        return;
      }
      (void)cmd_start;
      out.warnings.push_back("UnknownCommand: \\" + name);
      Token tok{TokenKind::identifier, "\\" + name};
      attach_suffixes(tok, out.warnings);
      out.tokens.push_back(std::move(tok));
      return;
    }
    // Everything else is a one-character operator.
    ++i_;
    out.tokens.push_back({TokenKind::op, std::string(1, c)});
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace detail

/// Tokenizes a LaTeX math-mode string. Throws Error(unbalanced_braces).
inline TokenStream tokenize_equation(std::string_view latex) {
  return detail::Tokenizer(latex).run();
}

/// Identifiers excluded from the grounding symbol set.
struct SymbolWhitelist {
  /// Excluded only when every occurrence directly follows d or \partial.
  std::set<std::string> differential_variables{"t"};
  /// Always excluded.
  std::set<std::string> always{};
};

/// Grounding-relevant symbols in first-appearance order, without duplicates.
inline std::vector<std::string> extract_equation_symbols(std::string_view latex,
                                                         const SymbolWhitelist& wl = {}) {
  const TokenStream ts = tokenize_equation(latex);
  std::vector<std::string> ordered;
  std::set<std::string> seen;
  std::set<std::string> non_differential_use;
  for (std::size_t k = 0; k < ts.tokens.size(); ++k) {
    const Token& t = ts.tokens[k];
    if (t.kind != TokenKind::identifier) continue;
    const bool after_diff = k > 0 && ts.tokens[k - 1].kind == TokenKind::function &&
                            (ts.tokens[k - 1].text == "d" || ts.tokens[k - 1].text == "\\partial");
    if (!after_diff) non_differential_use.insert(t.text);
    if (seen.insert(t.text).second) ordered.push_back(t.text);
  }
  std::vector<std::string> out;
  for (const auto& s : ordered) {
    if (wl.always.count(s)) continue;
    if (wl.differential_variables.count(s) && !non_differential_use.count(s)) continue;
    out.push_back(s);
  }
  return out;
}

/// Canonical form of a symbol key: the identifier text if the key tokenizes
/// to exactly one identifier, otherwise the trimmed input.
inline std::string canonical_symbol(std::string_view key) {
  try {
    const TokenStream ts = tokenize_equation(key);
    if (ts.tokens.size() == 1 && ts.tokens[0].kind == TokenKind::identifier) return ts.tokens[0].text;
  } catch (const Error&) {
  }
  std::size_t b = 0;
  std::size_t e = key.size();
  while (b < e && std::isspace(static_cast<unsigned char>(key[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(key[e - 1]))) --e;
  return std::string(key.substr(b, e - b));
}

inline bool is_single_identifier(std::string_view key) {
  try {
    const TokenStream ts = tokenize_equation(key);
    return ts.tokens.size() == 1 && ts.tokens[0].kind == TokenKind::identifier;
  } catch (const Error&) {
    return false;
  }
}

/// Syntactic canonical form: \dfrac/\tfrac become \frac, \cdot and * are
/// dropped in favour of juxtaposition, braces around single tokens and
/// doubled braces are removed, the differential is spelled \mathrm{d}.
/// No algebraic rewriting: "a+b" and "b+a" stay different.
inline std::string normalize_equation(std::string_view latex) {
  std::vector<Token> toks = tokenize_equation(latex).tokens;
  for (auto& t : toks) {
    if (t.kind == TokenKind::function && (t.text == "\\dfrac" || t.text == "\\tfrac")) t.text = "\\frac";
  }
  toks.erase(std::remove_if(toks.begin(), toks.end(),
                            [](const Token& t) {
                              return t.kind == TokenKind::op && (t.text == "\\cdot" || t.text == "*");
                            }),
             toks.end());
  // Brace simplification to a fixed point.
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t k = 0; k < toks.size(); ++k) {
      if (toks[k].kind != TokenKind::group_open || toks[k].text != "{") continue;
      // find the matching close
      int depth = 0;
      std::size_t close = k;
      for (std::size_t m = k; m < toks.size(); ++m) {
        if (toks[m].kind == TokenKind::group_open && toks[m].text == "{") ++depth;
        if (toks[m].kind == TokenKind::group_close && toks[m].text == "}" && --depth == 0) {
          close = m;
          break;
        }
      }
      if (close == k) continue;
      const std::size_t inner = close - k - 1;
      bool drop = inner <= 1;
      if (!drop && toks[k + 1].kind == TokenKind::group_open && toks[k + 1].text == "{") {
        // {{ ... }} where the inner group spans everything
        int d2 = 0;
        for (std::size_t m = k + 1; m < close; ++m) {
          if (toks[m].kind == TokenKind::group_open && toks[m].text == "{") ++d2;
          if (toks[m].kind == TokenKind::group_close && toks[m].text == "}" && --d2 == 0) {
            drop = (m == close - 1);
            break;
          }
        }
      }
      if (drop && inner == 0) {
        // "{}" is meaningful spacing in LaTeX only; drop it too
      }
      if (drop) {
        toks.erase(toks.begin() + static_cast<std::ptrdiff_t>(close));
        toks.erase(toks.begin() + static_cast<std::ptrdiff_t>(k));
        changed = true;
        break;
      }
    }
  }
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out.push_back(' ');
    out += (t.kind == TokenKind::function && t.text == "d") ? std::string("\\mathrm{d}") : t.text;
  }
  return out;
}

/// Brace balance ignoring escaped \{ and \}.
inline bool braces_balanced(std::string_view s) {
  int depth = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\') {
      ++i;
      continue;
    }
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth < 0) return false;
  }
  return depth == 0;
}

}  // namespace cmdb::latex
