#pragma once

// Text-layer reader for PDF files: locates indirect objects (including those
// packed in object streams), walks the page tree and replays each page's
// content stream to recover the shown text in reading order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/ingest/pdf_object.hpp"
#include "cmdb/util/utf8.hpp"

namespace cmdb::pdf {

struct PageText {
  std::string text;  // UTF-8, lines separated by '\n'
  bool has_images = false;
  bool has_text = false;
};

struct ExtractedText {
  std::vector<PageText> pages;
  std::vector<std::string> warnings;
};

namespace detail {

inline char32_t glyph_name_to_unicode(std::string_view name) {
  static const std::unordered_map<std::string_view, char32_t> table = {
      {"space", U' '}, {"exclam", U'!'}, {"quotedbl", U'"'}, {"numbersign", U'#'},
      {"dollar", U'$'}, {"percent", U'%'}, {"ampersand", U'&'}, {"quotesingle", U'\''},
      {"quoteright", U'’'}, {"quoteleft", U'‘'}, {"parenleft", U'('},
      {"parenright", U')'}, {"asterisk", U'*'}, {"plus", U'+'}, {"comma", U','},
      {"hyphen", U'-'}, {"minus", U'−'}, {"period", U'.'}, {"slash", U'/'},
      {"zero", U'0'}, {"one", U'1'}, {"two", U'2'}, {"three", U'3'}, {"four", U'4'},
      {"five", U'5'}, {"six", U'6'}, {"seven", U'7'}, {"eight", U'8'}, {"nine", U'9'},
      {"colon", U':'}, {"semicolon", U';'}, {"less", U'<'}, {"equal", U'='},
      {"greater", U'>'}, {"question", U'?'}, {"at", U'@'}, {"bracketleft", U'['},
      {"backslash", U'\\'}, {"bracketright", U']'}, {"asciicircum", U'^'},
      {"underscore", U'_'}, {"grave", U'`'}, {"braceleft", U'{'}, {"bar", U'|'},
      {"braceright", U'}'}, {"asciitilde", U'~'}, {"multiply", U'×'},
      {"periodcentered", U'·'}, {"degree", U'°'}, {"mu", U'μ'}, {"endash", U'–'},
      {"emdash", U'—'}, {"fi", U'ﬁ'}, {"fl", U'ﬂ'}, {"infinity", U'∞'},
      {"partialdiff", U'∂'}, {"lessequal", U'≤'}, {"greaterequal", U'≥'},
      {"plusminus", U'±'}, {"approxequal", U'≈'}, {"notequal", U'≠'},
      {"alpha", U'α'}, {"beta", U'β'}, {"gamma", U'γ'}, {"delta", U'δ'},
      {"epsilon", U'ε'}, {"zeta", U'ζ'}, {"eta", U'η'}, {"theta", U'θ'},
      {"iota", U'ι'}, {"kappa", U'κ'}, {"lambda", U'λ'}, {"nu", U'ν'}, {"xi", U'ξ'},
      {"omicron", U'ο'}, {"pi", U'π'}, {"rho", U'ρ'}, {"sigma", U'σ'}, {"tau", U'τ'},
      {"upsilon", U'υ'}, {"phi", U'φ'}, {"chi", U'χ'}, {"psi", U'ψ'}, {"omega", U'ω'},
      {"Gamma", U'Γ'}, {"Delta", U'Δ'}, {"Theta", U'Θ'}, {"Lambda", U'Λ'},
      {"Xi", U'Ξ'}, {"Pi", U'Π'}, {"Sigma", U'Σ'}, {"Phi", U'Φ'}, {"Psi", U'Ψ'},
      {"Omega", U'Ω'},
  };
  if (name.size() == 1 && std::isalpha(static_cast<unsigned char>(name[0]))) {
    return static_cast<char32_t>(name[0]);
  }
  if (const auto it = table.find(name); it != table.end()) return it->second;
  if (name.size() == 7 && name.substr(0, 3) == "uni") {
    return static_cast<char32_t>(std::stoul(std::string(name.substr(3)), nullptr, 16));
  }
  return 0;
}

/// WinAnsiEncoding; bytes outside 0x80-0x9F coincide with Latin-1.
inline char32_t win_ansi(unsigned char b) {
  static constexpr char32_t high[32] = {
      U'€', U'�', U'‚', U'ƒ', U'„', U'…', U'†', U'‡', U'ˆ', U'‰', U'Š',
      U'‹', U'Œ', U'�', U'Ž', U'�', U'�', U'‘', U'’', U'“', U'”', U'•',
      U'–', U'—', U'˜', U'™', U'š', U'›', U'œ', U'�', U'ž', U'Ÿ'};
  if (b >= 0x80 && b <= 0x9F) return high[b - 0x80];
  return b;
}

}  // namespace detail

/// Decodes shown-string bytes of one font into Unicode.
class FontDecoder {
public:
  FontDecoder() {
    for (int b = 0; b < 256; ++b) simple_[b] = detail::win_ansi(static_cast<unsigned char>(b));
  }

  int code_bytes = 1;
  std::map<std::uint32_t, std::u32string> to_unicode;
  bool has_to_unicode = false;

  void set_simple(int code, char32_t cp) {
    if (code >= 0 && code < 256) simple_[code] = cp;
  }

  std::u32string decode(std::string_view bytes, std::size_t& unmapped) const {
    std::u32string out;
    for (std::size_t i = 0; i + code_bytes <= bytes.size(); i += code_bytes) {
      std::uint32_t code = 0;
      for (int k = 0; k < code_bytes; ++k) {
        code = (code << 8) | static_cast<unsigned char>(bytes[i + k]);
      }
      if (has_to_unicode) {
        if (const auto it = to_unicode.find(code); it != to_unicode.end()) {
          out += it->second;
          continue;
        }
        if (code_bytes > 1) {
          ++unmapped;
          out.push_back(U'�');
          continue;
        }
      }
      if (code_bytes == 1) {
        out.push_back(simple_[code & 0xFF]);
      } else {
        ++unmapped;
        out.push_back(U'�');
      }
    }
    return out;
  }

private:
  char32_t simple_[256];
};

namespace detail {

inline std::u32string utf16be_to_u32(std::string_view bytes) {
  std::u32string out;
  for (std::size_t i = 0; i + 1 < bytes.size(); i += 2) {
    char32_t u = (static_cast<unsigned char>(bytes[i]) << 8) |
                 static_cast<unsigned char>(bytes[i + 1]);
    if (u >= 0xD800 && u <= 0xDBFF && i + 3 < bytes.size()) {
      const char32_t lo = (static_cast<unsigned char>(bytes[i + 2]) << 8) |
                          static_cast<unsigned char>(bytes[i + 3]);
      if (lo >= 0xDC00 && lo <= 0xDFFF) {
        u = 0x10000 + ((u - 0xD800) << 10) + (lo - 0xDC00);
        i += 2;
      }
    }
    out.push_back(u);
  }
  return out;
}

inline std::uint32_t bytes_to_code(std::string_view b) {
  std::uint32_t c = 0;
  for (unsigned char ch : b) c = (c << 8) | ch;
  return c;
}

/// Parses the bfchar / bfrange sections of a ToUnicode CMap.
inline void parse_to_unicode(std::string_view cmap, FontDecoder& font) {
  Lexer lex(cmap);
  std::vector<Object> operands;
  int code_len = 0;
  while (!lex.at_end()) {
    Object o;
    try {
      o = lex.read();
    } catch (const Error&) {
      break;
    }
    if (!o.is_keyword()) {
      operands.push_back(std::move(o));
      continue;
    }
    const std::string& kw = std::get<Keyword>(o.v).value;
    if (kw == "endcodespacerange") {
      for (const auto& op : operands) {
        if (op.is_string()) code_len = std::max(code_len, static_cast<int>(op.string().bytes.size()));
      }
    } else if (kw == "endbfchar") {
      for (std::size_t i = 0; i + 1 < operands.size(); i += 2) {
        if (!operands[i].is_string() || !operands[i + 1].is_string()) continue;
        const auto& src = operands[i].string().bytes;
        code_len = std::max(code_len, static_cast<int>(src.size()));
        font.to_unicode[bytes_to_code(src)] = utf16be_to_u32(operands[i + 1].string().bytes);
      }
    } else if (kw == "endbfrange") {
      for (std::size_t i = 0; i + 2 < operands.size(); i += 3) {
        if (!operands[i].is_string() || !operands[i + 1].is_string()) continue;
        const auto& lo_b = operands[i].string().bytes;
        code_len = std::max(code_len, static_cast<int>(lo_b.size()));
        const std::uint32_t lo = bytes_to_code(lo_b);
        const std::uint32_t hi = bytes_to_code(operands[i + 1].string().bytes);
        if (hi < lo || hi - lo > 0x10000) continue;
        const Object& dst = operands[i + 2];
        if (dst.is_string()) {
          std::u32string base = utf16be_to_u32(dst.string().bytes);
          if (base.empty()) continue;
          for (std::uint32_t c = lo; c <= hi; ++c) {
            std::u32string v = base;
            v.back() += static_cast<char32_t>(c - lo);
            font.to_unicode[c] = std::move(v);
          }
        } else if (dst.is_array()) {
          const auto& arr = dst.array();
          for (std::uint32_t c = lo; c <= hi && c - lo < arr.size(); ++c) {
            if (arr[c - lo].is_string()) {
              font.to_unicode[c] = utf16be_to_u32(arr[c - lo].string().bytes);
            }
          }
        }
      }
    }
    operands.clear();
  }
  if (code_len > 0) font.code_bytes = code_len;
  font.has_to_unicode = !font.to_unicode.empty();
}

}  // namespace detail

class Document {
public:
  /// Indexes all objects. Throws EncryptedPdf / MalformedPdf.
  explicit Document(std::string bytes) : data_(std::move(bytes)) {
    const std::size_t header = data_.find("%PDF-");
    if (header == std::string::npos || header > 1024) {
      throw Error(errc::malformed_pdf, "missing %PDF- header");
    }
    index_objects();
    read_trailers();
    if (encrypted_) throw Error(errc::encrypted_pdf, "document is encrypted");
    if (!root_) throw Error(errc::malformed_pdf, "no document catalog");
  }

  const Object& resolve(const Object& o) const {
    const Object* cur = &o;
    for (int depth = 0; depth < 32 && cur->is_ref(); ++depth) {
      cur = &get(cur->ref().num);
    }
    return *cur;
  }

  const Object& get(int num) const {
    static const Object null_object{};
    if (const auto it = objects_.find(num); it != objects_.end()) return it->second;
    if (const auto it = offsets_.find(num); it != offsets_.end()) {
      // Parsed lazily on first access.
      objects_[num] = null_object;  // breaks reference cycles
      try {
        objects_[num] = parse_at(it->second);
      } catch (const Error&) {
        objects_[num] = null_object;
      }
      return objects_[num];
    }
    return null_object;
  }

  /// Page dictionaries in document order, with inherited /Resources merged in.
  std::vector<Dict> pages() const {
    std::vector<Dict> out;
    const Object& root = resolve(*root_);
    if (!root.is_dict()) throw Error(errc::malformed_pdf, "catalog is not a dictionary");
    const Object* pages = find(root.dict(), "Pages");
    if (!pages) throw Error(errc::malformed_pdf, "catalog has no /Pages");
    std::set<int> visited;
    collect_pages(*pages, nullptr, out, visited, 0);
    return out;
  }

  ExtractedText extract_text() const {
    ExtractedText result;
    result.warnings = warnings_;
    const auto page_dicts = pages();
    if (page_dicts.empty()) throw Error(errc::malformed_pdf, "document has no pages");
    for (const auto& page : page_dicts) {
      result.pages.push_back(extract_page(page, result.warnings));
    }
    return result;
  }

private:
  void index_objects() {
    // Sequential scan for "<num> <gen> obj". Later definitions win, which
    // matches incremental-update semantics.
    std::size_t pos = 0;
    while ((pos = data_.find("obj", pos)) != std::string::npos) {
      const std::size_t kw = pos;
      pos += 3;
      if (pos < data_.size() && !is_pdf_whitespace(data_[pos]) && !is_pdf_delimiter(data_[pos])) {
        continue;
      }
      // walk back over "<num> <gen> "
      std::size_t p = kw;
      if (p == 0 || !is_pdf_whitespace(data_[p - 1])) continue;
      while (p > 0 && is_pdf_whitespace(data_[p - 1])) --p;
      std::size_t gen_end = p;
      while (p > 0 && std::isdigit(static_cast<unsigned char>(data_[p - 1]))) --p;
      if (p == gen_end || p == 0 || !is_pdf_whitespace(data_[p - 1])) continue;
      while (p > 0 && is_pdf_whitespace(data_[p - 1])) --p;
      std::size_t num_end = p;
      while (p > 0 && std::isdigit(static_cast<unsigned char>(data_[p - 1]))) --p;
      if (p == num_end) continue;
      if (p > 0 && !is_pdf_whitespace(data_[p - 1]) && !is_pdf_delimiter(data_[p - 1])) continue;
      const int num = std::stoi(data_.substr(p, num_end - p));
      offsets_[num] = kw + 3;
    }
    // Object streams contribute objects not defined directly.
    std::vector<int> nums;
    for (const auto& [num, off] : offsets_) nums.push_back(num);
    for (int num : nums) {
      const Object& o = get(num);
      if (!o.is_stream()) continue;
      const Object* type = find(o.stream().dict, "Type");
      if (type && type->is_name("ObjStm")) unpack_object_stream(o.stream());
      if (type && type->is_name("XRef")) xref_dicts_.push_back(o.stream().dict);
    }
  }

  Object parse_at(std::size_t offset) const {
    Lexer lex(data_, offset);
    lex.length_resolver = [this](Ref r) -> std::optional<std::size_t> {
      if (r.num <= 0) return std::nullopt;
      if (const auto it = offsets_.find(r.num); it != offsets_.end()) {
        Lexer sub(data_, it->second);
        Object o = sub.read();
        if (o.is_number() && o.number() >= 0) return static_cast<std::size_t>(o.number());
      }
      return std::nullopt;
    };
    return lex.read();
  }

  void unpack_object_stream(const Stream& s) {
    std::vector<std::string> w;
    const auto decoded = decode_stream(s, w);
    if (!decoded) {
      warnings_.emplace_back("object stream could not be decoded");
      return;
    }
    const Object* n = find(s.dict, "N");
    const Object* first = find(s.dict, "First");
    if (!n || !first) return;
    const std::string& body = *decoded;
    Lexer header(body);
    std::vector<std::pair<int, std::size_t>> entries;
    for (int i = 0; i < static_cast<int>(n->number()); ++i) {
      try {
        Object num = header.read();
        Object off = header.read();
        entries.emplace_back(static_cast<int>(num.number()),
                             static_cast<std::size_t>(first->number() + off.number()));
      } catch (const Error&) {
        break;
      }
    }
    for (const auto& [num, off] : entries) {
      if (offsets_.count(num) || objects_.count(num)) continue;
      try {
        Lexer lex(body, off);
        objects_[num] = lex.read();
      } catch (const Error&) {
        warnings_.push_back("unreadable object " + std::to_string(num) + " in object stream");
      }
    }
  }

  void read_trailers() {
    std::vector<Dict> trailers = xref_dicts_;
    std::size_t pos = 0;
    while ((pos = data_.find("trailer", pos)) != std::string::npos) {
      pos += 7;
      try {
        Lexer lex(data_, pos);
        Object o = lex.read();
        if (o.is_dict()) trailers.push_back(o.dict());
      } catch (const Error&) {
      }
    }
    for (const auto& t : trailers) {
      if (const Object* enc = find(t, "Encrypt"); enc && !enc->is_null()) encrypted_ = true;
      if (const Object* root = find(t, "Root"); root && root->is_ref()) root_ = *root;
    }
    if (!root_) {
      // Damaged trailer: fall back to the first catalog object.
      for (const auto& [num, off] : offsets_) {
        const Object& o = get(num);
        if (o.is_dict()) {
          const Object* type = find(o.dict(), "Type");
          if (type && type->is_name("Catalog")) {
            root_ = Object{Ref{num, 0}};
            warnings_.emplace_back("trailer missing; catalog located by scan");
            break;
          }
        }
      }
    }
  }

  void collect_pages(const Object& node_ref, const Dict* inherited_resources,
                     std::vector<Dict>& out, std::set<int>& visited, int depth) const {
    if (depth > 64) return;
    if (node_ref.is_ref()) {
      if (!visited.insert(node_ref.ref().num).second) return;
    }
    const Object& node = resolve(node_ref);
    if (!node.is_dict()) return;
    const Dict& d = node.dict();
    const Dict* resources = inherited_resources;
    if (const Object* r = find(d, "Resources")) {
      const Object& rr = resolve(*r);
      if (rr.is_dict()) resources = &rr.dict();
    }
    const Object* type = find(d, "Type");
    const Object* kids = find(d, "Kids");
    const bool is_tree = (type && type->is_name("Pages")) || (kids && !type);
    if (is_tree && kids) {
      const Object& k = resolve(*kids);
      if (!k.is_array()) return;
      for (const auto& kid : k.array()) collect_pages(kid, resources, out, visited, depth + 1);
      return;
    }
    Dict page = d;
    if (resources) page["Resources"] = Object{std::make_shared<Dict>(*resources)};
    out.push_back(std::move(page));
  }

  std::string content_of(const Dict& page, std::vector<std::string>& warnings) const {
    std::string out;
    const Object* contents = find(page, "Contents");
    if (!contents) return out;
    const Object& c = resolve(*contents);
    auto append_stream = [&](const Object& s) {
      const Object& rs = resolve(s);
      if (!rs.is_stream()) return;
      if (auto decoded = decode_stream(rs.stream(), warnings)) {
        out += *decoded;
        out.push_back('\n');
      }
    };
    if (c.is_array()) {
      for (const auto& e : c.array()) append_stream(e);
    } else {
      append_stream(c);
    }
    return out;
  }

  FontDecoder load_font(const Object& font_ref, std::vector<std::string>& warnings) const {
    FontDecoder font;
    const Object& f = resolve(font_ref);
    if (!f.is_dict()) return font;
    const Dict& fd = f.dict();
    const Object* subtype = find(fd, "Subtype");
    if (subtype && subtype->is_name("Type0")) font.code_bytes = 2;
    if (const Object* enc = find(fd, "Encoding")) {
      const Object& e = resolve(*enc);
      if (e.is_dict()) {
        if (const Object* diffs = find(e.dict(), "Differences"); diffs) {
          const Object& da = resolve(*diffs);
          if (da.is_array()) {
            int code = 0;
            for (const auto& item : da.array()) {
              if (item.is_number()) {
                code = static_cast<int>(item.number());
              } else if (item.is_name()) {
                if (char32_t cp = detail::glyph_name_to_unicode(item.name())) font.set_simple(code, cp);
                ++code;
              }
            }
          }
        }
      }
    }
    if (const Object* tu = find(fd, "ToUnicode")) {
      const Object& s = resolve(*tu);
      if (s.is_stream()) {
        if (auto cmap = decode_stream(s.stream(), warnings)) {
          const int declared = font.code_bytes;
          detail::parse_to_unicode(*cmap, font);
          if (subtype && subtype->is_name("Type0") && font.code_bytes < 2) font.code_bytes = declared;
        }
      }
    }
    return font;
  }

  struct TextState {
    double tm_e = 0, tm_f = 0;  // text matrix translation
    double line_e = 0, line_f = 0;
    double leading = 0;
    double font_size = 0;
    const FontDecoder* font = nullptr;
  };

  PageText extract_page(const Dict& page, std::vector<std::string>& warnings) const {
    PageText out;
    const Dict* resources = nullptr;
    if (const Object* r = find(page, "Resources")) {
      const Object& rr = resolve(*r);
      if (rr.is_dict()) resources = &rr.dict();
    }
    std::u32string text;
    std::size_t unmapped = 0;
    replay(content_of(page, warnings), resources, text, out, unmapped, warnings, 0);
    if (unmapped > 0) {
      warnings.push_back(std::to_string(unmapped) + " glyph(s) without Unicode mapping");
    }
    out.text = utf8::encode(text);
    return out;
  }

  void replay(const std::string& content, const Dict* resources, std::u32string& text,
              PageText& page, std::size_t& unmapped, std::vector<std::string>& warnings,
              int depth) const {
    if (depth > 8) return;
    std::map<std::string, FontDecoder, std::less<>> fonts;
    const Dict* font_dict = nullptr;
    const Dict* xobjects = nullptr;
    if (resources) {
      if (const Object* f = find(*resources, "Font")) {
        const Object& ff = resolve(*f);
        if (ff.is_dict()) font_dict = &ff.dict();
      }
      if (const Object* x = find(*resources, "XObject")) {
        const Object& xx = resolve(*x);
        if (xx.is_dict()) xobjects = &xx.dict();
      }
    }
    static const FontDecoder fallback_font;
    TextState ts;
    ts.font = &fallback_font;
    bool have_line = false;
    double last_y = 0;
    bool moved = false;

    auto emit = [&](const String& s) {
      const std::u32string decoded = ts.font->decode(s.bytes, unmapped);
      if (decoded.empty()) return;
      if (have_line) {
        const double dy = last_y - ts.tm_f;
        if (std::fabs(dy) > 0.5) {
          int breaks = 1;
          if (dy > 0) {
            const double lead = ts.leading > 0 ? ts.leading
                                : ts.font_size > 0 ? ts.font_size * 1.2
                                                   : dy;
            breaks = std::clamp(static_cast<int>(std::lround(dy / lead)), 1, 2);
          }
          text.append(static_cast<std::size_t>(breaks), U'\n');
        } else if (moved && !text.empty() && text.back() != U' ' && decoded.front() != U' ') {
          text.push_back(U' ');
        }
      } else if (!text.empty() && text.back() != U'\n') {
        text.push_back(U'\n');
      }
      text += decoded;
      page.has_text = true;
      have_line = true;
      last_y = ts.tm_f;
      moved = false;
    };
    auto next_line = [&]() {
      ts.line_f -= ts.leading;
      ts.tm_e = ts.line_e;
      ts.tm_f = ts.line_f;
      moved = true;
    };

    Lexer lex(content);
    std::vector<Object> ops;
    while (!lex.at_end()) {
      Object o;
      try {
        o = lex.read();
      } catch (const Error& e) {
        warnings.push_back(std::string("content stream: ") + e.what());
        break;
      }
      if (!o.is_keyword()) {
        ops.push_back(std::move(o));
        continue;
      }
      const std::string& op = std::get<Keyword>(o.v).value;
      auto num = [&](std::size_t i) { return i < ops.size() ? ops[i].number() : 0.0; };
      if (op == "BT") {
        ts.tm_e = ts.tm_f = ts.line_e = ts.line_f = 0;
      } else if (op == "Tf" && ops.size() >= 2) {
        ts.font_size = ops[1].number();
        if (ops[0].is_name()) {
          const std::string& key = ops[0].name();
          auto it = fonts.find(key);
          if (it == fonts.end()) {
            FontDecoder fdec;
            if (font_dict) {
              if (const Object* fr = find(*font_dict, key)) fdec = load_font(*fr, warnings);
            }
            it = fonts.emplace(key, std::move(fdec)).first;
          }
          ts.font = &it->second;
        }
      } else if (op == "TL") {
        ts.leading = num(0);
      } else if (op == "Td" || op == "TD") {
        if (op == "TD") ts.leading = -num(1);
        ts.line_e += num(0);
        ts.line_f += num(1);
        ts.tm_e = ts.line_e;
        ts.tm_f = ts.line_f;
        moved = true;
      } else if (op == "Tm" && ops.size() >= 6) {
        ts.line_e = ts.tm_e = num(4);
        ts.line_f = ts.tm_f = num(5);
        moved = true;
      } else if (op == "T*") {
        next_line();
      } else if (op == "Tj" && !ops.empty() && ops.back().is_string()) {
        emit(ops.back().string());
      } else if (op == "'" && !ops.empty() && ops.back().is_string()) {
        next_line();
        emit(ops.back().string());
      } else if (op == "\"" && !ops.empty() && ops.back().is_string()) {
        next_line();
        emit(ops.back().string());
      } else if (op == "TJ" && !ops.empty() && ops.back().is_array()) {
        bool first = true;
        for (const auto& item : ops.back().array()) {
          if (item.is_string()) {
            if (!first) moved = false;
            emit(item.string());
            first = false;
          } else if (item.is_number() && item.number() < -250 && !text.empty() &&
                     text.back() != U' ') {
            text.push_back(U' ');
          }
        }
      } else if (op == "Do" && !ops.empty() && ops.back().is_name() && xobjects) {
        if (const Object* xr = find(*xobjects, ops.back().name())) {
          const Object& x = resolve(*xr);
          if (x.is_stream()) {
            const Object* st = find(x.stream().dict, "Subtype");
            if (st && st->is_name("Image")) {
              page.has_images = true;
            } else if (st && st->is_name("Form")) {
              if (auto body = decode_stream(x.stream(), warnings)) {
                const Dict* form_res = resources;
                if (const Object* fr = find(x.stream().dict, "Resources")) {
                  const Object& rr = resolve(*fr);
                  if (rr.is_dict()) form_res = &rr.dict();
                }
                replay(*body, form_res, text, page, unmapped, warnings, depth + 1);
                have_line = false;
              }
            }
          }
        }
      } else if (op == "BI") {
        // Inline image: skip raw data up to "EI".
        const std::string_view data = lex.data();
        std::size_t id = data.find("ID", lex.pos());
        std::size_t ei = id == std::string_view::npos ? id : data.find("EI", id + 2);
        while (ei != std::string_view::npos &&
               !(is_pdf_whitespace(data[ei - 1]) &&
                 (ei + 2 >= data.size() || is_pdf_whitespace(data[ei + 2])))) {
          ei = data.find("EI", ei + 2);
        }
        page.has_images = true;
        lex.seek(ei == std::string_view::npos ? data.size() : ei + 2);
      }
      ops.clear();
    }
  }

  std::string data_;
  std::map<int, std::size_t> offsets_;
  mutable std::map<int, Object> objects_;
  std::vector<Dict> xref_dicts_;
  std::optional<Object> root_;
  bool encrypted_ = false;
  std::vector<std::string> warnings_;
};

}  // namespace cmdb::pdf
