#pragma once

// Minimal PDF object model and lexer. Covers what text extraction needs:
// the COS object syntax, indirect objects, streams and the common filters.

#include <zlib.h>

#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cmdb/error.hpp"

namespace cmdb::pdf {

struct Object;
using Array = std::vector<Object>;
using Dict = std::map<std::string, Object, std::less<>>;

struct Name {
  std::string value;
};
struct String {
  std::string bytes;
  bool hex = false;
};
struct Ref {
  int num = 0;
  int gen = 0;
};
/// Bare word in a content stream (an operator such as `Tj`).
struct Keyword {
  std::string value;
};
struct Stream;

struct Object {
  using Value = std::variant<std::monostate, bool, double, Name, String, Ref, Keyword,
                             std::shared_ptr<Array>, std::shared_ptr<Dict>,
                             std::shared_ptr<Stream>>;
  Value v;

  bool is_null() const { return std::holds_alternative<std::monostate>(v); }
  bool is_number() const { return std::holds_alternative<double>(v); }
  bool is_name() const { return std::holds_alternative<Name>(v); }
  bool is_name(std::string_view n) const {
    return is_name() && std::get<Name>(v).value == n;
  }
  bool is_string() const { return std::holds_alternative<String>(v); }
  bool is_ref() const { return std::holds_alternative<Ref>(v); }
  bool is_keyword() const { return std::holds_alternative<Keyword>(v); }
  bool is_keyword(std::string_view k) const {
    return is_keyword() && std::get<Keyword>(v).value == k;
  }
  bool is_array() const { return std::holds_alternative<std::shared_ptr<Array>>(v); }
  bool is_dict() const { return std::holds_alternative<std::shared_ptr<Dict>>(v); }
  bool is_stream() const { return std::holds_alternative<std::shared_ptr<Stream>>(v); }

  double number() const { return is_number() ? std::get<double>(v) : 0.0; }
  const std::string& name() const { return std::get<Name>(v).value; }
  const String& string() const { return std::get<String>(v); }
  Ref ref() const { return std::get<Ref>(v); }
  const Array& array() const { return *std::get<std::shared_ptr<Array>>(v); }
  const Dict& dict() const { return *std::get<std::shared_ptr<Dict>>(v); }
  const Stream& stream() const { return *std::get<std::shared_ptr<Stream>>(v); }
};

struct Stream {
  Dict dict;
  std::string raw;  // still encoded
};

inline const Object* find(const Dict& d, std::string_view key) {
  const auto it = d.find(key);
  return it == d.end() ? nullptr : &it->second;
}

inline bool is_pdf_whitespace(char c) {
  return c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '\f' || c == '\0';
}

inline bool is_pdf_delimiter(char c) {
  switch (c) {
    case '(': case ')': case '<': case '>': case '[': case ']':
    case '{': case '}': case '/': case '%':
      return true;
    default:
      return false;
  }
}

/// Tokenizing parser over a byte buffer. The same class reads file-level
/// syntax and content streams; in content streams bare words come back as
/// Keyword objects.
class Lexer {
public:
  explicit Lexer(std::string_view data, std::size_t pos = 0) : data_(data), pos_(pos) {}

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  bool at_end() {
    skip_ws();
    return pos_ >= data_.size();
  }
  std::string_view data() const { return data_; }

  void skip_ws() {
    while (pos_ < data_.size()) {
      const char c = data_[pos_];
      if (is_pdf_whitespace(c)) {
        ++pos_;
      } else if (c == '%') {
        while (pos_ < data_.size() && data_[pos_] != '\n' && data_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  /// Reads one object. Integers followed by `<gen> R` become references.
  Object read() {
    skip_ws();
    if (pos_ >= data_.size()) throw Error(errc::malformed_pdf, "unexpected end of data");
    const char c = data_[pos_];
    if (c == '/') return Object{read_name()};
    if (c == '(') return Object{read_literal_string()};
    if (c == '<') {
      if (pos_ + 1 < data_.size() && data_[pos_ + 1] == '<') return read_dict_or_stream();
      return Object{read_hex_string()};
    }
    if (c == '[') {
      ++pos_;
      auto arr = std::make_shared<Array>();
      for (;;) {
        skip_ws();
        if (pos_ >= data_.size()) throw Error(errc::malformed_pdf, "unterminated array");
        if (data_[pos_] == ']') {
          ++pos_;
          break;
        }
        arr->push_back(read());
      }
      return Object{arr};
    }
    if (c == ']' || c == '>' || c == ')' || c == '{' || c == '}') {
      ++pos_;
      return Object{Keyword{std::string(1, c)}};
    }
    if (c == '+' || c == '-' || c == '.' || std::isdigit(static_cast<unsigned char>(c))) {
      return read_number_or_ref();
    }
    std::string word = read_word();
    if (word == "true") return Object{true};
    if (word == "false") return Object{false};
    if (word == "null") return Object{};
    return Object{Keyword{std::move(word)}};
  }

  std::string read_word() {
    const std::size_t start = pos_;
    while (pos_ < data_.size() && !is_pdf_whitespace(data_[pos_]) &&
           !is_pdf_delimiter(data_[pos_])) {
      ++pos_;
    }
    if (start == pos_) {
      ++pos_;
      return std::string(data_.substr(start, 1));
    }
    return std::string(data_.substr(start, pos_ - start));
  }

  /// When set, `<<...>> stream` payloads resolve /Length through this hook.
  std::function<std::optional<std::size_t>(Ref)> length_resolver;

private:
  Name read_name() {
    ++pos_;  // '/'
    std::string out;
    while (pos_ < data_.size() && !is_pdf_whitespace(data_[pos_]) &&
           !is_pdf_delimiter(data_[pos_])) {
      char ch = data_[pos_++];
      if (ch == '#' && pos_ + 1 < data_.size() &&
          std::isxdigit(static_cast<unsigned char>(data_[pos_])) &&
          std::isxdigit(static_cast<unsigned char>(data_[pos_ + 1]))) {
        ch = static_cast<char>(std::stoi(std::string(data_.substr(pos_, 2)), nullptr, 16));
        pos_ += 2;
      }
      out.push_back(ch);
    }
    return Name{std::move(out)};
  }

  String read_literal_string() {
    ++pos_;  // '('
    std::string out;
    int depth = 1;
    while (pos_ < data_.size()) {
      char ch = data_[pos_++];
      if (ch == '\\') {
        if (pos_ >= data_.size()) break;
        const char e = data_[pos_++];
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 'r': out.push_back('\r'); break;
          case 't': out.push_back('\t'); break;
          case 'b': out.push_back('\b'); break;
          case 'f': out.push_back('\f'); break;
          case '\r':
            if (pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
            break;
          case '\n':
            break;
          default:
            if (e >= '0' && e <= '7') {
              int val = e - '0';
              for (int k = 0; k < 2 && pos_ < data_.size() && data_[pos_] >= '0' &&
                              data_[pos_] <= '7';
                   ++k) {
                val = val * 8 + (data_[pos_++] - '0');
              }
              out.push_back(static_cast<char>(val & 0xFF));
            } else {
              out.push_back(e);  // \\ \( \) and unknown escapes
            }
        }
        continue;
      }
      if (ch == '(') {
        ++depth;
      } else if (ch == ')') {
        if (--depth == 0) return String{std::move(out), false};
      }
      out.push_back(ch);
    }
    throw Error(errc::malformed_pdf, "unterminated literal string");
  }

  String read_hex_string() {
    ++pos_;  // '<'
    std::string digits;
    while (pos_ < data_.size() && data_[pos_] != '>') {
      const char ch = data_[pos_++];
      if (std::isxdigit(static_cast<unsigned char>(ch))) digits.push_back(ch);
    }
    if (pos_ >= data_.size()) throw Error(errc::malformed_pdf, "unterminated hex string");
    ++pos_;
    if (digits.size() % 2 != 0) digits.push_back('0');
    std::string out;
    for (std::size_t i = 0; i < digits.size(); i += 2) {
      out.push_back(static_cast<char>(std::stoi(digits.substr(i, 2), nullptr, 16)));
    }
    return String{std::move(out), true};
  }

  Object read_number_or_ref() {
    std::string tok = read_word();
    char* end = nullptr;
    const double value = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str()) return Object{Keyword{tok}};
    const bool integral = tok.find('.') == std::string::npos;
    if (integral && tok[0] != '-' && tok[0] != '+') {
      // lookahead for "<gen> R"
      const std::size_t save = pos_;
      skip_ws();
      const std::size_t gen_start = pos_;
      while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) ++pos_;
      if (pos_ > gen_start) {
        const int gen = std::stoi(std::string(data_.substr(gen_start, pos_ - gen_start)));
        skip_ws();
        if (pos_ < data_.size() && data_[pos_] == 'R' &&
            (pos_ + 1 >= data_.size() || is_pdf_whitespace(data_[pos_ + 1]) ||
             is_pdf_delimiter(data_[pos_ + 1]))) {
          ++pos_;
          return Object{Ref{static_cast<int>(value), gen}};
        }
      }
      pos_ = save;
    }
    return Object{value};
  }

  Object read_dict_or_stream() {
    pos_ += 2;  // "<<"
    auto dict = std::make_shared<Dict>();
    for (;;) {
      skip_ws();
      if (pos_ + 1 >= data_.size()) throw Error(errc::malformed_pdf, "unterminated dictionary");
      if (data_[pos_] == '>' && data_[pos_ + 1] == '>') {
        pos_ += 2;
        break;
      }
      Object key = read();
      if (!key.is_name()) {
        // tolerate junk keys by skipping them
        continue;
      }
      skip_ws();
      if (pos_ + 1 < data_.size() && data_[pos_] == '>' && data_[pos_ + 1] == '>') {
        (*dict)[key.name()] = Object{};
        continue;
      }
      (*dict)[key.name()] = read();
    }
    // stream?
    const std::size_t after = pos_;
    skip_ws();
    if (data_.substr(pos_, 6) == "stream") {
      pos_ += 6;
      if (pos_ < data_.size() && data_[pos_] == '\r') ++pos_;
      if (pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
      const std::size_t data_start = pos_;
      std::optional<std::size_t> length;
      if (const Object* len = find(*dict, "Length")) {
        if (len->is_number() && len->number() >= 0) {
          length = static_cast<std::size_t>(len->number());
        } else if (len->is_ref() && length_resolver) {
          length = length_resolver(len->ref());
        }
      }
      std::size_t data_end = std::string_view::npos;
      if (length && data_start + *length <= data_.size()) {
        std::size_t probe = data_start + *length;
        while (probe < data_.size() && is_pdf_whitespace(data_[probe])) ++probe;
        if (data_.substr(probe, 9) == "endstream") {
          data_end = data_start + *length;
          pos_ = probe + 9;
        }
      }
      if (data_end == std::string_view::npos) {
        const std::size_t es = data_.find("endstream", data_start);
        if (es == std::string_view::npos) throw Error(errc::malformed_pdf, "missing endstream");
        data_end = es;
        // strip the EOL that precedes the keyword
        if (data_end > data_start && data_[data_end - 1] == '\n') --data_end;
        if (data_end > data_start && data_[data_end - 1] == '\r') --data_end;
        pos_ = es + 9;
      }
      auto stream = std::make_shared<Stream>();
      stream->dict = std::move(*dict);
      stream->raw = std::string(data_.substr(data_start, data_end - data_start));
      return Object{stream};
    }
    pos_ = after;
    return Object{dict};
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------- filters

inline std::string inflate(std::string_view in, bool& truncated) {
  truncated = false;
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error(errc::malformed_pdf, "zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  char buf[16384];
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    rc = ::inflate(&zs, Z_NO_FLUSH);
    out.append(buf, sizeof(buf) - zs.avail_out);
    if (rc == Z_STREAM_END) break;
    if (rc != Z_OK) {
      truncated = true;
      break;
    }
  } while (zs.avail_in > 0 || zs.avail_out == 0);
  if (rc != Z_STREAM_END) truncated = true;
  inflateEnd(&zs);
  return out;
}

inline std::string ascii_hex_decode(std::string_view in) {
  std::string digits;
  for (char c : in) {
    if (c == '>') break;
    if (std::isxdigit(static_cast<unsigned char>(c))) digits.push_back(c);
  }
  if (digits.size() % 2) digits.push_back('0');
  std::string out;
  for (std::size_t i = 0; i < digits.size(); i += 2) {
    out.push_back(static_cast<char>(std::stoi(digits.substr(i, 2), nullptr, 16)));
  }
  return out;
}

inline std::string ascii85_decode(std::string_view in) {
  std::string out;
  std::uint32_t tuple = 0;
  int count = 0;
  std::size_t i = 0;
  if (in.substr(0, 2) == "<~") i = 2;
  for (; i < in.size(); ++i) {
    const char c = in[i];
    if (c == '~') break;
    if (is_pdf_whitespace(c)) continue;
    if (c == 'z' && count == 0) {
      out.append(4, '\0');
      continue;
    }
    if (c < '!' || c > 'u') throw Error(errc::malformed_pdf, "bad ASCII85 data");
    tuple = tuple * 85 + static_cast<std::uint32_t>(c - '!');
    if (++count == 5) {
      for (int s = 3; s >= 0; --s) out.push_back(static_cast<char>((tuple >> (8 * s)) & 0xFF));
      tuple = 0;
      count = 0;
    }
  }
  if (count > 1) {
    for (int k = count; k < 5; ++k) tuple = tuple * 85 + 84;
    for (int s = 3; s >= 5 - count; --s) out.push_back(static_cast<char>((tuple >> (8 * s)) & 0xFF));
  }
  return out;
}

/// Filter names we do not decode because they only ever carry image data.
inline bool is_image_filter(std::string_view f) {
  return f == "DCTDecode" || f == "JPXDecode" || f == "CCITTFaxDecode" || f == "JBIG2Decode" ||
         f == "RunLengthDecode";
}

/// Applies the stream's /Filter chain. Returns nullopt (and appends a
/// warning) when a filter is unsupported.
inline std::optional<std::string> decode_stream(const Stream& s, std::vector<std::string>& warnings) {
  std::vector<std::string> filters;
  if (const Object* f = find(s.dict, "Filter")) {
    if (f->is_name()) {
      filters.push_back(f->name());
    } else if (f->is_array()) {
      for (const auto& e : f->array()) {
        if (e.is_name()) filters.push_back(e.name());
      }
    }
  }
  std::string data = s.raw;
  for (const auto& name : filters) {
    if (name == "FlateDecode" || name == "Fl") {
      bool truncated = false;
      data = inflate(data, truncated);
      if (truncated) warnings.emplace_back("flate stream truncated or corrupt; kept partial data");
      if (const Object* parms = find(s.dict, "DecodeParms")) {
        if (parms->is_dict()) {
          if (const Object* pred = find(parms->dict(), "Predictor");
              pred && pred->number() > 1) {
            warnings.emplace_back("stream predictor not supported; stream skipped");
            return std::nullopt;
          }
        }
      }
    } else if (name == "ASCIIHexDecode" || name == "AHx") {
      data = ascii_hex_decode(data);
    } else if (name == "ASCII85Decode" || name == "A85") {
      data = ascii85_decode(data);
    } else {
      if (!is_image_filter(name)) warnings.push_back("unsupported stream filter " + name);
      return std::nullopt;
    }
  }
  return data;
}

}  // namespace cmdb::pdf
