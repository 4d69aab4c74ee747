#pragma once

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/ingest/candidates.hpp"
#include "cmdb/ingest/pdf_reader.hpp"
#include "cmdb/util/sha256.hpp"
#include "cmdb/util/utf8.hpp"
#include "json.hpp"

namespace cmdb::ingest {

inline constexpr std::size_t kDefaultHeadLimit = 8000;
inline constexpr std::string_view kPageBreak = "\n\f\n";

struct RawDocument {
  std::string doc_id;
  std::filesystem::path source_path;
  std::string bytes;
  std::string sha256;

  static RawDocument from_bytes(std::string doc_id, std::string bytes,
                                std::filesystem::path source = {}) {
    RawDocument d;
    d.doc_id = std::move(doc_id);
    d.source_path = std::move(source);
    d.sha256 = sha256_hex(bytes);
    d.bytes = std::move(bytes);
    return d;
  }
};

/// Reads a file; doc_id defaults to the file stem.
inline RawDocument load_raw_document(const std::filesystem::path& path, std::string doc_id = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::io_error, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (doc_id.empty()) doc_id = path.stem().string();
  return RawDocument::from_bytes(std::move(doc_id), buf.str(), path);
}

struct SerializedDoc {
  std::string doc_id;
  std::string full_text;
  std::size_t char_count = 0;
  std::vector<CandidateBlock> equation_candidates;
  std::vector<std::string> parse_warnings;
  friend bool operator==(const SerializedDoc&, const SerializedDoc&) = default;
};

struct HeadSegment {
  std::string doc_id;
  std::string text;
  std::size_t limit_chars = kDefaultHeadLimit;
  bool truncated = false;
};

/// Whitespace normalization for one page of extracted text: horizontal
/// whitespace collapsed to single spaces, lines trimmed, at most one blank
/// line in a row, control characters dropped.
inline std::string normalize_page_text(std::string_view page) {
  const std::u32string in = utf8::decode(page);
  std::u32string out;
  out.reserve(in.size());
  bool pending_space = false;
  int newlines = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    char32_t c = in[i];
    if (c == U'\r') {
      if (i + 1 < in.size() && in[i + 1] == U'\n') continue;
      c = U'\n';
    }
    if (c == U'\n') {
      pending_space = false;
      ++newlines;
      continue;
    }
    if (utf8::is_space(c) || c == U'\f') {
      pending_space = true;
      continue;
    }
    if (c < 0x20 || c == 0x7F) continue;
    if (!out.empty()) {
      if (newlines > 0) {
        out.append(newlines >= 2 ? 2 : 1, U'\n');
      } else if (pending_space) {
        out.push_back(U' ');
      }
    }
    newlines = 0;
    pending_space = false;
    out.push_back(c);
  }
  return utf8::encode(out);
}

/// Serializes a PDF into a normalized text stream. Pages are joined with
/// "\n\f\n" markers; equation candidates are segmented from the result.
inline SerializedDoc parse_pdf(const RawDocument& raw) {
  const pdf::Document doc(raw.bytes);
  pdf::ExtractedText extracted = doc.extract_text();
  bool any_text = false;
  bool any_images = false;
  for (const auto& p : extracted.pages) {
    any_text = any_text || p.has_text;
    any_images = any_images || p.has_images;
  }
  if (!any_text && any_images) {
    throw Error(errc::no_text_layer,
                raw.doc_id + ": document has images but no extractable text layer");
  }
  SerializedDoc out;
  out.doc_id = raw.doc_id;
  if (any_text) {
    for (std::size_t i = 0; i < extracted.pages.size(); ++i) {
      if (i > 0) out.full_text += kPageBreak;
      out.full_text += normalize_page_text(extracted.pages[i].text);
    }
  }
  out.char_count = utf8::length(out.full_text);
  out.parse_warnings = std::move(extracted.warnings);
  Segmentation seg = segment_candidates(out.full_text, out.doc_id);
  out.equation_candidates = std::move(seg.blocks);
  for (auto& w : seg.warnings) out.parse_warnings.push_back(std::move(w));
  return out;
}

/// Re-runs segmentation over a document's text.
inline std::vector<CandidateBlock> segment_equation_candidates(SerializedDoc& doc) {
  Segmentation seg = segment_candidates(doc.full_text, doc.doc_id);
  for (auto& w : seg.warnings) {
    if (std::find(doc.parse_warnings.begin(), doc.parse_warnings.end(), w) ==
        doc.parse_warnings.end()) {
      doc.parse_warnings.push_back(w);
    }
  }
  return std::move(seg.blocks);
}

/// Longest prefix of at most `limit_chars` scalar values that ends on a
/// whitespace boundary. A prefix without any whitespace is hard-cut at the
/// limit.
inline HeadSegment truncate_head(const SerializedDoc& doc, std::size_t limit_chars = kDefaultHeadLimit) {
  if (limit_chars == 0) throw std::invalid_argument("truncate_head: limit_chars must be > 0");
  HeadSegment head;
  head.doc_id = doc.doc_id;
  head.limit_chars = limit_chars;
  const std::u32string cps = utf8::decode(doc.full_text);
  if (cps.size() <= limit_chars) {
    head.text = doc.full_text;
    head.truncated = false;
    return head;
  }
  head.truncated = true;
  std::size_t cut = limit_chars;
  while (cut > 0 && !utf8::is_space(cps[cut])) --cut;
  if (cut == 0) cut = limit_chars;
  head.text = utf8::encode(std::u32string_view(cps).substr(0, cut));
  return head;
}

// ------------------------------------------------------------------ JSON

inline nlohmann::json to_json(const CandidateBlock& b) {
  return {{"block_id", b.block_id},
          {"span", nlohmann::json::array({b.span.start, b.span.end})},
          {"raw_text", b.raw_text},
          {"kind", to_string(b.kind)}};
}

inline nlohmann::json to_json(const SerializedDoc& d) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& b : d.equation_candidates) cands.push_back(to_json(b));
  return {{"doc_id", d.doc_id},
          {"full_text", d.full_text},
          {"char_count", d.char_count},
          {"equation_candidates", std::move(cands)},
          {"parse_warnings", d.parse_warnings}};
}

inline SerializedDoc serialized_doc_from_json(const nlohmann::json& j) {
  SerializedDoc d;
  d.doc_id = j.at("doc_id").get<std::string>();
  d.full_text = j.at("full_text").get<std::string>();
  d.char_count = j.at("char_count").get<std::size_t>();
  for (const auto& c : j.at("equation_candidates")) {
    CandidateBlock b;
    b.block_id = c.at("block_id").get<std::string>();
    b.span.start = c.at("span").at(0).get<std::size_t>();
    b.span.end = c.at("span").at(1).get<std::size_t>();
    b.raw_text = c.at("raw_text").get<std::string>();
    if (!block_kind_from_string(c.at("kind").get<std::string>(), b.kind)) {
      throw Error(errc::bad_config, "unknown candidate kind in " + d.doc_id);
    }
    d.equation_candidates.push_back(std::move(b));
  }
  d.parse_warnings = j.value("parse_warnings", std::vector<std::string>{});
  return d;
}

inline std::filesystem::path serialized_path(const std::filesystem::path& dir, std::string_view doc_id) {
  return dir / (std::string(doc_id) + ".serialized.json");
}

inline void write_serialized(const std::filesystem::path& dir, const SerializedDoc& d) {
  std::filesystem::create_directories(dir);
  std::ofstream out(serialized_path(dir, d.doc_id), std::ios::binary | std::ios::trunc);
  if (!out) throw Error(errc::io_error, "cannot write serialized doc for " + d.doc_id);
  out << to_json(d).dump(2) << '\n';
}

inline SerializedDoc read_serialized(const std::filesystem::path& dir, std::string_view doc_id) {
  std::ifstream in(serialized_path(dir, doc_id), std::ios::binary);
  if (!in) throw Error(errc::io_error, "missing serialized doc for " + std::string(doc_id));
  return serialized_doc_from_json(nlohmann::json::parse(in));
}

}  // namespace cmdb::ingest
