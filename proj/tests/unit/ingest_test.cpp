#include <gtest/gtest.h>

#include <random>
#include <string>

#include "cmdb/ingest/document.hpp"
#include "support/pdf_writer.hpp"

using namespace cmdb;
using namespace cmdb::ingest;
using cmdb::testing::PdfPage;
using cmdb::testing::PdfWriterOptions;
using cmdb::testing::write_pdf;

namespace {

SerializedDoc parse_lines(const std::vector<std::string>& lines, PdfWriterOptions opt = {}) {
  const auto raw = RawDocument::from_bytes("doc", write_pdf({PdfPage{lines}}, opt));
  return parse_pdf(raw);
}

SerializedDoc text_doc(std::string text) {
  SerializedDoc d;
  d.doc_id = "t";
  d.full_text = std::move(text);
  d.char_count = utf8::length(d.full_text);
  d.equation_candidates = segment_equation_candidates(d);
  return d;
}

}  // namespace

TEST(ParsePdf, HelloSigmaHasOneInlineCluster) {
  const auto doc = parse_lines({"Hello σ = Eε"});
  EXPECT_NE(doc.full_text.find("σ = Eε"), std::string::npos) << doc.full_text;
  ASSERT_EQ(doc.equation_candidates.size(), 1u);
  EXPECT_EQ(doc.equation_candidates[0].kind, BlockKind::inline_math_cluster);
  EXPECT_EQ(doc.equation_candidates[0].raw_text, "σ = Eε");
  EXPECT_EQ(doc.char_count, 12u);
}

TEST(ParsePdf, EmptyPageGivesEmptyText) {
  const auto raw = RawDocument::from_bytes("empty", write_pdf({PdfPage{}}));
  const auto doc = parse_pdf(raw);
  EXPECT_EQ(doc.full_text, "");
  EXPECT_EQ(doc.char_count, 0u);
  EXPECT_TRUE(doc.equation_candidates.empty());
}

TEST(ParsePdf, ImageOnlyIsNoTextLayer) {
  PdfPage page;
  page.image_only = true;
  const auto raw = RawDocument::from_bytes("scan", write_pdf({page}));
  try {
    parse_pdf(raw);
    FAIL() << "expected NoTextLayer";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::no_text_layer);
  }
}

TEST(ParsePdf, EncryptedIsRejected) {
  PdfWriterOptions opt;
  opt.encrypted_marker = true;
  const auto raw = RawDocument::from_bytes("enc", write_pdf({PdfPage{{"secret"}}}, opt));
  try {
    parse_pdf(raw);
    FAIL() << "expected EncryptedPdf";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::encrypted_pdf);
  }
}

TEST(ParsePdf, GarbageIsMalformed) {
  const auto raw = RawDocument::from_bytes("junk", "this is plain text, not a pdf");
  try {
    parse_pdf(raw);
    FAIL() << "expected MalformedPdf";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::malformed_pdf);
  }
}

TEST(ParsePdf, CompressedMultiPageWithPageBreakMarkers) {
  PdfWriterOptions opt;
  opt.compress = true;
  const auto raw = RawDocument::from_bytes(
      "multi", write_pdf({PdfPage{{"First   page", "", "line two"}}, PdfPage{{"Second page"}}}, opt));
  const auto doc = parse_pdf(raw);
  EXPECT_EQ(doc.full_text, "First page\n\nline two\n\f\nSecond page");
}

TEST(ParsePdf, LatexSourceIsRetainedVerbatim) {
  const auto doc = parse_lines({"The law reads", "\\[ \\sigma_c = E (\\epsilon) \\]", "done."});
  EXPECT_NE(doc.full_text.find("\\[ \\sigma_c = E (\\epsilon) \\]"), std::string::npos);
  ASSERT_EQ(doc.equation_candidates.size(), 1u);
  EXPECT_EQ(doc.equation_candidates[0].kind, BlockKind::display_math);
}

TEST(ParsePdf, IdempotentOnSameBytes) {
  PdfWriterOptions opt;
  opt.compress = true;
  const auto bytes = write_pdf({PdfPage{{"A $x$ and $$y = 2$$ text", "η = 3 Pa·s"}}}, opt);
  const auto a = parse_pdf(RawDocument::from_bytes("d", bytes));
  const auto b = parse_pdf(RawDocument::from_bytes("d", bytes));
  EXPECT_EQ(a, b);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(TruncateHead, LongDocCutsAtWhitespaceBelowLimit) {
  std::string text;
  for (int i = 0; text.size() < 20000; ++i) text += "word" + std::to_string(i) + " ";
  text.resize(20000);
  const auto doc = text_doc(text);
  const auto head = truncate_head(doc, 8000);
  EXPECT_TRUE(head.truncated);
  EXPECT_LE(utf8::length(head.text), 8000u);
  // the character right after the head is whitespace
  EXPECT_TRUE(utf8::is_space(utf8::decode(text)[utf8::length(head.text)]));
}

TEST(TruncateHead, ShortDocUnchanged) {
  const auto doc = text_doc(std::string(3000, 'a'));
  const auto head = truncate_head(doc, 8000);
  EXPECT_FALSE(head.truncated);
  EXPECT_EQ(head.text, doc.full_text);
}

TEST(TruncateHead, MidTokenCutMatchesBackwardScanOracle) {
  // char 8000 lands inside "tokenXYZ..."
  std::string text(7989, 'a');
  text[7000] = ' ';
  text += " tokenXYZXYZXYZ tail";
  const auto doc = text_doc(text);
  const auto cps = utf8::decode(text);
  std::size_t oracle = 8000;
  while (!utf8::is_space(cps[oracle])) --oracle;  // independent backward scan
  const auto head = truncate_head(doc, 8000);
  EXPECT_EQ(utf8::length(head.text), oracle);
  EXPECT_EQ(oracle, 7989u);
}

TEST(TruncateHead, CountsScalarValuesNotBytes) {
  std::string text;
  for (int i = 0; i < 30; ++i) text += "σσσ ";
  const auto doc = text_doc(text);
  const auto head = truncate_head(doc, 10);
  EXPECT_EQ(head.text, "σσσ σσσ");
}

TEST(TruncateHead, PropertiesOverRandomDocs) {
  std::mt19937 rng(7);
  const std::u32string alphabet = U"ab σε\n\\{}$=";
  for (int trial = 0; trial < 300; ++trial) {
    std::u32string a;
    const int len = std::uniform_int_distribution<int>(0, 200)(rng);
    for (int i = 0; i < len; ++i) a.push_back(alphabet[rng() % alphabet.size()]);
    std::u32string b = a;
    const int extra = std::uniform_int_distribution<int>(0, 100)(rng);
    for (int i = 0; i < extra; ++i) b.push_back(alphabet[rng() % alphabet.size()]);
    const std::size_t limit = std::uniform_int_distribution<std::size_t>(1, 220)(rng);
    const auto da = text_doc(utf8::encode(a));
    const auto db = text_doc(utf8::encode(b));
    const auto ha = truncate_head(da, limit);
    const auto hb = truncate_head(db, limit);
    // bound
    ASSERT_LE(utf8::length(ha.text), limit);
    ASSERT_EQ(ha.truncated, a.size() > limit);
    // monotonicity
    const bool prefix = hb.text.compare(0, ha.text.size(), ha.text) == 0;
    ASSERT_TRUE(prefix || ha.text == da.full_text);
  }
}

TEST(Segment, TwoBracketDisplayGroupsInOrder) {
  const auto doc = text_doc("first \\[ a = b \\] then \\[ c = d \\] end");
  ASSERT_EQ(doc.equation_candidates.size(), 2u);
  EXPECT_EQ(doc.equation_candidates[0].raw_text, "\\[ a = b \\]");
  EXPECT_EQ(doc.equation_candidates[1].raw_text, "\\[ c = d \\]");
  for (const auto& b : doc.equation_candidates) EXPECT_EQ(b.kind, BlockKind::display_math);
}

TEST(Segment, NoMathNoBlocks) {
  EXPECT_TRUE(text_doc("Plain prose about sandstone weathering.").equation_candidates.empty());
}

TEST(Segment, AlignedEnvironmentIsOneBlock) {
  const auto doc = text_doc(
      "text\n\\begin{align}\n a &= b \\\\\n c &= d \\\\\n e &= f\n\\end{align}\nmore");
  ASSERT_EQ(doc.equation_candidates.size(), 1u);
  EXPECT_EQ(doc.equation_candidates[0].kind, BlockKind::display_math);
  EXPECT_TRUE(doc.equation_candidates[0].raw_text.starts_with("\\begin{align}"));
  EXPECT_TRUE(doc.equation_candidates[0].raw_text.ends_with("\\end{align}"));
}

TEST(Segment, UnbalancedDelimiterWarnsAndSkips) {
  SerializedDoc d;
  d.doc_id = "u";
  d.full_text = "ok \\[ x = 1 \\] broken \\begin{equation} words and \\[ z";
  d.char_count = utf8::length(d.full_text);
  const auto blocks = segment_equation_candidates(d);
  ASSERT_EQ(blocks.size(), 1u);
  ASSERT_EQ(d.parse_warnings.size(), 2u);
  EXPECT_NE(d.parse_warnings[0].find("UnbalancedDelimiters"), std::string::npos);
}

TEST(Segment, KindsAndTables) {
  const auto doc = text_doc(
      "Inline $E$ and \\(\\nu\\) values.\n"
      "\\begin{tabular}{cc} 1 & 2 \\end{tabular}\n"
      "Sample 1 2.5 3.1\nSample 2 2.7 3.0\nSample 3 2.9 2.8\n"
      "$$ \\tau = \\eta \\dot\\gamma $$");
  std::vector<BlockKind> kinds;
  for (const auto& b : doc.equation_candidates) kinds.push_back(b.kind);
  EXPECT_EQ(kinds, (std::vector<BlockKind>{BlockKind::inline_math_cluster, BlockKind::inline_math_cluster,
                                           BlockKind::table_region, BlockKind::table_region,
                                           BlockKind::display_math}));
}

TEST(Segment, SpanIntegrityExhaustive) {
  std::mt19937 rng(11);
  const std::vector<std::string> pieces = {
      "text ", "σ = Eε ", "$a$", "$$b=c$$", "\\[x\\]", "\\begin{equation}y\\end{equation}",
      "\n", "\n\n", "\\begin{align}", "1 2 3\n", "η ≤ 4 ", "$", "\\\\[", "word, "};
  for (int trial = 0; trial < 400; ++trial) {
    std::string text;
    const int n = std::uniform_int_distribution<int>(0, 25)(rng);
    for (int i = 0; i < n; ++i) text += pieces[rng() % pieces.size()];
    const auto doc = text_doc(text);
    std::size_t last_end = 0;
    for (const auto& b : doc.equation_candidates) {
      ASSERT_LE(last_end, b.span.start);
      ASSERT_LT(b.span.start, b.span.end);
      ASSERT_LE(b.span.end, doc.char_count);
      ASSERT_EQ(utf8::slice(doc.full_text, b.span.start, b.span.end), b.raw_text);
      last_end = b.span.end;
    }
    // deterministic
    ASSERT_EQ(text_doc(text).equation_candidates, doc.equation_candidates);
  }
}

TEST(SerializedJson, RoundTripsAndUsesDocumentedFields) {
  const auto doc = text_doc("a $x$ b");
  const auto j = to_json(doc);
  for (const char* key : {"doc_id", "full_text", "char_count", "equation_candidates", "parse_warnings"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(serialized_doc_from_json(j), doc);
}
