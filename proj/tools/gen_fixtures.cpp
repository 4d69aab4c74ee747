// Writes the synthetic 20-document corpus, its scripted provider and the
// ground truth:  gen_fixtures <out_dir> [--dump-text]
//   <out_dir>/corpus/docNN.pdf  <out_dir>/mock_script.json  <out_dir>/gt.jsonl
// --dump-text also writes <out_dir>/text/docNN.txt, the text our PDF reader
// recovers from each file.

#include <cstring>
#include <fstream>
#include <iostream>

#include "cmdb/ingest/document.hpp"
#include "support/fixture_files.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const bool dump = argc == 3 && std::strcmp(argv[2], "--dump-text") == 0;
  if (argc != 2 && !dump) {
    std::cerr << "usage: gen_fixtures <out_dir> [--dump-text]\n";
    return 2;
  }
  try {
    const auto p = cmdb::testing::write_fixture_files(argv[1]);
    std::cout << p.corpus_dir.string() << "\n" << p.mock_script.string() << "\n" << p.ground_truth.string() << "\n";
    if (dump) {
      const fs::path text_dir = fs::path(argv[1]) / "text";
      fs::create_directories(text_dir);
      for (const auto& entry : fs::directory_iterator(p.corpus_dir)) {
        const auto id = entry.path().stem().string();
        const auto doc = cmdb::ingest::parse_pdf(cmdb::ingest::load_raw_document(entry.path()));
        std::ofstream(text_dir / (id + ".txt"), std::ios::binary | std::ios::trunc) << doc.full_text;
      }
      std::cout << text_dir.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "gen_fixtures: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
