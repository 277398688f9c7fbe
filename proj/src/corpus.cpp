#include "corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace lrmt {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<char32_t> cps;
    std::size_t bad = 0;
    if (!text::utf8_decode(line, cps, &bad)) {
      fail(ErrorKind::data, path + ": invalid UTF-8 on line " + std::to_string(lines.size() + 1) +
                                " at byte " + std::to_string(bad));
    }
    lines.push_back(std::move(line));
  }
  if (in.bad()) fail(ErrorKind::io, "read error on " + path);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  for (const auto& line : lines) out << line << '\n';
  if (!out) fail(ErrorKind::io, "write error on " + path);
}

namespace {

bool is_blank(const std::string& s) {
  std::vector<char32_t> cps;
  text::utf8_decode(s, cps);
  return std::all_of(cps.begin(), cps.end(), text::is_space);
}

}  // namespace

ParallelCorpus load_parallel_corpus(const std::string& source_path, const std::string& target_path,
                                    const std::string& name, LoadStats* stats) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  if (src.size() != tgt.size()) {
    fail(ErrorKind::data, "line count mismatch: " + source_path + " has " + std::to_string(src.size()) +
                              " lines, " + target_path + " has " + std::to_string(tgt.size()));
  }
  ParallelCorpus corpus;
  corpus.name = name;
  corpus.pairs.reserve(src.size());
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const bool src_blank = is_blank(src[i]);
    const bool tgt_blank = is_blank(tgt[i]);
    if (src_blank && tgt_blank) {
      ++dropped;
      continue;
    }
    if (src_blank != tgt_blank) {
      fail(ErrorKind::data, "alignment error: line " + std::to_string(i + 1) + " is blank on the " +
                                (src_blank ? "source" : "target") + " side only");
    }
    corpus.pairs.push_back({src[i], tgt[i], corpus.pairs.size()});
  }
  if (stats) stats->dropped_blank_pairs = dropped;
  return corpus;
}

CorpusSplits split_corpus(const ParallelCorpus& corpus, const SplitSpec& spec) {
  const std::size_t n = corpus.size();
  if (spec.test_lines + spec.dev_lines >= n && !(spec.test_lines == 0 && spec.dev_lines == 0)) {
    fail(ErrorKind::invalid_argument,
         "split too large: test " + std::to_string(spec.test_lines) + " + dev " +
             std::to_string(spec.dev_lines) + " must be < corpus size " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order);

  CorpusSplits out;
  out.train.name = corpus.name + "-train";
  out.dev.name = corpus.name + "-dev";
  out.test.name = corpus.name + "-test";
  for (std::size_t i = 0; i < n; ++i) {
    const SentencePair& p = corpus.pairs[order[i]];
    if (i < spec.test_lines) {
      out.test.pairs.push_back(p);
    } else if (i < spec.test_lines + spec.dev_lines) {
      out.dev.pairs.push_back(p);
    } else {
      out.train.pairs.push_back(p);
    }
  }
  return out;
}

std::vector<std::string> shared_text_stream(const ParallelCorpus& corpus) {
  if (corpus.empty()) fail(ErrorKind::invalid_argument, "shared_text_stream: empty corpus");
  std::vector<std::string> lines;
  lines.reserve(2 * corpus.size());
  for (const auto& p : corpus.pairs) lines.push_back(p.source);
  for (const auto& p : corpus.pairs) lines.push_back(p.target);
  return lines;
}

}  // namespace lrmt
