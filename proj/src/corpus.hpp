#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lrmt {

struct SentencePair {
  std::string source;
  std::string target;
  std::size_t index = 0;  // ordinal position in the loaded corpus
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string name;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct SplitSpec {
  std::size_t test_lines = 0;
  std::size_t dev_lines = 0;
  std::uint64_t seed = 1;
};

struct CorpusSplits {
  ParallelCorpus train;
  ParallelCorpus dev;
  ParallelCorpus test;
};

struct LoadStats {
  std::size_t dropped_blank_pairs = 0;
};

// Reads a line-delimited UTF-8 file; accepts \n and \r\n, strips the line
// terminator. Throws on invalid UTF-8 (reporting the line number) or IO errors.
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

// Zips two sentence files. Pairs blank on both sides are dropped (counted in
// stats); a pair blank on exactly one side is an alignment error, as is a
// line-count mismatch.
ParallelCorpus load_parallel_corpus(const std::string& source_path, const std::string& target_path,
                                    const std::string& name, LoadStats* stats = nullptr);

// Seeded shuffle, then test lines from the front, dev next, remainder train.
CorpusSplits split_corpus(const ParallelCorpus& corpus, const SplitSpec& spec);

// All source lines followed by all target lines.
std::vector<std::string> shared_text_stream(const ParallelCorpus& corpus);

}  // namespace lrmt
