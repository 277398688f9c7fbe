#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lrmt::metrics {

struct BleuConfig {
  int max_n = 4;
  bool case_sensitive = false;
};

// Tokens for word-level metrics: normalize_for_eval (or whitespace
// normalization only, when case_sensitive) then whitespace split.
std::vector<std::string> eval_tokens(const std::string& line, bool case_sensitive);

// Corpus BLEU on 0-100: geometric mean of corpus-pooled modified n-gram
// precisions times the brevity penalty min(1, exp(1 - ref_len/hyp_len)).
// Returns 0 if any pooled precision is 0.
double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   const BleuConfig& config = {});

// Sentence BLEU with add-one smoothing on the n >= 2 precisions.
double sentence_bleu(const std::string& hyp, const std::string& ref, const BleuConfig& config = {});

// One hypothesis/reference pair: shifts + edits under the greedy shift loop.
struct TerPairResult {
  long long edits = 0;   // insertions + deletions + substitutions + shifts
  int shifts = 0;
  long long ref_len = 0;
};
TerPairResult ter_pair(const std::vector<std::string>& hyp_tokens,
                       const std::vector<std::string>& ref_tokens, int max_block_len = 10);

double corpus_ter(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                  bool case_sensitive = false);

// Plain unit-cost edit distance over token sequences.
long long levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Character n-gram F-score on 0-1, counts pooled over the corpus.
double corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   double beta = 3.0, int max_char_n = 6, bool case_sensitive = false);

double perplexity(double mean_nll);

}  // namespace lrmt::metrics
