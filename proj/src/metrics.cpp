#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "error.hpp"
#include "text.hpp"

namespace lrmt::metrics {

namespace {

void check_pairs(std::size_t hyps, std::size_t refs) {
  if (hyps == 0) fail(ErrorKind::invalid_argument, "empty corpus");
  if (hyps != refs) {
    fail(ErrorKind::invalid_argument, "hypothesis/reference count mismatch: " +
                                          std::to_string(hyps) + " vs " + std::to_string(refs));
  }
}

// n-gram key: tokens joined on an unprintable separator.
std::string ngram_key(const std::vector<std::string>& tokens, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += tokens[start + i];
  }
  return key;
}

using Counts = std::unordered_map<std::string, long long>;

Counts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  Counts counts;
  if (tokens.size() >= n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[ngram_key(tokens, i, n)];
  }
  return counts;
}

long long clipped_matches(const Counts& hyp, const Counts& ref) {
  long long m = 0;
  for (const auto& [key, count] : hyp) {
    auto it = ref.find(key);
    if (it != ref.end()) m += std::min(count, it->second);
  }
  return m;
}

double bleu_from_pooled(const std::vector<long long>& match, const std::vector<long long>& total,
                        long long hyp_len, long long ref_len, int max_n, bool smooth) {
  if (hyp_len == 0) return 0.0;
  double log_prec_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double num = static_cast<double>(match[n - 1]);
    double den = static_cast<double>(total[n - 1]);
    if (smooth && n >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) return 0.0;
    log_prec_sum += std::log(num / den);
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
  return 100.0 * bp * std::exp(log_prec_sum / max_n);
}

}  // namespace

std::vector<std::string> eval_tokens(const std::string& line, bool case_sensitive) {
  const std::string norm =
      case_sensitive ? text::normalize_whitespace(line) : text::normalize_for_eval(line);
  return text::split_whitespace(norm);
}

double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   const BleuConfig& config) {
  check_pairs(hyps.size(), refs.size());
  const int max_n = config.max_n;
  std::vector<long long> match(max_n, 0), total(max_n, 0);
  long long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = eval_tokens(hyps[i], config.case_sensitive);
    const auto r = eval_tokens(refs[i], config.case_sensitive);
    hyp_len += static_cast<long long>(h.size());
    ref_len += static_cast<long long>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = ngram_counts(h, static_cast<std::size_t>(n));
      const auto rc = ngram_counts(r, static_cast<std::size_t>(n));
      match[n - 1] += clipped_matches(hc, rc);
      if (h.size() >= static_cast<std::size_t>(n)) total[n - 1] += static_cast<long long>(h.size()) - n + 1;
    }
  }
  return bleu_from_pooled(match, total, hyp_len, ref_len, max_n, /*smooth=*/false);
}

double sentence_bleu(const std::string& hyp, const std::string& ref, const BleuConfig& config) {
  const auto h = eval_tokens(hyp, config.case_sensitive);
  const auto r = eval_tokens(ref, config.case_sensitive);
  const int max_n = config.max_n;
  std::vector<long long> match(max_n, 0), total(max_n, 0);
  for (int n = 1; n <= max_n; ++n) {
    const auto hc = ngram_counts(h, static_cast<std::size_t>(n));
    const auto rc = ngram_counts(r, static_cast<std::size_t>(n));
    match[n - 1] = clipped_matches(hc, rc);
    if (h.size() >= static_cast<std::size_t>(n)) total[n - 1] = static_cast<long long>(h.size()) - n + 1;
  }
  return bleu_from_pooled(match, total, static_cast<long long>(h.size()),
                          static_cast<long long>(r.size()), max_n, /*smooth=*/true);
}

long long levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<long long> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<long long>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long long>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const long long sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace {

// Every contiguous reference subsequence of length <= max_block, for the
// exact-match shift constraint.
std::unordered_set<std::string> ref_blocks(const std::vector<std::string>& ref, int max_block) {
  std::unordered_set<std::string> blocks;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (std::size_t len = 1; len <= static_cast<std::size_t>(max_block) && i + len <= ref.size(); ++len) {
      blocks.insert(ngram_key(ref, i, len));
    }
  }
  return blocks;
}

std::vector<std::string> apply_shift(const std::vector<std::string>& hyp, std::size_t start,
                                     std::size_t len, std::size_t dest) {
  std::vector<std::string> removed;
  removed.reserve(hyp.size() - len);
  removed.insert(removed.end(), hyp.begin(), hyp.begin() + start);
  removed.insert(removed.end(), hyp.begin() + start + len, hyp.end());
  std::vector<std::string> out;
  out.reserve(hyp.size());
  out.insert(out.end(), removed.begin(), removed.begin() + dest);
  out.insert(out.end(), hyp.begin() + start, hyp.begin() + start + len);
  out.insert(out.end(), removed.begin() + dest, removed.end());
  return out;
}

}  // namespace

TerPairResult ter_pair(const std::vector<std::string>& hyp_tokens,
                       const std::vector<std::string>& ref_tokens, int max_block_len) {
  TerPairResult result;
  result.ref_len = static_cast<long long>(ref_tokens.size());
  std::vector<std::string> hyp = hyp_tokens;
  long long dist = levenshtein(hyp, ref_tokens);
  const auto blocks = ref_blocks(ref_tokens, max_block_len);

  // Greedy loop: take the shift that most reduces the remaining edit
  // distance; stop when no shift strictly reduces it.
  while (true) {
    long long best = dist;
    std::vector<std::string> best_hyp;
    for (std::size_t start = 0; start < hyp.size(); ++start) {
      for (std::size_t len = 1; len <= static_cast<std::size_t>(max_block_len) && start + len <= hyp.size();
           ++len) {
        if (!blocks.count(ngram_key(hyp, start, len))) continue;
        for (std::size_t dest = 0; dest <= hyp.size() - len; ++dest) {
          if (dest == start) continue;
          auto cand = apply_shift(hyp, start, len, dest);
          const long long d = levenshtein(cand, ref_tokens);
          if (d < best) {
            best = d;
            best_hyp = std::move(cand);
          }
        }
      }
    }
    if (best < dist) {
      dist = best;
      hyp = std::move(best_hyp);
      ++result.shifts;
    } else {
      break;
    }
  }
  result.edits = dist + result.shifts;
  return result;
}

double corpus_ter(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                  bool case_sensitive) {
  check_pairs(hyps.size(), refs.size());
  long long edits = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = eval_tokens(hyps[i], case_sensitive);
    const auto r = eval_tokens(refs[i], case_sensitive);
    if (r.empty()) fail(ErrorKind::invalid_argument, "empty reference at pair " + std::to_string(i + 1));
    const auto pr = ter_pair(h, r);
    edits += pr.edits;
    ref_len += pr.ref_len;
  }
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

namespace {

using CharCounts = std::unordered_map<std::u32string, long long>;

std::u32string to_u32(const std::string& s) {
  std::vector<char32_t> cps;
  text::utf8_decode(s, cps);
  return std::u32string(cps.begin(), cps.end());
}

void add_char_ngrams(const std::u32string& s, int n, CharCounts& counts) {
  if (s.size() < static_cast<std::size_t>(n)) return;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[s.substr(i, static_cast<std::size_t>(n))];
}

}  // namespace

double corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   double beta, int max_char_n, bool case_sensitive) {
  check_pairs(hyps.size(), refs.size());
  if (beta <= 0.0) fail(ErrorKind::invalid_argument, "chrf beta must be > 0");
  std::vector<long long> match(max_char_n, 0), hyp_total(max_char_n, 0), ref_total(max_char_n, 0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const std::u32string h =
        to_u32(case_sensitive ? text::normalize_whitespace(hyps[i]) : text::normalize_for_eval(hyps[i]));
    const std::u32string r =
        to_u32(case_sensitive ? text::normalize_whitespace(refs[i]) : text::normalize_for_eval(refs[i]));
    for (int n = 1; n <= max_char_n; ++n) {
      CharCounts hc, rc;
      add_char_ngrams(h, n, hc);
      add_char_ngrams(r, n, rc);
      for (const auto& [key, count] : hc) {
        auto it = rc.find(key);
        if (it != rc.end()) match[n - 1] += std::min(count, it->second);
        hyp_total[n - 1] += count;
      }
      for (const auto& [key, count] : rc) ref_total[n - 1] += count;
    }
  }
  // Uniform average over orders that exist anywhere in the corpus.
  double prec_sum = 0.0, rec_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_char_n; ++n) {
    if (hyp_total[n - 1] == 0 && ref_total[n - 1] == 0) continue;
    ++orders;
    if (hyp_total[n - 1] > 0) prec_sum += static_cast<double>(match[n - 1]) / static_cast<double>(hyp_total[n - 1]);
    if (ref_total[n - 1] > 0) rec_sum += static_cast<double>(match[n - 1]) / static_cast<double>(ref_total[n - 1]);
  }
  if (orders == 0) return 0.0;
  const double p = prec_sum / orders;
  const double r = rec_sum / orders;
  const double b2 = beta * beta;
  if (b2 * p + r == 0.0) return 0.0;
  return (1.0 + b2) * p * r / (b2 * p + r);
}

double perplexity(double mean_nll) { return std::exp(mean_nll); }

}  // namespace lrmt::metrics
