#include "subword.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_set>

#include "error.hpp"
#include "text.hpp"

namespace lrmt::subword {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const std::vector<std::string>& reserved_pieces() {
  static const std::vector<std::string> r = {std::string(kUnkPiece), std::string(kBosPiece),
                                             std::string(kEosPiece), std::string(kPadPiece),
                                             std::string(kMarker)};
  return r;
}

bool is_reserved(const std::string& piece) {
  const auto& r = reserved_pieces();
  return std::find(r.begin(), r.end(), piece) != r.end();
}

std::string pair_key(const std::string& l, const std::string& r) { return l + '\x1f' + r; }

void check_no_marker(const std::vector<std::string>& words) {
  for (const auto& w : words) {
    if (w.find(kMarker) != std::string::npos) {
      fail(ErrorKind::data, "training text contains the reserved boundary marker U+2581");
    }
  }
}

double logsumexp(const std::vector<double>& xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

std::unordered_map<std::string, long long> word_frequencies(const std::vector<std::string>& stream) {
  std::unordered_map<std::string, long long> freq;
  for (const auto& line : stream) {
    for (auto& w : text::split_whitespace(line)) ++freq[w];
  }
  return freq;
}

// ---------------------------------------------------------------------------
// BPE training
// ---------------------------------------------------------------------------

SubwordModel SubwordModel::train_bpe(const std::vector<std::string>& stream, int vocab_size,
                                     BpeTrainStats* stats) {
  if (stream.empty()) fail(ErrorKind::invalid_argument, "train_bpe: empty stream");
  auto freq_map = word_frequencies(stream);
  if (freq_map.empty()) fail(ErrorKind::invalid_argument, "train_bpe: stream has no words");

  // Sorted unique words keep every later step deterministic.
  std::vector<std::pair<std::string, long long>> words(freq_map.begin(), freq_map.end());
  std::sort(words.begin(), words.end());
  {
    std::vector<std::string> just_words;
    just_words.reserve(words.size());
    for (auto& [w, f] : words) just_words.push_back(w);
    check_no_marker(just_words);
  }

  std::set<std::string> alphabet_set;
  std::vector<std::vector<std::string>> symbols(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    symbols[i].push_back(std::string(kMarker));
    for (auto& c : text::utf8_chars(words[i].first)) {
      alphabet_set.insert(c);
      symbols[i].push_back(std::move(c));
    }
  }

  SubwordModel model;
  model.type_ = ModelType::bpe;
  model.requested_vocab_ = vocab_size;
  model.alphabet_.assign(alphabet_set.begin(), alphabet_set.end());

  const int floor = kNumReserved + static_cast<int>(model.alphabet_.size());
  if (vocab_size < floor) {
    fail(ErrorKind::invalid_argument, "vocab_size " + std::to_string(vocab_size) +
                                          " below floor " + std::to_string(floor) +
                                          " (reserved tokens + alphabet)");
  }

  std::unordered_set<std::string> vocab_set(model.alphabet_.begin(), model.alphabet_.end());
  int vocab_count = floor;

  // Live pair counts plus an index of which words contain each pair. The heap
  // holds possibly stale entries; they are checked against `live` on pop.
  std::unordered_map<std::string, long long> live;
  std::unordered_map<std::string, std::unordered_set<std::size_t>> pair_words;
  struct HeapEntry {
    long long count;
    std::string left, right;
  };
  auto heap_less = [](const HeapEntry& a, const HeapEntry& b) {
    if (a.count != b.count) return a.count < b.count;
    if (a.left != b.left) return a.left > b.left;
    return a.right > b.right;
  };
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, decltype(heap_less)> heap(heap_less);

  auto bump = [&](const std::string& l, const std::string& r, long long delta, std::size_t word_id) {
    const std::string key = pair_key(l, r);
    long long& c = live[key];
    c += delta;
    if (delta > 0) {
      pair_words[key].insert(word_id);
      heap.push({c, l, r});
    } else if (c > 0) {
      heap.push({c, l, r});
    }
  };

  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& syms = symbols[i];
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) bump(syms[k], syms[k + 1], words[i].second, i);
  }

  std::unordered_set<std::string> banned;  // pairs whose merged piece is reserved
  while (vocab_count < vocab_size) {
    // Pop until a live, unbanned entry surfaces.
    std::string left, right;
    long long count = 0;
    while (!heap.empty()) {
      HeapEntry top = heap.top();
      const std::string key = pair_key(top.left, top.right);
      auto it = live.find(key);
      if (it == live.end() || it->second != top.count || banned.count(key)) {
        heap.pop();
        continue;
      }
      left = top.left;
      right = top.right;
      count = top.count;
      break;
    }
    if (count < 2) break;  // no pair occurs at least twice

    const std::string merged = left + right;
    if (is_reserved(merged)) {
      banned.insert(pair_key(left, right));
      continue;
    }

    model.merges_.emplace_back(left, right);
    if (stats) stats->merges.push_back({left, right, count});
    if (vocab_set.insert(merged).second) ++vocab_count;

    // Rewrite the affected words and apply pair-count deltas.
    const std::string key = pair_key(left, right);
    auto affected = pair_words[key];  // copy: bump() mutates the index
    for (std::size_t word_id : affected) {
      auto& syms = symbols[word_id];
      const long long f = words[word_id].second;
      bool contains = false;
      for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
        if (syms[k] == left && syms[k + 1] == right) {
          contains = true;
          break;
        }
      }
      if (!contains) continue;  // stale index entry

      for (std::size_t k = 0; k + 1 < syms.size(); ++k) bump(syms[k], syms[k + 1], -f, word_id);
      std::vector<std::string> merged_syms;
      merged_syms.reserve(syms.size());
      for (std::size_t k = 0; k < syms.size();) {
        if (k + 1 < syms.size() && syms[k] == left && syms[k + 1] == right) {
          merged_syms.push_back(merged);
          k += 2;
        } else {
          merged_syms.push_back(syms[k]);
          ++k;
        }
      }
      syms = std::move(merged_syms);
      for (std::size_t k = 0; k + 1 < syms.size(); ++k) bump(syms[k], syms[k + 1], f, word_id);
    }
    live.erase(key);
    pair_words.erase(key);
  }

  model.build_vocab_bpe();
  return model;
}

void SubwordModel::build_vocab_bpe() {
  id_to_piece_.clear();
  piece_to_id_.clear();
  merge_rank_.clear();
  id_to_piece_ = {std::string(kUnkPiece), std::string(kBosPiece), std::string(kEosPiece),
                  std::string(kPadPiece), std::string(kMarker)};
  for (const auto& c : alphabet_) id_to_piece_.push_back(c);
  std::unordered_set<std::string> seen(id_to_piece_.begin(), id_to_piece_.end());
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_[pair_key(merges_[r].first, merges_[r].second)] = static_cast<int>(r);
    const std::string piece = merges_[r].first + merges_[r].second;
    if (seen.insert(piece).second) id_to_piece_.push_back(piece);
  }
  for (std::size_t i = 0; i < id_to_piece_.size(); ++i) piece_to_id_[id_to_piece_[i]] = static_cast<int>(i);
}

std::vector<std::string> SubwordModel::encode_word_bpe(const std::string& word) const {
  std::vector<std::string> syms;
  syms.push_back(std::string(kMarker));
  for (auto& c : text::utf8_chars(word)) {
    if (piece_to_id_.count(c) && !is_reserved(c)) {
      syms.push_back(std::move(c));
    } else {
      syms.push_back(std::string(kUnkPiece));
    }
  }
  // Repeatedly apply the lowest-ranked merge present; equivalent to replaying
  // the full merge list in rank order.
  while (syms.size() >= 2) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      if (syms[k] == kUnkPiece || syms[k + 1] == kUnkPiece) continue;
      auto it = merge_rank_.find(pair_key(syms[k], syms[k + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto& [left, right] = merges_[static_cast<std::size_t>(best_rank)];
    std::vector<std::string> next;
    next.reserve(syms.size());
    for (std::size_t k = 0; k < syms.size();) {
      if (k + 1 < syms.size() && syms[k] == left && syms[k + 1] == right) {
        next.push_back(left + right);
        k += 2;
      } else {
        next.push_back(syms[k]);
        ++k;
      }
    }
    syms = std::move(next);
  }
  return syms;
}

// ---------------------------------------------------------------------------
// Unigram training
// ---------------------------------------------------------------------------

namespace {

struct UnigramWorkspace {
  // Unique words as codepoint strings with frequencies, sorted for
  // deterministic accumulation order.
  std::vector<std::u32string> words;
  std::vector<long long> freqs;

  std::vector<std::u32string> pieces;  // current inventory, sorted
  std::unordered_map<std::u32string, int> piece_index;
  std::vector<double> logprob;

  int max_piece_len = 8;

  void rebuild_index() {
    piece_index.clear();
    for (std::size_t i = 0; i < pieces.size(); ++i) piece_index[pieces[i]] = static_cast<int>(i);
  }

  // One EM iteration: forward-backward expected counts over every word's
  // segmentation lattice. Returns the corpus log-likelihood under the
  // parameters in effect during the iteration.
  double em_step(std::vector<double>& expected) {
    expected.assign(pieces.size(), 0.0);
    double loglik = 0.0;
    std::vector<double> fwd, bwd, terms;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const std::u32string& word = words[w];
      const double f = static_cast<double>(freqs[w]);
      const std::size_t n = word.size();
      fwd.assign(n + 1, kNegInf);
      bwd.assign(n + 1, kNegInf);
      fwd[0] = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        terms.clear();
        for (std::size_t len = 1; len <= static_cast<std::size_t>(max_piece_len) && len <= j; ++len) {
          const std::size_t i = j - len;
          if (fwd[i] == kNegInf) continue;
          auto it = piece_index.find(word.substr(i, len));
          if (it == piece_index.end()) continue;
          terms.push_back(fwd[i] + logprob[static_cast<std::size_t>(it->second)]);
        }
        fwd[j] = logsumexp(terms);
      }
      bwd[n] = 0.0;
      for (std::size_t i = n; i-- > 0;) {
        terms.clear();
        for (std::size_t len = 1; len <= static_cast<std::size_t>(max_piece_len) && i + len <= n; ++len) {
          if (bwd[i + len] == kNegInf) continue;
          auto it = piece_index.find(word.substr(i, len));
          if (it == piece_index.end()) continue;
          terms.push_back(logprob[static_cast<std::size_t>(it->second)] + bwd[i + len]);
        }
        bwd[i] = logsumexp(terms);
      }
      if (fwd[n] == kNegInf) continue;  // unsegmentable; cannot happen while chars are pieces
      loglik += f * fwd[n];
      for (std::size_t i = 0; i < n; ++i) {
        if (fwd[i] == kNegInf) continue;
        for (std::size_t len = 1; len <= static_cast<std::size_t>(max_piece_len) && i + len <= n; ++len) {
          auto it = piece_index.find(word.substr(i, len));
          if (it == piece_index.end()) continue;
          const std::size_t p = static_cast<std::size_t>(it->second);
          if (bwd[i + len] == kNegInf) continue;
          expected[p] += f * std::exp(fwd[i] + logprob[p] + bwd[i + len] - fwd[n]);
        }
      }
    }
    // M-step.
    double total = 0.0;
    for (double c : expected) total += c;
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      logprob[p] = expected[p] > 0.0 ? std::log(expected[p]) - std::log(total) : kNegInf;
    }
    return loglik;
  }
};

}  // namespace

SubwordModel SubwordModel::train_unigram(const std::vector<std::string>& stream, int vocab_size,
                                         const UnigramOptions& options, UnigramTrainStats* stats) {
  if (stream.empty()) fail(ErrorKind::invalid_argument, "train_unigram: empty stream");
  auto freq_map = word_frequencies(stream);
  if (freq_map.empty()) fail(ErrorKind::invalid_argument, "train_unigram: stream has no words");

  std::vector<std::pair<std::string, long long>> words(freq_map.begin(), freq_map.end());
  std::sort(words.begin(), words.end());
  {
    std::vector<std::string> just_words;
    for (auto& [w, f] : words) just_words.push_back(w);
    check_no_marker(just_words);
  }

  UnigramWorkspace ws;
  ws.max_piece_len = options.max_piece_len;
  std::set<std::u32string> alphabet_set;
  for (const auto& [w, f] : words) {
    std::vector<char32_t> cps;
    text::utf8_decode(w, cps);
    ws.words.emplace_back(cps.begin(), cps.end());
    ws.freqs.push_back(f);
    for (char32_t c : cps) alphabet_set.insert(std::u32string(1, c));
  }

  SubwordModel model;
  model.type_ = ModelType::unigram;
  model.requested_vocab_ = vocab_size;
  for (const auto& c : alphabet_set) {
    model.alphabet_.push_back(text::utf8_encode(std::vector<char32_t>(c.begin(), c.end())));
  }

  const int floor = kNumReserved + static_cast<int>(alphabet_set.size());
  if (vocab_size < floor) {
    fail(ErrorKind::invalid_argument, "vocab_size " + std::to_string(vocab_size) +
                                          " below floor " + std::to_string(floor) +
                                          " (reserved tokens + alphabet)");
  }
  const std::size_t target_pieces = static_cast<std::size_t>(vocab_size - kNumReserved);

  // Seed inventory: frequent substrings (overlapping occurrences counted,
  // weighted by word frequency), capped by frequency; single characters are
  // always included and never pruned.
  std::map<std::u32string, double> seed_count;
  for (std::size_t w = 0; w < ws.words.size(); ++w) {
    const auto& word = ws.words[w];
    const double f = static_cast<double>(ws.freqs[w]);
    for (std::size_t i = 0; i < word.size(); ++i) {
      for (std::size_t len = 1; len <= static_cast<std::size_t>(options.max_piece_len) && i + len <= word.size();
           ++len) {
        seed_count[word.substr(i, len)] += f;
      }
    }
  }
  std::vector<std::pair<std::u32string, double>> multi;
  for (const auto& [piece, count] : seed_count) {
    if (piece.size() == 1) continue;
    if (count < 2.0) continue;
    const std::string u8 = text::utf8_encode(std::vector<char32_t>(piece.begin(), piece.end()));
    if (is_reserved(u8)) continue;
    multi.emplace_back(piece, count);
  }
  std::sort(multi.begin(), multi.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t cap = static_cast<std::size_t>(options.seed_cap_factor) *
                          static_cast<std::size_t>(vocab_size);
  if (multi.size() + alphabet_set.size() > cap && cap > alphabet_set.size()) {
    multi.resize(cap - alphabet_set.size());
  }

  for (const auto& c : alphabet_set) ws.pieces.push_back(c);
  for (const auto& [piece, count] : multi) ws.pieces.push_back(piece);
  std::sort(ws.pieces.begin(), ws.pieces.end());
  ws.rebuild_index();
  ws.logprob.assign(ws.pieces.size(), 0.0);
  {
    double total = 0.0;
    for (const auto& p : ws.pieces) total += seed_count[p];
    for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
      ws.logprob[i] = std::log(seed_count[ws.pieces[i]]) - std::log(total);
    }
  }

  std::vector<double> expected;
  auto run_em = [&]() {
    for (int it = 0; it < options.em_rounds; ++it) {
      const double ll = ws.em_step(expected);
      if (stats) stats->em_loglik.push_back(ll);
    }
  };

  run_em();
  while (ws.pieces.size() > target_pieces) {
    // Keep the highest-contribution pieces (expected counts from the last
    // E-step); single characters are never dropped.
    std::size_t keep = std::max(target_pieces,
                                static_cast<std::size_t>(std::ceil(static_cast<double>(ws.pieces.size()) *
                                                                   options.prune_keep)));
    if (keep >= ws.pieces.size()) keep = ws.pieces.size() - 1;
    if (keep < target_pieces) keep = target_pieces;

    std::vector<std::size_t> multi_idx;
    for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
      if (ws.pieces[i].size() > 1) multi_idx.push_back(i);
    }
    const std::size_t n_chars = ws.pieces.size() - multi_idx.size();
    const std::size_t keep_multi = keep > n_chars ? keep - n_chars : 0;
    std::sort(multi_idx.begin(), multi_idx.end(), [&](std::size_t a, std::size_t b) {
      if (expected[a] != expected[b]) return expected[a] > expected[b];
      return ws.pieces[a] < ws.pieces[b];
    });
    multi_idx.resize(std::min(keep_multi, multi_idx.size()));

    std::vector<std::u32string> next;
    std::vector<double> next_lp;
    std::unordered_set<std::size_t> kept(multi_idx.begin(), multi_idx.end());
    for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
      if (ws.pieces[i].size() == 1 || kept.count(i)) {
        next.push_back(ws.pieces[i]);
        next_lp.push_back(ws.logprob[i]);
      }
    }
    ws.pieces = std::move(next);
    ws.logprob = std::move(next_lp);
    ws.rebuild_index();
    // Renormalize the survivors before the next round.
    double z = kNegInf;
    z = logsumexp(ws.logprob);
    for (auto& lp : ws.logprob) lp -= z;
    run_em();
  }

  model.unigram_order_.clear();
  for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
    const std::string u8 =
        text::utf8_encode(std::vector<char32_t>(ws.pieces[i].begin(), ws.pieces[i].end()));
    model.unigram_order_.push_back(u8);
    model.logprob_[u8] = ws.logprob[i];
  }
  model.build_vocab_unigram();
  return model;
}

void SubwordModel::build_vocab_unigram() {
  id_to_piece_.clear();
  piece_to_id_.clear();
  id_to_piece_ = {std::string(kUnkPiece), std::string(kBosPiece), std::string(kEosPiece),
                  std::string(kPadPiece), std::string(kMarker)};
  for (const auto& p : unigram_order_) id_to_piece_.push_back(p);
  for (std::size_t i = 0; i < id_to_piece_.size(); ++i) piece_to_id_[id_to_piece_[i]] = static_cast<int>(i);
  max_piece_cps_ = 1;
  min_logprob_ = 0.0;
  for (const auto& [piece, lp] : logprob_) {
    std::vector<char32_t> pc;
    text::utf8_decode(piece, pc);
    max_piece_cps_ = std::max(max_piece_cps_, pc.size());
    min_logprob_ = std::min(min_logprob_, lp);
  }
}

std::optional<double> SubwordModel::piece_logprob(const std::string& piece) const {
  auto it = logprob_.find(piece);
  if (it == logprob_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Viterbi segmentation (unigram)
// ---------------------------------------------------------------------------

std::vector<std::string> SubwordModel::segment_word_unigram(const std::string& word) const {
  std::vector<char32_t> cps;
  text::utf8_decode(word, cps);
  const std::size_t n = cps.size();
  const std::u32string w(cps.begin(), cps.end());

  const double unk_lp = min_logprob_ - 10.0;
  const std::size_t max_len = max_piece_cps_;

  struct Node {
    double score = kNegInf;
    int count = 0;
    std::size_t back = 0;
    std::string piece;
    bool reachable = false;
  };
  std::vector<Node> dp(n + 1);
  dp[0].reachable = true;
  dp[0].score = 0.0;

  // Reconstructs the piece sequence ending at position j.
  auto sequence_at = [&](std::size_t j) {
    std::vector<std::string> seq;
    while (j > 0) {
      seq.push_back(dp[j].piece);
      j = dp[j].back;
    }
    std::reverse(seq.begin(), seq.end());
    return seq;
  };

  for (std::size_t j = 1; j <= n; ++j) {
    for (std::size_t len = 1; len <= max_len && len <= j; ++len) {
      const std::size_t i = j - len;
      if (!dp[i].reachable) continue;
      const std::u32string sub = w.substr(i, len);
      const std::string u8 = text::utf8_encode(std::vector<char32_t>(sub.begin(), sub.end()));
      double lp;
      std::string piece;
      auto it = logprob_.find(u8);
      if (it != logprob_.end()) {
        lp = it->second;
        piece = u8;
      } else if (len == 1) {
        lp = unk_lp;  // unknown character: forced fallback edge
        piece = std::string(kUnkPiece);
      } else {
        continue;
      }
      const double score = dp[i].score + lp;
      const int count = dp[i].count + 1;
      bool better = false;
      if (!dp[j].reachable) {
        better = true;
      } else if (score != dp[j].score) {
        better = score > dp[j].score;
      } else if (count != dp[j].count) {
        better = count < dp[j].count;
      } else {
        // Exact tie on score and piece count: lexicographically smaller
        // piece sequence wins.
        auto cand = sequence_at(i);
        cand.push_back(piece);
        better = cand < sequence_at(j);
      }
      if (better) {
        dp[j] = {score, count, i, piece, true};
      }
    }
  }
  return sequence_at(n);
}

// ---------------------------------------------------------------------------
// Shared encode/decode surface
// ---------------------------------------------------------------------------

std::vector<std::string> SubwordModel::encode(const std::string& txt) const {
  std::vector<std::string> pieces;
  for (const auto& word : text::split_whitespace(txt)) {
    if (type_ == ModelType::bpe) {
      auto ps = encode_word_bpe(word);
      pieces.insert(pieces.end(), ps.begin(), ps.end());
    } else {
      pieces.push_back(std::string(kMarker));
      auto ps = segment_word_unigram(word);
      pieces.insert(pieces.end(), ps.begin(), ps.end());
    }
  }
  return pieces;
}

std::vector<int> SubwordModel::encode_ids(const std::string& txt) const {
  std::vector<int> ids;
  for (const auto& piece : encode(txt)) ids.push_back(piece_id(piece));
  return ids;
}

int SubwordModel::piece_id(const std::string& piece) const {
  auto it = piece_to_id_.find(piece);
  return it == piece_to_id_.end() ? kUnkId : it->second;
}

std::string SubwordModel::decode(std::span<const std::string> pieces) {
  std::string joined;
  for (const auto& p : pieces) joined += p;
  std::string out;
  std::size_t i = 0;
  while (i < joined.size()) {
    if (joined.compare(i, kMarker.size(), kMarker) == 0) {
      out.push_back(' ');
      i += kMarker.size();
    } else {
      out.push_back(joined[i]);
      ++i;
    }
  }
  std::size_t start = 0;
  while (start < out.size() && out[start] == ' ') ++start;
  return out.substr(start);
}

std::string SubwordModel::decode_ids(std::span<const int> ids) const {
  std::vector<std::string> pieces;
  for (int id : ids) {
    if (id == kBosId || id == kEosId || id == kPadId) continue;
    if (id < 0 || id >= vocab_size()) {
      fail(ErrorKind::invalid_argument, "piece id " + std::to_string(id) + " out of range");
    }
    pieces.push_back(id_to_piece_[static_cast<std::size_t>(id)]);
  }
  return decode(pieces);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void SubwordModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << "subword-model v1 " << (type_ == ModelType::bpe ? "bpe" : "unigram") << ' '
      << requested_vocab_ << '\n';
  if (type_ == ModelType::bpe) {
    out << "alphabet\t";
    for (const auto& c : alphabet_) out << c;
    out << '\n';
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      out << r << '\t' << merges_[r].first << '\t' << merges_[r].second << '\n';
    }
  } else {
    char buf[64];
    for (const auto& piece : unigram_order_) {
      std::snprintf(buf, sizeof(buf), "%.17g", logprob_.at(piece));
      out << piece << '\t' << buf << '\n';
    }
  }
  if (!out) fail(ErrorKind::io, "write error on " + path);
}

SubwordModel SubwordModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) fail(ErrorKind::format, path + ": empty model file");
  if (!header.empty() && header.back() == '\r') header.pop_back();

  std::istringstream hs(header);
  std::string tag, version, type_str;
  int vocab = 0;
  if (!(hs >> tag >> version >> type_str >> vocab) || tag != "subword-model") {
    fail(ErrorKind::format, path + ": bad header line: " + header);
  }
  if (version != "v1") fail(ErrorKind::format, path + ": unsupported version " + version);

  SubwordModel model;
  model.requested_vocab_ = vocab;
  if (type_str == "bpe") {
    model.type_ = ModelType::bpe;
  } else if (type_str == "unigram") {
    model.type_ = ModelType::unigram;
  } else {
    fail(ErrorKind::format, path + ": unknown model type tag '" + type_str + "'");
  }

  std::string line;
  std::size_t line_no = 1;
  if (model.type_ == ModelType::bpe) {
    if (!std::getline(in, line)) fail(ErrorKind::format, path + ": missing alphabet line");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) != "alphabet") {
      fail(ErrorKind::format, path + ": line " + std::to_string(line_no) + ": expected alphabet line");
    }
    model.alphabet_ = text::utf8_chars(line.substr(tab + 1));
    std::sort(model.alphabet_.begin(), model.alphabet_.end());
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos) {
        fail(ErrorKind::format, path + ": line " + std::to_string(line_no) + ": malformed merge: " + line);
      }
      model.merges_.emplace_back(line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1));
    }
    model.build_vocab_bpe();
  } else {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        fail(ErrorKind::format, path + ": line " + std::to_string(line_no) + ": malformed piece: " + line);
      }
      const std::string piece = line.substr(0, tab);
      char* end = nullptr;
      const double lp = std::strtod(line.c_str() + tab + 1, &end);
      if (end == line.c_str() + tab + 1) {
        fail(ErrorKind::format, path + ": line " + std::to_string(line_no) + ": bad logprob: " + line);
      }
      model.unigram_order_.push_back(piece);
      model.logprob_[piece] = lp;
    }
    std::set<std::string> alpha;
    for (const auto& p : model.unigram_order_) {
      if (text::utf8_chars(p).size() == 1) alpha.insert(p);
    }
    model.alphabet_.assign(alpha.begin(), alpha.end());
    model.build_vocab_unigram();
  }
  return model;
}

}  // namespace lrmt::subword
