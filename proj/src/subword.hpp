#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lrmt::subword {

enum class ModelType { bpe, unigram };

// Reserved pieces. Ids 0..3 are the special tokens; the word-boundary marker
// always sits at id 4. None of them are ever produced by merges or segmented.
inline constexpr std::string_view kUnkPiece = "<unk>";
inline constexpr std::string_view kBosPiece = "<s>";
inline constexpr std::string_view kEosPiece = "</s>";
inline constexpr std::string_view kPadPiece = "<pad>";
inline constexpr std::string_view kMarker = "\xE2\x96\x81";  // U+2581
inline constexpr int kUnkId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kPadId = 3;
inline constexpr int kMarkerId = 4;
inline constexpr int kNumReserved = 5;

struct BpeTrainStats {
  struct MergeRecord {
    std::string left;
    std::string right;
    long long pair_count = 0;
  };
  std::vector<MergeRecord> merges;
};

struct UnigramOptions {
  int em_rounds = 2;         // EM iterations per pruning round
  double prune_keep = 0.75;  // fraction of pieces kept per pruning round
  int max_piece_len = 8;     // seed substring length cap, in codepoints
  int seed_cap_factor = 8;   // seed vocabulary capped at factor * vocab_size
};

struct UnigramTrainStats {
  // Corpus log-likelihood after every EM iteration, in order.
  std::vector<double> em_loglik;
};

class SubwordModel {
 public:
  static SubwordModel train_bpe(const std::vector<std::string>& stream, int vocab_size,
                                BpeTrainStats* stats = nullptr);
  static SubwordModel train_unigram(const std::vector<std::string>& stream, int vocab_size,
                                    const UnigramOptions& options = {},
                                    UnigramTrainStats* stats = nullptr);

  ModelType type() const { return type_; }
  int vocab_size() const { return static_cast<int>(id_to_piece_.size()); }
  int requested_vocab_size() const { return requested_vocab_; }

  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::vector<std::string>& pieces() const { return id_to_piece_; }
  // Unigram only: log-probability of a piece, if it is in the model.
  std::optional<double> piece_logprob(const std::string& piece) const;

  int piece_id(const std::string& piece) const;  // kUnkId when absent

  // Whitespace pre-tokenization, then per-word segmentation. Each word opens
  // with the boundary marker (standalone for unigram; for BPE it is a symbol
  // that merges may have fused into larger pieces).
  std::vector<std::string> encode(const std::string& text) const;
  std::vector<int> encode_ids(const std::string& text) const;

  // Concatenates pieces, turns boundary markers into spaces, trims the lead.
  static std::string decode(std::span<const std::string> pieces);
  std::string decode_ids(std::span<const int> ids) const;

  void save(const std::string& path) const;
  static SubwordModel load(const std::string& path);

 private:
  SubwordModel() = default;

  void build_vocab_bpe();
  void build_vocab_unigram();
  std::vector<std::string> encode_word_bpe(const std::string& word) const;
  std::vector<std::string> segment_word_unigram(const std::string& word) const;

  ModelType type_ = ModelType::bpe;
  int requested_vocab_ = 0;
  std::vector<std::string> alphabet_;  // single codepoints, sorted; excludes the marker
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, double> logprob_;  // unigram pieces
  std::vector<std::string> unigram_order_;           // unigram pieces in id order
  std::vector<std::string> id_to_piece_;
  std::unordered_map<std::string, int> piece_to_id_;
  std::unordered_map<std::string, int> merge_rank_;  // "left\x1fright" -> rank
  std::size_t max_piece_cps_ = 1;                    // unigram: longest piece in codepoints
  double min_logprob_ = 0.0;
};

// Word -> weighted frequency over a text stream (whitespace tokenization).
std::unordered_map<std::string, long long> word_frequencies(const std::vector<std::string>& stream);

}  // namespace lrmt::subword
