#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "rng.hpp"

namespace lrmt::model {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// The hyperparameter vector searched by the hpo module, plus the bookkeeping
// fields (vocabulary, maximum length, seed, warmup) every run needs.
// Defaults are the search optima for the smaller general-domain setup.
struct TransformerConfig {
  double learning_rate_scale = 2.0;
  int batch_tokens = 2048;
  int heads = 2;
  int layers = 6;
  int ff_dim = 2048;
  int embed_dim = 256;
  double label_smoothing = 0.1;
  double dropout = 0.3;
  double attention_dropout = 0.1;
  double average_decay = 0.0001;  // 0 disables parameter averaging
  int vocab_size = 0;
  int max_len = 128;
  std::uint64_t seed = 1;
  int warmup_steps = 8000;

  void validate() const;  // throws config errors (embed divisible by heads, ...)
};

struct AttentionParams {
  Mat wq, wk, wv, wo;  // d x d
  Mat bq, bk, bv, bo;  // 1 x d
};

struct LayerNormParams {
  Mat gain, bias;  // 1 x d
};

struct FeedForwardParams {
  Mat w1;  // d x ff
  Mat b1;  // 1 x ff
  Mat w2;  // ff x d
  Mat b2;  // 1 x d
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  FeedForwardParams ff;
  LayerNormParams ln2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  AttentionParams cross_attn;
  LayerNormParams ln2;
  FeedForwardParams ff;
  LayerNormParams ln3;
};

struct ModelParams {
  Mat embedding;  // vocab x d, shared by both sides and tied to the output projection
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;

  static ModelParams init(const TransformerConfig& config, Rng& rng);
  static ModelParams zeros_like(const ModelParams& other);

  // Every tensor in a fixed order; the order defines serialization, the Adam
  // moment layout and gradient enumeration.
  std::vector<Mat*> tensors();
  std::vector<const Mat*> tensors() const;

  long long parameter_count() const;
};

// A padded batch. Pad ids always form a suffix; *_len are the padded widths.
struct Batch {
  std::vector<int> src;      // rows x src_len
  std::vector<int> tgt_in;   // rows x tgt_len, starts with bos
  std::vector<int> tgt_out;  // rows x tgt_len, ends with eos
  std::vector<int> src_lens;
  std::vector<int> tgt_lens;  // valid (non-pad) widths per row
  int n_rows = 0;
  int src_len = 0;
  int tgt_len = 0;
  long long target_tokens = 0;  // non-pad entries of tgt_out
};

// Builds one padded batch from (src_ids, tgt_ids) sequences; adds eos to the
// source, bos/eos around the target.
Batch make_batch(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                 const std::vector<std::size_t>& indices);

struct LayerNormCache {
  Mat xhat;  // normalized input
  Mat rstd;  // rows x 1
};

struct AttentionCache {
  Mat in_q, in_kv;       // inputs to the projections
  Mat q, k, v;           // (rows*len, d)
  Mat attn;              // (rows*heads*len_q, len_kv), post softmax
  Mat attn_drop_mask;    // attention dropout mask, same shape (empty if unused)
  Mat ctx;               // (rows*len_q, d) heads re-concatenated
};

struct SublayerCache {
  Mat resid_in;        // x entering the residual branch
  Mat drop_mask;       // dropout mask on the sublayer output (empty if unused)
  LayerNormCache ln;
};

struct FeedForwardCache {
  Mat input;
  Mat h_pre;  // before ReLU
};

struct EncoderLayerCache {
  AttentionCache attn;
  SublayerCache sub1;
  FeedForwardCache ff;
  SublayerCache sub2;
  Mat out;
};

struct DecoderLayerCache {
  AttentionCache self_attn;
  SublayerCache sub1;
  AttentionCache cross_attn;
  SublayerCache sub2;
  FeedForwardCache ff;
  SublayerCache sub3;
  Mat out;
};

struct ForwardCache {
  Mat enc_emb_drop_mask, dec_emb_drop_mask;
  Mat enc_x0, dec_x0;  // embedding + positional encoding, after dropout
  std::vector<EncoderLayerCache> enc;
  std::vector<DecoderLayerCache> dec;
  Mat enc_out;
  Mat dec_out;
  Mat logits;  // (rows*tgt_len, vocab)
};

// Full teacher-forced pass. Dropout fires only in train_mode (rng required
// then). The cache carries everything backward() needs.
void forward(const ModelParams& params, const TransformerConfig& config, const Batch& batch,
             bool train_mode, Rng* rng, ForwardCache& cache);

struct LossResult {
  double loss = 0.0;  // mean label-smoothed cross entropy per non-pad token
  double nll = 0.0;   // mean plain negative log-likelihood per non-pad token
  long long tokens = 0;
};

// dlogits, when non-null, receives d(loss)/d(logits) for backward().
LossResult label_smoothed_loss(const Mat& logits, const Batch& batch, double epsilon,
                               Mat* dlogits = nullptr);

// Token-level argmax accuracy against tgt_out over non-pad positions, 0-100.
double token_accuracy(const Mat& logits, const Batch& batch);

ModelParams backward(const ModelParams& params, const TransformerConfig& config, const Batch& batch,
                     const ForwardCache& cache, const Mat& dlogits);

Mat positional_encoding(int len, int dim);

}  // namespace lrmt::model
