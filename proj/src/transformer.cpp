#include "transformer.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "subword.hpp"

namespace lrmt::model {

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kMaskValue = -1e30;

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform() < p ? 0.0 : scale;
  }
  return m;
}

Mat linear(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// y = x*w + b backward: accumulates dw/db, returns dx.
Mat linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Mat& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

Mat layer_norm(const Mat& x, const LayerNormParams& p, LayerNormCache& cache) {
  const Eigen::Index d = x.cols();
  cache.xhat.resize(x.rows(), d);
  cache.rstd.resize(x.rows(), 1);
  Mat y(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(i, 0) = rstd;
    cache.xhat.row(i) = ((x.row(i).array() - mean) * rstd).matrix();
    y.row(i) = (cache.xhat.row(i).array() * p.gain.row(0).array() + p.bias.row(0).array()).matrix();
  }
  return y;
}

Mat layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Mat& dy,
                        LayerNormParams& grad) {
  const Eigen::Index d = dy.cols();
  Mat dx(dy.rows(), d);
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    Eigen::RowVectorXd dxhat = (dy.row(i).array() * p.gain.row(0).array()).matrix();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat.array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = (cache.rstd(i, 0) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2)).matrix();
  }
  grad.gain.row(0) += (dy.array() * cache.xhat.array()).matrix().colwise().sum();
  grad.bias.row(0) += dy.colwise().sum();
  return dx;
}

// Multi-head attention over padded batches. kv_lens holds the valid key width
// per row; causal additionally hides positions after the query index.
Mat attention(const AttentionParams& p, const Mat& x_q, const Mat& x_kv, int n_rows, int len_q,
              int len_kv, int heads, const std::vector<int>& kv_lens, bool causal,
              double attn_dropout, bool train_mode, Rng* rng, AttentionCache& cache) {
  const Eigen::Index d = x_q.cols();
  const Eigen::Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  cache.in_q = x_q;
  cache.in_kv = x_kv;
  cache.q = linear(x_q, p.wq, p.bq);
  cache.k = linear(x_kv, p.wk, p.bk);
  cache.v = linear(x_kv, p.wv, p.bv);
  cache.attn.resize(static_cast<Eigen::Index>(n_rows) * heads * len_q, len_kv);
  const bool use_drop = train_mode && attn_dropout > 0.0;
  if (use_drop) {
    cache.attn_drop_mask = dropout_mask(cache.attn.rows(), cache.attn.cols(), attn_dropout, *rng);
  } else {
    cache.attn_drop_mask.resize(0, 0);
  }
  cache.ctx.resize(static_cast<Eigen::Index>(n_rows) * len_q, d);

  for (int b = 0; b < n_rows; ++b) {
    for (int h = 0; h < heads; ++h) {
      auto qb = cache.q.block(static_cast<Eigen::Index>(b) * len_q, h * dk, len_q, dk);
      auto kb = cache.k.block(static_cast<Eigen::Index>(b) * len_kv, h * dk, len_kv, dk);
      auto vb = cache.v.block(static_cast<Eigen::Index>(b) * len_kv, h * dk, len_kv, dk);
      Mat scores = qb * kb.transpose() * scale;
      const int valid = kv_lens[static_cast<std::size_t>(b)];
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
          if (j >= valid || (causal && j > i)) scores(i, j) = kMaskValue;
        }
      }
      const Eigen::Index attn_row0 = (static_cast<Eigen::Index>(b) * heads + h) * len_q;
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double mx = scores.row(i).maxCoeff();
        Eigen::RowVectorXd e = (scores.row(i).array() - mx).exp().matrix();
        cache.attn.row(attn_row0 + i) = e / e.sum();
      }
      auto w = cache.attn.block(attn_row0, 0, len_q, len_kv);
      if (use_drop) {
        Mat wd = w.array() * cache.attn_drop_mask.block(attn_row0, 0, len_q, len_kv).array();
        cache.ctx.block(static_cast<Eigen::Index>(b) * len_q, h * dk, len_q, dk).noalias() = wd * vb;
      } else {
        cache.ctx.block(static_cast<Eigen::Index>(b) * len_q, h * dk, len_q, dk).noalias() = w * vb;
      }
    }
  }
  return linear(cache.ctx, p.wo, p.bo);
}

struct AttentionBackwardOut {
  Mat dx_q;
  Mat dx_kv;
};

AttentionBackwardOut attention_backward(const AttentionParams& p, AttentionParams& grad,
                                        const AttentionCache& cache, const Mat& dout, int n_rows,
                                        int len_q, int len_kv, int heads) {
  const Eigen::Index d = dout.cols();
  const Eigen::Index dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool use_drop = cache.attn_drop_mask.size() > 0;

  Mat dctx = linear_backward(cache.ctx, p.wo, dout, grad.wo, grad.bo);
  Mat dq = Mat::Zero(cache.q.rows(), d);
  Mat dkm = Mat::Zero(cache.k.rows(), d);
  Mat dv = Mat::Zero(cache.v.rows(), d);

  for (int b = 0; b < n_rows; ++b) {
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index attn_row0 = (static_cast<Eigen::Index>(b) * heads + h) * len_q;
      auto w = cache.attn.block(attn_row0, 0, len_q, len_kv);
      auto qb = cache.q.block(static_cast<Eigen::Index>(b) * len_q, h * dk, len_q, dk);
      auto kb = cache.k.block(static_cast<Eigen::Index>(b) * len_kv, h * dk, len_kv, dk);
      auto vb = cache.v.block(static_cast<Eigen::Index>(b) * len_kv, h * dk, len_kv, dk);
      auto dctx_b = dctx.block(static_cast<Eigen::Index>(b) * len_q, h * dk, len_q, dk);

      Mat wd;
      if (use_drop) {
        wd = w.array() * cache.attn_drop_mask.block(attn_row0, 0, len_q, len_kv).array();
      } else {
        wd = w;
      }
      Mat dwd = dctx_b * vb.transpose();            // (len_q, len_kv)
      dv.block(static_cast<Eigen::Index>(b) * len_kv, h * dk, len_kv, dk).noalias() +=
          wd.transpose() * dctx_b;
      Mat dw;
      if (use_drop) {
        dw = dwd.array() * cache.attn_drop_mask.block(attn_row0, 0, len_q, len_kv).array();
      } else {
        dw = std::move(dwd);
      }
      // softmax backward: ds = w .* (dw - rowsum(dw .* w))
      Mat ds(len_q, len_kv);
      for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        const double dot = (dw.row(i).array() * w.row(i).array()).sum();
        ds.row(i) = (w.row(i).array() * (dw.row(i).array() - dot)).matrix();
      }
      dq.block(static_cast<Eigen::Index>(b) * len_q, h * dk, len_q, dk).noalias() += ds * kb * scale;
      dkm.block(static_cast<Eigen::Index>(b) * len_kv, h * dk, len_kv, dk).noalias() +=
          ds.transpose() * qb * scale;
    }
  }

  AttentionBackwardOut out;
  out.dx_q = linear_backward(cache.in_q, p.wq, dq, grad.wq, grad.bq);
  out.dx_kv = linear_backward(cache.in_kv, p.wk, dkm, grad.wk, grad.bk);
  out.dx_kv += linear_backward(cache.in_kv, p.wv, dv, grad.wv, grad.bv);
  return out;
}

// Residual + dropout + post-layer-norm wrapper around a sublayer output.
Mat sublayer_connect(const Mat& x, const Mat& sub_out, const LayerNormParams& ln, double dropout,
                     bool train_mode, Rng* rng, SublayerCache& cache) {
  cache.resid_in = x;
  Mat z;
  if (train_mode && dropout > 0.0) {
    cache.drop_mask = dropout_mask(sub_out.rows(), sub_out.cols(), dropout, *rng);
    z = x + (sub_out.array() * cache.drop_mask.array()).matrix();
  } else {
    cache.drop_mask.resize(0, 0);
    z = x + sub_out;
  }
  return layer_norm(z, ln, cache.ln);
}

// Returns dx (residual path); dsub receives the sublayer-output gradient.
Mat sublayer_backward(const LayerNormParams& ln, LayerNormParams& ln_grad, const SublayerCache& cache,
                      const Mat& dy, Mat& dsub) {
  Mat dz = layer_norm_backward(ln, cache.ln, dy, ln_grad);
  if (cache.drop_mask.size() > 0) {
    dsub = dz.array() * cache.drop_mask.array();
  } else {
    dsub = dz;
  }
  return dz;
}

Mat feed_forward(const Mat& x, const FeedForwardParams& p, FeedForwardCache& cache) {
  cache.input = x;
  cache.h_pre = linear(x, p.w1, p.b1);
  Mat h = cache.h_pre.cwiseMax(0.0);
  return linear(h, p.w2, p.b2);
}

Mat feed_forward_backward(const FeedForwardParams& p, FeedForwardParams& grad,
                          const FeedForwardCache& cache, const Mat& dout) {
  Mat h = cache.h_pre.cwiseMax(0.0);
  Mat dh = linear_backward(h, p.w2, dout, grad.w2, grad.b2);
  Mat dh_pre = ((cache.h_pre.array() > 0.0).cast<double>() * dh.array()).matrix();
  return linear_backward(cache.input, p.w1, dh_pre, grad.w1, grad.b1);
}

Mat embed(const Mat& embedding, const std::vector<int>& ids, int n_rows, int len, int d) {
  const double scale = std::sqrt(static_cast<double>(d));
  Mat x(static_cast<Eigen::Index>(n_rows) * len, d);
  const Mat pe = positional_encoding(len, d);
  for (int b = 0; b < n_rows; ++b) {
    for (int t = 0; t < len; ++t) {
      const int id = ids[static_cast<std::size_t>(b) * len + t];
      x.row(static_cast<Eigen::Index>(b) * len + t) = embedding.row(id) * scale + pe.row(t);
    }
  }
  return x;
}

void embed_backward(Mat& d_embedding, const std::vector<int>& ids, const Mat& dx, int n_rows,
                    int len, int d) {
  const double scale = std::sqrt(static_cast<double>(d));
  for (int b = 0; b < n_rows; ++b) {
    for (int t = 0; t < len; ++t) {
      const int id = ids[static_cast<std::size_t>(b) * len + t];
      d_embedding.row(id) += dx.row(static_cast<Eigen::Index>(b) * len + t) * scale;
    }
  }
}

Mat xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = (rng.uniform() * 2.0 - 1.0) * limit;
  }
  return m;
}

AttentionParams init_attention(int d, Rng& rng) {
  AttentionParams p;
  p.wq = xavier(d, d, rng);
  p.bq = Mat::Zero(1, d);
  p.wk = xavier(d, d, rng);
  p.bk = Mat::Zero(1, d);
  p.wv = xavier(d, d, rng);
  p.bv = Mat::Zero(1, d);
  p.wo = xavier(d, d, rng);
  p.bo = Mat::Zero(1, d);
  return p;
}

LayerNormParams init_ln(int d) {
  LayerNormParams p;
  p.gain = Mat::Ones(1, d);
  p.bias = Mat::Zero(1, d);
  return p;
}

FeedForwardParams init_ff(int d, int ff, Rng& rng) {
  FeedForwardParams p;
  p.w1 = xavier(d, ff, rng);
  p.b1 = Mat::Zero(1, ff);
  p.w2 = xavier(ff, d, rng);
  p.b2 = Mat::Zero(1, d);
  return p;
}

void collect(AttentionParams& p, std::vector<Mat*>& out) {
  out.insert(out.end(), {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo});
}
void collect(LayerNormParams& p, std::vector<Mat*>& out) {
  out.insert(out.end(), {&p.gain, &p.bias});
}
void collect(FeedForwardParams& p, std::vector<Mat*>& out) {
  out.insert(out.end(), {&p.w1, &p.b1, &p.w2, &p.b2});
}

}  // namespace

void TransformerConfig::validate() const {
  if (embed_dim <= 0 || heads <= 0 || layers <= 0 || ff_dim <= 0) {
    fail(ErrorKind::invalid_argument, "model dimensions must be positive");
  }
  if (embed_dim % heads != 0) {
    fail(ErrorKind::invalid_argument, "embed_dim " + std::to_string(embed_dim) +
                                          " not divisible by heads " + std::to_string(heads));
  }
  if (vocab_size <= subword::kNumReserved) {
    fail(ErrorKind::invalid_argument, "vocab_size must exceed the reserved token count");
  }
  if (max_len <= 1) fail(ErrorKind::invalid_argument, "max_len must be > 1");
  if (dropout < 0.0 || dropout >= 1.0 || attention_dropout < 0.0 || attention_dropout >= 1.0) {
    fail(ErrorKind::invalid_argument, "dropout rates must lie in [0, 1)");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    fail(ErrorKind::invalid_argument, "label_smoothing must lie in [0, 1)");
  }
  if (average_decay < 0.0 || average_decay >= 1.0) {
    fail(ErrorKind::invalid_argument, "average_decay must lie in [0, 1)");
  }
  if (batch_tokens <= 0) fail(ErrorKind::invalid_argument, "batch_tokens must be positive");
}

ModelParams ModelParams::init(const TransformerConfig& config, Rng& rng) {
  config.validate();
  const int d = config.embed_dim;
  ModelParams p;
  p.embedding.resize(config.vocab_size, d);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < p.embedding.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) p.embedding(i, j) = rng.normal(0.0, emb_std);
  }
  for (int l = 0; l < config.layers; ++l) {
    EncoderLayerParams layer;
    layer.self_attn = init_attention(d, rng);
    layer.ln1 = init_ln(d);
    layer.ff = init_ff(d, config.ff_dim, rng);
    layer.ln2 = init_ln(d);
    p.encoder.push_back(std::move(layer));
  }
  for (int l = 0; l < config.layers; ++l) {
    DecoderLayerParams layer;
    layer.self_attn = init_attention(d, rng);
    layer.ln1 = init_ln(d);
    layer.cross_attn = init_attention(d, rng);
    layer.ln2 = init_ln(d);
    layer.ff = init_ff(d, config.ff_dim, rng);
    layer.ln3 = init_ln(d);
    p.decoder.push_back(std::move(layer));
  }
  return p;
}

std::vector<Mat*> ModelParams::tensors() {
  std::vector<Mat*> out;
  out.push_back(&embedding);
  for (auto& layer : encoder) {
    collect(layer.self_attn, out);
    collect(layer.ln1, out);
    collect(layer.ff, out);
    collect(layer.ln2, out);
  }
  for (auto& layer : decoder) {
    collect(layer.self_attn, out);
    collect(layer.ln1, out);
    collect(layer.cross_attn, out);
    collect(layer.ln2, out);
    collect(layer.ff, out);
    collect(layer.ln3, out);
  }
  return out;
}

std::vector<const Mat*> ModelParams::tensors() const {
  auto mutable_tensors = const_cast<ModelParams*>(this)->tensors();
  return std::vector<const Mat*>(mutable_tensors.begin(), mutable_tensors.end());
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams p = other;
  for (Mat* t : p.tensors()) t->setZero();
  return p;
}

long long ModelParams::parameter_count() const {
  long long n = 0;
  for (const Mat* t : tensors()) n += static_cast<long long>(t->size());
  return n;
}

Mat positional_encoding(int len, int dim) {
  Mat pe(len, dim);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double angle = pos * std::exp(-std::log(10000.0) * static_cast<double>(i) / dim);
      pe(pos, i) = std::sin(angle);
      if (i + 1 < dim) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Batch make_batch(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                 const std::vector<std::size_t>& indices) {
  Batch batch;
  batch.n_rows = static_cast<int>(indices.size());
  for (std::size_t idx : indices) {
    batch.src_len = std::max(batch.src_len, static_cast<int>(pairs[idx].first.size()) + 1);
    batch.tgt_len = std::max(batch.tgt_len, static_cast<int>(pairs[idx].second.size()) + 1);
  }
  batch.src.assign(static_cast<std::size_t>(batch.n_rows) * batch.src_len, subword::kPadId);
  batch.tgt_in.assign(static_cast<std::size_t>(batch.n_rows) * batch.tgt_len, subword::kPadId);
  batch.tgt_out.assign(static_cast<std::size_t>(batch.n_rows) * batch.tgt_len, subword::kPadId);
  for (int b = 0; b < batch.n_rows; ++b) {
    const auto& [src_ids, tgt_ids] = pairs[indices[static_cast<std::size_t>(b)]];
    const std::size_t s0 = static_cast<std::size_t>(b) * batch.src_len;
    for (std::size_t i = 0; i < src_ids.size(); ++i) batch.src[s0 + i] = src_ids[i];
    batch.src[s0 + src_ids.size()] = subword::kEosId;
    batch.src_lens.push_back(static_cast<int>(src_ids.size()) + 1);

    const std::size_t t0 = static_cast<std::size_t>(b) * batch.tgt_len;
    batch.tgt_in[t0] = subword::kBosId;
    for (std::size_t i = 0; i < tgt_ids.size(); ++i) {
      batch.tgt_in[t0 + i + 1] = tgt_ids[i];
      batch.tgt_out[t0 + i] = tgt_ids[i];
    }
    batch.tgt_out[t0 + tgt_ids.size()] = subword::kEosId;
    batch.tgt_lens.push_back(static_cast<int>(tgt_ids.size()) + 1);
    batch.target_tokens += static_cast<long long>(tgt_ids.size()) + 1;
  }
  return batch;
}

void forward(const ModelParams& params, const TransformerConfig& config, const Batch& batch,
             bool train_mode, Rng* rng, ForwardCache& cache) {
  if (train_mode && rng == nullptr) {
    fail(ErrorKind::invalid_argument, "forward: train_mode requires an rng");
  }
  if (batch.src_len > config.max_len || batch.tgt_len > config.max_len) {
    fail(ErrorKind::invalid_argument, "batch exceeds max_len");
  }
  for (int id : batch.src) {
    if (id < 0 || id >= config.vocab_size) fail(ErrorKind::invalid_argument, "source id out of vocab");
  }
  for (int id : batch.tgt_in) {
    if (id < 0 || id >= config.vocab_size) fail(ErrorKind::invalid_argument, "target id out of vocab");
  }
  const int d = config.embed_dim;
  const bool drop = train_mode && config.dropout > 0.0;

  // Encoder.
  Mat x = embed(params.embedding, batch.src, batch.n_rows, batch.src_len, d);
  if (drop) {
    cache.enc_emb_drop_mask = dropout_mask(x.rows(), x.cols(), config.dropout, *rng);
    x = x.array() * cache.enc_emb_drop_mask.array();
  } else {
    cache.enc_emb_drop_mask.resize(0, 0);
  }
  cache.enc_x0 = x;
  cache.enc.assign(static_cast<std::size_t>(config.layers), {});
  for (int l = 0; l < config.layers; ++l) {
    auto& lp = params.encoder[static_cast<std::size_t>(l)];
    auto& lc = cache.enc[static_cast<std::size_t>(l)];
    Mat a = attention(lp.self_attn, x, x, batch.n_rows, batch.src_len, batch.src_len, config.heads,
                      batch.src_lens, /*causal=*/false, config.attention_dropout, train_mode, rng,
                      lc.attn);
    Mat y1 = sublayer_connect(x, a, lp.ln1, config.dropout, train_mode, rng, lc.sub1);
    Mat f = feed_forward(y1, lp.ff, lc.ff);
    x = sublayer_connect(y1, f, lp.ln2, config.dropout, train_mode, rng, lc.sub2);
    lc.out = x;
  }
  cache.enc_out = x;

  // Decoder.
  Mat y = embed(params.embedding, batch.tgt_in, batch.n_rows, batch.tgt_len, d);
  if (drop) {
    cache.dec_emb_drop_mask = dropout_mask(y.rows(), y.cols(), config.dropout, *rng);
    y = y.array() * cache.dec_emb_drop_mask.array();
  } else {
    cache.dec_emb_drop_mask.resize(0, 0);
  }
  cache.dec_x0 = y;
  cache.dec.assign(static_cast<std::size_t>(config.layers), {});
  std::vector<int> full_tgt(static_cast<std::size_t>(batch.n_rows), batch.tgt_len);
  for (int l = 0; l < config.layers; ++l) {
    auto& lp = params.decoder[static_cast<std::size_t>(l)];
    auto& lc = cache.dec[static_cast<std::size_t>(l)];
    Mat a = attention(lp.self_attn, y, y, batch.n_rows, batch.tgt_len, batch.tgt_len, config.heads,
                      full_tgt, /*causal=*/true, config.attention_dropout, train_mode, rng,
                      lc.self_attn);
    Mat y1 = sublayer_connect(y, a, lp.ln1, config.dropout, train_mode, rng, lc.sub1);
    Mat c = attention(lp.cross_attn, y1, cache.enc_out, batch.n_rows, batch.tgt_len, batch.src_len,
                      config.heads, batch.src_lens, /*causal=*/false, config.attention_dropout,
                      train_mode, rng, lc.cross_attn);
    Mat y2 = sublayer_connect(y1, c, lp.ln2, config.dropout, train_mode, rng, lc.sub2);
    Mat f = feed_forward(y2, lp.ff, lc.ff);
    y = sublayer_connect(y2, f, lp.ln3, config.dropout, train_mode, rng, lc.sub3);
    lc.out = y;
  }
  cache.dec_out = y;
  cache.logits.noalias() = y * params.embedding.transpose();
}

LossResult label_smoothed_loss(const Mat& logits, const Batch& batch, double epsilon, Mat* dlogits) {
  const Eigen::Index v = logits.cols();
  LossResult result;
  if (dlogits) *dlogits = Mat::Zero(logits.rows(), v);

  // First pass to know the token count for the mean.
  for (int id : batch.tgt_out) {
    if (id != subword::kPadId) ++result.tokens;
  }
  if (result.tokens == 0) return result;
  const double inv_n = 1.0 / static_cast<double>(result.tokens);
  const double off_mass = epsilon / static_cast<double>(v - 1);

  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int target = batch.tgt_out[static_cast<std::size_t>(r)];
    if (target == subword::kPadId) continue;
    const auto row = logits.row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    const double logp_sum = row.sum() - static_cast<double>(v) * lse;
    const double logp_true = row(target) - lse;
    result.nll += -logp_true;
    result.loss += -(1.0 - epsilon) * logp_true - off_mass * (logp_sum - logp_true);
    if (dlogits) {
      // d(loss)/d(logit) = (softmax - q) / n_tokens
      Eigen::RowVectorXd p = (row.array() - lse).exp();
      p.array() -= off_mass;
      p(target) -= (1.0 - epsilon) - off_mass;
      dlogits->row(r) = p * inv_n;
    }
  }
  result.loss *= inv_n;
  result.nll *= inv_n;
  return result;
}

double token_accuracy(const Mat& logits, const Batch& batch) {
  long long correct = 0, total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int target = batch.tgt_out[static_cast<std::size_t>(r)];
    if (target == subword::kPadId) continue;
    Eigen::Index argmax = 0;
    logits.row(r).maxCoeff(&argmax);
    ++total;
    if (static_cast<int>(argmax) == target) ++correct;
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

ModelParams backward(const ModelParams& params, const TransformerConfig& config, const Batch& batch,
                     const ForwardCache& cache, const Mat& dlogits) {
  ModelParams grads = ModelParams::zeros_like(params);

  // Tied output projection: logits = dec_out * E^T.
  Mat dy = dlogits * params.embedding;
  grads.embedding.noalias() += dlogits.transpose() * cache.dec_out;

  std::vector<int> full_tgt(static_cast<std::size_t>(batch.n_rows), batch.tgt_len);
  Mat denc_total = Mat::Zero(cache.enc_out.rows(), cache.enc_out.cols());

  for (int l = config.layers - 1; l >= 0; --l) {
    auto& lp = params.decoder[static_cast<std::size_t>(l)];
    auto& lg = grads.decoder[static_cast<std::size_t>(l)];
    auto& lc = cache.dec[static_cast<std::size_t>(l)];

    Mat dsub;
    Mat dy2 = sublayer_backward(lp.ln3, lg.ln3, lc.sub3, dy, dsub);
    dy2 += feed_forward_backward(lp.ff, lg.ff, lc.ff, dsub);

    Mat dy1 = sublayer_backward(lp.ln2, lg.ln2, lc.sub2, dy2, dsub);
    auto cross = attention_backward(lp.cross_attn, lg.cross_attn, lc.cross_attn, dsub, batch.n_rows,
                                    batch.tgt_len, batch.src_len, config.heads);
    dy1 += cross.dx_q;
    denc_total += cross.dx_kv;

    Mat dy0 = sublayer_backward(lp.ln1, lg.ln1, lc.sub1, dy1, dsub);
    auto self = attention_backward(lp.self_attn, lg.self_attn, lc.self_attn, dsub, batch.n_rows,
                                   batch.tgt_len, batch.tgt_len, config.heads);
    dy = dy0 + self.dx_q + self.dx_kv;
  }
  if (cache.dec_emb_drop_mask.size() > 0) dy = dy.array() * cache.dec_emb_drop_mask.array();
  embed_backward(grads.embedding, batch.tgt_in, dy, batch.n_rows, batch.tgt_len, config.embed_dim);

  Mat dx = denc_total;
  for (int l = config.layers - 1; l >= 0; --l) {
    auto& lp = params.encoder[static_cast<std::size_t>(l)];
    auto& lg = grads.encoder[static_cast<std::size_t>(l)];
    auto& lc = cache.enc[static_cast<std::size_t>(l)];

    Mat dsub;
    Mat dy1 = sublayer_backward(lp.ln2, lg.ln2, lc.sub2, dx, dsub);
    dy1 += feed_forward_backward(lp.ff, lg.ff, lc.ff, dsub);

    Mat dx0 = sublayer_backward(lp.ln1, lg.ln1, lc.sub1, dy1, dsub);
    auto self = attention_backward(lp.self_attn, lg.self_attn, lc.attn, dsub, batch.n_rows,
                                   batch.src_len, batch.src_len, config.heads);
    dx = dx0 + self.dx_q + self.dx_kv;
  }
  if (cache.enc_emb_drop_mask.size() > 0) dx = dx.array() * cache.enc_emb_drop_mask.array();
  embed_backward(grads.embedding, batch.src, dx, batch.n_rows, batch.src_len, config.embed_dim);

  return grads;
}

}  // namespace lrmt::model
