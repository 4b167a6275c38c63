#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "citecat/corpus.hpp"
#include "citecat/error.hpp"
#include "citecat/metrics.hpp"
#include "citecat/nn.hpp"

// Neural core: bi-LSTM over [static ; trainable] token embeddings, additive
// attention pooling, and three MLP heads (purpose / worthiness / section)
// trained with a weighted multi-task cross-entropy loss. Gradients are
// hand-derived reverse-mode; see the *_backward functions.
namespace citecat::model {

enum class Task { purpose, worthiness, section };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::purpose: return "purpose";
    case Task::worthiness: return "worthiness";
    case Task::section: return "section";
  }
  return "?";
}

inline constexpr size_t kNumWorthinessClasses = 2;
inline constexpr size_t kNumSectionClasses = 7;
inline constexpr size_t kNumHandFeaturesIn = 9;

inline size_t classes_for(Task t) {
  switch (t) {
    case Task::purpose: return corpus::kNumPurposeLabels;
    case Task::worthiness: return kNumWorthinessClasses;
    case Task::section: return kNumSectionClasses;
  }
  return 0;
}

struct ModelConfig {
  size_t h_lstm = 64;       // per-direction hidden width
  size_t mlp_hidden = 128;  // H, shared by all three heads
  size_t d_static = 0;      // frozen word-vector width
  size_t d_trainable = 32;  // trained embedding width
  size_t vocab_rows = 0;    // trainable rows including the UNK row
  size_t n_tfidf = 0;       // TF-IDF vector width
  bool use_hand = true;
  bool use_lstm = true;  // false: attention output replaced by a zero vector
  bool use_tfidf = true;

  size_t d_input() const { return d_static + d_trainable; }
  size_t d_sentence() const { return 2 * h_lstm; }
  size_t purpose_input_width() const {
    return d_sentence() + (use_hand ? kNumHandFeaturesIn : 0) +
           (use_tfidf ? n_tfidf : 0);
  }
};

inline void validate_model_config(const ModelConfig& c) {
  if (c.h_lstm < 1) throw ConfigError("model: h_lstm must be >= 1");
  if (c.mlp_hidden < 1) throw ConfigError("model: mlp_hidden must be >= 1");
  if (c.d_trainable < 1) throw ConfigError("model: d_trainable must be >= 1");
  if (c.vocab_rows < 1) throw ConfigError("model: vocab_rows must be >= 1");
  if (c.use_tfidf && c.n_tfidf < 1)
    throw ConfigError("model: n_tfidf must be >= 1 when the TF-IDF slot is enabled");
}

// One tokenized text ready for the encoder: per-token frozen static vectors
// plus row indices into the trainable embedding matrix.
struct TokenSeq {
  std::vector<std::vector<double>> static_vecs;  // each d_static
  std::vector<size_t> rows;                      // each < vocab_rows
  size_t length() const { return rows.size(); }
};

struct PurposeItem {
  TokenSeq tokens;
  std::vector<double> hand;   // 9, standardized
  std::vector<double> tfidf;  // n_tfidf, dense
  int label = 0;              // PurposeLabel index
};

struct ScaffoldItem {
  TokenSeq tokens;
  int label = 0;
};

// Combined-gate LSTM tensors; rows [0,h) = input gate i, [h,2h) = forget f,
// [2h,3h) = candidate g, [3h,4h) = output o.
struct LstmDir {
  nn::Tensor W;  // 4h x d_input
  nn::Tensor U;  // 4h x h
  nn::Tensor b;  // 4h x 1
};

struct Mlp {
  nn::Tensor W1, b1;  // H x in, H x 1
  nn::Tensor W2, b2;  // classes x H, classes x 1
};

struct ModelParameters {
  ModelConfig config;
  nn::Tensor embedding;  // vocab_rows x d_trainable
  LstmDir fwd, bwd;
  nn::Tensor att_W;  // 2h x 2h
  nn::Tensor att_b;  // 2h x 1
  nn::Tensor att_u;  // 2h x 1
  Mlp purpose, worthiness, section;
};

// Fixed parameter enumeration; also the checkpoint shape-table order.
template <typename Params, typename Fn>
void for_each_param(Params&& p, Fn&& fn) {
  fn("embedding", p.embedding);
  fn("lstm_fwd.W", p.fwd.W);
  fn("lstm_fwd.U", p.fwd.U);
  fn("lstm_fwd.b", p.fwd.b);
  fn("lstm_bwd.W", p.bwd.W);
  fn("lstm_bwd.U", p.bwd.U);
  fn("lstm_bwd.b", p.bwd.b);
  fn("attention.W", p.att_W);
  fn("attention.b", p.att_b);
  fn("attention.u", p.att_u);
  fn("purpose.W1", p.purpose.W1);
  fn("purpose.b1", p.purpose.b1);
  fn("purpose.W2", p.purpose.W2);
  fn("purpose.b2", p.purpose.b2);
  fn("worthiness.W1", p.worthiness.W1);
  fn("worthiness.b1", p.worthiness.b1);
  fn("worthiness.W2", p.worthiness.W2);
  fn("worthiness.b2", p.worthiness.b2);
  fn("section.W1", p.section.W1);
  fn("section.b1", p.section.b1);
  fn("section.W2", p.section.W2);
  fn("section.b2", p.section.b2);
}

inline ModelParameters make_parameters(const ModelConfig& c) {
  validate_model_config(c);
  ModelParameters p;
  p.config = c;
  const size_t h = c.h_lstm, s = c.d_sentence(), H = c.mlp_hidden;
  p.embedding = nn::Tensor(c.vocab_rows, c.d_trainable);
  for (LstmDir* d : {&p.fwd, &p.bwd}) {
    d->W = nn::Tensor(4 * h, c.d_input());
    d->U = nn::Tensor(4 * h, h);
    d->b = nn::Tensor(4 * h, 1);
  }
  p.att_W = nn::Tensor(s, s);
  p.att_b = nn::Tensor(s, 1);
  p.att_u = nn::Tensor(s, 1);
  auto head = [&](Mlp& m, size_t in, size_t classes) {
    m.W1 = nn::Tensor(H, in);
    m.b1 = nn::Tensor(H, 1);
    m.W2 = nn::Tensor(classes, H);
    m.b2 = nn::Tensor(classes, 1);
  };
  head(p.purpose, c.purpose_input_width(), corpus::kNumPurposeLabels);
  head(p.worthiness, s, kNumWorthinessClasses);
  head(p.section, s, kNumSectionClasses);
  return p;
}

inline ModelParameters zeros_like(const ModelParameters& p) {
  return make_parameters(p.config);
}

// Deterministic init: embedding uniform(-0.1, 0.1), weight matrices
// Glorot-uniform, biases zero. Draw order = for_each_param order.
inline ModelParameters init_parameters(const ModelConfig& c, nn::Rng& rng) {
  ModelParameters p = make_parameters(c);
  for_each_param(p, [&](const char* name, nn::Tensor& t) {
    std::string_view n(name);
    if (n == "embedding") {
      rng.fill_uniform(t, -0.1, 0.1);
    } else if (t.cols == 1 && n != "attention.u") {
      // biases stay zero
    } else {
      rng.fill_xavier(t);
    }
  });
  return p;
}

// ---- forward caches -------------------------------------------------------

struct LstmStepCache {
  std::vector<double> x, h_prev, c_prev;
  std::vector<double> i, f, g, o, c, tanh_c, h;
};

struct AttnCache {
  std::vector<std::vector<double>> a;  // tanh(W h_t + b)
  std::vector<double> e, alpha;
  std::vector<double> s;  // pooled sentence vector
};

struct MlpCache {
  std::vector<double> input, z1, h1, h1d, mask, logits;
};

struct ItemCache {
  std::vector<size_t> rows;
  std::vector<std::vector<double>> inputs;    // [static ; trainable] per token
  std::vector<LstmStepCache> fwd, bwd;        // in processing order
  std::vector<std::vector<double>> H;         // [h_fwd(t) ; h_bwd(t)] per token
  AttnCache attn;
  MlpCache mlp;
  bool used_lstm = false;
};

// ---- forward --------------------------------------------------------------

inline void lstm_step_cached(const LstmDir& p, size_t h_dim,
                             const std::vector<double>& x,
                             const std::vector<double>& h_prev,
                             const std::vector<double>& c_prev,
                             LstmStepCache& out) {
  std::vector<double> pre;
  nn::affine(p.W, x, p.b, pre);  // pre = W x + b
  for (size_t r = 0; r < 4 * h_dim; ++r) {
    const double* urow = p.U.v.data() + r * h_dim;
    double acc = 0;
    for (size_t k = 0; k < h_dim; ++k) acc += urow[k] * h_prev[k];
    pre[r] += acc;
  }
  out.x = x;
  out.h_prev = h_prev;
  out.c_prev = c_prev;
  out.i.resize(h_dim);
  out.f.resize(h_dim);
  out.g.resize(h_dim);
  out.o.resize(h_dim);
  out.c.resize(h_dim);
  out.tanh_c.resize(h_dim);
  out.h.resize(h_dim);
  for (size_t k = 0; k < h_dim; ++k) {
    out.i[k] = nn::sigmoid(pre[k]);
    out.f[k] = nn::sigmoid(pre[h_dim + k]);
    out.g[k] = std::tanh(pre[2 * h_dim + k]);
    out.o[k] = nn::sigmoid(pre[3 * h_dim + k]);
    out.c[k] = out.f[k] * c_prev[k] + out.i[k] * out.g[k];
    out.tanh_c[k] = std::tanh(out.c[k]);
    out.h[k] = out.o[k] * out.tanh_c[k];
  }
}

// Single LSTM cell update; gates i,f,o sigmoid, candidate g tanh,
// c = f*c_prev + i*g, h = o*tanh(c).
inline std::pair<std::vector<double>, std::vector<double>> lstm_step(
    const LstmDir& p, const std::vector<double>& x,
    const std::vector<double>& h_prev, const std::vector<double>& c_prev) {
  if (p.U.rows != 4 * p.U.cols || p.W.rows != p.U.rows || p.b.size() != p.W.rows)
    throw Error("lstm_step: inconsistent gate tensor shapes");
  size_t h_dim = p.U.cols;
  if (x.size() != p.W.cols || h_prev.size() != h_dim || c_prev.size() != h_dim)
    throw Error("lstm_step: input shape mismatch");
  LstmStepCache c;
  lstm_step_cached(p, h_dim, x, h_prev, c_prev, c);
  return {c.h, c.c};
}

inline void check_lstm_shapes(const ModelParameters& P) {
  const auto& c = P.config;
  for (const LstmDir* d : {&P.fwd, &P.bwd}) {
    if (d->W.rows != 4 * c.h_lstm || d->W.cols != c.d_input() ||
        d->U.rows != 4 * c.h_lstm || d->U.cols != c.h_lstm ||
        d->b.size() != 4 * c.h_lstm)
      throw Error("bilstm: parameter shapes do not match the model config");
  }
}

// Fills cache.fwd/bwd/H from cache.inputs. Forward direction walks left to
// right, backward right to left, both from zero initial states;
// H[t] = [h_fwd(t) ; h_bwd(t)].
inline void bilstm_forward(const ModelParameters& P, ItemCache& cache) {
  const size_t T = cache.inputs.size();
  if (T == 0) throw Error("bilstm: empty sequence");
  check_lstm_shapes(P);
  const size_t h = P.config.h_lstm;
  cache.fwd.resize(T);
  cache.bwd.resize(T);
  std::vector<double> hp(h, 0.0), cp(h, 0.0);
  for (size_t t = 0; t < T; ++t) {
    lstm_step_cached(P.fwd, h, cache.inputs[t], hp, cp, cache.fwd[t]);
    hp = cache.fwd[t].h;
    cp = cache.fwd[t].c;
  }
  hp.assign(h, 0.0);
  cp.assign(h, 0.0);
  for (size_t s = 0; s < T; ++s) {
    size_t t = T - 1 - s;  // step s of the backward pass reads token t
    lstm_step_cached(P.bwd, h, cache.inputs[t], hp, cp, cache.bwd[s]);
    hp = cache.bwd[s].h;
    cp = cache.bwd[s].c;
  }
  cache.H.assign(T, std::vector<double>(2 * h));
  for (size_t t = 0; t < T; ++t) {
    std::copy(cache.fwd[t].h.begin(), cache.fwd[t].h.end(), cache.H[t].begin());
    const auto& hb = cache.bwd[T - 1 - t].h;
    std::copy(hb.begin(), hb.end(), cache.H[t].begin() + h);
  }
}

// Standalone encoder: sequence of input vectors -> per-token [fwd ; bwd]
// hidden states.
inline std::vector<std::vector<double>> bilstm(
    const std::vector<std::vector<double>>& inputs, const ModelParameters& P) {
  ItemCache cache;
  cache.inputs = inputs;
  bilstm_forward(P, cache);
  return cache.H;
}

// Additive attention: e_t = u . tanh(W h_t + b), alpha = softmax(e),
// s = sum_t alpha_t h_t.
inline void attention_forward(const ModelParameters& P,
                              const std::vector<std::vector<double>>& H,
                              AttnCache& cache) {
  if (H.empty()) throw Error("attention: no hidden states");
  const size_t T = H.size(), s_dim = P.att_u.size();
  cache.a.assign(T, {});
  cache.e.resize(T);
  for (size_t t = 0; t < T; ++t) {
    std::vector<double> z;
    nn::affine(P.att_W, H[t], P.att_b, z);
    auto& a = cache.a[t];
    a.resize(s_dim);
    double e = 0;
    for (size_t j = 0; j < s_dim; ++j) {
      a[j] = std::tanh(z[j]);
      e += P.att_u.v[j] * a[j];
    }
    cache.e[t] = e;
  }
  cache.alpha = nn::softmax(cache.e);
  cache.s.assign(s_dim, 0.0);
  for (size_t t = 0; t < T; ++t)
    for (size_t j = 0; j < s_dim; ++j) cache.s[j] += cache.alpha[t] * H[t][j];
}

inline std::vector<double> attention(const std::vector<std::vector<double>>& H,
                                     const nn::Tensor& W_a, const nn::Tensor& b_a,
                                     const nn::Tensor& u_w) {
  ModelParameters tmp;
  tmp.att_W = W_a;
  tmp.att_b = b_a;
  tmp.att_u = u_w;
  AttnCache c;
  attention_forward(tmp, H, c);
  return c.s;
}

// Inverted-dropout mask: entry 0 with probability p, else 1/(1-p). p = 0
// consumes no draws.
inline std::vector<double> make_dropout_mask(size_t n, double p, nn::Rng& rng) {
  std::vector<double> m(n, 1.0);
  if (p <= 0.0) return m;
  const double scale = 1.0 / (1.0 - p);
  for (double& x : m) x = rng.uniform01() < p ? 0.0 : scale;
  return m;
}

// affine -> ReLU -> dropout -> affine. mask == nullptr disables dropout.
inline void mlp_forward(const Mlp& m, const std::vector<double>& input,
                        const std::vector<double>* mask, MlpCache& c) {
  c.input = input;
  nn::affine(m.W1, input, m.b1, c.z1);
  c.h1.resize(c.z1.size());
  for (size_t i = 0; i < c.z1.size(); ++i) c.h1[i] = c.z1[i] > 0 ? c.z1[i] : 0.0;
  if (mask) {
    if (mask->size() != c.h1.size()) throw Error("mlp: dropout mask size mismatch");
    c.mask = *mask;
    c.h1d.resize(c.h1.size());
    for (size_t i = 0; i < c.h1.size(); ++i) c.h1d[i] = c.h1[i] * c.mask[i];
  } else {
    c.mask.clear();
    c.h1d = c.h1;
  }
  nn::affine(m.W2, c.h1d, m.b2, c.logits);
}

inline void build_inputs(const ModelParameters& P, const TokenSeq& seq,
                         ItemCache& cache) {
  const auto& c = P.config;
  const size_t T = seq.length();
  if (T == 0) throw Error("model: empty token sequence");
  if (seq.static_vecs.size() != T)
    throw Error("model: static/trainable token channels differ in length");
  cache.rows = seq.rows;
  cache.inputs.assign(T, {});
  for (size_t t = 0; t < T; ++t) {
    if (seq.static_vecs[t].size() != c.d_static)
      throw Error("model: static vector width mismatch");
    if (seq.rows[t] >= c.vocab_rows)
      throw Error("model: trainable embedding row out of range");
    auto& x = cache.inputs[t];
    x.reserve(c.d_input());
    x.insert(x.end(), seq.static_vecs[t].begin(), seq.static_vecs[t].end());
    const double* row = P.embedding.v.data() + seq.rows[t] * c.d_trainable;
    x.insert(x.end(), row, row + c.d_trainable);
  }
}

// Runs encoder + attention (or the zero substitute) and leaves the pooled
// sentence vector in cache.attn.s.
inline void encode_item(const ModelParameters& P, const TokenSeq& seq,
                        ItemCache& cache) {
  if (P.config.use_lstm) {
    build_inputs(P, seq, cache);
    bilstm_forward(P, cache);
    attention_forward(P, cache.H, cache.attn);
    cache.used_lstm = true;
  } else {
    cache.attn.s.assign(P.config.d_sentence(), 0.0);
    cache.used_lstm = false;
  }
}

// Purpose head input = [attention output ; hand features ; TF-IDF vector],
// with the hand/TF-IDF slots dropped when disabled in the config.
inline const std::vector<double>& purpose_forward(const ModelParameters& P,
                                                  const PurposeItem& item,
                                                  const std::vector<double>* mask,
                                                  ItemCache& cache) {
  const auto& c = P.config;
  encode_item(P, item.tokens, cache);
  std::vector<double> in;
  in.reserve(c.purpose_input_width());
  in.insert(in.end(), cache.attn.s.begin(), cache.attn.s.end());
  if (c.use_hand) {
    if (item.hand.size() != kNumHandFeaturesIn)
      throw Error("purpose item is missing its hand features");
    in.insert(in.end(), item.hand.begin(), item.hand.end());
  }
  if (c.use_tfidf) {
    if (item.tfidf.size() != c.n_tfidf)
      throw Error("purpose item is missing its TF-IDF vector");
    in.insert(in.end(), item.tfidf.begin(), item.tfidf.end());
  }
  mlp_forward(P.purpose, in, mask, cache.mlp);
  return cache.mlp.logits;
}

inline const Mlp& head_for(const ModelParameters& P, Task t) {
  switch (t) {
    case Task::purpose: return P.purpose;
    case Task::worthiness: return P.worthiness;
    case Task::section: return P.section;
  }
  throw Error("unknown task");
}

inline Mlp& head_for(ModelParameters& P, Task t) {
  return const_cast<Mlp&>(head_for(const_cast<const ModelParameters&>(P), t));
}

// Scaffold heads see only the sentence encoding.
inline const std::vector<double>& scaffold_forward(const ModelParameters& P,
                                                   const ScaffoldItem& item,
                                                   Task task,
                                                   const std::vector<double>* mask,
                                                   ItemCache& cache) {
  if (task == Task::purpose) throw Error("scaffold_forward: purpose is not a scaffold task");
  encode_item(P, item.tokens, cache);
  mlp_forward(head_for(P, task), cache.attn.s, mask, cache.mlp);
  return cache.mlp.logits;
}

// ---- backward -------------------------------------------------------------

inline void mlp_backward(const Mlp& m, const MlpCache& c,
                         const std::vector<double>& dlogits, Mlp& gm,
                         std::vector<double>& dinput) {
  nn::accumulate_outer(gm.W2, gm.b2, dlogits, c.h1d);
  std::vector<double> dh1d(c.h1d.size(), 0.0);
  nn::add_matT_vec(m.W2, dlogits, dh1d);
  std::vector<double> dz1(dh1d.size());
  for (size_t i = 0; i < dz1.size(); ++i) {
    double d = c.mask.empty() ? dh1d[i] : dh1d[i] * c.mask[i];
    dz1[i] = c.z1[i] > 0 ? d : 0.0;
  }
  nn::accumulate_outer(gm.W1, gm.b1, dz1, c.input);
  dinput.assign(c.input.size(), 0.0);
  nn::add_matT_vec(m.W1, dz1, dinput);
}

inline void attention_backward(const ModelParameters& P, const ItemCache& cache,
                               const std::vector<double>& ds,
                               ModelParameters& g,
                               std::vector<std::vector<double>>& dH) {
  const auto& at = cache.attn;
  const size_t T = cache.H.size(), s_dim = ds.size();
  dH.assign(T, std::vector<double>(s_dim, 0.0));
  // s = sum alpha_t H_t
  std::vector<double> dalpha(T, 0.0);
  for (size_t t = 0; t < T; ++t) {
    double dot = 0;
    for (size_t j = 0; j < s_dim; ++j) {
      dot += ds[j] * cache.H[t][j];
      dH[t][j] += at.alpha[t] * ds[j];
    }
    dalpha[t] = dot;
  }
  // softmax: de_t = alpha_t (dalpha_t - sum_k alpha_k dalpha_k)
  double mix = 0;
  for (size_t t = 0; t < T; ++t) mix += at.alpha[t] * dalpha[t];
  for (size_t t = 0; t < T; ++t) {
    double de = at.alpha[t] * (dalpha[t] - mix);
    // e_t = u . a_t, a_t = tanh(W H_t + b)
    std::vector<double> dz(s_dim);
    for (size_t j = 0; j < s_dim; ++j) {
      g.att_u.v[j] += de * at.a[t][j];
      double da = de * P.att_u.v[j];
      dz[j] = da * (1.0 - at.a[t][j] * at.a[t][j]);
    }
    nn::accumulate_outer(g.att_W, g.att_b, dz, cache.H[t]);
    nn::add_matT_vec(P.att_W, dz, dH[t]);
  }
}

namespace detail {

// BPTT through one direction. steps are in processing order; token_of_step
// maps a step to its token index; offset selects this direction's half of dH.
inline void lstm_direction_backward(const LstmDir& p, const ModelConfig& cfg,
                                    const std::vector<LstmStepCache>& steps,
                                    const std::vector<std::vector<double>>& dH,
                                    size_t offset, bool forward_dir,
                                    const std::vector<size_t>& rows,
                                    LstmDir& gp, nn::Tensor& g_embedding) {
  const size_t T = steps.size(), h = cfg.h_lstm;
  std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0);
  std::vector<double> dpre(4 * h), dx(cfg.d_input());
  for (size_t s = T; s-- > 0;) {
    const auto& st = steps[s];
    const size_t token = forward_dir ? s : T - 1 - s;
    std::vector<double> dh(h);
    for (size_t k = 0; k < h; ++k) dh[k] = dH[token][offset + k] + dh_next[k];
    for (size_t k = 0; k < h; ++k) {
      const double do_ = dh[k] * st.tanh_c[k];
      const double dc = dc_next[k] + dh[k] * st.o[k] * (1.0 - st.tanh_c[k] * st.tanh_c[k]);
      const double di = dc * st.g[k];
      const double df = dc * st.c_prev[k];
      const double dg = dc * st.i[k];
      dpre[k] = di * st.i[k] * (1.0 - st.i[k]);
      dpre[h + k] = df * st.f[k] * (1.0 - st.f[k]);
      dpre[2 * h + k] = dg * (1.0 - st.g[k] * st.g[k]);
      dpre[3 * h + k] = do_ * st.o[k] * (1.0 - st.o[k]);
      dc_next[k] = dc * st.f[k];  // becomes dc_prev
    }
    nn::accumulate_outer(gp.W, gp.b, dpre, st.x);
    for (size_t r = 0; r < 4 * h; ++r) {
      double* urow = gp.U.v.data() + r * h;
      const double d = dpre[r];
      for (size_t k = 0; k < h; ++k) urow[k] += d * st.h_prev[k];
    }
    dh_next.assign(h, 0.0);
    nn::add_matT_vec(p.U, dpre, dh_next);
    dx.assign(cfg.d_input(), 0.0);
    nn::add_matT_vec(p.W, dpre, dx);
    // static channel is frozen; only the trainable slice gets gradient
    double* erow = g_embedding.v.data() + rows[token] * cfg.d_trainable;
    for (size_t j = 0; j < cfg.d_trainable; ++j) erow[j] += dx[cfg.d_static + j];
  }
}

}  // namespace detail

// Backprop from the pooled-vector gradient ds through attention, both LSTM
// directions, and into the trainable embedding rows.
inline void encoder_backward(const ModelParameters& P, const ItemCache& cache,
                             const std::vector<double>& ds, ModelParameters& g) {
  if (!cache.used_lstm) return;  // zero substitute: nothing upstream to reach
  std::vector<std::vector<double>> dH;
  attention_backward(P, cache, ds, g, dH);
  detail::lstm_direction_backward(P.fwd, P.config, cache.fwd, dH, 0, true,
                                  cache.rows, g.fwd, g.embedding);
  detail::lstm_direction_backward(P.bwd, P.config, cache.bwd, dH, P.config.h_lstm,
                                  false, cache.rows, g.bwd, g.embedding);
}

// ---- batch loss / gradients -----------------------------------------------

// Mean unweighted cross-entropy over one purpose batch. When grads is
// non-null, accumulates d(weight * mean CE)/d(theta). masks supplies one
// dropout mask per item; nullptr disables dropout.
inline double purpose_batch(const ModelParameters& P,
                            const std::vector<const PurposeItem*>& batch,
                            double weight,
                            const std::vector<std::vector<double>>* masks,
                            ModelParameters* grads) {
  if (batch.empty()) throw Error("purpose_batch: empty batch");
  const double scale = weight / static_cast<double>(batch.size());
  double loss_sum = 0;
  for (size_t k = 0; k < batch.size(); ++k) {
    const PurposeItem& item = *batch[k];
    if (item.label < 0 || item.label >= static_cast<int>(corpus::kNumPurposeLabels))
      throw Error("purpose_batch: label out of range");
    ItemCache cache;
    const std::vector<double>* mask = masks ? &(*masks)[k] : nullptr;
    const auto& logits = purpose_forward(P, item, mask, cache);
    loss_sum += nn::cross_entropy(logits, static_cast<size_t>(item.label));
    if (grads) {
      auto dlogits = nn::cross_entropy_grad(logits, static_cast<size_t>(item.label));
      for (double& d : dlogits) d *= scale;
      std::vector<double> din;
      mlp_backward(P.purpose, cache.mlp, dlogits, grads->purpose, din);
      std::vector<double> ds(din.begin(), din.begin() + P.config.d_sentence());
      encoder_backward(P, cache, ds, *grads);
    }
  }
  return loss_sum / static_cast<double>(batch.size());
}

inline double scaffold_batch(const ModelParameters& P,
                             const std::vector<const ScaffoldItem*>& batch,
                             Task task, double weight,
                             const std::vector<std::vector<double>>* masks,
                             ModelParameters* grads) {
  if (batch.empty()) throw Error("scaffold_batch: empty batch");
  const size_t n_classes = classes_for(task);
  const double scale = weight / static_cast<double>(batch.size());
  double loss_sum = 0;
  for (size_t k = 0; k < batch.size(); ++k) {
    const ScaffoldItem& item = *batch[k];
    if (item.label < 0 || item.label >= static_cast<int>(n_classes))
      throw Error("scaffold_batch: label out of range");
    ItemCache cache;
    const std::vector<double>* mask = masks ? &(*masks)[k] : nullptr;
    const auto& logits = scaffold_forward(P, item, task, mask, cache);
    loss_sum += nn::cross_entropy(logits, static_cast<size_t>(item.label));
    if (grads) {
      auto dlogits = nn::cross_entropy_grad(logits, static_cast<size_t>(item.label));
      for (double& d : dlogits) d *= scale;
      std::vector<double> ds;
      mlp_backward(head_for(P, task), cache.mlp, dlogits, head_for(*grads, task), ds);
      encoder_backward(P, cache, ds, *grads);
    }
  }
  return loss_sum / static_cast<double>(batch.size());
}

inline double multitask_loss(double purpose_loss, double worthiness_loss,
                             double section_loss, double w_purpose,
                             double w_worthiness, double w_section) {
  return w_purpose * purpose_loss + w_worthiness * worthiness_loss +
         w_section * section_loss;
}

// ---- optimizer ------------------------------------------------------------

// Adam over every parameter tensor with one shared step counter.
struct Optimizer {
  nn::AdamConfig cfg;
  uint64_t t = 0;
  std::vector<nn::AdamSlot> slots;

  void step(ModelParameters& params, const ModelParameters& grads) {
    ++t;
    std::vector<std::pair<const char*, nn::Tensor*>> ps;
    std::vector<const nn::Tensor*> gs;
    for_each_param(params, [&](const char* n, nn::Tensor& tt) { ps.emplace_back(n, &tt); });
    for_each_param(grads, [&](const char*, const nn::Tensor& tt) { gs.push_back(&tt); });
    if (slots.size() != ps.size()) slots.resize(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
      if (!ps[i].second->same_shape(*gs[i]))
        throw Error(std::string("optimizer: gradient shape mismatch for \"") +
                    ps[i].first + "\"");
      nn::adam_update(*ps[i].second, *gs[i], slots[i], cfg, t, ps[i].first);
    }
  }
};

// Single-tensor convenience used by tests and the TF-IDF probe.
inline void optimizer_step(nn::Tensor& param, const nn::Tensor& grad,
                           nn::AdamSlot& slot, const nn::AdamConfig& cfg,
                           uint64_t t, const std::string& name = "param") {
  nn::adam_update(param, grad, slot, cfg, t, name);
}

// ---- training -------------------------------------------------------------

struct TrainConfig {
  double w_purpose = 1.0;
  double w_worthiness = 0.1;
  double w_section = 0.1;
  double lr = 1e-3;
  double dropout = 0.5;
  size_t batch_size = 32;
  size_t max_epochs = 100;
  size_t patience = 10;
  size_t scaffold_every = 4;  // one batch of each scaffold task per k purpose batches
  uint64_t seed = 13;
};

inline void validate_train_config(const TrainConfig& c) {
  if (!(c.w_purpose > 0)) throw ConfigError("train: w_purpose must be > 0");
  if (c.w_worthiness < 0 || c.w_section < 0)
    throw ConfigError("train: scaffold weights must be >= 0");
  if (!(c.w_purpose > std::max(c.w_worthiness, c.w_section)))
    throw ConfigError("train: the purpose task must outweigh both scaffold tasks");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0))
    throw ConfigError("train: dropout must lie in [0, 1)");
  if (c.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (c.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (c.patience < 1) throw ConfigError("train: patience must be >= 1");
  if (c.scaffold_every < 1) throw ConfigError("train: scaffold_every must be >= 1");
}

// Tracks the best validation score; stop once `patience` epochs pass without
// strict improvement.
struct EarlyStopper {
  size_t patience = 1;
  double best_value = -std::numeric_limits<double>::infinity();
  size_t best_epoch = 0;
  size_t epoch = 0;

  bool observe(double value) {
    ++epoch;
    if (value > best_value) {
      best_value = value;
      best_epoch = epoch;
      return true;
    }
    return false;
  }
  bool should_stop() const { return epoch >= best_epoch + patience; }
};

struct EpochRecord {
  size_t epoch = 0;  // 1-based
  double purpose_loss = 0;
  double worthiness_loss = 0;  // 0 when no batch of the task ran
  double section_loss = 0;
  double val_macro_f1 = 0;
};

struct TrainResult {
  ModelParameters params;  // best-epoch snapshot
  std::vector<EpochRecord> history;
  size_t best_epoch = 0;
  double best_val_macro_f1 = 0;
};

struct Prediction {
  int label = 0;
  std::vector<double> probs;
};

// Inference with dropout disabled; argmax ties resolve to the lowest index.
inline Prediction predict(const ModelParameters& P, const PurposeItem& item) {
  ItemCache cache;
  const auto& logits = purpose_forward(P, item, nullptr, cache);
  Prediction out;
  out.probs = nn::softmax(logits);
  out.label = 0;
  for (size_t i = 1; i < out.probs.size(); ++i)
    if (out.probs[i] > out.probs[out.label]) out.label = static_cast<int>(i);
  return out;
}

inline int predict_scaffold(const ModelParameters& P, const ScaffoldItem& item,
                            Task task) {
  ItemCache cache;
  const auto& logits = scaffold_forward(P, item, task, nullptr, cache);
  int best = 0;
  for (size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

inline double validation_macro_f1(const ModelParameters& P,
                                  const std::vector<PurposeItem>& val) {
  std::vector<int> preds, golds;
  preds.reserve(val.size());
  golds.reserve(val.size());
  for (const auto& item : val) {
    preds.push_back(predict(P, item).label);
    golds.push_back(item.label);
  }
  return eval::macro_f1(preds, golds, static_cast<int>(corpus::kNumPurposeLabels));
}

namespace detail {

// Endless shuffled walk over one scaffold dataset; reshuffles on wrap.
// Owns its RNG so skipping a task entirely leaves the other streams intact.
struct ScaffoldStream {
  const std::vector<ScaffoldItem>* items = nullptr;
  Task task = Task::worthiness;
  double weight = 0;
  nn::Rng rng{0};
  std::vector<size_t> order;
  size_t cursor = 0;

  ScaffoldStream(const std::vector<ScaffoldItem>& data, Task t, double w, uint64_t seed)
      : items(&data), task(t), weight(w), rng(seed) {
    order.resize(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
  }

  std::vector<const ScaffoldItem*> next_batch(size_t batch_size) {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    size_t take = std::min(batch_size, order.size() - cursor);
    std::vector<const ScaffoldItem*> batch;
    batch.reserve(take);
    for (size_t k = 0; k < take; ++k) batch.push_back(&(*items)[order[cursor++]]);
    return batch;
  }
};

}  // namespace detail

// Multi-task training loop. Purpose batches drive each epoch; after every
// `scaffold_every`-th purpose batch one batch of each active scaffold task is
// processed (worthiness first, then section). A scaffold task is active only
// when its weight is positive and it has data, so zero-weight runs are
// bit-identical to single-task runs. RNG streams: seed -> init, seed+1 ->
// purpose shuffling/dropout, seed+2 / seed+3 -> the scaffold streams.
inline TrainResult train(const ModelConfig& mc, const TrainConfig& tc,
                         const std::vector<PurposeItem>& train_purpose,
                         const std::vector<PurposeItem>& val_purpose,
                         const std::vector<ScaffoldItem>& worthiness_data,
                         const std::vector<ScaffoldItem>& section_data) {
  validate_model_config(mc);
  validate_train_config(tc);
  if (train_purpose.empty()) throw Error("train: no purpose training data");
  if (val_purpose.empty()) throw Error("train: no purpose validation data");

  nn::Rng init_rng(tc.seed);
  ModelParameters params = init_parameters(mc, init_rng);
  nn::Rng purpose_rng(tc.seed + 1);

  std::vector<detail::ScaffoldStream> scaffolds;
  if (tc.w_worthiness > 0 && !worthiness_data.empty())
    scaffolds.emplace_back(worthiness_data, Task::worthiness, tc.w_worthiness, tc.seed + 2);
  if (tc.w_section > 0 && !section_data.empty())
    scaffolds.emplace_back(section_data, Task::section, tc.w_section, tc.seed + 3);

  Optimizer opt;
  opt.cfg.lr = tc.lr;

  TrainResult result;
  EarlyStopper stopper{tc.patience};

  std::vector<size_t> order(train_purpose.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  size_t global_step = 0;
  for (size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    purpose_rng.shuffle(order);
    double loss_sums[3] = {0, 0, 0};
    size_t batch_counts[3] = {0, 0, 0};

    auto run_step = [&](auto&& batch_fn, Task task) {
      ModelParameters grads = zeros_like(params);
      double loss = batch_fn(grads);
      ++global_step;
      if (!std::isfinite(loss))
        throw Error("training diverged: non-finite " + std::string(to_string(task)) +
                    " loss at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(global_step));
      opt.step(params, grads);
      loss_sums[static_cast<size_t>(task)] += loss;
      ++batch_counts[static_cast<size_t>(task)];
    };

    const size_t n_batches = (order.size() + tc.batch_size - 1) / tc.batch_size;
    for (size_t b = 0; b < n_batches; ++b) {
      std::vector<const PurposeItem*> batch;
      const size_t lo = b * tc.batch_size;
      const size_t hi = std::min(order.size(), lo + tc.batch_size);
      for (size_t k = lo; k < hi; ++k) batch.push_back(&train_purpose[order[k]]);
      std::vector<std::vector<double>> masks(batch.size());
      for (auto& m : masks) m = make_dropout_mask(mc.mlp_hidden, tc.dropout, purpose_rng);
      run_step([&](ModelParameters& g) {
        return purpose_batch(params, batch, tc.w_purpose, &masks, &g);
      }, Task::purpose);

      if ((b + 1) % tc.scaffold_every == 0) {
        for (auto& stream : scaffolds) {
          auto sbatch = stream.next_batch(tc.batch_size);
          std::vector<std::vector<double>> smasks(sbatch.size());
          for (auto& m : smasks) m = make_dropout_mask(mc.mlp_hidden, tc.dropout, stream.rng);
          run_step([&](ModelParameters& g) {
            return scaffold_batch(params, sbatch, stream.task, stream.weight, &smasks, &g);
          }, stream.task);
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.purpose_loss = loss_sums[0] / static_cast<double>(batch_counts[0]);
    rec.worthiness_loss =
        batch_counts[1] ? loss_sums[1] / static_cast<double>(batch_counts[1]) : 0.0;
    rec.section_loss =
        batch_counts[2] ? loss_sums[2] / static_cast<double>(batch_counts[2]) : 0.0;
    rec.val_macro_f1 = validation_macro_f1(params, val_purpose);
    result.history.push_back(rec);

    if (stopper.observe(rec.val_macro_f1)) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_macro_f1 = rec.val_macro_f1;
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

// ---- checkpoint serialization ----------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"h_lstm", c.h_lstm},
                        {"mlp_hidden", c.mlp_hidden},
                        {"d_static", c.d_static},
                        {"d_trainable", c.d_trainable},
                        {"vocab_rows", c.vocab_rows},
                        {"n_tfidf", c.n_tfidf},
                        {"use_hand", c.use_hand},
                        {"use_lstm", c.use_lstm},
                        {"use_tfidf", c.use_tfidf}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.h_lstm = j.at("h_lstm").get<size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<size_t>();
    c.d_static = j.at("d_static").get<size_t>();
    c.d_trainable = j.at("d_trainable").get<size_t>();
    c.vocab_rows = j.at("vocab_rows").get<size_t>();
    c.n_tfidf = j.at("n_tfidf").get<size_t>();
    c.use_hand = j.at("use_hand").get<bool>();
    c.use_lstm = j.at("use_lstm").get<bool>();
    c.use_tfidf = j.at("use_tfidf").get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model config: ") + e.what());
  }
}

// {config, shapes: {name: [rows, cols]}, tensors: {name: [flat doubles]}}
inline nlohmann::json params_to_json(const ModelParameters& p) {
  nlohmann::json shapes = nlohmann::json::object();
  nlohmann::json tensors = nlohmann::json::object();
  for_each_param(p, [&](const char* name, const nn::Tensor& t) {
    shapes[name] = {t.rows, t.cols};
    tensors[name] = t.v;
  });
  return nlohmann::json{{"config", model_config_to_json(p.config)},
                        {"shapes", shapes},
                        {"tensors", tensors}};
}

inline ModelParameters params_from_json(const nlohmann::json& j) {
  ModelParameters p;
  try {
    p = make_parameters(model_config_from_json(j.at("config")));
    const auto& shapes = j.at("shapes");
    const auto& tensors = j.at("tensors");
    for_each_param(p, [&](const char* name, nn::Tensor& t) {
      if (!shapes.contains(name) || !tensors.contains(name))
        throw Error(std::string("checkpoint is missing tensor \"") + name + "\"");
      size_t r = shapes.at(name).at(0).get<size_t>();
      size_t c = shapes.at(name).at(1).get<size_t>();
      if (r != t.rows || c != t.cols)
        throw Error(std::string("checkpoint shape mismatch for \"") + name +
                    "\": expected " + std::to_string(t.rows) + "x" +
                    std::to_string(t.cols) + ", found " + std::to_string(r) + "x" +
                    std::to_string(c));
      auto vals = tensors.at(name).get<std::vector<double>>();
      if (vals.size() != t.size())
        throw Error(std::string("checkpoint tensor \"") + name + "\" has wrong length");
      t.v = std::move(vals);
    });
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
  return p;
}

}  // namespace citecat::model
