#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "citecat/model.hpp"

using namespace citecat;
using namespace citecat::model;
using Catch::Approx;

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

static ModelConfig tiny_config() {
  ModelConfig c;
  c.h_lstm = 4;
  c.mlp_hidden = 5;
  c.d_static = 3;
  c.d_trainable = 2;
  c.vocab_rows = 4;
  c.n_tfidf = 3;
  return c;
}

// init_parameters leaves biases at zero; tests that probe gradients want
// every tensor away from symmetric points.
static ModelParameters random_parameters(const ModelConfig& c, uint64_t seed) {
  nn::Rng rng(seed);
  ModelParameters p = init_parameters(c, rng);
  for_each_param(p, [&](const char*, nn::Tensor& t) {
    if (t.cols == 1) rng.fill_uniform(t, -0.3, 0.3);
  });
  return p;
}

static TokenSeq random_seq(const ModelConfig& c, nn::Rng& rng, size_t len) {
  TokenSeq seq;
  for (size_t t = 0; t < len; ++t) {
    std::vector<double> sv(c.d_static);
    for (double& x : sv) x = rng.uniform(-0.5, 0.5);
    seq.static_vecs.push_back(std::move(sv));
    seq.rows.push_back(rng.below(c.vocab_rows));
  }
  return seq;
}

static PurposeItem random_purpose_item(const ModelConfig& c, nn::Rng& rng,
                                       int label, size_t len) {
  PurposeItem item;
  item.tokens = random_seq(c, rng, len);
  item.hand.resize(kNumHandFeaturesIn);
  for (double& x : item.hand) x = rng.uniform(-1, 1);
  item.tfidf.resize(c.n_tfidf);
  for (double& x : item.tfidf) x = rng.uniform(0, 1);
  item.label = label;
  return item;
}

static std::vector<double> zeros(size_t n) { return std::vector<double>(n, 0.0); }

// ---------------------------------------------------------------------------
// lstm_step
// ---------------------------------------------------------------------------

static LstmDir zero_dir(size_t h, size_t d_in) {
  LstmDir d;
  d.W = nn::Tensor(4 * h, d_in);
  d.U = nn::Tensor(4 * h, h);
  d.b = nn::Tensor(4 * h, 1);
  return d;
}

TEST_CASE("lstm_step with zero parameters and zero cell state stays at zero") {
  auto d = zero_dir(3, 2);
  auto [h, c] = lstm_step(d, {0.7, -0.2}, zeros(3), zeros(3));
  for (double x : h) CHECK(x == 0.0);
  for (double x : c) CHECK(x == 0.0);
}

TEST_CASE("lstm_step with zero parameters halves the carried cell state") {
  auto d = zero_dir(2, 2);
  std::vector<double> c_prev = {0.8, -1.2};
  auto [h, c] = lstm_step(d, {0.1, 0.2}, zeros(2), c_prev);
  for (size_t k = 0; k < 2; ++k) {
    // gates all sigmoid(0)=0.5, candidate tanh(0)=0
    CHECK(c[k] == Approx(0.5 * c_prev[k]));
    CHECK(h[k] == Approx(0.5 * std::tanh(0.5 * c_prev[k])));
  }
}

TEST_CASE("lstm_step gate saturation with +100 biases") {
  auto d = zero_dir(2, 2);
  for (double& x : d.b.v) x = 100.0;
  LstmStepCache cache;
  lstm_step_cached(d, 2, {0.3, -0.4}, {0.1, 0.1}, {0.0, 0.0}, cache);
  for (size_t k = 0; k < 2; ++k) {
    CHECK(cache.i[k] == Approx(1.0).margin(1e-6));
    CHECK(cache.f[k] == Approx(1.0).margin(1e-6));
    CHECK(cache.o[k] == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("lstm_step rejects inconsistent shapes") {
  auto d = zero_dir(3, 2);
  CHECK_THROWS_AS(lstm_step(d, {0.7}, zeros(3), zeros(3)), Error);
  CHECK_THROWS_AS(lstm_step(d, {0.7, 0.1}, zeros(2), zeros(3)), Error);
  d.b = nn::Tensor(5, 1);
  CHECK_THROWS_AS(lstm_step(d, {0.7, 0.1}, zeros(3), zeros(3)), Error);
}

// ---------------------------------------------------------------------------
// bilstm
// ---------------------------------------------------------------------------

TEST_CASE("bilstm on a length-1 sequence matches two single steps") {
  auto c = tiny_config();
  auto P = random_parameters(c, 11);
  std::vector<double> x(c.d_input());
  nn::Rng rng(12);
  for (double& v : x) v = rng.uniform(-1, 1);

  auto H = bilstm({x}, P);
  REQUIRE(H.size() == 1);
  REQUIRE(H[0].size() == 2 * c.h_lstm);

  auto [hf, cf] = lstm_step(P.fwd, x, zeros(c.h_lstm), zeros(c.h_lstm));
  auto [hb, cb] = lstm_step(P.bwd, x, zeros(c.h_lstm), zeros(c.h_lstm));
  for (size_t k = 0; k < c.h_lstm; ++k) {
    CHECK(H[0][k] == hf[k]);
    CHECK(H[0][c.h_lstm + k] == hb[k]);
  }
}

TEST_CASE("bilstm with zero parameters emits zero hidden states") {
  auto c = tiny_config();
  auto P = make_parameters(c);  // all zeros
  nn::Rng rng(13);
  std::vector<std::vector<double>> inputs(3, std::vector<double>(c.d_input()));
  for (auto& x : inputs)
    for (double& v : x) v = rng.uniform(-1, 1);
  for (const auto& h : bilstm(inputs, P))
    for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("reversing the sequence with swapped directions mirrors the states") {
  auto c = tiny_config();
  auto P = random_parameters(c, 17);
  nn::Rng rng(18);
  const size_t T = 3, h = c.h_lstm;
  std::vector<std::vector<double>> inputs(T, std::vector<double>(c.d_input()));
  for (auto& x : inputs)
    for (double& v : x) v = rng.uniform(-1, 1);

  auto H = bilstm(inputs, P);

  ModelParameters Q = P;
  std::swap(Q.fwd, Q.bwd);
  std::vector<std::vector<double>> reversed(inputs.rbegin(), inputs.rend());
  auto H2 = bilstm(reversed, Q);

  for (size_t t = 0; t < T; ++t)
    for (size_t k = 0; k < h; ++k) {
      CHECK(H2[t][k] == H[T - 1 - t][h + k]);
      CHECK(H2[t][h + k] == H[T - 1 - t][k]);
    }
}

TEST_CASE("bilstm rejects an empty sequence") {
  auto P = random_parameters(tiny_config(), 19);
  CHECK_THROWS_AS(bilstm({}, P), Error);
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

TEST_CASE("attention over identical states returns that state") {
  auto c = tiny_config();
  auto P = random_parameters(c, 23);
  nn::Rng rng(24);
  std::vector<double> h(2 * c.h_lstm);
  for (double& v : h) v = rng.uniform(-1, 1);
  auto s = attention({h, h, h}, P.att_W, P.att_b, P.att_u);
  REQUIRE(s.size() == h.size());
  for (size_t j = 0; j < h.size(); ++j) CHECK(s[j] == Approx(h[j]).margin(1e-12));
}

TEST_CASE("attention with equal scores averages the states") {
  auto c = tiny_config();
  const size_t dim = 2 * c.h_lstm;
  nn::Tensor W(dim, dim), b(dim, 1), u(dim, 1);  // W=0, b=0 -> e_t = 0 for all t
  nn::Rng rng(25);
  for (double& v : u.v) v = rng.uniform(-1, 1);
  std::vector<double> h1(dim), h2(dim);
  for (double& v : h1) v = rng.uniform(-1, 1);
  for (double& v : h2) v = rng.uniform(-1, 1);
  auto s = attention({h1, h2}, W, b, u);
  for (size_t j = 0; j < dim; ++j)
    CHECK(s[j] == Approx(0.5 * (h1[j] + h2[j])).margin(1e-12));
}

TEST_CASE("attention matches an independent dense evaluation") {
  auto c = tiny_config();
  auto P = random_parameters(c, 29);
  nn::Rng rng(30);
  const size_t T = 3, dim = 2 * c.h_lstm;
  std::vector<std::vector<double>> H(T, std::vector<double>(dim));
  for (auto& h : H)
    for (double& v : h) v = rng.uniform(-1, 1);

  auto s = attention(H, P.att_W, P.att_b, P.att_u);

  // oracle: raw loops over the additive-attention definition
  std::vector<double> e(T);
  for (size_t t = 0; t < T; ++t) {
    double acc = 0;
    for (size_t j = 0; j < dim; ++j) {
      double z = P.att_b.v[j];
      for (size_t k = 0; k < dim; ++k) z += P.att_W.at(j, k) * H[t][k];
      acc += P.att_u.v[j] * std::tanh(z);
    }
    e[t] = acc;
  }
  double m = std::max({e[0], e[1], e[2]});
  double Z = 0;
  for (double x : e) Z += std::exp(x - m);
  std::vector<double> expected(dim, 0.0);
  for (size_t t = 0; t < T; ++t) {
    double alpha = std::exp(e[t] - m) / Z;
    for (size_t j = 0; j < dim; ++j) expected[j] += alpha * H[t][j];
  }
  for (size_t j = 0; j < dim; ++j) CHECK(s[j] == Approx(expected[j]).margin(1e-10));
}

TEST_CASE("attention weights are a probability distribution") {
  auto c = tiny_config();
  nn::Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    auto P = random_parameters(c, 100 + uint64_t(trial));
    size_t T = 1 + rng.below(5);
    std::vector<std::vector<double>> H(T, std::vector<double>(2 * c.h_lstm));
    for (auto& h : H)
      for (double& v : h) v = rng.uniform(-3, 3);
    AttnCache cache;
    attention_forward(P, H, cache);
    double sum = 0;
    for (double a : cache.alpha) {
      CHECK(a >= 0.0);
      sum += a;
    }
    CHECK(sum == Approx(1.0).margin(1e-9));
  }
  ModelParameters P = random_parameters(c, 32);
  AttnCache cache;
  CHECK_THROWS_AS(attention_forward(P, {}, cache), Error);
}

// ---------------------------------------------------------------------------
// heads
// ---------------------------------------------------------------------------

TEST_CASE("purpose logits reduce to the output bias on an all-zero network") {
  auto c = tiny_config();
  auto P = make_parameters(c);  // zero everywhere
  P.purpose.b2.v = {1, 2, 3, 4, 5, 6};
  nn::Rng rng(37);
  PurposeItem item = random_purpose_item(c, rng, 2, 3);
  item.hand = zeros(kNumHandFeaturesIn);
  item.tfidf = zeros(c.n_tfidf);
  ItemCache cache;
  auto logits = purpose_forward(P, item, nullptr, cache);
  CHECK(logits == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("purpose forward is deterministic without dropout") {
  auto c = tiny_config();
  auto P = random_parameters(c, 41);
  nn::Rng rng(42);
  PurposeItem item = random_purpose_item(c, rng, 1, 4);
  ItemCache c1, c2;
  auto l1 = purpose_forward(P, item, nullptr, c1);
  auto l2 = purpose_forward(P, item, nullptr, c2);
  CHECK(l1 == l2);
  // an all-ones mask equals no mask
  std::vector<double> ones(c.mlp_hidden, 1.0);
  ItemCache c3;
  auto l3 = purpose_forward(P, item, &ones, c3);
  CHECK(l1 == l3);
}

// Independent reimplementation of the whole purpose forward pass with naive
// index loops; guards the combined-gate layout and direction wiring.
static std::vector<double> dense_purpose_logits(const ModelParameters& P,
                                                const PurposeItem& item) {
  const auto& c = P.config;
  const size_t T = item.tokens.length(), h = c.h_lstm, dim = 2 * h;
  std::vector<std::vector<double>> x(T);
  for (size_t t = 0; t < T; ++t) {
    x[t] = item.tokens.static_vecs[t];
    for (size_t j = 0; j < c.d_trainable; ++j)
      x[t].push_back(P.embedding.at(item.tokens.rows[t], j));
  }
  auto run_dir = [&](const LstmDir& d, bool forward) {
    std::vector<std::vector<double>> hs(T);
    std::vector<double> hp(h, 0.0), cp(h, 0.0);
    for (size_t s = 0; s < T; ++s) {
      size_t t = forward ? s : T - 1 - s;
      std::vector<double> pre(4 * h);
      for (size_t r = 0; r < 4 * h; ++r) {
        double acc = d.b.v[r];
        for (size_t k = 0; k < c.d_input(); ++k) acc += d.W.at(r, k) * x[t][k];
        for (size_t k = 0; k < h; ++k) acc += d.U.at(r, k) * hp[k];
        pre[r] = acc;
      }
      std::vector<double> hn(h), cn(h);
      for (size_t k = 0; k < h; ++k) {
        double i_g = 1.0 / (1.0 + std::exp(-pre[k]));
        double f_g = 1.0 / (1.0 + std::exp(-pre[h + k]));
        double g_g = std::tanh(pre[2 * h + k]);
        double o_g = 1.0 / (1.0 + std::exp(-pre[3 * h + k]));
        cn[k] = f_g * cp[k] + i_g * g_g;
        hn[k] = o_g * std::tanh(cn[k]);
      }
      hs[t] = hn;
      hp = hn;
      cp = cn;
    }
    return hs;
  };
  auto hf = run_dir(P.fwd, true);
  auto hb = run_dir(P.bwd, false);
  std::vector<std::vector<double>> H(T, std::vector<double>(dim));
  for (size_t t = 0; t < T; ++t) {
    for (size_t k = 0; k < h; ++k) {
      H[t][k] = hf[t][k];
      H[t][h + k] = hb[t][k];
    }
  }
  std::vector<double> e(T);
  for (size_t t = 0; t < T; ++t) {
    double acc = 0;
    for (size_t j = 0; j < dim; ++j) {
      double z = P.att_b.v[j];
      for (size_t k = 0; k < dim; ++k) z += P.att_W.at(j, k) * H[t][k];
      acc += P.att_u.v[j] * std::tanh(z);
    }
    e[t] = acc;
  }
  double m = *std::max_element(e.begin(), e.end());
  double Z = 0;
  for (double v : e) Z += std::exp(v - m);
  std::vector<double> in(dim, 0.0);
  for (size_t t = 0; t < T; ++t) {
    double alpha = std::exp(e[t] - m) / Z;
    for (size_t j = 0; j < dim; ++j) in[j] += alpha * H[t][j];
  }
  in.insert(in.end(), item.hand.begin(), item.hand.end());
  in.insert(in.end(), item.tfidf.begin(), item.tfidf.end());
  std::vector<double> h1(c.mlp_hidden);
  for (size_t r = 0; r < c.mlp_hidden; ++r) {
    double acc = P.purpose.b1.v[r];
    for (size_t k = 0; k < in.size(); ++k) acc += P.purpose.W1.at(r, k) * in[k];
    h1[r] = acc > 0 ? acc : 0.0;
  }
  std::vector<double> logits(corpus::kNumPurposeLabels);
  for (size_t r = 0; r < logits.size(); ++r) {
    double acc = P.purpose.b2.v[r];
    for (size_t k = 0; k < c.mlp_hidden; ++k) acc += P.purpose.W2.at(r, k) * h1[k];
    logits[r] = acc;
  }
  return logits;
}

TEST_CASE("purpose forward matches a naive dense reimplementation") {
  auto c = tiny_config();
  for (uint64_t seed : {43u, 44u, 45u}) {
    auto P = random_parameters(c, seed);
    nn::Rng rng(seed + 1000);
    PurposeItem item = random_purpose_item(c, rng, int(seed % 6), 1 + rng.below(4));
    ItemCache cache;
    auto got = purpose_forward(P, item, nullptr, cache);
    auto expected = dense_purpose_logits(P, item);
    REQUIRE(got.size() == expected.size());
    for (size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == Approx(expected[i]).margin(1e-10));
  }
}

TEST_CASE("purpose items must carry their feature slots") {
  auto c = tiny_config();
  auto P = random_parameters(c, 47);
  nn::Rng rng(48);
  PurposeItem item = random_purpose_item(c, rng, 0, 3);
  item.hand.clear();
  ItemCache cache;
  CHECK_THROWS_MATCHES(purpose_forward(P, item, nullptr, cache), Error,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("hand features")));
  item = random_purpose_item(c, rng, 0, 3);
  item.tfidf.resize(c.n_tfidf + 2);
  CHECK_THROWS_MATCHES(purpose_forward(P, item, nullptr, cache), Error,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("TF-IDF")));
}

TEST_CASE("disabling the encoder zero-substitutes the sentence vector") {
  auto c = tiny_config();
  c.use_lstm = false;
  // two parameter sets differing only in LSTM/attention weights
  auto P1 = random_parameters(c, 49);
  auto P2 = P1;
  nn::Rng rng(50);
  rng.fill_uniform(P2.fwd.W, -1, 1);
  rng.fill_uniform(P2.att_W, -1, 1);
  PurposeItem item = random_purpose_item(c, rng, 3, 3);
  ItemCache c1, c2;
  auto l1 = purpose_forward(P1, item, nullptr, c1);
  auto l2 = purpose_forward(P2, item, nullptr, c2);
  CHECK(l1 == l2);  // encoder weights are unreachable
  // the input width is preserved: the sentence slot still exists
  CHECK(P1.purpose.W1.cols == c.d_sentence() + kNumHandFeaturesIn + c.n_tfidf);
}

TEST_CASE("scaffold heads see only the sentence encoding") {
  auto c = tiny_config();
  auto P = random_parameters(c, 53);
  nn::Rng rng(54);
  ScaffoldItem item;
  item.tokens = random_seq(c, rng, 3);
  item.label = 1;
  ItemCache cache;
  auto logits_w = scaffold_forward(P, item, Task::worthiness, nullptr, cache);
  CHECK(logits_w.size() == kNumWorthinessClasses);
  ItemCache cache2;
  auto logits_s = scaffold_forward(P, item, Task::section, nullptr, cache2);
  CHECK(logits_s.size() == kNumSectionClasses);
  CHECK(P.worthiness.W1.cols == c.d_sentence());
  CHECK(P.section.W1.cols == c.d_sentence());
  ItemCache cache3;
  CHECK_THROWS_AS(scaffold_forward(P, item, Task::purpose, nullptr, cache3), Error);
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

TEST_CASE("cross entropy of uniform logits is ln(classes)") {
  CHECK(nn::cross_entropy(zeros(6), 3) == Approx(std::log(6.0)));
  CHECK(nn::cross_entropy(zeros(2), 0) == Approx(std::log(2.0)));
  CHECK(nn::cross_entropy({5, 5, 5, 5, 5, 5}, 1) == Approx(std::log(6.0)));
  CHECK_THROWS_AS(nn::cross_entropy(zeros(6), 6), Error);
}

TEST_CASE("multitask loss is the documented weighted sum") {
  CHECK(multitask_loss(1.0, 2.0, 3.0, 1.0, 0.1, 0.1) == Approx(1.5));
  CHECK(multitask_loss(0.7, 0.0, 0.0, 1.0, 0.1, 0.1) == Approx(0.7));
}

TEST_CASE("shifting logits changes neither softmax nor the CE gradient") {
  std::vector<double> z = {0.3, -1.2, 2.0, 0.0, 0.7, -0.4};
  auto p = nn::softmax(z);
  auto g = nn::cross_entropy_grad(z, 2);
  std::vector<double> shifted = z;
  for (double& x : shifted) x += 37.5;
  auto p2 = nn::softmax(shifted);
  auto g2 = nn::cross_entropy_grad(shifted, 2);
  for (size_t i = 0; i < z.size(); ++i) {
    CHECK(p2[i] == Approx(p[i]).margin(1e-12));
    CHECK(g2[i] == Approx(g[i]).margin(1e-12));
  }
  CHECK(nn::cross_entropy(shifted, 2) == Approx(nn::cross_entropy(z, 2)).margin(1e-9));
}

// ---------------------------------------------------------------------------
// gradients vs finite differences
// ---------------------------------------------------------------------------

namespace {

struct FdProblem {
  ModelConfig config;
  ModelParameters params;
  std::vector<PurposeItem> purpose_items;
  std::vector<ScaffoldItem> worthiness_items;
  std::vector<ScaffoldItem> section_items;
  double w_p = 1.0, w_w = 0.3, w_s = 0.2;

  std::vector<const PurposeItem*> pb() const {
    std::vector<const PurposeItem*> v;
    for (const auto& i : purpose_items) v.push_back(&i);
    return v;
  }
  std::vector<const ScaffoldItem*> sb(const std::vector<ScaffoldItem>& items) const {
    std::vector<const ScaffoldItem*> v;
    for (const auto& i : items) v.push_back(&i);
    return v;
  }

  double loss() const {
    double l = w_p * purpose_batch(params, pb(), w_p, nullptr, nullptr);
    l += w_w * scaffold_batch(params, sb(worthiness_items), Task::worthiness, w_w,
                              nullptr, nullptr);
    l += w_s * scaffold_batch(params, sb(section_items), Task::section, w_s,
                              nullptr, nullptr);
    return l;
  }

  ModelParameters analytic() const {
    ModelParameters g = zeros_like(params);
    purpose_batch(params, pb(), w_p, nullptr, &g);
    scaffold_batch(params, sb(worthiness_items), Task::worthiness, w_w, nullptr, &g);
    scaffold_batch(params, sb(section_items), Task::section, w_s, nullptr, &g);
    return g;
  }
};

FdProblem make_fd_problem(uint64_t seed) {
  FdProblem p;
  p.config = tiny_config();
  p.params = random_parameters(p.config, seed);
  nn::Rng rng(seed + 7);
  p.purpose_items.push_back(random_purpose_item(p.config, rng, 1, 3));
  p.purpose_items.push_back(random_purpose_item(p.config, rng, 4, 2));
  for (int label : {0, 1}) {
    ScaffoldItem s;
    s.tokens = random_seq(p.config, rng, 3);
    s.label = label;
    p.worthiness_items.push_back(std::move(s));
  }
  ScaffoldItem s;
  s.tokens = random_seq(p.config, rng, 3);
  s.label = 3;
  p.section_items.push_back(std::move(s));
  return p;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences everywhere") {
  FdProblem prob = make_fd_problem(61);
  ModelParameters analytic = prob.analytic();

  const double h = 1e-5;
  double worst_rel = 0.0;
  std::string worst_name;
  size_t checked = 0;

  std::vector<std::pair<const char*, nn::Tensor*>> param_tensors;
  for_each_param(prob.params,
                 [&](const char* n, nn::Tensor& t) { param_tensors.emplace_back(n, &t); });
  std::vector<std::pair<const char*, const nn::Tensor*>> grad_tensors;
  for_each_param(analytic, [&](const char* n, const nn::Tensor& t) {
    grad_tensors.emplace_back(n, &t);
  });

  for (size_t ti = 0; ti < param_tensors.size(); ++ti) {
    nn::Tensor& t = *param_tensors[ti].second;
    const nn::Tensor& g = *grad_tensors[ti].second;
    for (size_t i = 0; i < t.size(); ++i) {
      const double saved = t.v[i];
      t.v[i] = saved + h;
      const double lp = prob.loss();
      t.v[i] = saved - h;
      const double lm = prob.loss();
      t.v[i] = saved;
      const double fd = (lp - lm) / (2 * h);
      const double a = g.v[i];
      const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      if (rel > worst_rel) {
        worst_rel = rel;
        worst_name = std::string(param_tensors[ti].first) + "[" + std::to_string(i) + "]";
      }
      ++checked;
    }
  }
  CAPTURE(worst_name, worst_rel, checked);
  CHECK(checked > 600);  // every tensor, every entry
  CHECK(worst_rel < 1e-4);
}

TEST_CASE("a zero section weight leaves the section head untouched") {
  FdProblem prob = make_fd_problem(67);
  ModelParameters g = zeros_like(prob.params);
  purpose_batch(prob.params, prob.pb(), 1.0, nullptr, &g);
  scaffold_batch(prob.params, prob.sb(prob.worthiness_items), Task::worthiness, 0.1,
                 nullptr, &g);
  for (const nn::Tensor* t : {&g.section.W1, &g.section.b1, &g.section.W2, &g.section.b2})
    for (double v : t->v) CHECK(v == 0.0);
  // while shared encoder tensors do receive gradient
  double att_mag = 0;
  for (double v : g.att_u.v) att_mag += std::abs(v);
  CHECK(att_mag > 0.0);
}

TEST_CASE("embedding rows of absent tokens receive no gradient") {
  FdProblem prob = make_fd_problem(71);
  // confine every sequence to rows 0 and 1
  for (auto& item : prob.purpose_items)
    for (auto& r : item.tokens.rows) r %= 2;
  for (auto* items : {&prob.worthiness_items, &prob.section_items})
    for (auto& item : *items)
      for (auto& r : item.tokens.rows) r %= 2;
  ModelParameters g = prob.analytic();
  const auto& c = prob.config;
  for (size_t row = 2; row < c.vocab_rows; ++row)
    for (size_t j = 0; j < c.d_trainable; ++j) CHECK(g.embedding.at(row, j) == 0.0);
  double used_mag = 0;
  for (size_t j = 0; j < c.d_trainable; ++j)
    used_mag += std::abs(g.embedding.at(0, j)) + std::abs(g.embedding.at(1, j));
  CHECK(used_mag > 0.0);
}

TEST_CASE("batch losses validate their inputs") {
  FdProblem prob = make_fd_problem(73);
  CHECK_THROWS_AS(purpose_batch(prob.params, {}, 1.0, nullptr, nullptr), Error);
  PurposeItem bad = prob.purpose_items[0];
  bad.label = 6;
  CHECK_THROWS_AS(purpose_batch(prob.params, {&bad}, 1.0, nullptr, nullptr), Error);
  ScaffoldItem sbad = prob.worthiness_items[0];
  sbad.label = 2;
  CHECK_THROWS_AS(
      scaffold_batch(prob.params, {&sbad}, Task::worthiness, 1.0, nullptr, nullptr),
      Error);
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

TEST_CASE("adam leaves parameters alone when gradients are zero") {
  nn::Tensor p(2, 2);
  p.v = {1, 2, 3, 4};
  nn::Tensor g(2, 2);
  nn::AdamSlot slot;
  nn::AdamConfig cfg;
  optimizer_step(p, g, slot, cfg, 1);
  CHECK(p.v == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("first adam step matches the hand-evaluated scalar update") {
  nn::Tensor p(1, 1);
  p.v = {1.0};
  nn::Tensor g(1, 1);
  g.v = {2.0};
  nn::AdamSlot slot;
  nn::AdamConfig cfg;
  cfg.lr = 0.5;
  optimizer_step(p, g, slot, cfg, 1);
  // m = 0.2, v = 0.004; mhat = 2, vhat = 4; step = -0.5 * 2 / (2 + 1e-8)
  CHECK(p.v[0] == Approx(1.0 - 0.5 * 2.0 / (2.0 + 1e-8)).margin(1e-15));
  CHECK(p.v[0] == Approx(0.5000000025).margin(1e-10));
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  auto c = tiny_config();
  ModelParameters params = random_parameters(c, 79);
  ModelParameters grads = zeros_like(params);
  grads.att_u.v[0] = std::numeric_limits<double>::quiet_NaN();
  Optimizer opt;
  CHECK_THROWS_MATCHES(opt.step(params, grads), Error,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("attention.u")));
}

TEST_CASE("dropout masks are inverted and p=0 consumes no draws") {
  nn::Rng a(5), b(5);
  auto mask0 = make_dropout_mask(8, 0.0, a);
  CHECK(mask0 == std::vector<double>(8, 1.0));
  CHECK(a.next() == b.next());  // stream untouched by the p=0 mask

  nn::Rng c(6);
  auto mask = make_dropout_mask(4000, 0.5, c);
  size_t zeroes = 0;
  for (double v : mask) {
    CHECK((v == 0.0 || v == Approx(2.0)));
    if (v == 0.0) ++zeroes;
  }
  CHECK(zeroes > 1500);
  CHECK(zeroes < 2500);
}

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

TEST_CASE("predictions are softmax distributions with lowest-index ties") {
  auto c = tiny_config();
  nn::Rng rng(83);
  // all-zero parameters -> equal logits -> label 0 by the tie rule
  auto Z = make_parameters(c);
  PurposeItem item = random_purpose_item(c, rng, 0, 3);
  auto p0 = predict(Z, item);
  CHECK(p0.label == 0);
  for (double pr : p0.probs) CHECK(pr == Approx(1.0 / 6.0));

  for (uint64_t seed : {84u, 85u, 86u}) {
    auto P = random_parameters(c, seed);
    auto pred = predict(P, random_purpose_item(c, rng, 0, 1 + rng.below(4)));
    double sum = 0;
    for (double pr : pred.probs) sum += pr;
    CHECK(sum == Approx(1.0).margin(1e-6));
    CHECK(pred.label >= 0);
    CHECK(pred.label < 6);
  }
}

TEST_CASE("adding a constant to the output bias keeps the predicted label") {
  auto c = tiny_config();
  auto P = random_parameters(c, 87);
  nn::Rng rng(88);
  PurposeItem item = random_purpose_item(c, rng, 0, 3);
  auto before = predict(P, item);
  ModelParameters Q = P;
  for (double& v : Q.purpose.b2.v) v += 11.75;  // shifts every logit equally
  auto after = predict(Q, item);
  CHECK(after.label == before.label);
  for (size_t i = 0; i < before.probs.size(); ++i)
    CHECK(after.probs[i] == Approx(before.probs[i]).margin(1e-9));
}

// ---------------------------------------------------------------------------
// early stopping + training loop
// ---------------------------------------------------------------------------

TEST_CASE("early stopper follows the documented patience rule") {
  EarlyStopper stopper{2};
  CHECK(stopper.observe(0.2));   // epoch 1, best
  CHECK_FALSE(stopper.should_stop());
  CHECK(stopper.observe(0.3));   // epoch 2, best
  CHECK_FALSE(stopper.should_stop());
  CHECK_FALSE(stopper.observe(0.25));  // epoch 3
  CHECK_FALSE(stopper.should_stop());  // 3 < 2 + 2
  CHECK_FALSE(stopper.observe(0.25));  // epoch 4
  CHECK(stopper.should_stop());        // 4 >= 2 + 2
  CHECK(stopper.best_epoch == 2);
  CHECK(stopper.best_value == Approx(0.3));

  EarlyStopper strict{1};
  CHECK(strict.observe(0.5));
  CHECK_FALSE(strict.observe(0.5));  // equal is not an improvement
  CHECK(strict.should_stop());
  CHECK(strict.best_epoch == 1);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  validate_train_config(tc);  // defaults are valid
  TrainConfig bad = tc;
  bad.w_purpose = 0.05;  // not above the scaffold weights
  CHECK_THROWS_AS(validate_train_config(bad), ConfigError);
  bad = tc;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(validate_train_config(bad), ConfigError);
  bad = tc;
  bad.w_worthiness = -0.1;
  CHECK_THROWS_AS(validate_train_config(bad), ConfigError);
  bad = tc;
  bad.patience = 0;
  CHECK_THROWS_AS(validate_train_config(bad), ConfigError);
}

namespace {

// Six-way separable toy task: each label has a signature token whose static
// vector is a scaled one-hot; fillers carry a flat vector.
struct ToyData {
  ModelConfig config;
  std::vector<PurposeItem> items;
  std::vector<ScaffoldItem> worthiness;
  std::vector<ScaffoldItem> sections;
};

ToyData make_toy(uint64_t seed, size_t per_label = 10) {
  ToyData d;
  d.config.h_lstm = 6;
  d.config.mlp_hidden = 16;
  d.config.d_static = 6;
  d.config.d_trainable = 3;
  d.config.vocab_rows = 9;
  d.config.n_tfidf = 0;
  d.config.use_hand = false;
  d.config.use_tfidf = false;
  nn::Rng rng(seed);
  for (int label = 0; label < 6; ++label) {
    for (size_t k = 0; k < per_label; ++k) {
      PurposeItem item;
      item.label = label;
      size_t len = 2 + rng.below(3);
      size_t sig_pos = rng.below(len);
      for (size_t t = 0; t < len; ++t) {
        std::vector<double> sv(6, 0.05);
        size_t row = 6 + rng.below(3);
        if (t == sig_pos) {
          sv.assign(6, 0.0);
          sv[size_t(label)] = 2.0;
          row = size_t(label);
        }
        item.tokens.static_vecs.push_back(std::move(sv));
        item.tokens.rows.push_back(row);
      }
      d.items.push_back(std::move(item));
    }
  }
  // scaffold sentences keyed by their own rows
  for (int label = 0; label < 2; ++label)
    for (size_t k = 0; k < 6; ++k) {
      ScaffoldItem s;
      s.label = label;
      std::vector<double> sv(6, label ? 0.9 : -0.9);
      s.tokens.static_vecs.push_back(sv);
      s.tokens.rows.push_back(rng.below(9));
      d.worthiness.push_back(std::move(s));
    }
  for (int label = 0; label < 7; ++label)
    for (size_t k = 0; k < 3; ++k) {
      ScaffoldItem s;
      s.label = label;
      std::vector<double> sv(6, 0.1 * double(label));
      s.tokens.static_vecs.push_back(sv);
      s.tokens.rows.push_back(rng.below(9));
      d.sections.push_back(std::move(s));
    }
  return d;
}

TrainConfig toy_train_config() {
  TrainConfig tc;
  tc.w_worthiness = 0.0;
  tc.w_section = 0.0;
  tc.lr = 0.01;
  tc.dropout = 0.0;
  tc.batch_size = 10;
  tc.max_epochs = 200;
  tc.patience = 25;
  tc.seed = 3;
  return tc;
}

}  // namespace

TEST_CASE("training learns a separable 60-record toy task") {
  ToyData toy = make_toy(91);
  auto result = train(toy.config, toy_train_config(), toy.items, toy.items, {}, {});
  CHECK(result.best_val_macro_f1 >= 0.95);  // training F1: val == train here
  CHECK(result.best_epoch >= 1);
  CHECK(result.history.size() >= result.best_epoch);
  // history rows carry per-epoch losses and the validation score
  CHECK(result.history.front().epoch == 1);
  CHECK(result.history.front().purpose_loss > 0.0);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  ToyData toy = make_toy(93, 4);
  TrainConfig tc = toy_train_config();
  tc.max_epochs = 6;
  tc.patience = 6;
  auto a = train(toy.config, tc, toy.items, toy.items, {}, {});
  auto b = train(toy.config, tc, toy.items, toy.items, {}, {});
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].purpose_loss == b.history[i].purpose_loss);
    CHECK(a.history[i].val_macro_f1 == b.history[i].val_macro_f1);
  }
  CHECK(params_to_json(a.params).dump() == params_to_json(b.params).dump());
}

TEST_CASE("zero scaffold weights reproduce single-task training exactly") {
  ToyData toy = make_toy(95, 4);
  TrainConfig tc = toy_train_config();
  tc.max_epochs = 5;
  tc.patience = 5;

  // scaffold data present but weights zero
  auto zero_weight = train(toy.config, tc, toy.items, toy.items, toy.worthiness, toy.sections);
  // no scaffold data at all
  auto single = train(toy.config, tc, toy.items, toy.items, {}, {});
  CHECK(params_to_json(zero_weight.params).dump() == params_to_json(single.params).dump());

  // positive weights with data actually change the trajectory; the toy has
  // few purpose batches per epoch, so interleave scaffolds on every one
  tc.w_worthiness = 0.2;
  tc.w_section = 0.2;
  tc.scaffold_every = 1;
  auto multi = train(toy.config, tc, toy.items, toy.items, toy.worthiness, toy.sections);
  CHECK(params_to_json(multi.params).dump() != params_to_json(single.params).dump());
  for (const auto& rec : multi.history) {
    CHECK(rec.worthiness_loss > 0.0);
    CHECK(rec.section_loss > 0.0);
  }
}

TEST_CASE("train validates its inputs") {
  ToyData toy = make_toy(97, 2);
  TrainConfig tc = toy_train_config();
  CHECK_THROWS_AS(train(toy.config, tc, {}, toy.items, {}, {}), Error);
  CHECK_THROWS_AS(train(toy.config, tc, toy.items, {}, {}, {}), Error);
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

TEST_CASE("parameter JSON round-trips bit-exactly") {
  auto c = tiny_config();
  auto P = random_parameters(c, 101);
  auto j = params_to_json(P);
  auto Q = params_from_json(j);
  for_each_param(P, [&](const char* name, const nn::Tensor& t) {
    bool found = false;
    for_each_param(Q, [&](const char* qname, const nn::Tensor& qt) {
      if (std::string_view(name) == qname) {
        found = true;
        CHECK(qt.rows == t.rows);
        CHECK(qt.cols == t.cols);
        CHECK(qt.v == t.v);
      }
    });
    CHECK(found);
  });
  CHECK(params_to_json(Q).dump() == j.dump());
}

TEST_CASE("checkpoints with mismatched shapes are rejected") {
  auto c = tiny_config();
  auto P = random_parameters(c, 103);
  auto j = params_to_json(P);
  j["config"]["h_lstm"] = c.h_lstm + 1;  // stored tensors no longer fit
  CHECK_THROWS_MATCHES(params_from_json(j), Error,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("shape mismatch")));
  auto j2 = params_to_json(P);
  j2["tensors"].erase("attention.u");
  CHECK_THROWS_MATCHES(params_from_json(j2), Error,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("attention.u")));
}

TEST_CASE("model config validation rejects degenerate widths") {
  ModelConfig c = tiny_config();
  c.h_lstm = 0;
  CHECK_THROWS_AS(validate_model_config(c), ConfigError);
  c = tiny_config();
  c.vocab_rows = 0;
  CHECK_THROWS_AS(validate_model_config(c), ConfigError);
  c = tiny_config();
  c.n_tfidf = 0;  // invalid only while the TF-IDF slot is on
  CHECK_THROWS_AS(validate_model_config(c), ConfigError);
  c.use_tfidf = false;
  validate_model_config(c);
}
