#include "ranker/rankhead.hpp"

#include <cmath>
#include <stdexcept>

#include "ranker/rng.hpp"

namespace ranker {

void validate(const ModelConfig& cfg) {
  validate(cfg.encoder);
  if (cfg.head.variant == HeadVariant::mlp4 && cfg.encoder.embed_dim < 4)
    throw std::invalid_argument("model: mlp4 head needs embed_dim >= 4");
  if (cfg.head.dropout < 0.0 || cfg.head.dropout >= 1.0)
    throw std::invalid_argument("model: head dropout must be in [0, 1)");
  if (cfg.bn_eps <= 0.0) throw std::invalid_argument("model: bn_eps must be positive");
  if (cfg.bn_momentum <= 0.0 || cfg.bn_momentum > 1.0)
    throw std::invalid_argument("model: bn_momentum must be in (0, 1]");
}

std::vector<std::size_t> head_layer_widths(const ModelConfig& cfg) {
  const std::size_t d = cfg.encoder.embed_dim;
  if (cfg.head.variant == HeadVariant::single_linear) return {2 * d, 2};
  return {2 * d, 2 * d, d, d / 2, 2};
}

namespace {

constexpr const char* kEncA = "enc_a.";
constexpr const char* kEncB = "enc_b.";
constexpr const char* kHead = "head.";

void add_head_params(ParamStore& store, const ModelConfig& cfg) {
  const auto widths = head_layer_widths(cfg);
  const std::size_t n_layers = widths.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string lp = std::string(kHead) + "fc" + std::to_string(l);
    store.add(lp + ".w", widths[l], widths[l + 1]);
    store.add(lp + ".b", 1, widths[l + 1]);
    if (l + 1 == n_layers) break;  // final layer is bare linear
    const std::string bn = std::string(kHead) + "bn" + std::to_string(l);
    store.add(bn + ".g", 1, widths[l + 1]);
    store.add(bn + ".b", 1, widths[l + 1]);
    store.add(bn + ".rm", 1, widths[l + 1], /*trainable=*/false);
    store.add(bn + ".rv", 1, widths[l + 1], /*trainable=*/false);
    store.add(std::string(kHead) + "prelu" + std::to_string(l), 1, 1);
  }
}

void init_head_params(ParamStore& store, const ModelConfig& cfg,
                      std::uint64_t seed) {
  for (ParamTensor& t : store.tensors()) {
    if (t.name.rfind(kHead, 0) != 0) continue;
    StableRng rng(derive_seed(seed, t.name));
    const std::string tail = t.name.substr(5);
    if (tail.find("fc") == 0 && tail.substr(tail.size() - 2) == ".w") {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (float& x : t.v)
        x = static_cast<float>(rng.next_real(-bound, bound));
    } else if (tail.find("bn") == 0) {
      if (tail.substr(tail.size() - 2) == ".g" ||
          tail.substr(tail.size() - 3) == ".rv")
        for (float& x : t.v) x = 1.0f;
      // .b and .rm stay zero
    } else if (tail.find("prelu") == 0) {
      t.v[0] = static_cast<float>(cfg.prelu_init);
    }
    // fc biases stay zero
  }
}

int param_leaf(Graph& g, const ParamStore& store, const std::string& name,
               bool with_grads, std::map<std::string, int>& cache) {
  auto it = cache.find(name);
  if (it != cache.end()) return it->second;
  const ParamTensor& p = store.at(name);
  Tensor t(p.rows, p.cols);
  for (std::size_t i = 0; i < p.size(); ++i)
    t.v[i] = static_cast<double>(p.v[i]);
  const int id = g.leaf(std::move(t), with_grads && p.trainable);
  cache.emplace(name, id);
  return id;
}

Tensor to_tensor(const ParamTensor& p) {
  Tensor t(p.rows, p.cols);
  for (std::size_t i = 0; i < p.size(); ++i)
    t.v[i] = static_cast<double>(p.v[i]);
  return t;
}

// Head tape: Linear-BatchNorm-PReLU with dropout per hidden layer, final
// layer bare. Returns the (B, 2) scores node.
int build_head(Graph& g, const ModelParams& model, int x, Mode mode,
               StableRng* dropout_rng, bool with_grads,
               std::map<std::string, int>& leaves,
               std::vector<BnUpdate>* bn_out) {
  const ModelConfig& cfg = model.config;
  const auto widths = head_layer_widths(cfg);
  const std::size_t n_layers = widths.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string lp = std::string(kHead) + "fc" + std::to_string(l);
    x = g.add_rowvec(g.matmul(x, param_leaf(g, model.store, lp + ".w",
                                            with_grads, leaves)),
                     param_leaf(g, model.store, lp + ".b", with_grads, leaves));
    if (l + 1 == n_layers) break;
    const std::string bn = std::string(kHead) + "bn" + std::to_string(l);
    const int gain = param_leaf(g, model.store, bn + ".g", with_grads, leaves);
    const int bias = param_leaf(g, model.store, bn + ".b", with_grads, leaves);
    if (mode == Mode::train) {
      Tensor mean, var;
      x = g.batch_norm_train(x, gain, bias, cfg.bn_eps, &mean, &var);
      if (bn_out)
        bn_out->push_back(BnUpdate{bn + ".rm", bn + ".rv", std::move(mean),
                                   std::move(var), g.value(x).rows});
    } else {
      x = g.batch_norm_eval(x, gain, bias,
                            to_tensor(model.store.at(bn + ".rm")),
                            to_tensor(model.store.at(bn + ".rv")), cfg.bn_eps);
    }
    x = g.prelu(x, param_leaf(g, model.store,
                              std::string(kHead) + "prelu" + std::to_string(l),
                              with_grads, leaves));
    if (mode == Mode::train && cfg.head.dropout > 0.0 && dropout_rng)
      x = g.dropout(x, cfg.head.dropout, *dropout_rng);
  }
  return x;
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ModelParams model;
  model.config = cfg;
  add_encoder_params(model.store, cfg.encoder, kEncA);
  if (!cfg.shared_encoder) add_encoder_params(model.store, cfg.encoder, kEncB);
  add_head_params(model.store, cfg);
  init_encoder_params(model.store, cfg.encoder, kEncA,
                      derive_seed(seed, "enc_a"));
  if (!cfg.shared_encoder)
    init_encoder_params(model.store, cfg.encoder, kEncB,
                        derive_seed(seed, "enc_b"));
  init_head_params(model.store, cfg, derive_seed(seed, "head"));
  return model;
}

void build_pair_batch(Graph& g, const ModelParams& model,
                      const std::vector<PairExample>& batch, Mode mode,
                      StableRng* dropout_rng, bool with_grads,
                      const double* hinge_margin, PairBatchGraph& out) {
  if (batch.empty()) throw std::invalid_argument("build_pair_batch: empty batch");
  const ModelConfig& cfg = model.config;
  const std::size_t B = batch.size();

  if (with_grads) {
    const ParamTensor& ta = model.store.at(std::string(kEncA) + "embedding");
    out.emb_grad_a = Tensor(ta.rows, ta.cols);
    if (!cfg.shared_encoder) {
      const ParamTensor& tb = model.store.at(std::string(kEncB) + "embedding");
      out.emb_grad_b = Tensor(tb.rows, tb.cols);
    }
  }

  int z_first, z_second;
  if (cfg.shared_encoder) {
    std::vector<const TokenSeq*> seqs;
    seqs.reserve(2 * B);
    for (const auto& e : batch) seqs.push_back(e.a);
    for (const auto& e : batch) seqs.push_back(e.b);
    const int z = build_encoder(g, cfg.encoder, model.store, kEncA, seqs, mode,
                                dropout_rng,
                                with_grads ? &out.emb_grad_a : nullptr,
                                out.leaves);
    z_first = g.slice_rows(z, 0, B);
    z_second = g.slice_rows(z, B, B);
  } else {
    std::vector<const TokenSeq*> sa, sb;
    sa.reserve(B);
    sb.reserve(B);
    for (const auto& e : batch) sa.push_back(e.a);
    for (const auto& e : batch) sb.push_back(e.b);
    z_first = build_encoder(g, cfg.encoder, model.store, kEncA, sa, mode,
                            dropout_rng,
                            with_grads ? &out.emb_grad_a : nullptr, out.leaves);
    z_second = build_encoder(g, cfg.encoder, model.store, kEncB, sb, mode,
                             dropout_rng,
                             with_grads ? &out.emb_grad_b : nullptr, out.leaves);
  }

  const int x = g.concat_cols({z_first, z_second});
  out.scores = build_head(g, model, x, mode, dropout_rng, with_grads,
                          out.leaves, &out.bn_updates);
  out.f_first = g.column(out.scores, 0);
  out.f_second = g.column(out.scores, 1);
  if (hinge_margin) {
    std::vector<int> labels(B);
    for (std::size_t i = 0; i < B; ++i) {
      if (batch[i].label != 1 && batch[i].label != -1)
        throw std::invalid_argument("build_pair_batch: label must be +1 or -1");
      labels[i] = batch[i].label;
    }
    out.loss = g.hinge_loss_sum(out.f_first, out.f_second, std::move(labels),
                                *hinge_margin);
  }
}

void apply_bn_updates(ParamStore& store, const std::vector<BnUpdate>& updates,
                      double momentum) {
  const double mom = momentum;
  for (const BnUpdate& u : updates) {
    ParamTensor& rm = store.at(u.mean_name);
    ParamTensor& rv = store.at(u.var_name);
    const double unbias =
        u.batch > 1 ? static_cast<double>(u.batch) /
                          static_cast<double>(u.batch - 1)
                    : 1.0;
    for (std::size_t j = 0; j < rm.size(); ++j) {
      const double m0 = static_cast<double>(rm.v[j]);
      const double v0 = static_cast<double>(rv.v[j]);
      rm.v[j] = static_cast<float>((1.0 - mom) * m0 + mom * u.batch_mean.v[j]);
      rv.v[j] = static_cast<float>((1.0 - mom) * v0 +
                                   mom * u.batch_var.v[j] * unbias);
    }
  }
}

void apply_bn_updates(ModelParams& model,
                      const std::vector<BnUpdate>& updates) {
  apply_bn_updates(model.store, updates, model.config.bn_momentum);
}

ScorePair forward_pair(ModelParams& model, const TokenSeq& a,
                       const TokenSeq& b, Mode mode,
                       std::uint64_t dropout_seed) {
  if (mode == Mode::eval) {
    const auto za = encode_passage(model, a, /*second_slot=*/false);
    const auto zb = encode_passage(model, b, /*second_slot=*/true);
    return head_scores(model, za, zb);
  }
  Graph g;
  StableRng rng(derive_seed(dropout_seed, "forward-pair-dropout"));
  PairBatchGraph built;
  build_pair_batch(g, model, {PairExample{&a, &b, 1}}, Mode::train, &rng,
                   /*with_grads=*/false, /*hinge_margin=*/nullptr, built);
  apply_bn_updates(model, built.bn_updates);
  const Tensor& s = g.value(built.scores);
  return ScorePair{s.at(0, 0), s.at(0, 1)};
}

std::vector<double> encode_passage(const ModelParams& model,
                                   const TokenSeq& tokens, bool second_slot) {
  const char* prefix =
      (!model.config.shared_encoder && second_slot) ? kEncB : kEncA;
  return encode(model.config.encoder, model.store, prefix, tokens);
}

ScorePair head_scores(const ModelParams& model, std::span<const double> z1,
                      std::span<const double> z2) {
  const ModelConfig& cfg = model.config;
  const auto widths = head_layer_widths(cfg);
  const std::size_t n_layers = widths.size() - 1;
  if (z1.size() + z2.size() != widths[0])
    throw std::invalid_argument("head_scores: encoder width mismatch");
  std::vector<double> x(widths[0]);
  for (std::size_t i = 0; i < z1.size(); ++i) x[i] = z1[i];
  for (std::size_t i = 0; i < z2.size(); ++i) x[z1.size() + i] = z2[i];

  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string lp = std::string(kHead) + "fc" + std::to_string(l);
    const ParamTensor& w = model.store.at(lp + ".w");
    const ParamTensor& bias = model.store.at(lp + ".b");
    std::vector<double> y(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      for (std::size_t j = 0; j < w.cols; ++j)
        y[j] += xi * static_cast<double>(w.at(i, j));
    }
    for (std::size_t j = 0; j < w.cols; ++j)
      y[j] += static_cast<double>(bias.v[j]);
    if (l + 1 == n_layers) {
      return ScorePair{y[0], y[1]};
    }
    const std::string bn = std::string(kHead) + "bn" + std::to_string(l);
    const ParamTensor& gn = model.store.at(bn + ".g");
    const ParamTensor& bt = model.store.at(bn + ".b");
    const ParamTensor& rm = model.store.at(bn + ".rm");
    const ParamTensor& rv = model.store.at(bn + ".rv");
    const double slope = static_cast<double>(
        model.store.at(std::string(kHead) + "prelu" + std::to_string(l)).v[0]);
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double xh = (y[j] - static_cast<double>(rm.v[j])) /
                        std::sqrt(static_cast<double>(rv.v[j]) + cfg.bn_eps);
      double a = static_cast<double>(gn.v[j]) * xh + static_cast<double>(bt.v[j]);
      y[j] = a > 0.0 ? a : slope * a;
    }
    x = std::move(y);
  }
  throw std::logic_error("head_scores: unreachable");
}

double symmetrized_margin(const ModelParams& model, const TokenSeq& a,
                          const TokenSeq& b) {
  const auto za1 = encode_passage(model, a, false);
  const auto zb1 = encode_passage(model, b, false);
  if (model.config.shared_encoder)
    return symmetrized_margin_encoded(model, za1, za1, zb1, zb1);
  const auto za2 = encode_passage(model, a, true);
  const auto zb2 = encode_passage(model, b, true);
  return symmetrized_margin_encoded(model, za1, za2, zb1, zb2);
}

double symmetrized_margin_encoded(const ModelParams& model,
                                  std::span<const double> za_first,
                                  std::span<const double> za_second,
                                  std::span<const double> zb_first,
                                  std::span<const double> zb_second) {
  const ScorePair ab = head_scores(model, za_first, zb_second);
  const ScorePair ba = head_scores(model, zb_first, za_second);
  return 0.5 * ((ab.first - ab.second) - (ba.first - ba.second));
}

}  // namespace ranker
