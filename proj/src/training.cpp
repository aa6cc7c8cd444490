#include "ranker/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "ranker/evalrank.hpp"
#include "ranker/json_config.hpp"
#include "ranker/rng.hpp"

namespace ranker {

void validate(const LossConfig& cfg) {
  if (!(cfg.margin >= 0.0))
    throw std::invalid_argument("loss: margin must be non-negative");
}

void validate(const OptimConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("optim: lr must be positive");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw std::invalid_argument("optim: betas must be in [0, 1)");
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("optim: eps must be positive");
  if (cfg.weight_decay < 0.0)
    throw std::invalid_argument("optim: weight_decay must be non-negative");
  if (cfg.batch_size == 0)
    throw std::invalid_argument("optim: batch_size must be positive");
  if (cfg.max_steps < 0)
    throw std::invalid_argument("optim: max_steps must be non-negative");
  if (cfg.probe_interval < 1)
    throw std::invalid_argument("optim: probe_interval must be positive");
}

double margin_loss(const ScorePair& scores, int label, const LossConfig& cfg) {
  if (label != 1 && label != -1)
    throw std::invalid_argument("margin_loss: label must be +1 or -1");
  const double t = -static_cast<double>(label) * (scores.first - scores.second) +
                   cfg.margin;
  return t > 0.0 ? t : 0.0;
}

OptimState init_optim_state(const ParamStore& store) {
  OptimState state;
  for (const ParamTensor& t : store.tensors()) {
    if (!t.trainable) continue;
    state.moments.add("m." + t.name, t.rows, t.cols, false);
    state.moments.add("v." + t.name, t.rows, t.cols, false);
  }
  return state;
}

OptimState init_optim_state(const ModelParams& model) {
  return init_optim_state(model.store);
}

namespace {

struct NonFiniteForward : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace

GradSet compute_gradients(const ModelParams& model,
                          const std::vector<PairExample>& batch,
                          const LossConfig& cfg,
                          std::optional<std::uint64_t> dropout_seed) {
  validate(cfg);
  if (batch.empty())
    throw std::invalid_argument("compute_gradients: empty batch");
  Graph g;
  std::optional<StableRng> rng;
  if (dropout_seed) rng.emplace(derive_seed(*dropout_seed, "dropout"));
  PairBatchGraph built;
  build_pair_batch(g, model, batch, Mode::train, rng ? &*rng : nullptr,
                   /*with_grads=*/true, &cfg.margin, built);
  for (double s : g.value(built.scores).v)
    if (!std::isfinite(s))
      throw NonFiniteForward("non-finite forward value in head scores");
  const double loss = g.value(built.loss).v[0];
  if (!std::isfinite(loss)) throw NonFiniteForward("non-finite batch loss");
  g.backward(built.loss);

  GradSet out;
  out.loss = loss;
  out.bn_updates = std::move(built.bn_updates);
  out.tensors.resize(model.store.count());
  const auto& tensors = model.store.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const ParamTensor& t = tensors[i];
    if (!t.trainable) continue;
    if (t.name == "enc_a.embedding") {
      out.tensors[i] = std::move(built.emb_grad_a);
    } else if (t.name == "enc_b.embedding") {
      out.tensors[i] = std::move(built.emb_grad_b);
    } else {
      auto it = built.leaves.find(t.name);
      if (it == built.leaves.end()) {
        out.tensors[i] = Tensor(t.rows, t.cols);  // unused: zero gradient
      } else {
        out.tensors[i] = g.grad(it->second);
      }
    }
  }
  return out;
}

double batch_loss(const ModelParams& model,
                  const std::vector<PairExample>& batch, const LossConfig& cfg,
                  std::optional<std::uint64_t> dropout_seed) {
  validate(cfg);
  Graph g;
  std::optional<StableRng> rng;
  if (dropout_seed) rng.emplace(derive_seed(*dropout_seed, "dropout"));
  PairBatchGraph built;
  build_pair_batch(g, model, batch, Mode::train, rng ? &*rng : nullptr,
                   /*with_grads=*/false, &cfg.margin, built);
  return g.value(built.loss).v[0];
}

void adamw_step(OptimState& state, ParamStore& store, const GradSet& grads,
                const OptimConfig& cfg) {
  validate(cfg);
  if (grads.tensors.size() != store.count())
    throw std::invalid_argument("adamw_step: gradient set shape mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay_scale = 1.0 - cfg.lr * cfg.weight_decay;

  auto& tensors = store.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    ParamTensor& p = tensors[i];
    if (!p.trainable) continue;
    const Tensor& grad = grads.tensors[i];
    if (grad.size() != p.size())
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " +
                                  p.name);
    ParamTensor& m = state.moments.at("m." + p.name);
    ParamTensor& v = state.moments.at("v." + p.name);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = grad.v[j];
      const double mj = cfg.beta1 * static_cast<double>(m.v[j]) +
                        (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v.v[j]) +
                        (1.0 - cfg.beta2) * gj * gj;
      m.v[j] = static_cast<float>(mj);
      v.v[j] = static_cast<float>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      const double pj = static_cast<double>(p.v[j]) * decay_scale -
                        cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p.v[j] = static_cast<float>(pj);
    }
  }
}

void adamw_step(OptimState& state, ModelParams& model, const GradSet& grads,
                const OptimConfig& cfg) {
  adamw_step(state, model.store, grads, cfg);
}

namespace {

struct ResolvedPair {
  std::size_t a = 0;
  std::size_t b = 0;
  int label = 0;
};

struct TokenizedCorpus {
  std::vector<TokenSeq> tokens;                       // by passage index
  std::unordered_map<std::string, std::size_t> index; // id -> passage index
};

TokenizedCorpus tokenize_corpus(const Corpus& corpus, const EncoderConfig& cfg) {
  TokenizedCorpus out;
  out.tokens.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Passage& p = corpus.passages[i];
    if (!out.index.emplace(p.id, i).second)
      throw std::runtime_error("duplicate passage id \"" + p.id + "\"");
    out.tokens.push_back(tokenize(p.text, cfg));
  }
  return out;
}

std::vector<ResolvedPair> resolve_pairs(const TokenizedCorpus& tc,
                                        const std::vector<PassagePair>& pairs) {
  std::vector<ResolvedPair> out;
  out.reserve(pairs.size());
  for (const PassagePair& p : pairs) {
    auto ia = tc.index.find(p.first);
    auto ib = tc.index.find(p.second);
    if (ia == tc.index.end() || ib == tc.index.end())
      throw std::runtime_error("pair references unknown passage id \"" +
                               (ia == tc.index.end() ? p.first : p.second) +
                               "\"");
    out.push_back(ResolvedPair{ia->second, ib->second, p.label});
  }
  return out;
}

// Canonical pair accuracy in eval mode with per-passage encode caching.
double probe_accuracy(const ModelParams& model, const TokenizedCorpus& tc,
                      const std::vector<ResolvedPair>& pairs) {
  if (pairs.empty()) return 0.0;
  std::unordered_map<std::size_t, std::vector<double>> z1, z2;
  auto enc = [&](std::size_t idx, bool second) -> const std::vector<double>& {
    auto& cache = second && !model.config.shared_encoder ? z2 : z1;
    auto it = cache.find(idx);
    if (it == cache.end())
      it = cache.emplace(idx, encode_passage(model, tc.tokens[idx], second))
               .first;
    return it->second;
  };
  std::size_t correct = 0;
  for (const ResolvedPair& p : pairs) {
    const ScorePair s = head_scores(model, enc(p.a, false), enc(p.b, true));
    const double d = s.first - s.second;
    if (d != 0.0 && ((d > 0.0) == (p.label > 0))) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace

TrainResult train_loop(const Corpus& corpus,
                       const std::vector<PassagePair>& train_pairs,
                       const std::vector<PassagePair>& probe_pairs,
                       const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                       const OptimConfig& optim_cfg) {
  validate(model_cfg);
  validate(loss_cfg);
  validate(optim_cfg);
  if (train_pairs.empty())
    throw std::invalid_argument("train_loop: need at least one training pair");

  const TokenizedCorpus tc = tokenize_corpus(corpus, model_cfg.encoder);
  const auto train = resolve_pairs(tc, train_pairs);
  const auto probe = resolve_pairs(tc, probe_pairs);

  TrainResult result;
  result.model = init_model(model_cfg, derive_seed(optim_cfg.seed, "init"));
  result.state = init_optim_state(result.model);

  ModelParams snapshot_model = result.model;
  OptimState snapshot_state = result.state;
  long snapshot_step = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t pos = 0;
  std::uint64_t epoch = 0;
  {
    StableRng r(derive_seed(optim_cfg.seed, "epoch", epoch));
    r.shuffle(order);
  }

  const auto t0 = std::chrono::steady_clock::now();
  for (long step = 1; step <= optim_cfg.max_steps; ++step) {
    std::vector<PairExample> batch;
    batch.reserve(optim_cfg.batch_size);
    for (std::size_t i = 0; i < optim_cfg.batch_size; ++i) {
      if (pos == order.size()) {
        pos = 0;
        ++epoch;
        StableRng r(derive_seed(optim_cfg.seed, "epoch", epoch));
        r.shuffle(order);
      }
      const ResolvedPair& rp = train[order[pos++]];
      batch.push_back(
          PairExample{&tc.tokens[rp.a], &tc.tokens[rp.b], rp.label});
    }
    GradSet grads;
    try {
      grads = compute_gradients(
          result.model, batch, loss_cfg,
          derive_seed(optim_cfg.seed, "step-dropout",
                      static_cast<std::uint64_t>(step)));
    } catch (const NonFiniteForward&) {
      result.model = std::move(snapshot_model);
      result.state = std::move(snapshot_state);
      result.diverged = true;
      result.steps_run = snapshot_step;
      return result;
    }
    if (!std::isfinite(grads.loss)) {
      result.model = std::move(snapshot_model);
      result.state = std::move(snapshot_state);
      result.diverged = true;
      result.steps_run = snapshot_step;
      return result;
    }
    apply_bn_updates(result.model, grads.bn_updates);
    adamw_step(result.state, result.model, grads, optim_cfg);
    result.steps_run = step;

    if (step % optim_cfg.probe_interval == 0 || step == optim_cfg.max_steps) {
      TrainLogEntry entry;
      entry.step = step;
      entry.loss = grads.loss;
      entry.probe_accuracy = probe_accuracy(result.model, tc, probe);
      entry.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      result.log.entries.push_back(entry);
      snapshot_model = result.model;
      snapshot_state = result.state;
      snapshot_step = step;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint container.

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'K'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i)
    c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void put_u32(std::string& buf, std::uint32_t x) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((x >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& buf, std::uint64_t x) {
  for (int i = 0; i < 8; ++i)
    buf.push_back(static_cast<char>((x >> (8 * i)) & 0xFFu));
}

void put_tensor(std::string& buf, const ParamTensor& t) {
  put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
  buf.append(t.name);
  put_u64(buf, static_cast<std::uint64_t>(t.size()));
  for (float f : t.v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
  }
}

struct Reader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k, const char* what) const {
    if (pos + k > n)
      throw std::runtime_error(std::string("checkpoint: truncated ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i)
      x |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return x;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i)
      x |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return x;
  }
  std::string bytes(std::size_t k, const char* what) {
    need(k, what);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

}  // namespace

void checkpoint_save(const std::string& path, const ModelParams& model,
                     const OptimState& state, const LossConfig& loss_cfg,
                     const OptimConfig& optim_cfg) {
  nlohmann::json cfg;
  cfg["kind"] = "pairwise-ranker";
  cfg["model"] = to_json(model.config);
  cfg["loss"] = to_json(loss_cfg);
  cfg["optim"] = to_json(optim_cfg);
  cfg["step"] = state.step;
  const std::string cfg_bytes = cfg.dump();

  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(cfg_bytes.size()));
  buf.append(cfg_bytes);
  for (const ParamTensor& t : model.store.tensors()) put_tensor(buf, t);
  for (const ParamTensor& t : state.moments.tensors()) put_tensor(buf, t);
  put_u32(buf, crc32(reinterpret_cast<const unsigned char*>(buf.data()),
                     buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failure on " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (data.size() < 16) throw std::runtime_error("checkpoint: truncated file");

  const unsigned char* raw = reinterpret_cast<const unsigned char*>(data.data());
  const std::size_t body = data.size() - 4;

  Reader r{raw, body};
  if (r.bytes(4, "magic") != std::string(kMagic, 4))
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));

  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= static_cast<std::uint32_t>(raw[body + i]) << (8 * i);
  if (crc32(raw, body) != stored_crc)
    throw std::runtime_error("checkpoint: checksum mismatch");

  const std::uint32_t cfg_len = r.u32("config length");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(r.bytes(cfg_len, "config block"));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: bad config block: ") +
                             e.what());
  }

  std::unordered_map<std::string, std::vector<float>> blobs;
  while (r.pos < r.n) {
    const std::uint32_t name_len = r.u32("blob name length");
    const std::string name = r.bytes(name_len, "blob name");
    const std::uint64_t count = r.u64("blob element count");
    if (count > (r.n - r.pos) / 4)
      throw std::runtime_error("checkpoint: truncated blob \"" + name + "\"");
    std::vector<float> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t bits = r.u32("blob data");
      float f;
      std::memcpy(&f, &bits, 4);
      values[i] = f;
    }
    if (!blobs.emplace(name, std::move(values)).second)
      throw std::runtime_error("checkpoint: duplicate tensor \"" + name + "\"");
  }

  Checkpoint ck;
  ModelConfig model_cfg;
  merge_from_json(model_cfg, cfg.at("model"));
  merge_from_json(ck.loss, cfg.at("loss"));
  merge_from_json(ck.optim, cfg.at("optim"));
  ck.model = init_model(model_cfg, 0);
  ck.state = init_optim_state(ck.model);
  ck.state.step = cfg.at("step").get<std::uint64_t>();

  std::size_t used = 0;
  auto fill = [&](ParamStore& store) {
    for (ParamTensor& t : store.tensors()) {
      auto it = blobs.find(t.name);
      if (it == blobs.end())
        throw std::runtime_error("checkpoint: missing tensor \"" + t.name +
                                 "\"");
      if (it->second.size() != t.size())
        throw std::runtime_error("checkpoint: size mismatch for \"" + t.name +
                                 "\"");
      t.v = it->second;
      ++used;
    }
  };
  fill(ck.model.store);
  fill(ck.state.moments);
  if (used != blobs.size())
    throw std::runtime_error("checkpoint: unexpected extra tensors");
  return ck;
}

// ---------------------------------------------------------------------------
// Hyperparameter grid search.

const std::vector<double>& default_margin_grid() {
  static const std::vector<double> grid{0.0, 0.1, 1.0, 2.0, 5.0, 10.0};
  return grid;
}

const std::vector<double>& default_lr_grid() {
  static const std::vector<double> grid{1e-6, 4e-6, 8e-6, 1e-5, 4e-5,
                                        8e-5, 1e-4, 4e-4, 8e-4};
  return grid;
}

GridResult grid_search(const Corpus& corpus, const ModelConfig& model_cfg,
                       const OptimConfig& base, std::vector<double> margins,
                       std::vector<double> lrs, long budget_steps) {
  if (margins.empty() || lrs.empty())
    throw std::invalid_argument("grid_search: grids must be non-empty");

  std::size_t n_contexts = group_by_context(corpus).size();
  const SplitStrategy strategy =
      n_contexts >= 2 ? SplitStrategy::by_context : SplitStrategy::random;
  auto [train, val] =
      split_corpus(corpus, strategy, 0.2, derive_seed(base.seed, "grid-split"));

  PairPolicy train_policy;
  train_policy.order = PairOrder::randomized;
  train_policy.seed = derive_seed(base.seed, "grid-train-pairs");
  const auto train_pairs = pair_stream(train, train_policy);

  PairPolicy val_policy;
  val_policy.seed = derive_seed(base.seed, "grid-val-pairs");
  const auto val_pairs = pair_stream(val, val_policy);

  GridResult result;
  for (double margin : margins) {
    for (double lr : lrs) {
      GridCell cell;
      cell.margin = margin;
      cell.lr = lr;
      OptimConfig cfg = base;
      cfg.lr = lr;
      cfg.max_steps = budget_steps;
      cfg.probe_interval = std::max<long>(budget_steps, 1);
      LossConfig loss{margin};
      TrainResult run = train_loop(train, train_pairs, {}, model_cfg, loss, cfg);
      if (run.diverged) {
        cell.diverged = true;
        cell.accuracy = 0.0;
      } else if (!val_pairs.empty()) {
        cell.accuracy =
            pair_accuracy(run.model, val, val_pairs).canonical;
      }
      result.cells.push_back(cell);
    }
  }
  result.best = result.cells.front();
  for (const GridCell& c : result.cells) {
    const auto better = [](const GridCell& x, const GridCell& y) {
      if (x.accuracy != y.accuracy) return x.accuracy > y.accuracy;
      if (x.lr != y.lr) return x.lr < y.lr;
      return x.margin < y.margin;
    };
    if (better(c, result.best)) result.best = c;
  }
  return result;
}

}  // namespace ranker
