#include "ranker/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "ranker/evalrank.hpp"
#include "ranker/parallel.hpp"
#include "ranker/rng.hpp"

namespace ranker {

namespace {

constexpr const char* kEnc = "enc.";
constexpr const char* kCls = "cls.";

}  // namespace

void validate(const ClassifierConfig& cfg) {
  validate(cfg.encoder);
  if (cfg.num_classes < 2)
    throw std::invalid_argument("classifier: need at least 2 classes");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw std::invalid_argument("classifier: dropout must be in [0, 1)");
}

ClassifierParams init_classifier(const ClassifierConfig& cfg,
                                 std::uint64_t seed) {
  validate(cfg);
  ClassifierParams params;
  params.config = cfg;
  const std::size_t d = cfg.encoder.embed_dim;
  const std::size_t mid = d / 2;
  const std::size_t C = static_cast<std::size_t>(cfg.num_classes);
  add_encoder_params(params.store, cfg.encoder, kEnc);
  params.store.add(std::string(kCls) + "fc0.w", d, mid);
  params.store.add(std::string(kCls) + "fc0.b", 1, mid);
  params.store.add(std::string(kCls) + "bn0.g", 1, mid);
  params.store.add(std::string(kCls) + "bn0.b", 1, mid);
  params.store.add(std::string(kCls) + "bn0.rm", 1, mid, false);
  params.store.add(std::string(kCls) + "bn0.rv", 1, mid, false);
  params.store.add(std::string(kCls) + "prelu0", 1, 1);
  params.store.add(std::string(kCls) + "fc1.w", mid, C);
  params.store.add(std::string(kCls) + "fc1.b", 1, C);

  init_encoder_params(params.store, cfg.encoder, kEnc,
                      derive_seed(seed, "enc"));
  for (ParamTensor& t : params.store.tensors()) {
    if (t.name.rfind(kCls, 0) != 0) continue;
    StableRng rng(derive_seed(seed, t.name));
    const std::string tail = t.name.substr(4);
    if (tail == "fc0.w" || tail == "fc1.w") {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (float& x : t.v)
        x = static_cast<float>(rng.next_real(-bound, bound));
    } else if (tail == "bn0.g" || tail == "bn0.rv") {
      for (float& x : t.v) x = 1.0f;
    } else if (tail == "prelu0") {
      t.v[0] = static_cast<float>(cfg.prelu_init);
    }
  }
  return params;
}

namespace {

struct ClsExample {
  const TokenSeq* tokens = nullptr;
  int cls0 = 0;  // 0-based class
};

struct ClsBatchGraph {
  int logits = -1;
  int loss = -1;
  std::vector<BnUpdate> bn_updates;
  std::map<std::string, int> leaves;
  Tensor emb_grad;
};

int cls_param_leaf(Graph& g, const ParamStore& store, const std::string& name,
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

Tensor cls_to_tensor(const ParamTensor& p) {
  Tensor t(p.rows, p.cols);
  for (std::size_t i = 0; i < p.size(); ++i)
    t.v[i] = static_cast<double>(p.v[i]);
  return t;
}

void build_classifier_batch(Graph& g, const ClassifierParams& params,
                            const std::vector<ClsExample>& batch, Mode mode,
                            StableRng* rng, bool with_grads, bool with_loss,
                            ClsBatchGraph& out) {
  if (batch.empty())
    throw std::invalid_argument("build_classifier_batch: empty batch");
  const ClassifierConfig& cfg = params.config;
  if (with_grads) {
    const ParamTensor& table = params.store.at(std::string(kEnc) + "embedding");
    out.emb_grad = Tensor(table.rows, table.cols);
  }
  std::vector<const TokenSeq*> seqs;
  seqs.reserve(batch.size());
  for (const auto& e : batch) seqs.push_back(e.tokens);
  int x = build_encoder(g, cfg.encoder, params.store, kEnc, seqs, mode, rng,
                        with_grads ? &out.emb_grad : nullptr, out.leaves);
  auto L = [&](const std::string& n) {
    return cls_param_leaf(g, params.store, std::string(kCls) + n, with_grads,
                          out.leaves);
  };
  x = g.add_rowvec(g.matmul(x, L("fc0.w")), L("fc0.b"));
  if (mode == Mode::train) {
    Tensor mean, var;
    x = g.batch_norm_train(x, L("bn0.g"), L("bn0.b"), cfg.bn_eps, &mean, &var);
    out.bn_updates.push_back(BnUpdate{std::string(kCls) + "bn0.rm",
                                      std::string(kCls) + "bn0.rv",
                                      std::move(mean), std::move(var),
                                      batch.size()});
  } else {
    x = g.batch_norm_eval(
        x, L("bn0.g"), L("bn0.b"),
        cls_to_tensor(params.store.at(std::string(kCls) + "bn0.rm")),
        cls_to_tensor(params.store.at(std::string(kCls) + "bn0.rv")),
        cfg.bn_eps);
  }
  x = g.prelu(x, L("prelu0"));
  if (mode == Mode::train && cfg.dropout > 0.0 && rng)
    x = g.dropout(x, cfg.dropout, *rng);
  out.logits = g.add_rowvec(g.matmul(x, L("fc1.w")), L("fc1.b"));
  if (with_loss) {
    std::vector<int> classes(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) classes[i] = batch[i].cls0;
    out.loss = g.cross_entropy_sum(out.logits, std::move(classes));
  }
}

}  // namespace

ClassifierTrainResult train_classifier(const Corpus& corpus,
                                       const ClassifierConfig& cfg,
                                       const OptimConfig& optim_cfg) {
  validate(cfg);
  validate(optim_cfg);
  if (corpus.passages.empty())
    throw std::invalid_argument("train_classifier: empty corpus");

  std::vector<TokenSeq> tokens;
  std::vector<int> labels0;
  tokens.reserve(corpus.size());
  labels0.reserve(corpus.size());
  std::set<int> present;
  for (const Passage& p : corpus.passages) {
    const int cls = passage_class(p);
    if (cls < 1 || cls > cfg.num_classes)
      throw std::runtime_error("train_classifier: passage \"" + p.id +
                               "\" has class " + std::to_string(cls) +
                               " outside 1.." +
                               std::to_string(cfg.num_classes));
    tokens.push_back(tokenize(p.text, cfg.encoder));
    labels0.push_back(cls - 1);
    present.insert(cls);
  }

  ClassifierTrainResult result;
  for (int c = 1; c <= cfg.num_classes; ++c)
    if (!present.count(c)) result.missing_classes.push_back(c);
  result.params = init_classifier(cfg, derive_seed(optim_cfg.seed, "cls-init"));
  OptimState state = init_optim_state(result.params.store);

  ClassifierParams snapshot = result.params;
  OptimState snapshot_state = state;

  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = 0;
  std::uint64_t epoch = 0;
  {
    StableRng r(derive_seed(optim_cfg.seed, "cls-epoch", epoch));
    r.shuffle(order);
  }

  for (long step = 1; step <= optim_cfg.max_steps; ++step) {
    std::vector<ClsExample> batch;
    batch.reserve(optim_cfg.batch_size);
    for (std::size_t i = 0; i < optim_cfg.batch_size; ++i) {
      if (pos == order.size()) {
        pos = 0;
        ++epoch;
        StableRng r(derive_seed(optim_cfg.seed, "cls-epoch", epoch));
        r.shuffle(order);
      }
      const std::size_t idx = order[pos++];
      batch.push_back(ClsExample{&tokens[idx], labels0[idx]});
    }
    Graph g;
    StableRng rng(derive_seed(optim_cfg.seed, "cls-dropout",
                              static_cast<std::uint64_t>(step)));
    ClsBatchGraph built;
    build_classifier_batch(g, result.params, batch, Mode::train, &rng,
                           /*with_grads=*/true, /*with_loss=*/true, built);
    const double loss = g.value(built.loss).v[0];
    if (!std::isfinite(loss)) {
      result.params = std::move(snapshot);
      state = std::move(snapshot_state);
      result.diverged = true;
      return result;
    }
    g.backward(built.loss);

    GradSet grads;
    grads.loss = loss;
    grads.tensors.resize(result.params.store.count());
    const auto& tensors = result.params.store.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const ParamTensor& t = tensors[i];
      if (!t.trainable) continue;
      if (t.name == std::string(kEnc) + "embedding") {
        grads.tensors[i] = std::move(built.emb_grad);
      } else {
        auto it = built.leaves.find(t.name);
        grads.tensors[i] = it == built.leaves.end() ? Tensor(t.rows, t.cols)
                                                    : g.grad(it->second);
      }
    }
    apply_bn_updates(result.params.store, built.bn_updates, cfg.bn_momentum);
    adamw_step(state, result.params.store, grads, optim_cfg);

    if (step % optim_cfg.probe_interval == 0 || step == optim_cfg.max_steps) {
      TrainLogEntry entry;
      entry.step = step;
      entry.loss = loss;
      result.log.entries.push_back(entry);
      snapshot = result.params;
      snapshot_state = state;
    }
  }
  return result;
}

Classification classify(const ClassifierParams& params,
                        const TokenSeq& tokens) {
  const ClassifierConfig& cfg = params.config;
  const std::vector<double> z = encode(cfg.encoder, params.store, kEnc, tokens);
  const ParamTensor& w0 = params.store.at(std::string(kCls) + "fc0.w");
  const ParamTensor& b0 = params.store.at(std::string(kCls) + "fc0.b");
  std::vector<double> h(w0.cols, 0.0);
  for (std::size_t i = 0; i < w0.rows; ++i) {
    const double zi = z[i];
    if (zi == 0.0) continue;
    for (std::size_t j = 0; j < w0.cols; ++j)
      h[j] += zi * static_cast<double>(w0.at(i, j));
  }
  const ParamTensor& gn = params.store.at(std::string(kCls) + "bn0.g");
  const ParamTensor& bt = params.store.at(std::string(kCls) + "bn0.b");
  const ParamTensor& rm = params.store.at(std::string(kCls) + "bn0.rm");
  const ParamTensor& rv = params.store.at(std::string(kCls) + "bn0.rv");
  const double slope =
      static_cast<double>(params.store.at(std::string(kCls) + "prelu0").v[0]);
  for (std::size_t j = 0; j < h.size(); ++j) {
    double a = h[j] + static_cast<double>(b0.v[j]);
    a = static_cast<double>(gn.v[j]) *
            ((a - static_cast<double>(rm.v[j])) /
             std::sqrt(static_cast<double>(rv.v[j]) + cfg.bn_eps)) +
        static_cast<double>(bt.v[j]);
    h[j] = a > 0.0 ? a : slope * a;
  }
  const ParamTensor& w1 = params.store.at(std::string(kCls) + "fc1.w");
  const ParamTensor& b1 = params.store.at(std::string(kCls) + "fc1.b");
  std::vector<double> logits(w1.cols, 0.0);
  for (std::size_t i = 0; i < w1.rows; ++i) {
    const double hi = h[i];
    if (hi == 0.0) continue;
    for (std::size_t j = 0; j < w1.cols; ++j)
      logits[j] += hi * static_cast<double>(w1.at(i, j));
  }
  for (std::size_t j = 0; j < logits.size(); ++j)
    logits[j] += static_cast<double>(b1.v[j]);

  Classification out;
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double sum = 0.0;
  out.probabilities.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out.probabilities[j] = std::exp(logits[j] - mx);
    sum += out.probabilities[j];
  }
  for (double& p : out.probabilities) p /= sum;
  std::size_t best = 0;
  for (std::size_t j = 1; j < out.probabilities.size(); ++j)
    if (out.probabilities[j] > out.probabilities[best]) best = j;
  out.label = static_cast<int>(best) + 1;
  return out;
}

Classification classify(const ClassifierParams& params,
                        const Passage& passage) {
  return classify(params, tokenize(passage.text, params.config.encoder));
}

namespace {

// One-vs-rest AUC by rank-sum with average ranks for ties.
double binary_auc(const std::vector<double>& scores,
                  const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]])
      ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 +
                       1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (positive[k]) {
      pos_rank_sum += rank[k];
      ++n_pos;
    }
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nan("");
  return (pos_rank_sum -
          static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

ClassifierEval evaluate_classifier(const ClassifierParams& params,
                                   const Corpus& test, int threads) {
  if (test.passages.empty())
    throw std::invalid_argument("evaluate_classifier: empty test set");
  const int C = params.config.num_classes;
  std::vector<Classification> preds(test.size());
  parallel_for(test.size(), threads, [&](std::size_t i) {
    preds[i] = classify(params, test.passages[i]);
  });

  ClassifierEval out;
  std::size_t correct = 0;
  std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int truth = passage_class(test.passages[i]);
    const int pred = preds[i].label;
    if (pred == truth) {
      ++correct;
      ++tp[truth - 1];
    } else {
      ++fp[pred - 1];
      ++fn[truth - 1];
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());

  double f1_sum = 0.0;
  for (int c = 0; c < C; ++c) {
    const double denom =
        2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c]) +
        static_cast<double>(fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  out.macro_f1 = f1_sum / static_cast<double>(C);

  double auc_sum = 0.0;
  int auc_classes = 0;
  for (int c = 1; c <= C; ++c) {
    std::vector<double> scores(test.size());
    std::vector<bool> positive(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      scores[i] = preds[i].probabilities[c - 1];
      positive[i] = passage_class(test.passages[i]) == c;
    }
    const double auc = binary_auc(scores, positive);
    if (!std::isnan(auc)) {
      auc_sum += auc;
      ++auc_classes;
    }
  }
  out.macro_auc = auc_classes > 0 ? auc_sum / auc_classes : 0.0;
  return out;
}

HeadToHeadReport head_to_head(const Corpus& train, const Corpus& test,
                              const HeadToHeadConfig& cfg) {
  if (cfg.segments < 2)
    throw std::invalid_argument("head_to_head: segments must be >= 2");

  std::map<int, std::size_t> test_dist;
  for (const Passage& p : test.passages) ++test_dist[passage_class(p)];
  if (test_dist.empty())
    throw std::invalid_argument("head_to_head: empty test set");
  for (int c = 1; c <= cfg.segments; ++c)
    if (!test_dist.count(c))
      throw std::invalid_argument("head_to_head: test set missing class " +
                                  std::to_string(c));
  const std::size_t per_class = test_dist.begin()->second;
  for (const auto& [cls, count] : test_dist)
    if (count != per_class)
      throw std::invalid_argument(
          "head_to_head: test set is not balanced across classes");

  HeadToHeadReport report;
  report.test_distribution = test_dist;
  for (const Passage& p : train.passages)
    ++report.train_distribution[passage_class(p)];
  report.ranker_seed = derive_seed(cfg.seed, "h2h-ranker");
  report.classifier_seed = derive_seed(cfg.seed, "h2h-classifier");

  PairPolicy policy;
  policy.order = PairOrder::randomized;
  policy.seed = derive_seed(cfg.seed, "h2h-pairs");
  const auto train_pairs = pair_stream(train, policy, cfg.threads);

  OptimConfig ranker_optim = cfg.optim;
  ranker_optim.seed = report.ranker_seed;
  const TrainResult ranker =
      train_loop(train, train_pairs, {}, cfg.model, cfg.loss, ranker_optim);

  ClassifierConfig cls_cfg;
  cls_cfg.encoder = cfg.model.encoder;
  cls_cfg.num_classes = cfg.segments;
  cls_cfg.dropout = cfg.model.head.dropout;
  cls_cfg.bn_eps = cfg.model.bn_eps;
  cls_cfg.bn_momentum = cfg.model.bn_momentum;
  cls_cfg.prelu_init = cfg.model.prelu_init;
  OptimConfig cls_optim = cfg.optim;
  cls_optim.seed = report.classifier_seed;
  const ClassifierTrainResult classifier =
      train_classifier(train, cls_cfg, cls_optim);

  const ClassifierEval cls_eval =
      evaluate_classifier(classifier.params, test, cfg.threads);
  report.classifier_accuracy = cls_eval.accuracy;
  report.classifier_macro_f1 = cls_eval.macro_f1;
  report.classifier_macro_auc = cls_eval.macro_auc;

  const ContextGroup whole = as_single_group(test, "test");
  const RankedList ranked = rank_list(ranker.model, whole, cfg.threads);
  const std::vector<int> labels = rank_to_classes(ranked.ids, cfg.segments);
  std::map<std::string, int> truth;
  for (const Passage& p : test.passages) truth[p.id] = passage_class(p);
  report.ranker_accuracy = conversion_accuracy(ranked.ids, labels, truth);

  PairPolicy eval_policy;
  const auto test_pairs = enumerate_pairs(whole, eval_policy);
  report.ranker_pair_accuracy =
      pair_accuracy(ranker.model, test, test_pairs, cfg.threads).symmetrized;

  report.gap = report.ranker_accuracy - report.classifier_accuracy;
  return report;
}

}  // namespace ranker
