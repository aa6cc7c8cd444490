#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ranker/baseline.hpp"
#include "ranker/corpus.hpp"
#include "ranker/evalrank.hpp"
#include "ranker/json_config.hpp"
#include "ranker/pairgen.hpp"
#include "ranker/rng.hpp"
#include "ranker/training.hpp"

namespace {

using ranker::Corpus;
using nlohmann::json;

struct RunConfig {
  ranker::ModelConfig model;
  ranker::LossConfig loss;
  ranker::OptimConfig optim;
  ranker::PairPolicy pairs;
  ranker::MetricsConfig metrics;
  ranker::SyntheticSpec synth;
  std::uint64_t seed = 42;
  int threads = 1;
};

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (j.contains("model")) ranker::merge_from_json(cfg.model, j.at("model"));
  if (j.contains("loss")) ranker::merge_from_json(cfg.loss, j.at("loss"));
  if (j.contains("optim")) ranker::merge_from_json(cfg.optim, j.at("optim"));
  if (j.contains("pairs")) ranker::merge_from_json(cfg.pairs, j.at("pairs"));
  if (j.contains("metrics"))
    ranker::merge_from_json(cfg.metrics, j.at("metrics"));
  if (j.contains("synthetic"))
    ranker::merge_from_json(cfg.synth, j.at("synthetic"));
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
}

Corpus load_corpus(const std::string& path) {
  return ranker::load_dataset(path, ranker::format_from_path(path));
}

std::array<double, 5> parse_probs(const std::string& csv) {
  std::array<double, 5> out{};
  std::stringstream ss(csv);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 5) throw std::runtime_error("--class-probs needs 5 values");
    out[i++] = std::stod(item);
  }
  if (i != 5) throw std::runtime_error("--class-probs needs 5 values");
  return out;
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

void parse_passage_range(const std::string& s, ranker::SyntheticSpec& spec) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) {
    spec.passages_per_context_min = spec.passages_per_context_max =
        std::stoull(s);
  } else {
    spec.passages_per_context_min = std::stoull(s.substr(0, colon));
    spec.passages_per_context_max = std::stoull(s.substr(colon + 1));
  }
}

void emit(const json& j) { std::cout << ranker::canonical_dump(j); }

void propagate_seed(RunConfig& cfg) {
  cfg.optim.seed = cfg.seed;
  cfg.pairs.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
}

// Held-in probe sample: a prefix of the (already shuffled) training stream.
std::vector<ranker::PassagePair> probe_sample(
    const std::vector<ranker::PassagePair>& pairs, std::size_t cap = 2000) {
  return {pairs.begin(),
          pairs.begin() + std::min<std::size_t>(cap, pairs.size())};
}

void log_training(const ranker::TrainResult& result) {
  for (const auto& e : result.log.entries)
    std::fprintf(stderr, "step=%ld loss=%.6f probe_accuracy=%.4f wall=%.1fs\n",
                 e.step, e.loss, e.probe_accuracy, e.wall_seconds);
  if (result.diverged)
    std::fprintf(stderr,
                 "training diverged; kept checkpoint from step %ld\n",
                 result.steps_run);
}

json pair_accuracy_json(const ranker::PairAccuracy& acc) {
  json j;
  j["pair_accuracy_canonical"] = acc.canonical;
  j["pair_accuracy_symmetrized"] = acc.symmetrized;
  j["pairs"] = acc.pairs;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise text ranking toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path;
  std::uint64_t seed = 42;
  int threads = 1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "master random seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads for pair generation and evaluation")
      ->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "synthesize a corpus");
  std::string gen_out, gen_passages = "5", gen_probs;
  std::size_t gen_contexts = 10, gen_vocab = 200, gen_lexicon = 30,
              gen_balanced = 0;
  double gen_noise = -1.0;
  gen->add_option("--out", gen_out, "output corpus path (.jsonl or .csv)")
      ->required();
  gen->add_option("--contexts", gen_contexts, "number of contexts");
  gen->add_option("--passages", gen_passages, "passages per context, N or LO:HI");
  gen->add_option("--class-probs", gen_probs, "5 comma-separated class probabilities");
  gen->add_option("--vocab", gen_vocab, "filler vocabulary size");
  gen->add_option("--lexicon", gen_lexicon, "quality lexicon size");
  gen->add_option("--noise", gen_noise, "token noise rate in [0,1]");
  gen->add_option("--balanced", gen_balanced,
                  "exact per-class passage count (overrides class probabilities)");

  // make-pairs
  auto* mk = app.add_subcommand("make-pairs", "enumerate labeled pairs");
  std::string mk_data, mk_out, mk_order;
  std::size_t mk_cap = 0, mk_shard = 0;
  mk->add_option("--data", mk_data, "input corpus")->required();
  mk->add_option("--out", mk_out, "output pairs path")->required();
  mk->add_option("--max-pairs-per-group", mk_cap, "per-group pair cap");
  mk->add_option("--order", mk_order, "as_enumerated or randomized");
  mk->add_option("--shard-size", mk_shard, "pairs per shard file");

  // shared model/training flags
  const auto add_model_flags = [](CLI::App* cmd, std::string& enc,
                                  std::string& head, std::string& shared,
                                  std::size_t& d, std::size_t& hash,
                                  std::size_t& max_tok, double& dropout) {
    cmd->add_option("--encoder", enc, "mean_pool or tiny_attention");
    cmd->add_option("--head", head, "mlp4 or single_linear");
    cmd->add_option("--shared-encoder", shared, "true or false");
    cmd->add_option("--d,--embed-dim", d, "encoder output width");
    cmd->add_option("--hash-dims", hash, "feature-hashing table size");
    cmd->add_option("--max-tokens", max_tok, "token truncation length");
    cmd->add_option("--dropout", dropout, "head dropout rate");
  };
  const auto add_optim_flags = [](CLI::App* cmd, double& lr, double& margin,
                                  long& steps, std::size_t& batch,
                                  long& probe) {
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--margin", margin, "hinge margin");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--batch-size", batch, "pairs per batch");
    cmd->add_option("--probe-interval", probe, "steps between probes");
  };

  // train
  auto* tr = app.add_subcommand("train", "train the pairwise ranker");
  std::string tr_data, tr_out, tr_pairs, tr_enc, tr_head, tr_shared;
  std::size_t tr_d = 0, tr_hash = 0, tr_maxtok = 0, tr_batch = 0, tr_cap = 0;
  double tr_lr = 0, tr_margin = 0, tr_dropout = -1;
  long tr_steps = -1, tr_probe = 0;
  tr->add_option("--data", tr_data, "training corpus")->required();
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--pairs", tr_pairs, "pre-generated pair shard (JSONL)");
  tr->add_option("--max-pairs-per-group", tr_cap, "per-group pair cap");
  add_model_flags(tr, tr_enc, tr_head, tr_shared, tr_d, tr_hash, tr_maxtok,
                  tr_dropout);
  add_optim_flags(tr, tr_lr, tr_margin, tr_steps, tr_batch, tr_probe);

  // eval
  auto* ev = app.add_subcommand("eval", "rank test lists and report metrics");
  std::string ev_model, ev_data, ev_gain;
  int ev_k = 0, ev_top_m = 0;
  ev->add_option("--model", ev_model, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "test corpus")->required();
  ev->add_option("--k", ev_k, "metrics cutoff");
  ev->add_option("--gain", ev_gain, "exponential or linear");
  ev->add_option("--top-m", ev_top_m, "relevant set size (defaults to k)");

  // rank
  auto* rk = app.add_subcommand("rank", "rank one context group");
  std::string rk_model, rk_data, rk_context;
  rk->add_option("--model", rk_model, "checkpoint path")->required();
  rk->add_option("--data", rk_data, "corpus")->required();
  rk->add_option("--context", rk_context, "context id to rank")->required();

  // convert
  auto* cv = app.add_subcommand("convert", "rank-to-class conversion");
  std::string cv_model, cv_data;
  int cv_segments = 5;
  cv->add_option("--model", cv_model, "checkpoint path")->required();
  cv->add_option("--data", cv_data, "corpus to rank and label")->required();
  cv->add_option("--segments", cv_segments, "number of class segments");

  // temporal
  auto* tm = app.add_subcommand("temporal", "temporal-consistency evaluation");
  std::string tm_model, tm_data;
  std::size_t tm_min_items = 5;
  tm->add_option("--model", tm_model, "checkpoint path")->required();
  tm->add_option("--data", tm_data, "corpus with timestamps")->required();
  tm->add_option("--min-items", tm_min_items, "minimum qualifying passages per context");

  // ablate
  auto* ab = app.add_subcommand("ablate", "no-MLP and unshared-encoder runs");
  std::string ab_data, ab_enc, ab_head_unused, ab_shared_unused;
  std::size_t ab_d = 0, ab_hash = 0, ab_maxtok = 0, ab_batch = 0;
  double ab_lr = 0, ab_margin = 0, ab_dropout = -1, ab_test_fraction = 0.2;
  long ab_steps = -1, ab_probe = 0;
  ab->add_option("--data", ab_data, "corpus")->required();
  ab->add_option("--test-fraction", ab_test_fraction, "held-out fraction");
  add_model_flags(ab, ab_enc, ab_head_unused, ab_shared_unused, ab_d, ab_hash,
                  ab_maxtok, ab_dropout);
  add_optim_flags(ab, ab_lr, ab_margin, ab_steps, ab_batch, ab_probe);

  // grid
  auto* gr = app.add_subcommand("grid", "margin / learning-rate grid search");
  std::string gr_data, gr_margins, gr_lrs, gr_enc, gr_head, gr_shared;
  std::size_t gr_d = 0, gr_hash = 0, gr_maxtok = 0, gr_batch = 0;
  double gr_lr = 0, gr_margin = 0, gr_dropout = -1;
  long gr_budget = 300, gr_steps = -1, gr_probe = 0;
  gr->add_option("--data", gr_data, "corpus")->required();
  gr->add_option("--budget", gr_budget, "steps per grid cell");
  gr->add_option("--margins", gr_margins, "comma-separated margin grid");
  gr->add_option("--lrs", gr_lrs, "comma-separated learning-rate grid");
  add_model_flags(gr, gr_enc, gr_head, gr_shared, gr_d, gr_hash, gr_maxtok,
                  gr_dropout);
  add_optim_flags(gr, gr_lr, gr_margin, gr_steps, gr_batch, gr_probe);

  // compare
  auto* cp = app.add_subcommand("compare", "ranker vs softmax classifier");
  std::string cp_train, cp_test, cp_enc, cp_head, cp_shared;
  std::size_t cp_d = 0, cp_hash = 0, cp_maxtok = 0, cp_batch = 0;
  double cp_lr = 0, cp_margin = 0, cp_dropout = -1;
  long cp_steps = -1, cp_probe = 0;
  int cp_segments = 5;
  cp->add_option("--train-data", cp_train, "training corpus (may be skewed)")
      ->required();
  cp->add_option("--test-data", cp_test, "balanced test corpus")->required();
  cp->add_option("--segments", cp_segments, "number of classes");
  add_model_flags(cp, cp_enc, cp_head, cp_shared, cp_d, cp_hash, cp_maxtok,
                  cp_dropout);
  add_optim_flags(cp, cp_lr, cp_margin, cp_steps, cp_batch, cp_probe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    if (app.count("--seed")) cfg.seed = seed;
    if (app.count("--threads")) cfg.threads = threads;
    propagate_seed(cfg);

    const auto apply_model_flags =
        [&](CLI::App* cmd, const std::string& enc, const std::string& head,
            const std::string& shared, std::size_t d, std::size_t hash,
            std::size_t max_tok, double dropout) {
          if (cmd->count("--encoder"))
            cfg.model.encoder.kind = ranker::encoder_kind_from_string(enc);
          if (cmd->count("--head"))
            cfg.model.head.variant = ranker::head_variant_from_string(head);
          if (cmd->count("--shared-encoder")) {
            if (shared != "true" && shared != "false")
              throw std::runtime_error("--shared-encoder must be true or false");
            cfg.model.shared_encoder = shared == "true";
          }
          if (cmd->count("--d")) cfg.model.encoder.embed_dim = d;
          if (cmd->count("--hash-dims")) cfg.model.encoder.hash_dims = hash;
          if (cmd->count("--max-tokens")) cfg.model.encoder.max_tokens = max_tok;
          if (cmd->count("--dropout")) cfg.model.head.dropout = dropout;
        };
    const auto apply_optim_flags = [&](CLI::App* cmd, double lr, double margin,
                                       long steps, std::size_t batch,
                                       long probe) {
      if (cmd->count("--lr")) cfg.optim.lr = lr;
      if (cmd->count("--margin")) cfg.loss.margin = margin;
      if (cmd->count("--steps")) cfg.optim.max_steps = steps;
      if (cmd->count("--batch-size")) cfg.optim.batch_size = batch;
      if (cmd->count("--probe-interval")) cfg.optim.probe_interval = probe;
    };

    if (app.got_subcommand(gen)) {
      if (gen->count("--contexts")) cfg.synth.num_contexts = gen_contexts;
      if (gen->count("--passages")) parse_passage_range(gen_passages, cfg.synth);
      if (gen->count("--class-probs"))
        cfg.synth.class_probabilities = parse_probs(gen_probs);
      if (gen->count("--vocab")) cfg.synth.vocab_size = gen_vocab;
      if (gen->count("--lexicon")) cfg.synth.quality_lexicon_size = gen_lexicon;
      if (gen->count("--noise")) cfg.synth.noise_rate = gen_noise;
      const Corpus corpus =
          gen_balanced > 0
              ? ranker::generate_balanced_synthetic(cfg.synth, gen_balanced)
              : ranker::generate_synthetic(cfg.synth);
      ranker::save_dataset(corpus, gen_out, ranker::format_from_path(gen_out));
      std::fprintf(stderr, "wrote %zu passages to %s\n", corpus.size(),
                   gen_out.c_str());
      return 0;
    }

    if (app.got_subcommand(mk)) {
      if (mk->count("--max-pairs-per-group"))
        cfg.pairs.max_pairs_per_group = mk_cap;
      if (mk->count("--order"))
        cfg.pairs.order = ranker::pair_order_from_string(mk_order);
      const Corpus corpus = load_corpus(mk_data);
      const auto pairs = ranker::pair_stream(corpus, cfg.pairs, cfg.threads);
      const auto paths = ranker::write_pair_shards(pairs, mk_out, mk_shard);
      std::fprintf(stderr, "wrote %zu pairs to %zu shard(s)\n", pairs.size(),
                   paths.size());
      return 0;
    }

    if (app.got_subcommand(tr)) {
      apply_model_flags(tr, tr_enc, tr_head, tr_shared, tr_d, tr_hash,
                        tr_maxtok, tr_dropout);
      apply_optim_flags(tr, tr_lr, tr_margin, tr_steps, tr_batch, tr_probe);
      if (tr->count("--max-pairs-per-group"))
        cfg.pairs.max_pairs_per_group = tr_cap;
      cfg.pairs.order = ranker::PairOrder::randomized;
      const Corpus corpus = load_corpus(tr_data);
      const auto pairs = tr_pairs.empty()
                             ? ranker::pair_stream(corpus, cfg.pairs, cfg.threads)
                             : ranker::load_pairs(tr_pairs);
      const auto probe = probe_sample(pairs);
      const auto result = ranker::train_loop(corpus, pairs, probe, cfg.model,
                                             cfg.loss, cfg.optim);
      log_training(result);
      ranker::checkpoint_save(tr_out, result.model, result.state, cfg.loss,
                              cfg.optim);
      std::fprintf(stderr, "checkpoint written to %s\n", tr_out.c_str());
      return result.diverged ? 1 : 0;
    }

    if (app.got_subcommand(ev)) {
      if (ev->count("--k")) cfg.metrics.k = ev_k;
      if (ev->count("--gain"))
        cfg.metrics.gain = ranker::gain_from_string(ev_gain);
      if (ev->count("--top-m")) cfg.metrics.relevant_top_m = ev_top_m;
      const auto ck = ranker::checkpoint_load(ev_model);
      const Corpus corpus = load_corpus(ev_data);
      const auto report =
          ranker::evaluate_corpus(ck.model, corpus, cfg.metrics, cfg.threads);
      json j = ranker::to_json(report);
      j["data"] = ev_data;
      j["model_config"] = ranker::to_json(ck.model.config);
      emit(j);
      return 0;
    }

    if (app.got_subcommand(rk)) {
      const auto ck = ranker::checkpoint_load(rk_model);
      const Corpus corpus = load_corpus(rk_data);
      ranker::ContextGroup group;
      group.context_id = rk_context;
      for (const auto& p : corpus.passages)
        if (p.context_id == rk_context) group.passages.push_back(p);
      if (group.passages.empty())
        throw std::runtime_error("no passages with context \"" + rk_context +
                                 "\"");
      emit(ranker::to_json(ranker::rank_list(ck.model, group, cfg.threads)));
      return 0;
    }

    if (app.got_subcommand(cv)) {
      const auto ck = ranker::checkpoint_load(cv_model);
      const Corpus corpus = load_corpus(cv_data);
      const auto group = ranker::as_single_group(corpus, "all");
      const auto ranked = ranker::rank_list(ck.model, group, cfg.threads);
      const auto labels = ranker::rank_to_classes(ranked.ids, cv_segments);
      json label_map = json::object();
      for (std::size_t i = 0; i < ranked.ids.size(); ++i)
        label_map[ranked.ids[i]] = labels[i];
      json j;
      j["segments"] = cv_segments;
      j["labels"] = label_map;
      try {
        std::map<std::string, int> truth;
        for (const auto& p : corpus.passages)
          truth[p.id] = ranker::passage_class(p);
        j["accuracy"] = ranker::conversion_accuracy(ranked.ids, labels, truth);
      } catch (const std::exception&) {
        j["accuracy"] = nullptr;  // no usable ground-truth classes
      }
      emit(j);
      return 0;
    }

    if (app.got_subcommand(tm)) {
      const auto ck = ranker::checkpoint_load(tm_model);
      const Corpus corpus = load_corpus(tm_data);
      emit(ranker::to_json(ranker::temporal_consistency(
          ck.model, corpus, tm_min_items, cfg.threads)));
      return 0;
    }

    if (app.got_subcommand(ab)) {
      apply_model_flags(ab, ab_enc, ab_head_unused, ab_shared_unused, ab_d,
                        ab_hash, ab_maxtok, ab_dropout);
      apply_optim_flags(ab, ab_lr, ab_margin, ab_steps, ab_batch, ab_probe);
      const Corpus corpus = load_corpus(ab_data);
      const std::size_t n_ctx = ranker::group_by_context(corpus).size();
      auto [train, test] = ranker::split_corpus(
          corpus,
          n_ctx >= 2 ? ranker::SplitStrategy::by_context
                     : ranker::SplitStrategy::random,
          ab_test_fraction, ranker::derive_seed(cfg.seed, "ablate-split"));
      ranker::PairPolicy train_policy = cfg.pairs;
      train_policy.order = ranker::PairOrder::randomized;
      const auto train_pairs =
          ranker::pair_stream(train, train_policy, cfg.threads);
      ranker::PairPolicy test_policy;
      const auto test_pairs = ranker::pair_stream(test, test_policy, cfg.threads);

      json j;
      const auto run_variant = [&](ranker::HeadVariant head, bool shared) {
        ranker::ModelConfig mc = cfg.model;
        mc.head.variant = head;
        mc.shared_encoder = shared;
        const auto result = ranker::train_loop(train, train_pairs, {}, mc,
                                               cfg.loss, cfg.optim);
        const auto acc =
            ranker::pair_accuracy(result.model, test, test_pairs, cfg.threads);
        json r = pair_accuracy_json(acc);
        r["diverged"] = result.diverged;
        return r;
      };
      j["full"] = run_variant(ranker::HeadVariant::mlp4, true);
      j["no_mlp"] = run_variant(ranker::HeadVariant::single_linear, true);
      j["unshared_encoders"] = run_variant(ranker::HeadVariant::mlp4, false);
      emit(j);
      return 0;
    }

    if (app.got_subcommand(gr)) {
      apply_model_flags(gr, gr_enc, gr_head, gr_shared, gr_d, gr_hash,
                        gr_maxtok, gr_dropout);
      apply_optim_flags(gr, gr_lr, gr_margin, gr_steps, gr_batch, gr_probe);
      const Corpus corpus = load_corpus(gr_data);
      const auto margins = gr->count("--margins")
                               ? parse_grid(gr_margins)
                               : ranker::default_margin_grid();
      const auto lrs = gr->count("--lrs") ? parse_grid(gr_lrs)
                                          : ranker::default_lr_grid();
      const auto result = ranker::grid_search(corpus, cfg.model, cfg.optim,
                                              margins, lrs, gr_budget);
      emit(ranker::to_json(result));
      return 0;
    }

    if (app.got_subcommand(cp)) {
      apply_model_flags(cp, cp_enc, cp_head, cp_shared, cp_d, cp_hash,
                        cp_maxtok, cp_dropout);
      apply_optim_flags(cp, cp_lr, cp_margin, cp_steps, cp_batch, cp_probe);
      const Corpus train = load_corpus(cp_train);
      const Corpus test = load_corpus(cp_test);
      ranker::HeadToHeadConfig h2h;
      h2h.model = cfg.model;
      h2h.loss = cfg.loss;
      h2h.optim = cfg.optim;
      h2h.segments = cp_segments;
      h2h.seed = cfg.seed;
      h2h.threads = cfg.threads;
      const auto report = ranker::head_to_head(train, test, h2h);
      json j = ranker::to_json(report);
      j["configs"] = {{"model", ranker::to_json(cfg.model)},
                      {"loss", ranker::to_json(cfg.loss)},
                      {"optim", ranker::to_json(cfg.optim)}};
      emit(j);
      return 0;
    }

    throw std::runtime_error("no subcommand selected");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
