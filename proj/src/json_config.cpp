#include "ranker/json_config.hpp"

#include <stdexcept>

namespace ranker {

namespace {

using nlohmann::json;

[[noreturn]] void bad_enum(const std::string& what, const std::string& got) {
  throw std::invalid_argument("unknown " + what + ": \"" + got + "\"");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string to_string(EncoderKind k) {
  return k == EncoderKind::mean_pool ? "mean_pool" : "tiny_attention";
}

std::string to_string(HeadVariant v) {
  return v == HeadVariant::mlp4 ? "mlp4" : "single_linear";
}

std::string to_string(GainKind g) {
  return g == GainKind::exponential ? "exponential" : "linear";
}

std::string to_string(PairOrder o) {
  return o == PairOrder::as_enumerated ? "as_enumerated" : "randomized";
}

std::string to_string(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::random: return "random";
    case SplitStrategy::by_context: return "by_context";
    case SplitStrategy::temporal: return "temporal";
  }
  return "random";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "mean_pool") return EncoderKind::mean_pool;
  if (s == "tiny_attention") return EncoderKind::tiny_attention;
  bad_enum("encoder kind", s);
}

HeadVariant head_variant_from_string(const std::string& s) {
  if (s == "mlp4") return HeadVariant::mlp4;
  if (s == "single_linear") return HeadVariant::single_linear;
  bad_enum("head variant", s);
}

GainKind gain_from_string(const std::string& s) {
  if (s == "exponential") return GainKind::exponential;
  if (s == "linear") return GainKind::linear;
  bad_enum("gain kind", s);
}

PairOrder pair_order_from_string(const std::string& s) {
  if (s == "as_enumerated") return PairOrder::as_enumerated;
  if (s == "randomized") return PairOrder::randomized;
  bad_enum("pair order", s);
}

SplitStrategy split_strategy_from_string(const std::string& s) {
  if (s == "random") return SplitStrategy::random;
  if (s == "by_context") return SplitStrategy::by_context;
  if (s == "temporal") return SplitStrategy::temporal;
  bad_enum("split strategy", s);
}

json to_json(const EncoderConfig& cfg) {
  json j;
  j["kind"] = to_string(cfg.kind);
  j["hash_dims"] = cfg.hash_dims;
  j["embed_dim"] = cfg.embed_dim;
  j["max_tokens"] = cfg.max_tokens;
  j["init_scale"] = cfg.init_scale;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["ff_dim"] = cfg.ff_dim;
  j["attn_dropout"] = cfg.attn_dropout;
  return j;
}

json to_json(const HeadConfig& cfg) {
  json j;
  j["variant"] = to_string(cfg.variant);
  j["dropout"] = cfg.dropout;
  return j;
}

json to_json(const ModelConfig& cfg) {
  json j;
  j["encoder"] = to_json(cfg.encoder);
  j["head"] = to_json(cfg.head);
  j["shared_encoder"] = cfg.shared_encoder;
  j["bn_eps"] = cfg.bn_eps;
  j["bn_momentum"] = cfg.bn_momentum;
  j["prelu_init"] = cfg.prelu_init;
  return j;
}

json to_json(const LossConfig& cfg) {
  json j;
  j["margin"] = cfg.margin;
  return j;
}

json to_json(const OptimConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["eps"] = cfg.eps;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["max_steps"] = cfg.max_steps;
  j["probe_interval"] = cfg.probe_interval;
  j["seed"] = cfg.seed;
  return j;
}

json to_json(const MetricsConfig& cfg) {
  json j;
  j["k"] = cfg.k;
  j["gain"] = to_string(cfg.gain);
  j["relevant_top_m"] = cfg.m();
  return j;
}

json to_json(const PairPolicy& policy) {
  json j;
  j["order"] = to_string(policy.order);
  if (policy.max_pairs_per_group)
    j["max_pairs_per_group"] = *policy.max_pairs_per_group;
  else
    j["max_pairs_per_group"] = nullptr;
  j["seed"] = policy.seed;
  return j;
}

json to_json(const SyntheticSpec& spec) {
  json j;
  j["num_contexts"] = spec.num_contexts;
  j["passages_per_context_min"] = spec.passages_per_context_min;
  j["passages_per_context_max"] = spec.passages_per_context_max;
  j["class_probabilities"] = spec.class_probabilities;
  j["vocab_size"] = spec.vocab_size;
  j["quality_lexicon_size"] = spec.quality_lexicon_size;
  j["noise_rate"] = spec.noise_rate;
  j["seed"] = spec.seed;
  return j;
}

json to_json(const MetricsReport& report) {
  json j;
  j["mrr"] = report.mrr;
  j["ndcg"] = report.ndcg;
  j["map"] = report.map;
  j["pair_accuracy_canonical"] = report.pair_accuracy_canonical;
  j["pair_accuracy_symmetrized"] = report.pair_accuracy_symmetrized;
  j["lists_evaluated"] = report.lists_evaluated;
  j["pairs_evaluated"] = report.pairs_evaluated;
  j["config"] = to_json(report.config);
  return j;
}

json to_json(const HeadToHeadReport& report) {
  json j;
  j["ranker_accuracy"] = report.ranker_accuracy;
  j["classifier_accuracy"] = report.classifier_accuracy;
  j["gap"] = report.gap;
  j["ranker_pair_accuracy"] = report.ranker_pair_accuracy;
  j["classifier_macro_f1"] = report.classifier_macro_f1;
  j["classifier_macro_auc"] = report.classifier_macro_auc;
  json train_dist = json::object();
  for (const auto& [cls, count] : report.train_distribution)
    train_dist[std::to_string(cls)] = count;
  json test_dist = json::object();
  for (const auto& [cls, count] : report.test_distribution)
    test_dist[std::to_string(cls)] = count;
  j["train_distribution"] = train_dist;
  j["test_distribution"] = test_dist;
  j["seeds"] = {{"ranker", report.ranker_seed},
                {"classifier", report.classifier_seed}};
  return j;
}

json to_json(const RankedList& ranked) {
  json j;
  j["context"] = ranked.context_id;
  j["ids"] = ranked.ids;
  j["wins"] = ranked.wins;
  j["margin_sums"] = ranked.margin_sums;
  return j;
}

json to_json(const TemporalReport& report) {
  json j;
  j["temporal_consistency"] = report.accuracy;
  j["pairs"] = report.pairs;
  j["contexts"] = report.contexts;
  return j;
}

json to_json(const GridResult& result) {
  json j;
  json cells = json::array();
  for (const GridCell& c : result.cells) {
    json cell;
    cell["margin"] = c.margin;
    cell["lr"] = c.lr;
    cell["accuracy"] = c.accuracy;
    cell["diverged"] = c.diverged;
    cells.push_back(cell);
  }
  j["cells"] = cells;
  j["best"] = {{"margin", result.best.margin},
               {"lr", result.best.lr},
               {"accuracy", result.best.accuracy}};
  return j;
}

void merge_from_json(EncoderConfig& cfg, const json& j) {
  if (j.contains("kind"))
    cfg.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  get_if(j, "hash_dims", cfg.hash_dims);
  get_if(j, "embed_dim", cfg.embed_dim);
  get_if(j, "max_tokens", cfg.max_tokens);
  get_if(j, "init_scale", cfg.init_scale);
  get_if(j, "layers", cfg.layers);
  get_if(j, "heads", cfg.heads);
  get_if(j, "ff_dim", cfg.ff_dim);
  get_if(j, "attn_dropout", cfg.attn_dropout);
}

void merge_from_json(HeadConfig& cfg, const json& j) {
  if (j.contains("variant"))
    cfg.variant = head_variant_from_string(j.at("variant").get<std::string>());
  get_if(j, "dropout", cfg.dropout);
}

void merge_from_json(ModelConfig& cfg, const json& j) {
  if (j.contains("encoder")) merge_from_json(cfg.encoder, j.at("encoder"));
  if (j.contains("head")) merge_from_json(cfg.head, j.at("head"));
  get_if(j, "shared_encoder", cfg.shared_encoder);
  get_if(j, "bn_eps", cfg.bn_eps);
  get_if(j, "bn_momentum", cfg.bn_momentum);
  get_if(j, "prelu_init", cfg.prelu_init);
}

void merge_from_json(LossConfig& cfg, const json& j) {
  get_if(j, "margin", cfg.margin);
}

void merge_from_json(OptimConfig& cfg, const json& j) {
  get_if(j, "lr", cfg.lr);
  get_if(j, "beta1", cfg.beta1);
  get_if(j, "beta2", cfg.beta2);
  get_if(j, "eps", cfg.eps);
  get_if(j, "weight_decay", cfg.weight_decay);
  get_if(j, "batch_size", cfg.batch_size);
  get_if(j, "max_steps", cfg.max_steps);
  get_if(j, "probe_interval", cfg.probe_interval);
  get_if(j, "seed", cfg.seed);
}

void merge_from_json(MetricsConfig& cfg, const json& j) {
  get_if(j, "k", cfg.k);
  if (j.contains("gain"))
    cfg.gain = gain_from_string(j.at("gain").get<std::string>());
  if (j.contains("relevant_top_m") && !j.at("relevant_top_m").is_null())
    cfg.relevant_top_m = j.at("relevant_top_m").get<int>();
}

void merge_from_json(PairPolicy& policy, const json& j) {
  if (j.contains("order"))
    policy.order = pair_order_from_string(j.at("order").get<std::string>());
  if (j.contains("max_pairs_per_group")) {
    if (j.at("max_pairs_per_group").is_null())
      policy.max_pairs_per_group.reset();
    else
      policy.max_pairs_per_group =
          j.at("max_pairs_per_group").get<std::size_t>();
  }
  get_if(j, "seed", policy.seed);
}

void merge_from_json(SyntheticSpec& spec, const json& j) {
  get_if(j, "num_contexts", spec.num_contexts);
  get_if(j, "passages_per_context_min", spec.passages_per_context_min);
  get_if(j, "passages_per_context_max", spec.passages_per_context_max);
  if (j.contains("class_probabilities")) {
    const auto probs = j.at("class_probabilities").get<std::vector<double>>();
    if (probs.size() != 5)
      throw std::invalid_argument("class_probabilities must have 5 entries");
    for (std::size_t i = 0; i < 5; ++i) spec.class_probabilities[i] = probs[i];
  }
  get_if(j, "vocab_size", spec.vocab_size);
  get_if(j, "quality_lexicon_size", spec.quality_lexicon_size);
  get_if(j, "noise_rate", spec.noise_rate);
  get_if(j, "seed", spec.seed);
}

std::string canonical_dump(const json& j) {
  return j.dump(2) + "\n";
}

}  // namespace ranker
