#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ranker/corpus.hpp"
#include "ranker/pairgen.hpp"
#include "ranker/rankhead.hpp"

namespace ranker {

// Total ordering of one context group, best first, with the round-robin
// comparator statistics that produced it.
struct RankedList {
  std::string context_id;
  std::vector<std::string> ids;         // best first
  std::vector<int> wins;                // aligned with ids
  std::vector<double> margin_sums;      // aligned with ids
};

enum class GainKind { exponential, linear };

struct MetricsConfig {
  int k = 10;
  GainKind gain = GainKind::exponential;
  // Binary relevance for MRR/MAP: the top-m items by ground-truth score are
  // relevant; defaults to k.
  std::optional<int> relevant_top_m;

  int m() const { return relevant_top_m.value_or(k); }
};

struct ListMetrics {
  double mrr = 0.0;
  double ndcg = 0.0;
  double map = 0.0;
};

struct PairAccuracy {
  double canonical = 0.0;
  double symmetrized = 0.0;
  std::size_t pairs = 0;
};

struct MetricsReport {
  double mrr = 0.0;
  double ndcg = 0.0;
  double map = 0.0;
  double pair_accuracy_canonical = 0.0;
  double pair_accuracy_symmetrized = 0.0;
  std::size_t lists_evaluated = 0;
  std::size_t pairs_evaluated = 0;
  MetricsConfig config;
};

// Round-robin tournament over all unordered pairs: items ordered by
// descending win count, ties by descending summed symmetrized margin, then
// ascending passage id. A zero margin is a win for neither side.
RankedList rank_list(const ModelParams& model, const ContextGroup& group,
                     int threads = 1);

// Same ordering rule applied to a precomputed antisymmetric margin matrix
// (margins.at(i, j) = M(item_i, item_j)).
RankedList rank_from_margins(const std::string& context_id,
                             const std::vector<std::string>& ids,
                             const Tensor& margins);

// Metric core over ground-truth scores listed in predicted rank order.
ListMetrics metrics_from_ranked_scores(const std::vector<double>& scores,
                                       const MetricsConfig& cfg);

ListMetrics list_metrics(const RankedList& ranked,
                         const std::map<std::string, double>& truth,
                         const MetricsConfig& cfg);

// canonical: sign(f(first) - f(second)) in the presented order matches the
// label; symmetrized: sign(M(first, second)) matches. Zero counts as
// incorrect. Pairs with tied ground-truth scores are rejected.
PairAccuracy pair_accuracy(const ModelParams& model, const Corpus& corpus,
                           const std::vector<PassagePair>& pairs,
                           int threads = 1);

// Groups the corpus by context, ranks every group of two or more passages,
// averages list metrics, and scores all distinct-score pairs.
MetricsReport evaluate_corpus(const ModelParams& model, const Corpus& corpus,
                              const MetricsConfig& cfg, int threads = 1);

struct TemporalReport {
  double accuracy = 0.0;
  std::size_t pairs = 0;
  std::size_t contexts = 0;
};

// Agreement between the model's symmetrized ordering and timestamp order
// over all within-context pairs, restricted to contexts holding at least
// min_items timestamped passages with unique scores and unique timestamps.
TemporalReport temporal_consistency(const ModelParams& model,
                                    const Corpus& corpus,
                                    std::size_t min_items, int threads = 1);

// Splits a ranked list (best first) into labeled segments, `segments` at the
// top down to 1. Equal sizes by default with the remainder going to the
// earliest segments; optional proportions must sum to 1.
std::vector<int> rank_to_classes(const std::vector<std::string>& ranked_ids,
                                 int segments,
                                 const std::vector<double>* proportions = nullptr);

// Fraction of ranked ids whose converted label equals truth.at(id).
double conversion_accuracy(const std::vector<std::string>& ranked_ids,
                           const std::vector<int>& labels,
                           const std::map<std::string, int>& truth);

ContextGroup as_single_group(const Corpus& corpus, const std::string& name);

}  // namespace ranker
