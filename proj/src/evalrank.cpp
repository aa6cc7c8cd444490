#include "ranker/evalrank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "ranker/parallel.hpp"

namespace ranker {

namespace {

double gain_of(double rel, GainKind kind) {
  return kind == GainKind::exponential ? std::exp2(rel) - 1.0 : rel;
}

// Per-passage encodings for both input slots (identical under a shared
// encoder, so only one is computed).
struct EncodedGroup {
  std::vector<TokenSeq> tokens;
  std::vector<std::vector<double>> z_first;
  std::vector<std::vector<double>> z_second;  // empty when shared

  const std::vector<double>& first(std::size_t i) const { return z_first[i]; }
  const std::vector<double>& second(std::size_t i) const {
    return z_second.empty() ? z_first[i] : z_second[i];
  }
};

EncodedGroup encode_group(const ModelParams& model,
                          const std::vector<const Passage*>& passages,
                          int threads) {
  EncodedGroup out;
  const std::size_t n = passages.size();
  out.tokens.resize(n);
  out.z_first.resize(n);
  if (!model.config.shared_encoder) out.z_second.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    out.tokens[i] = tokenize(passages[i]->text, model.config.encoder);
    out.z_first[i] = encode_passage(model, out.tokens[i], false);
    if (!model.config.shared_encoder)
      out.z_second[i] = encode_passage(model, out.tokens[i], true);
  });
  return out;
}

}  // namespace

RankedList rank_from_margins(const std::string& context_id,
                             const std::vector<std::string>& ids,
                             const Tensor& margins) {
  const std::size_t n = ids.size();
  if (margins.rows != n || margins.cols != n)
    throw std::invalid_argument("rank_from_margins: matrix shape mismatch");
  std::vector<int> wins(n, 0);
  std::vector<double> sums(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = margins.at(i, j);
      if (m > 0.0) ++wins[i];
      else if (m < 0.0) ++wins[j];
      sums[i] += m;
      sums[j] -= m;
    }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (wins[a] != wins[b]) return wins[a] > wins[b];
    if (sums[a] != sums[b]) return sums[a] > sums[b];
    return ids[a] < ids[b];
  });
  RankedList out;
  out.context_id = context_id;
  out.ids.reserve(n);
  out.wins.reserve(n);
  out.margin_sums.reserve(n);
  for (std::size_t i : order) {
    out.ids.push_back(ids[i]);
    out.wins.push_back(wins[i]);
    out.margin_sums.push_back(sums[i]);
  }
  return out;
}

RankedList rank_list(const ModelParams& model, const ContextGroup& group,
                     int threads) {
  if (group.passages.empty())
    throw std::invalid_argument("rank_list: empty group");
  const std::size_t n = group.passages.size();
  std::vector<const Passage*> ptrs(n);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    ptrs[i] = &group.passages[i];
    ids[i] = group.passages[i].id;
  }
  const EncodedGroup enc = encode_group(model, ptrs, threads);

  Tensor margins(n, n);
  // Flattened upper triangle, chunked independently of the thread count.
  std::vector<std::pair<std::size_t, std::size_t>> upper;
  upper.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) upper.emplace_back(i, j);
  parallel_for(upper.size(), threads, [&](std::size_t k) {
    const auto [i, j] = upper[k];
    const double m = symmetrized_margin_encoded(
        model, enc.first(i), enc.second(i), enc.first(j), enc.second(j));
    margins.at(i, j) = m;
    margins.at(j, i) = -m;
  });
  return rank_from_margins(group.context_id, ids, margins);
}

ListMetrics metrics_from_ranked_scores(const std::vector<double>& scores,
                                       const MetricsConfig& cfg) {
  if (scores.empty())
    throw std::invalid_argument("list_metrics: empty list");
  if (cfg.k < 1 || cfg.m() < 1)
    throw std::invalid_argument("list_metrics: k and m must be >= 1");
  const std::size_t n = scores.size();
  const std::size_t k = std::min<std::size_t>(cfg.k, n);

  // Relevant set: top-m positions by ground-truth score, ties broken toward
  // the earlier list position.
  std::vector<std::size_t> by_truth(n);
  std::iota(by_truth.begin(), by_truth.end(), 0);
  std::stable_sort(by_truth.begin(), by_truth.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  std::vector<bool> relevant(n, false);
  const std::size_t m = std::min<std::size_t>(cfg.m(), n);
  for (std::size_t i = 0; i < m; ++i) relevant[by_truth[i]] = true;

  ListMetrics out;

  for (std::size_t i = 0; i < k; ++i) {
    if (relevant[i]) {
      out.mrr = 1.0 / static_cast<double>(i + 1);
      break;
    }
  }

  double dcg = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    dcg += gain_of(scores[i], cfg.gain) /
           std::log2(static_cast<double>(i) + 2.0);
  std::vector<double> ideal = scores;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    idcg += gain_of(ideal[i], cfg.gain) /
            std::log2(static_cast<double>(i) + 2.0);
  out.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (relevant[i]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  out.map = ap / static_cast<double>(std::min<std::size_t>(cfg.m(), cfg.k));
  return out;
}

ListMetrics list_metrics(const RankedList& ranked,
                         const std::map<std::string, double>& truth,
                         const MetricsConfig& cfg) {
  std::vector<double> scores;
  scores.reserve(ranked.ids.size());
  for (const std::string& id : ranked.ids) {
    auto it = truth.find(id);
    if (it == truth.end())
      throw std::invalid_argument("list_metrics: no truth score for \"" + id +
                                  "\"");
    scores.push_back(it->second);
  }
  return metrics_from_ranked_scores(scores, cfg);
}

PairAccuracy pair_accuracy(const ModelParams& model, const Corpus& corpus,
                           const std::vector<PassagePair>& pairs,
                           int threads) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    index.emplace(corpus.passages[i].id, i);

  std::vector<const Passage*> ptrs;
  std::unordered_map<std::size_t, std::size_t> enc_slot;
  std::vector<std::pair<std::size_t, std::size_t>> resolved(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    auto find = [&](const std::string& id) {
      auto it = index.find(id);
      if (it == index.end())
        throw std::runtime_error("pair_accuracy: unknown passage id \"" + id +
                                 "\"");
      return it->second;
    };
    const std::size_t a = find(pairs[p].first);
    const std::size_t b = find(pairs[p].second);
    if (corpus.passages[a].score == corpus.passages[b].score)
      throw std::runtime_error("pair_accuracy: pair (\"" + pairs[p].first +
                               "\", \"" + pairs[p].second +
                               "\") has tied ground-truth scores");
    for (std::size_t idx : {a, b})
      if (enc_slot.emplace(idx, ptrs.size()).second)
        ptrs.push_back(&corpus.passages[idx]);
    resolved[p] = {enc_slot[a], enc_slot[b]};
  }
  const EncodedGroup enc = encode_group(model, ptrs, threads);

  std::vector<std::uint8_t> canon(pairs.size(), 0), symm(pairs.size(), 0);
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    const auto [a, b] = resolved[p];
    const int label = pairs[p].label;
    const ScorePair s = head_scores(model, enc.first(a), enc.second(b));
    const double d = s.first - s.second;
    canon[p] = d != 0.0 && (d > 0.0) == (label > 0);
    const double m = symmetrized_margin_encoded(
        model, enc.first(a), enc.second(a), enc.first(b), enc.second(b));
    symm[p] = m != 0.0 && (m > 0.0) == (label > 0);
  });
  PairAccuracy out;
  out.pairs = pairs.size();
  if (!pairs.empty()) {
    std::size_t c = 0, s = 0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      c += canon[p];
      s += symm[p];
    }
    out.canonical = static_cast<double>(c) / static_cast<double>(pairs.size());
    out.symmetrized = static_cast<double>(s) / static_cast<double>(pairs.size());
  }
  return out;
}

MetricsReport evaluate_corpus(const ModelParams& model, const Corpus& corpus,
                              const MetricsConfig& cfg, int threads) {
  const auto groups = group_by_context(corpus);
  std::map<std::string, double> truth;
  for (const Passage& p : corpus.passages) truth[p.id] = p.score;

  std::vector<const ContextGroup*> eval_groups;
  for (const auto& g : groups)
    if (g.passages.size() >= 2) eval_groups.push_back(&g);

  std::vector<ListMetrics> per_list(eval_groups.size());
  parallel_for(eval_groups.size(), threads, [&](std::size_t i) {
    const RankedList ranked = rank_list(model, *eval_groups[i], 1);
    per_list[i] = list_metrics(ranked, truth, cfg);
  });

  MetricsReport report;
  report.config = cfg;
  report.lists_evaluated = per_list.size();
  for (const ListMetrics& lm : per_list) {
    report.mrr += lm.mrr;
    report.ndcg += lm.ndcg;
    report.map += lm.map;
  }
  if (!per_list.empty()) {
    const double inv = 1.0 / static_cast<double>(per_list.size());
    report.mrr *= inv;
    report.ndcg *= inv;
    report.map *= inv;
  }

  PairPolicy policy;  // canonical order, no cap; seed is never used
  std::vector<PassagePair> pairs;
  for (const auto& g : groups) {
    auto group_pairs = enumerate_pairs(g, policy);
    pairs.insert(pairs.end(), group_pairs.begin(), group_pairs.end());
  }
  const PairAccuracy acc = pair_accuracy(model, corpus, pairs, threads);
  report.pair_accuracy_canonical = acc.canonical;
  report.pair_accuracy_symmetrized = acc.symmetrized;
  report.pairs_evaluated = acc.pairs;
  return report;
}

TemporalReport temporal_consistency(const ModelParams& model,
                                    const Corpus& corpus,
                                    std::size_t min_items, int threads) {
  if (min_items < 2)
    throw std::invalid_argument("temporal_consistency: min_items must be >= 2");
  const auto groups = group_by_context(corpus);

  // Qualifying contexts: at least min_items timestamped passages whose
  // scores and timestamps are unique within the context. Any duplicated
  // score or timestamp drops all passages carrying it.
  std::vector<std::vector<const Passage*>> qualifying;
  for (const auto& g : groups) {
    std::map<double, std::size_t> score_count;
    std::map<long long, std::size_t> ts_count;
    for (const Passage& p : g.passages) {
      if (!p.timestamp) continue;
      ++score_count[p.score];
      ++ts_count[*p.timestamp];
    }
    std::vector<const Passage*> kept;
    for (const Passage& p : g.passages) {
      if (!p.timestamp) continue;
      if (score_count[p.score] == 1 && ts_count[*p.timestamp] == 1)
        kept.push_back(&p);
    }
    if (kept.size() >= min_items) qualifying.push_back(std::move(kept));
  }
  if (qualifying.empty())
    throw std::runtime_error("temporal_consistency: no qualifying context");

  std::vector<std::size_t> agree(qualifying.size(), 0);
  std::vector<std::size_t> total(qualifying.size(), 0);
  parallel_for(qualifying.size(), threads, [&](std::size_t gi) {
    auto items = qualifying[gi];
    std::sort(items.begin(), items.end(),
              [](const Passage* a, const Passage* b) {
                return *a->timestamp < *b->timestamp;
              });
    const EncodedGroup enc = encode_group(model, items, 1);
    for (std::size_t i = 0; i < items.size(); ++i)
      for (std::size_t j = i + 1; j < items.size(); ++j) {
        // j is the later passage; agreement means the model ranks it higher.
        const double m = symmetrized_margin_encoded(
            model, enc.first(j), enc.second(j), enc.first(i), enc.second(i));
        agree[gi] += m > 0.0;
        ++total[gi];
      }
  });
  TemporalReport report;
  report.contexts = qualifying.size();
  for (std::size_t gi = 0; gi < qualifying.size(); ++gi) {
    report.pairs += total[gi];
  }
  std::size_t agreed = 0;
  for (std::size_t a : agree) agreed += a;
  report.accuracy = report.pairs == 0
                        ? 0.0
                        : static_cast<double>(agreed) /
                              static_cast<double>(report.pairs);
  return report;
}

std::vector<int> rank_to_classes(const std::vector<std::string>& ranked_ids,
                                 int segments,
                                 const std::vector<double>* proportions) {
  if (segments < 2)
    throw std::invalid_argument("rank_to_classes: segments must be >= 2");
  const std::size_t n = ranked_ids.size();
  if (n < static_cast<std::size_t>(segments))
    throw std::invalid_argument("rank_to_classes: fewer items than segments");

  std::vector<std::size_t> sizes(segments, 0);
  if (proportions) {
    if (proportions->size() != static_cast<std::size_t>(segments))
      throw std::invalid_argument("rank_to_classes: proportions size mismatch");
    double sum = 0.0;
    for (double p : *proportions) {
      if (p < 0.0)
        throw std::invalid_argument("rank_to_classes: negative proportion");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("rank_to_classes: proportions must sum to 1");
    // Cumulative rounding keeps sizes summing to n exactly.
    double acc = 0.0;
    std::size_t prev = 0;
    for (int s = 0; s < segments; ++s) {
      acc += (*proportions)[s];
      const std::size_t boundary =
          s + 1 == segments
              ? n
              : static_cast<std::size_t>(
                    std::llround(acc * static_cast<double>(n)));
      sizes[s] = boundary < prev ? 0 : boundary - prev;
      prev = std::max(prev, boundary);
    }
  } else {
    const std::size_t base = n / segments;
    const std::size_t rem = n % segments;
    for (int s = 0; s < segments; ++s)
      sizes[s] = base + (static_cast<std::size_t>(s) < rem ? 1 : 0);
  }

  std::vector<int> labels(n, 0);
  std::size_t pos = 0;
  for (int s = 0; s < segments; ++s)
    for (std::size_t i = 0; i < sizes[s]; ++i) labels[pos++] = segments - s;
  return labels;
}

double conversion_accuracy(const std::vector<std::string>& ranked_ids,
                           const std::vector<int>& labels,
                           const std::map<std::string, int>& truth) {
  if (ranked_ids.size() != labels.size())
    throw std::invalid_argument("conversion_accuracy: size mismatch");
  if (ranked_ids.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ranked_ids.size(); ++i) {
    auto it = truth.find(ranked_ids[i]);
    if (it == truth.end())
      throw std::invalid_argument("conversion_accuracy: no truth for \"" +
                                  ranked_ids[i] + "\"");
    correct += it->second == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(ranked_ids.size());
}

ContextGroup as_single_group(const Corpus& corpus, const std::string& name) {
  ContextGroup g;
  g.context_id = name;
  g.passages = corpus.passages;
  return g;
}

}  // namespace ranker
