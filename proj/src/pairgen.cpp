#include "ranker/pairgen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "ranker/parallel.hpp"
#include "ranker/rng.hpp"

namespace ranker {

std::vector<ContextGroup> group_by_context(const Corpus& corpus) {
  std::map<std::string, std::vector<Passage>> groups;
  for (const Passage& p : corpus.passages) groups[p.context_id].push_back(p);
  std::vector<ContextGroup> out;
  out.reserve(groups.size());
  for (auto& [ctx, passages] : groups)
    out.push_back(ContextGroup{ctx, std::move(passages)});
  return out;
}

std::vector<PassagePair> enumerate_pairs(const ContextGroup& group,
                                         const PairPolicy& policy) {
  if (policy.max_pairs_per_group && *policy.max_pairs_per_group == 0)
    throw std::invalid_argument("pair policy: cap must be positive");
  StableRng rng(derive_seed(policy.seed, "pairs", fnv1a64(group.context_id)));
  std::vector<PassagePair> pairs;
  const auto& ps = group.passages;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = i + 1; j < ps.size(); ++j) {
      if (ps[i].score == ps[j].score) continue;  // ties carry no label
      PassagePair pair;
      pair.first = ps[i].id;
      pair.second = ps[j].id;
      pair.label = ps[i].score > ps[j].score ? 1 : -1;
      if (policy.order == PairOrder::randomized && rng.next_bool()) {
        std::swap(pair.first, pair.second);
        pair.label = -pair.label;
      }
      pairs.push_back(std::move(pair));
    }
  }
  if (policy.max_pairs_per_group && pairs.size() > *policy.max_pairs_per_group) {
    // Random subset without replacement, emitted in enumeration order.
    const std::size_t cap = *policy.max_pairs_per_group;
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + rng.next_below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<PassagePair> kept;
    kept.reserve(cap);
    for (std::size_t i : idx) kept.push_back(std::move(pairs[i]));
    pairs = std::move(kept);
  }
  return pairs;
}

std::vector<PassagePair> pair_stream(const Corpus& corpus,
                                     const PairPolicy& policy, int threads) {
  const auto groups = group_by_context(corpus);
  std::vector<std::vector<PassagePair>> per_group(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t i) {
    per_group[i] = enumerate_pairs(groups[i], policy);
  });
  std::vector<PassagePair> all;
  for (auto& g : per_group)
    for (auto& p : g) all.push_back(std::move(p));
  StableRng rng(derive_seed(policy.seed, "pair-stream"));
  rng.shuffle(all);
  return all;
}

std::vector<std::string> write_pair_shards(const std::vector<PassagePair>& pairs,
                                           const std::string& path_prefix,
                                           std::size_t shard_size) {
  std::vector<std::string> paths;
  const std::size_t per_shard = shard_size == 0 ? pairs.size() : shard_size;
  std::size_t shard = 0;
  for (std::size_t begin = 0; begin < pairs.size() || shard == 0;
       begin += per_shard, ++shard) {
    std::string path = path_prefix;
    if (shard_size != 0) {
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, ".%05zu", shard);
      path += suffix;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    const std::size_t end = std::min(pairs.size(), begin + per_shard);
    for (std::size_t i = begin; i < end; ++i) {
      nlohmann::json j;
      j["first"] = pairs[i].first;
      j["second"] = pairs[i].second;
      j["label"] = pairs[i].label;
      out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failure on " + path);
    paths.push_back(std::move(path));
    if (per_shard == 0) break;
  }
  return paths;
}

std::vector<PassagePair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<PassagePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
    PassagePair p;
    p.first = j.at("first").get<std::string>();
    p.second = j.at("second").get<std::string>();
    p.label = j.at("label").get<int>();
    if (p.label != 1 && p.label != -1)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": label must be +1 or -1");
    if (p.first == p.second)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": pair references the same passage twice");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace ranker
