#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ranker/corpus.hpp"

namespace ranker {

struct ContextGroup {
  std::string context_id;
  std::vector<Passage> passages;
};

// Ordered pair with ground-truth label: +1 iff score(first) > score(second).
// Equal-score pairs are never emitted, so the label is always defined.
struct PassagePair {
  std::string first;
  std::string second;
  int label = 0;

  bool operator==(const PassagePair&) const = default;
};

enum class PairOrder { as_enumerated, randomized };

struct PairPolicy {
  PairOrder order = PairOrder::as_enumerated;
  std::optional<std::size_t> max_pairs_per_group;
  std::uint64_t seed = 42;
};

// One group per distinct context_id, sorted by context_id; passages keep
// corpus order within each group.
std::vector<ContextGroup> group_by_context(const Corpus& corpus);

// All unordered same-context pairs with distinct scores, labeled per the
// ground truth. randomized order flips first/second (and the label) with
// probability 1/2 under a per-group stream derived from (seed, context_id),
// so groups can be processed in any order or in parallel.
std::vector<PassagePair> enumerate_pairs(const ContextGroup& group,
                                         const PairPolicy& policy);

// Union of enumerate_pairs over all groups (per-group caps applied),
// deterministically shuffled under policy.seed.
std::vector<PassagePair> pair_stream(const Corpus& corpus,
                                     const PairPolicy& policy,
                                     int threads = 1);

// JSONL shards of {"first", "second", "label"}; returns the written paths.
// shard_size 0 writes a single file at path_prefix.
std::vector<std::string> write_pair_shards(const std::vector<PassagePair>& pairs,
                                           const std::string& path_prefix,
                                           std::size_t shard_size = 0);
std::vector<PassagePair> load_pairs(const std::string& path);

}  // namespace ranker
