#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ranker {

struct Votes {
  long long item = 0;
  long long parent = 0;
  bool operator==(const Votes&) const = default;
};

// One text item. `score` is the graded relevance used for ranking labels;
// `label` is the discrete class (set by normalize_and_bin or the synthetic
// generator) used by the classifier baseline and conversion accuracy.
struct Passage {
  std::string id;
  std::string context_id;
  std::string text;
  double score = 0.0;
  std::optional<long long> timestamp;
  std::optional<Votes> raw_votes;
  std::optional<int> label;

  bool operator==(const Passage&) const = default;
};

struct Corpus {
  std::vector<Passage> passages;
  int schema_version = 1;

  std::size_t size() const { return passages.size(); }
  bool operator==(const Corpus&) const = default;
};

enum class CorpusFormat { jsonl, csv };
enum class SplitStrategy { random, by_context, temporal };

// Controlled skewed-corpus generator. Text is built from generic filler
// tokens plus quality-lexicon tokens whose positive:negative mix encodes the
// class, so the score is recoverable from the text at desk scale.
struct SyntheticSpec {
  std::size_t num_contexts = 10;
  std::size_t passages_per_context_min = 5;
  std::size_t passages_per_context_max = 5;
  std::array<double, 5> class_probabilities{0.2, 0.2, 0.2, 0.2, 0.2};
  std::size_t vocab_size = 200;
  std::size_t quality_lexicon_size = 30;
  double noise_rate = 0.0;
  std::uint64_t seed = 42;
};

void validate_spec(const SyntheticSpec& spec);

Corpus load_dataset(const std::string& path, CorpusFormat format);
void save_dataset(const Corpus& corpus, const std::string& path,
                  CorpusFormat format);
CorpusFormat format_from_path(const std::string& path);

// score := item_votes / (parent_votes + 1); class = equal-width histogram
// bin over the observed score range, in 1..bins. Both stored.
Corpus normalize_and_bin(const Corpus& corpus, int bins);

Corpus generate_synthetic(const SyntheticSpec& spec);
// Exact per-class quotas instead of random class draws; everything else
// follows generate_synthetic. Used to build balanced test sets.
Corpus generate_balanced_synthetic(const SyntheticSpec& spec,
                                   std::size_t per_class);

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus,
                                       SplitStrategy strategy,
                                       double test_fraction,
                                       std::uint64_t seed);

// Discrete class of a passage: the stored label if present, otherwise the
// score when it is a whole number. Throws otherwise.
int passage_class(const Passage& p);

}  // namespace ranker
