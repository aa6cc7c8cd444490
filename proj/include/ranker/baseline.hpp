#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ranker/corpus.hpp"
#include "ranker/encoder.hpp"
#include "ranker/training.hpp"

namespace ranker {

// Softmax classifier over the same encoder and token pipeline as the
// ranker: d -> d/2 (Linear-BatchNorm-PReLU + dropout) -> C, bare final
// layer, cross-entropy loss with the same optimizer machinery.
struct ClassifierConfig {
  EncoderConfig encoder;
  int num_classes = 5;
  double dropout = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double prelu_init = 0.25;
};

void validate(const ClassifierConfig& cfg);

struct ClassifierParams {
  ClassifierConfig config;
  ParamStore store;
};

ClassifierParams init_classifier(const ClassifierConfig& cfg,
                                 std::uint64_t seed);

struct ClassifierTrainResult {
  ClassifierParams params;
  TrainLog log;
  bool diverged = false;
  std::vector<int> missing_classes;  // classes absent from training data
};

// Labels come from passage_class(); classes absent from the training data
// are recorded as a warning and training proceeds.
ClassifierTrainResult train_classifier(const Corpus& corpus,
                                       const ClassifierConfig& cfg,
                                       const OptimConfig& optim_cfg);

struct Classification {
  int label = 0;  // 1..C
  std::vector<double> probabilities;
};

Classification classify(const ClassifierParams& params, const TokenSeq& tokens);
Classification classify(const ClassifierParams& params, const Passage& passage);

struct ClassifierEval {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double macro_auc = 0.0;
};

ClassifierEval evaluate_classifier(const ClassifierParams& params,
                                   const Corpus& test, int threads = 1);

struct HeadToHeadConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  int segments = 5;
  std::uint64_t seed = 42;
  int threads = 1;
};

struct HeadToHeadReport {
  double ranker_accuracy = 0.0;      // rank whole test list + convert
  double classifier_accuracy = 0.0;
  double gap = 0.0;
  double ranker_pair_accuracy = 0.0; // symmetrized, on the test pairs
  double classifier_macro_f1 = 0.0;
  double classifier_macro_auc = 0.0;
  std::map<int, std::size_t> train_distribution;
  std::map<int, std::size_t> test_distribution;
  std::uint64_t ranker_seed = 0;
  std::uint64_t classifier_seed = 0;
};

// Trains ranker and classifier on the same training corpus with the same
// encoder config and budget, then compares balanced-test accuracy: the
// classifier directly, the ranker by sorting the whole test set and cutting
// it into equal segments. The test corpus must be balanced across classes.
HeadToHeadReport head_to_head(const Corpus& train, const Corpus& test,
                              const HeadToHeadConfig& cfg);

}  // namespace ranker
