#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ranker/encoder.hpp"
#include "ranker/graph.hpp"
#include "ranker/params.hpp"

namespace ranker {

enum class HeadVariant { mlp4, single_linear };

struct HeadConfig {
  HeadVariant variant = HeadVariant::mlp4;
  double dropout = 0.2;
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadConfig head;
  bool shared_encoder = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double prelu_init = 0.25;
};

void validate(const ModelConfig& cfg);

// Head layer widths for an encoder of width d: the four-layer head tapers
// 2d -> 2d -> d -> d/2 -> 2; the ablation maps 2d -> 2 directly.
std::vector<std::size_t> head_layer_widths(const ModelConfig& cfg);

struct ModelParams {
  ModelConfig config;
  ParamStore store;
};

struct ScorePair {
  double first = 0.0;
  double second = 0.0;
};

// Pending running-statistics update for one batch-norm layer, produced by a
// train-mode forward and applied by the single training owner.
struct BnUpdate {
  std::string mean_name;
  std::string var_name;
  Tensor batch_mean;
  Tensor batch_var;  // biased
  std::size_t batch = 0;
};

struct PairExample {
  const TokenSeq* a = nullptr;
  const TokenSeq* b = nullptr;
  int label = 0;  // +1 / -1; ignored when no loss is requested
};

// Tape handles for one batched pair forward.
struct PairBatchGraph {
  int scores = -1;   // (B, 2) node: columns are f(x1), f(x2)
  int f_first = -1;  // (B, 1)
  int f_second = -1; // (B, 1)
  int loss = -1;     // (1, 1); only when a margin is supplied
  std::vector<BnUpdate> bn_updates;
  std::map<std::string, int> leaves;  // parameter name -> leaf node
  Tensor emb_grad_a;  // dense embedding-table grads, sized iff with_grads
  Tensor emb_grad_b;  // unshared ablation only
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

// Builds encoder + concatenation + head for a batch of pairs. Train mode
// uses batch statistics and dropout; eval mode running statistics and no
// dropout. hinge_margin non-null additionally builds the summed Eq.-2 loss.
void build_pair_batch(Graph& g, const ModelParams& model,
                      const std::vector<PairExample>& batch, Mode mode,
                      StableRng* dropout_rng, bool with_grads,
                      const double* hinge_margin, PairBatchGraph& out);

// Folds pending batch statistics into the running mean/variance tensors
// (variance stored unbiased as is conventional).
void apply_bn_updates(ParamStore& store, const std::vector<BnUpdate>& updates,
                      double momentum);
void apply_bn_updates(ModelParams& model, const std::vector<BnUpdate>& updates);

// Single-pair forward. Train mode runs the batch-statistics path on a batch
// of one and updates running statistics; dropout noise is fixed by
// dropout_seed.
ScorePair forward_pair(ModelParams& model, const TokenSeq& a,
                       const TokenSeq& b, Mode mode,
                       std::uint64_t dropout_seed = 0);

// Eval fast paths used by ranking and metrics; `z` vectors come from
// encode() (cache them per passage when comparing many pairs).
std::vector<double> encode_passage(const ModelParams& model,
                                   const TokenSeq& tokens, bool second_slot);
ScorePair head_scores(const ModelParams& model, std::span<const double> z1,
                      std::span<const double> z2);

// M(a,b) = ((f1-f2) at order (a,b) - (f1-f2) at order (b,a)) / 2.
// Antisymmetric by construction: M(a,b) == -M(b,a) exactly.
double symmetrized_margin(const ModelParams& model, const TokenSeq& a,
                          const TokenSeq& b);
double symmetrized_margin_encoded(const ModelParams& model,
                                  std::span<const double> za_first,
                                  std::span<const double> za_second,
                                  std::span<const double> zb_first,
                                  std::span<const double> zb_second);

}  // namespace ranker
