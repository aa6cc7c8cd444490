#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ranker/corpus.hpp"
#include "ranker/pairgen.hpp"
#include "ranker/rankhead.hpp"

namespace ranker {

struct LossConfig {
  double margin = 2.0;
};

struct OptimConfig {
  double lr = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  long max_steps = 2000;
  long probe_interval = 500;
  std::uint64_t seed = 42;
};

void validate(const LossConfig& cfg);
void validate(const OptimConfig& cfg);

// First/second moment accumulators, shapes mirroring the trainable model
// tensors, float32 like everything persisted.
struct OptimState {
  ParamStore moments;  // "m.<name>" and "v.<name>"
  std::uint64_t step = 0;
};

OptimState init_optim_state(const ParamStore& store);
OptimState init_optim_state(const ModelParams& model);

struct TrainLogEntry {
  long step = 0;
  double loss = 0.0;             // batch hinge sum at this step
  double probe_accuracy = 0.0;   // canonical pair accuracy, eval mode
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
};

// max(0, -E * (f_i - f_j) + margin). Batch losses sum this over the batch.
double margin_loss(const ScorePair& scores, int label, const LossConfig& cfg);

// One gradient tensor per model tensor (empty for non-trainable slots),
// aligned with model.store.tensors() order.
struct GradSet {
  std::vector<Tensor> tensors;
  double loss = 0.0;
  std::vector<BnUpdate> bn_updates;
};

// Reverse-mode gradients of the summed margin loss over the batch. Train
// forward: batch statistics per batch-norm layer; dropout noise is fixed by
// dropout_seed, or disabled entirely when it is nullopt. The model is not
// mutated. Throws on a non-finite forward value.
GradSet compute_gradients(const ModelParams& model,
                          const std::vector<PairExample>& batch,
                          const LossConfig& cfg,
                          std::optional<std::uint64_t> dropout_seed);

// Same forward as compute_gradients, loss value only (used by the
// finite-difference oracle).
double batch_loss(const ModelParams& model,
                  const std::vector<PairExample>& batch, const LossConfig& cfg,
                  std::optional<std::uint64_t> dropout_seed);

// Decoupled-weight-decay adaptive update with bias correction; decay is
// applied to the parameter separately from the gradient term.
void adamw_step(OptimState& state, ParamStore& store, const GradSet& grads,
                const OptimConfig& cfg);
void adamw_step(OptimState& state, ModelParams& model, const GradSet& grads,
                const OptimConfig& cfg);

struct TrainResult {
  ModelParams model;
  OptimState state;
  TrainLog log;
  bool diverged = false;
  long steps_run = 0;
};

// Deterministic end-to-end loop: inits the model from (config, seed), cycles
// the pair stream in a per-epoch reshuffled order, updates running
// batch-norm statistics, probes pair accuracy every probe_interval steps.
// A non-finite loss aborts with the last probe-point snapshot retained.
TrainResult train_loop(const Corpus& corpus,
                       const std::vector<PassagePair>& train_pairs,
                       const std::vector<PassagePair>& probe_pairs,
                       const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                       const OptimConfig& optim_cfg);

// Checkpoint container: magic "PRNK", u32 LE version, length-prefixed JSON
// config block, named float32 blobs, trailing CRC32.
void checkpoint_save(const std::string& path, const ModelParams& model,
                     const OptimState& state, const LossConfig& loss_cfg,
                     const OptimConfig& optim_cfg);

struct Checkpoint {
  ModelParams model;
  OptimState state;
  LossConfig loss;
  OptimConfig optim;
};

Checkpoint checkpoint_load(const std::string& path);

struct GridCell {
  double margin = 0.0;
  double lr = 0.0;
  double accuracy = 0.0;  // validation pair accuracy; 0 when diverged
  bool diverged = false;
};

struct GridResult {
  GridCell best;
  std::vector<GridCell> cells;
};

// Paper search space, used by default.
const std::vector<double>& default_margin_grid();
const std::vector<double>& default_lr_grid();

// One short run per cell on an internal context-held-out split; ties break
// toward smaller lr, then smaller margin.
GridResult grid_search(const Corpus& corpus, const ModelConfig& model_cfg,
                       const OptimConfig& base, std::vector<double> margins,
                       std::vector<double> lrs, long budget_steps);

}  // namespace ranker
