#pragma once

// Optimizer, learning-rate schedule, gradient accumulation and the training
// loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nmt/checkpoint.hpp"
#include "nmt/config.hpp"
#include "nmt/corpus.hpp"
#include "nmt/model.hpp"

namespace nmt {

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5) * scale, for step >= 1.
double lr_schedule(std::uint64_t step, int d_model, int warmup, double scale = 1.0);

struct AdamState {
  std::uint64_t t = 0;
  std::map<std::string, std::vector<Real>> m;
  std::map<std::string, std::vector<Real>> v;
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// One bias-corrected Adam step using each parameter's gradient buffer
// (missing buffers count as zero). If any gradient is non-finite nothing is
// modified and false is returned.
bool adam_step(ParameterSet& params, AdamState& state, const AdamParams& hp);

// Decides when accumulated micro-batches form one update.
class Accumulator {
 public:
  explicit Accumulator(const TrainConfig& cfg);

  // Registers a micro-batch with its target-token count. In dynamic mode
  // `accumulated` is the running gradient sum including this micro-batch.
  // Returns true when an update should be emitted now; the accumulator then
  // resets.
  bool observe(std::size_t tokens, std::span<const Real> accumulated = {});

  std::size_t tokens() const { return tokens_; }
  std::size_t micro_batches() const { return micro_; }
  // Cosine from the most recent dynamic-mode comparison (NaN if none).
  double last_cosine() const { return last_cosine_; }
  void reset();

 private:
  BatchMode mode_;
  std::size_t budget_;
  double threshold_;
  std::size_t max_micro_;
  std::size_t tokens_ = 0;
  std::size_t micro_ = 0;
  std::vector<Real> previous_;
  double last_cosine_;
};

// Cosine similarity in double precision; 0 if either vector is zero.
double cosine_similarity(std::span<const Real> a, std::span<const Real> b);

// Optimizer sidecar written next to each checkpoint.
struct TrainCursor {
  std::uint64_t update = 0;       // updates completed
  std::uint64_t epoch = 0;        // epoch of the next micro-batch
  std::uint64_t batch_index = 0;  // position of the next micro-batch in that epoch
  std::uint64_t micro_total = 0;  // micro-batches consumed so far
};

void save_optimizer_state(const std::string& path, const AdamState& state, const TrainCursor& cursor);
void load_optimizer_state(const std::string& path, AdamState& state, TrainCursor& cursor);

struct UpdateRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean per target token
  std::size_t tokens = 0;
  std::size_t micro_batches = 0;
  double seconds = 0.0;
  bool skipped = false;  // non-finite gradient
};

struct TrainOptions {
  std::string out_dir;      // checkpoints and logs; empty = keep in memory only
  std::string resume_from;  // checkpoint path to continue from
  // Called after every update; returning false stops training.
  std::function<bool(const UpdateRecord&, const ParameterSet&)> on_update;
  std::ostream* progress = nullptr;
  std::uint64_t init_seed = 0;  // used when not resuming; defaults to cfg seed
  bool use_init_seed = false;
};

struct TrainResult {
  ParameterSet params;
  std::vector<UpdateRecord> updates;
  std::vector<std::string> checkpoints;
  std::vector<std::pair<std::uint64_t, double>> valid_loss;
  std::size_t dropped_pairs = 0;
};

std::string checkpoint_name(std::uint64_t step);

// Summed label-smoothed loss and token count of one micro-batch; gradients
// accumulate into the parameter buffers when grad mode is on.
struct MicroResult {
  double loss_sum = 0.0;
  std::size_t tokens = 0;
};
MicroResult run_micro_batch(const ParameterSet& params, const ModelConfig& mcfg,
                            const TrainConfig& tcfg, std::span<const EncodedPair> pairs,
                            std::span<const std::size_t> indices, const ForwardOptions& opts);

// Mean per-token loss over a data set without dropout or gradients.
double evaluate_loss(const ParameterSet& params, const ModelConfig& mcfg, const TrainConfig& tcfg,
                     std::span<const EncodedPair> pairs);

TrainResult train_loop(std::span<const EncodedPair> train, std::span<const EncodedPair> valid,
                       const ModelConfig& mcfg, const TrainConfig& tcfg,
                       const TrainOptions& options = {});

}  // namespace nmt
