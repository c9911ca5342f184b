#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace nmt {

struct ModelConfig {
  int enc_layers = 6;
  int dec_layers = 6;
  int d_model = 512;
  int heads = 8;
  int rel_clip = 16;
  double dropout = 0.1;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int max_len = 256;
  double ln_eps = 1e-6;
  // Scale residual-branch output projections by (2L)^(-1/4) at init.
  bool lipschitz_init = true;

  int d_ff() const { return 4 * d_model; }
  int head_dim() const { return d_model / heads; }
  // Throws usage_error describing the first violated constraint.
  void validate() const;

  // Published-recipe defaults scaled for a desk: setting D with 6 layers.
  static ModelConfig base();
  // Small profile used by tests and the bundled synthetic pipeline.
  static ModelConfig toy();
};

enum class BatchMode { token_budget, dynamic };

struct TrainConfig {
  int warmup_steps = 8000;
  int token_budget = 25000;
  int epochs = 128;
  int save_interval_steps = 1500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double lr_scale = 1.0;
  BatchMode batch_mode = BatchMode::token_budget;
  double dynamic_threshold = 0.9;
  int dynamic_max_micro = 16;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  // Padded target tokens per micro-batch.
  int max_tokens = 4096;
  // Pairs with more BPE tokens than this on either side are filtered.
  int max_pair_len = 256;
  // Stop after this many updates (0 = run all epochs).
  int max_updates = 0;
  // Checkpoints averaged for inference.
  int average_last = 5;

  void validate() const;
  static TrainConfig base();
  static TrainConfig toy();
};

struct DecodeConfig {
  int beam = 4;
  double alpha = 1.0;
  // Hypothesis length cap is source length + this.
  int max_len_offset = 50;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);

// Stable digest of a config's canonical JSON text.
std::uint32_t config_digest(const nlohmann::json& j);

}  // namespace nmt
