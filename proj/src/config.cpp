#include "nmt/config.hpp"

#include <zlib.h>

#include <set>

#include "nmt/error.hpp"

namespace nmt {

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const char* section) {
  if (!j.is_object()) throw usage_error(std::string(section) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw usage_error(std::string(section) + ": unknown key '" + it.key() + "'");
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw usage_error("model config: " + m); };
  if (enc_layers < 1 || dec_layers < 1) fail("layer counts must be positive");
  if (d_model < 1 || heads < 1) fail("d_model and heads must be positive");
  if (d_model % heads != 0) fail("d_model must be divisible by heads");
  if (rel_clip < 1) fail("rel_clip must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (src_vocab < 5 || tgt_vocab < 5) fail("vocabularies need reserved symbols plus at least one token");
  if (max_len < 1) fail("max_len must be positive");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

ModelConfig ModelConfig::base() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.d_model = 64;
  c.heads = 4;
  c.rel_clip = 16;
  c.dropout = 0.1;
  c.max_len = 128;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw usage_error("train config: " + m); };
  if (warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (token_budget < 1) fail("token_budget must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (save_interval_steps < 1) fail("save_interval_steps must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1))
    fail("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (batch_mode == BatchMode::dynamic) {
    if (!(dynamic_threshold > 0 && dynamic_threshold < 1))
      fail("dynamic_threshold must lie in (0, 1)");
    if (dynamic_max_micro < 1) fail("dynamic_max_micro must be positive");
  }
  if (!(label_smoothing >= 0 && label_smoothing < 1)) fail("label_smoothing must lie in [0, 1)");
  if (max_tokens < 1 || max_pair_len < 1) fail("length limits must be positive");
  if (max_updates < 0) fail("max_updates must be >= 0");
  if (average_last < 1) fail("average_last must be >= 1");
}

TrainConfig TrainConfig::base() { return TrainConfig{}; }

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.warmup_steps = 100;
  c.token_budget = 400;
  c.epochs = 20;
  c.save_interval_steps = 50;
  c.lr_scale = 2.0;
  c.max_tokens = 400;
  c.max_pair_len = 64;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},
                     {"d_model", c.d_model},       {"heads", c.heads},
                     {"rel_clip", c.rel_clip},     {"dropout", c.dropout},
                     {"src_vocab", c.src_vocab},   {"tgt_vocab", c.tgt_vocab},
                     {"max_len", c.max_len},       {"ln_eps", c.ln_eps},
                     {"lipschitz_init", c.lipschitz_init}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown(j, {"enc_layers", "dec_layers", "d_model", "heads", "rel_clip", "dropout",
                     "src_vocab", "tgt_vocab", "max_len", "ln_eps", "lipschitz_init"},
                 "model");
  read_opt(j, "enc_layers", c.enc_layers);
  read_opt(j, "dec_layers", c.dec_layers);
  read_opt(j, "d_model", c.d_model);
  read_opt(j, "heads", c.heads);
  read_opt(j, "rel_clip", c.rel_clip);
  read_opt(j, "dropout", c.dropout);
  read_opt(j, "src_vocab", c.src_vocab);
  read_opt(j, "tgt_vocab", c.tgt_vocab);
  read_opt(j, "max_len", c.max_len);
  read_opt(j, "ln_eps", c.ln_eps);
  read_opt(j, "lipschitz_init", c.lipschitz_init);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"warmup_steps", c.warmup_steps},
                     {"token_budget", c.token_budget},
                     {"epochs", c.epochs},
                     {"save_interval_steps", c.save_interval_steps},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"lr_scale", c.lr_scale},
                     {"batch_mode", c.batch_mode == BatchMode::dynamic ? "dynamic" : "token_budget"},
                     {"dynamic_threshold", c.dynamic_threshold},
                     {"dynamic_max_micro", c.dynamic_max_micro},
                     {"label_smoothing", c.label_smoothing},
                     {"seed", c.seed},
                     {"max_tokens", c.max_tokens},
                     {"max_pair_len", c.max_pair_len},
                     {"max_updates", c.max_updates},
                     {"average_last", c.average_last}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  reject_unknown(j, {"warmup_steps", "token_budget", "epochs", "save_interval_steps",
                     "adam_beta1", "adam_beta2", "adam_eps", "lr_scale", "batch_mode",
                     "dynamic_threshold", "dynamic_max_micro", "label_smoothing", "seed",
                     "max_tokens", "max_pair_len", "max_updates", "average_last"},
                 "train");
  read_opt(j, "warmup_steps", c.warmup_steps);
  read_opt(j, "token_budget", c.token_budget);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "save_interval_steps", c.save_interval_steps);
  read_opt(j, "adam_beta1", c.adam_beta1);
  read_opt(j, "adam_beta2", c.adam_beta2);
  read_opt(j, "adam_eps", c.adam_eps);
  read_opt(j, "lr_scale", c.lr_scale);
  if (auto it = j.find("batch_mode"); it != j.end()) {
    const auto mode = it->get<std::string>();
    if (mode == "dynamic") c.batch_mode = BatchMode::dynamic;
    else if (mode == "token_budget") c.batch_mode = BatchMode::token_budget;
    else throw usage_error("train: batch_mode must be 'token_budget' or 'dynamic'");
  }
  read_opt(j, "dynamic_threshold", c.dynamic_threshold);
  read_opt(j, "dynamic_max_micro", c.dynamic_max_micro);
  read_opt(j, "label_smoothing", c.label_smoothing);
  read_opt(j, "seed", c.seed);
  read_opt(j, "max_tokens", c.max_tokens);
  read_opt(j, "max_pair_len", c.max_pair_len);
  read_opt(j, "max_updates", c.max_updates);
  read_opt(j, "average_last", c.average_last);
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"beam", c.beam}, {"alpha", c.alpha}, {"max_len_offset", c.max_len_offset}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  reject_unknown(j, {"beam", "alpha", "max_len_offset"}, "decode");
  read_opt(j, "beam", c.beam);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "max_len_offset", c.max_len_offset);
}

std::uint32_t config_digest(const nlohmann::json& j) {
  const std::string text = j.dump();
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
}

}  // namespace nmt
