#include "nmt/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "nmt/error.hpp"
#include "nmt/special_tokens.hpp"

namespace nmt {

namespace {

// Autograd tapes allocate and free the same large buffers every update. Keeping
// them in the heap instead of fresh mmaps avoids a page-fault storm.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

double lr_schedule(std::uint64_t step, int d_model, int warmup, double scale) {
  if (step < 1) throw usage_error("lr_schedule: step must be >= 1");
  if (warmup < 1) throw usage_error("lr_schedule: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5)) * scale;
}

bool adam_step(ParameterSet& params, AdamState& state, const AdamParams& hp) {
  for (const auto& [name, t] : params.tensors)
    for (Real g : t.grad())
      if (!std::isfinite(g)) return false;

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (auto& [name, tensor] : params.tensors) {
    if (!tensor.requires_grad()) continue;
    auto w = tensor.data();
    auto g = tensor.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != w.size()) m.assign(w.size(), Real(0));
    if (v.size() != w.size()) v.assign(w.size(), Real(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
      const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double step = hp.lr * (mi / c1) / (std::sqrt(vi / c2) + hp.eps);
      w[i] = static_cast<Real>(w[i] - step);
    }
  }
  return true;
}

double cosine_similarity(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw numeric_error("cosine_similarity: size mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Accumulator::Accumulator(const TrainConfig& cfg)
    : mode_(cfg.batch_mode),
      budget_(static_cast<std::size_t>(cfg.token_budget)),
      threshold_(cfg.dynamic_threshold),
      max_micro_(static_cast<std::size_t>(cfg.dynamic_max_micro)),
      last_cosine_(std::numeric_limits<double>::quiet_NaN()) {}

void Accumulator::reset() {
  tokens_ = 0;
  micro_ = 0;
  previous_.clear();
}

bool Accumulator::observe(std::size_t tokens, std::span<const Real> accumulated) {
  tokens_ += tokens;
  ++micro_;
  bool emit;
  if (mode_ == BatchMode::token_budget) {
    emit = tokens_ >= budget_;
  } else {
    emit = micro_ >= max_micro_;
    if (!previous_.empty()) {
      last_cosine_ = cosine_similarity(previous_, accumulated);
      emit = emit || last_cosine_ >= threshold_;
    }
    previous_.assign(accumulated.begin(), accumulated.end());
  }
  if (emit) reset();
  return emit;
}

void save_optimizer_state(const std::string& path, const AdamState& state, const TrainCursor& cursor) {
  std::vector<TensorRecord> records;
  put_meta(records, "state.adam_t", state.t);
  put_meta(records, "state.update", cursor.update);
  put_meta(records, "state.epoch", cursor.epoch);
  put_meta(records, "state.batch_index", cursor.batch_index);
  put_meta(records, "state.micro_total", cursor.micro_total);
  for (const auto& [name, m] : state.m)
    records.push_back({"adam.m." + name, {static_cast<std::uint32_t>(m.size())}, {m.begin(), m.end()}});
  for (const auto& [name, v] : state.v)
    records.push_back({"adam.v." + name, {static_cast<std::uint32_t>(v.size())}, {v.begin(), v.end()}});
  write_records(path, records);
}

void load_optimizer_state(const std::string& path, AdamState& state, TrainCursor& cursor) {
  const auto records = read_records(path);
  state = AdamState{};
  state.t = get_meta(records, "state.adam_t", path);
  cursor.update = get_meta(records, "state.update", path);
  cursor.epoch = get_meta(records, "state.epoch", path);
  cursor.batch_index = get_meta(records, "state.batch_index", path);
  cursor.micro_total = get_meta(records, "state.micro_total", path);
  for (const auto& rec : records) {
    if (rec.name.rfind("adam.m.", 0) == 0)
      state.m[rec.name.substr(7)].assign(rec.data.begin(), rec.data.end());
    else if (rec.name.rfind("adam.v.", 0) == 0)
      state.v[rec.name.substr(7)].assign(rec.data.begin(), rec.data.end());
  }
}

std::string checkpoint_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%08llu.nmtc", static_cast<unsigned long long>(step));
  return buf;
}

MicroResult run_micro_batch(const ParameterSet& params, const ModelConfig& mcfg,
                            const TrainConfig& tcfg, std::span<const EncodedPair> pairs,
                            std::span<const std::size_t> indices, const ForwardOptions& opts) {
  std::vector<std::vector<int>> src, tgt;
  for (std::size_t i : indices) {
    src.push_back(pairs[i].src);
    tgt.push_back(pairs[i].tgt);
  }
  const TokenBatch batch = TokenBatch::build(src, tgt);
  Tensor logits = forward(params, mcfg, batch, opts);
  Tensor flat = reshape(logits, {batch.batch * batch.tgt_len, static_cast<std::size_t>(mcfg.tgt_vocab)});
  Tensor loss = cross_entropy_smoothed(flat, batch.tgt_out, static_cast<Real>(tcfg.label_smoothing),
                                       kPadId, Reduction::sum);
  MicroResult r{static_cast<double>(loss.item()), batch.target_tokens()};
  if (grad_enabled() && std::isfinite(r.loss_sum)) backward(loss);
  return r;
}

double evaluate_loss(const ParameterSet& params, const ModelConfig& mcfg, const TrainConfig& tcfg,
                     std::span<const EncodedPair> pairs) {
  NoGradGuard no_grad;
  const BatchPlan plan = make_batches(pairs, static_cast<std::size_t>(tcfg.max_tokens), 0, 0);
  double loss = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : plan.batches) {
    const MicroResult r = run_micro_batch(params, mcfg, tcfg, pairs, b, ForwardOptions{});
    loss += r.loss_sum;
    tokens += r.tokens;
  }
  return tokens ? loss / static_cast<double>(tokens) : 0.0;
}

namespace {

std::vector<Real> flatten_grads(const ParameterSet& params) {
  std::vector<Real> out;
  out.reserve(params.element_count());
  for (const auto& [name, t] : params.tensors) {
    const auto g = t.grad();
    if (g.empty()) out.insert(out.end(), t.numel(), Real(0));
    else out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

void scale_grads(ParameterSet& params, double factor) {
  for (auto& [name, t] : params.tensors)
    for (Real& g : t.grad()) g = static_cast<Real>(g * factor);
}

std::string batch_ids(std::span<const std::size_t> indices) {
  std::string s;
  for (std::size_t i = 0; i < indices.size() && i < 64; ++i) s += (i ? "," : "") + std::to_string(indices[i]);
  if (indices.size() > 64) s += ",...";
  return s;
}

}  // namespace

TrainResult train_loop(std::span<const EncodedPair> train, std::span<const EncodedPair> valid,
                       const ModelConfig& mcfg, const TrainConfig& tcfg, const TrainOptions& options) {
  mcfg.validate();
  tcfg.validate();
  tune_allocator();
  TrainResult result;

  std::vector<EncodedPair> data;
  for (std::size_t i : filter_by_length(train, static_cast<std::size_t>(tcfg.max_pair_len)))
    data.push_back(train[i]);
  result.dropped_pairs = train.size() - data.size();
  if (data.empty()) throw data_error("train: no training pairs within max_pair_len");

  nlohmann::json tj = tcfg;
  const std::uint32_t digest = config_digest(tj);
  AdamState adam;
  TrainCursor cursor;
  if (!options.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(options.resume_from);
    if (nlohmann::json(ck.meta.model) != nlohmann::json(mcfg))
      throw usage_error("resume: checkpoint model config differs from the requested one");
    result.params = std::move(ck.params);
    load_optimizer_state(options.resume_from + ".optim", adam, cursor);
  } else {
    result.params = init_parameters(mcfg, options.use_init_seed ? options.init_seed : tcfg.seed);
  }

  std::ofstream metrics, valid_log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto mode = options.resume_from.empty() ? std::ios::trunc : std::ios::app;
    metrics.open(options.out_dir + "/train.log", std::ios::out | mode);
    valid_log.open(options.out_dir + "/valid.log", std::ios::out | mode);
    if (!metrics || !valid_log) throw data_error("cannot write logs in '" + options.out_dir + "'");
  }

  ParameterSet& params = result.params;
  params.zero_grad();
  Accumulator acc(tcfg);
  double pending_loss = 0.0;
  std::size_t pending_tokens = 0, pending_micro = 0;
  std::uint64_t last_saved = 0;
  auto clock_start = std::chrono::steady_clock::now();

  auto save = [&](std::uint64_t step) {
    if (options.out_dir.empty() || step == last_saved) return;
    const std::string path = options.out_dir + "/" + checkpoint_name(step);
    save_checkpoint(path, params, CheckpointMeta{step, mcfg, digest});
    save_optimizer_state(path + ".optim", adam, cursor);
    result.checkpoints.push_back(path);
    last_saved = step;
    if (!valid.empty()) {
      const double vl = evaluate_loss(params, mcfg, tcfg, valid);
      result.valid_loss.emplace_back(step, vl);
      valid_log << step << '\t' << vl << '\n' << std::flush;
    }
  };

  auto emit_update = [&]() -> bool {
    scale_grads(params, 1.0 / static_cast<double>(pending_tokens));
    const std::uint64_t step = cursor.update + 1;
    const double lr = lr_schedule(step, mcfg.d_model, tcfg.warmup_steps, tcfg.lr_scale);
    UpdateRecord rec;
    rec.step = step;
    rec.lr = lr;
    rec.loss = pending_loss / static_cast<double>(pending_tokens);
    rec.tokens = pending_tokens;
    rec.micro_batches = pending_micro;
    rec.skipped = !adam_step(params, adam, AdamParams{lr, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps});
    const auto now = std::chrono::steady_clock::now();
    rec.seconds = std::chrono::duration<double>(now - clock_start).count();
    clock_start = now;
    params.zero_grad();
    pending_loss = 0.0;
    pending_tokens = pending_micro = 0;
    cursor.update = step;
    result.updates.push_back(rec);
    if (metrics.is_open())
      metrics << rec.step << '\t' << rec.lr << '\t' << rec.loss << '\t' << rec.tokens << '\n' << std::flush;
    if (options.progress) {
      *options.progress << "step " << rec.step << " lr " << rec.lr << " loss " << rec.loss
                        << " tokens " << rec.tokens << " tok/s "
                        << (rec.seconds > 0 ? static_cast<double>(rec.tokens) / rec.seconds : 0.0)
                        << (rec.skipped ? " (skipped: non-finite gradient)" : "") << '\n';
    }
    if (step % static_cast<std::uint64_t>(tcfg.save_interval_steps) == 0) save(step);
    bool keep_going = true;
    if (tcfg.max_updates > 0 && step >= static_cast<std::uint64_t>(tcfg.max_updates)) keep_going = false;
    if (options.on_update && !options.on_update(rec, params)) keep_going = false;
    return keep_going;
  };

  bool running = true;
  while (running && cursor.epoch < static_cast<std::uint64_t>(tcfg.epochs)) {
    const BatchPlan plan =
        make_batches(data, static_cast<std::size_t>(tcfg.max_tokens), tcfg.seed, cursor.epoch);
    result.dropped_pairs += cursor.batch_index == 0 && cursor.epoch == 0 ? plan.dropped : 0;
    while (running && cursor.batch_index < plan.batches.size()) {
      const auto& indices = plan.batches[cursor.batch_index];
      ForwardOptions fopts;
      fopts.training = mcfg.dropout > 0.0;
      fopts.seed = tcfg.seed;
      fopts.step = cursor.micro_total;
      const MicroResult r = run_micro_batch(params, mcfg, tcfg, data, indices, fopts);
      if (!std::isfinite(r.loss_sum))
        throw numeric_error("train: non-finite loss at update " + std::to_string(cursor.update + 1) +
                            ", epoch " + std::to_string(cursor.epoch) + ", batch pair ids [" +
                            batch_ids(indices) + "]");
      ++cursor.batch_index;
      ++cursor.micro_total;
      pending_loss += r.loss_sum;
      pending_tokens += r.tokens;
      ++pending_micro;
      bool emit;
      if (tcfg.batch_mode == BatchMode::dynamic) {
        const auto flat = flatten_grads(params);
        emit = acc.observe(r.tokens, flat);
      } else {
        emit = acc.observe(r.tokens);
      }
      if (emit) running = emit_update();
    }
    if (cursor.batch_index >= plan.batches.size()) {
      ++cursor.epoch;
      cursor.batch_index = 0;
    }
  }
  if (running && pending_tokens > 0) {
    acc.reset();
    emit_update();
  }
  save(cursor.update);
  return result;
}

}  // namespace nmt
