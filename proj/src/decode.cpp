#include "nmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "nmt/corpus.hpp"
#include "nmt/error.hpp"
#include "nmt/special_tokens.hpp"

namespace nmt {

namespace {

std::vector<double> log_softmax_row(std::span<const Real> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Real v : logits) mx = std::max(mx, static_cast<double>(v));
  double total = 0.0;
  for (Real v : logits) total += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

void check_source(const ModelConfig& cfg, std::span<const int> source) {
  if (source.empty()) throw usage_error("decode: empty source");
  if (source.size() + 1 > static_cast<std::size_t>(cfg.max_len))
    throw numeric_error("decode: source of " + std::to_string(source.size()) +
                        " tokens exceeds max_len " + std::to_string(cfg.max_len));
  for (int id : source)
    if (id < 0 || id >= cfg.src_vocab) throw data_error("decode: source id " + std::to_string(id) + " out of range");
}

struct Candidate {
  double logprob;
  std::size_t parent;
  int token;
};

}  // namespace

double normalized_score(const Hypothesis& h, double alpha) {
  return h.logprob_sum / std::pow(static_cast<double>(h.length()), alpha);
}

BeamResult beam_search(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> source,
                       const BeamOptions& options) {
  check_source(cfg, source);
  if (options.beam == 0) throw usage_error("beam_search: beam must be >= 1");
  if (options.max_len == 0) throw usage_error("beam_search: max_len must be >= 1");
  const std::size_t max_len = std::min(options.max_len, static_cast<std::size_t>(cfg.max_len));

  DecoderState state(params, cfg, source);
  std::vector<Hypothesis> live{Hypothesis{{kBosId}, 0.0, false}};
  BeamResult result;
  double best_finished = -std::numeric_limits<double>::infinity();
  const double max_denominator = std::pow(static_cast<double>(max_len), options.alpha);

  auto retire = [&](Hypothesis h) {
    h.finished = true;
    best_finished = std::max(best_finished, normalized_score(h, options.alpha));
    result.finished.push_back(std::move(h));
  };

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<int> last;
    for (const auto& h : live) last.push_back(h.tokens.back());
    const Tensor logits = state.step(last);
    ++result.steps;
    const std::size_t vocab = logits.dim(1);
    std::vector<Candidate> cands;
    cands.reserve(live.size() * vocab);
    for (std::size_t r = 0; r < live.size(); ++r) {
      const auto lp = log_softmax_row(logits.data().subspan(r * vocab, vocab));
      for (std::size_t v = 0; v < vocab; ++v)
        cands.push_back({live[r].logprob_sum + lp[v], r, static_cast<int>(v)});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logprob > b.logprob; });

    std::vector<Hypothesis> next;
    std::vector<std::size_t> parents;
    for (const auto& c : cands) {
      if (next.size() >= options.beam) break;
      Hypothesis h{live[c.parent].tokens, c.logprob, false};
      h.tokens.push_back(c.token);
      if (c.token == kEosId) {
        retire(std::move(h));
      } else {
        next.push_back(std::move(h));
        parents.push_back(c.parent);
      }
    }
    if (t + 1 == max_len) {
      for (auto& h : next) retire(std::move(h));
      next.clear();
    }
    live = std::move(next);
    if (live.empty()) break;
    // Best reachable normalized score of any live hypothesis.
    double bound = -std::numeric_limits<double>::infinity();
    for (const auto& h : live) bound = std::max(bound, h.logprob_sum / max_denominator);
    if (!result.finished.empty() && best_finished >= bound) break;
    state.reorder(parents);
  }

  const Hypothesis* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& h : result.finished) {
    const double s = normalized_score(h, options.alpha);
    if (!best || s > best_score) best = &h, best_score = s;
  }
  result.best = *best;
  return result;
}

Hypothesis greedy_decode(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> source,
                         std::size_t max_len) {
  check_source(cfg, source);
  if (max_len == 0) throw usage_error("greedy_decode: max_len must be >= 1");
  max_len = std::min(max_len, static_cast<std::size_t>(cfg.max_len));
  DecoderState state(params, cfg, source);
  Hypothesis h{{kBosId}, 0.0, false};
  for (std::size_t t = 0; t < max_len; ++t) {
    const int last = h.tokens.back();
    const Tensor logits = state.step(std::span<const int>(&last, 1));
    const auto lp = log_softmax_row(logits.data());
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.logprob_sum += lp[static_cast<std::size_t>(best)];
    if (best == kEosId) break;
  }
  h.finished = true;
  return h;
}

double sequence_logprob(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> source,
                        std::span<const int> target) {
  check_source(cfg, source);
  NoGradGuard no_grad;
  const std::vector<int> src(source.begin(), source.end());
  // TokenBatch appends EOS to the target; score only the given prefix.
  const std::vector<int> tgt(target.begin(), target.end());
  const TokenBatch batch = TokenBatch::build(std::span(&src, 1), std::span(&tgt, 1));
  const Tensor logits = forward(params, cfg, batch);
  const std::size_t vocab = static_cast<std::size_t>(cfg.tgt_vocab);
  double total = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const auto lp = log_softmax_row(logits.data().subspan(t * vocab, vocab));
    total += lp[static_cast<std::size_t>(target[t])];
  }
  return total;
}

std::size_t decode_length_limit(const ModelConfig& cfg, std::size_t source_len, int offset) {
  const std::size_t want = source_len + static_cast<std::size_t>(std::max(offset, 1));
  return std::max<std::size_t>(1, std::min(want, static_cast<std::size_t>(cfg.max_len)));
}

std::size_t translate_file(const ParameterSet& params, const ModelConfig& cfg, const MergeTable& src_merges,
                           const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                           const std::string& input_path, const std::string& output_path,
                           const DecodeConfig& decode) {
  if (src_vocab.size() != static_cast<std::size_t>(cfg.src_vocab) ||
      tgt_vocab.size() != static_cast<std::size_t>(cfg.tgt_vocab))
    throw data_error("translate: vocabulary sizes " + std::to_string(src_vocab.size()) + "/" +
                     std::to_string(tgt_vocab.size()) + " do not match checkpoint " +
                     std::to_string(cfg.src_vocab) + "/" + std::to_string(cfg.tgt_vocab));
  const auto lines = read_lines(input_path);
  BpeSegmenter segmenter(src_merges);
  std::vector<std::vector<int>> sources;
  for (const auto& line : lines) {
    auto ids = encode_ids(segmenter.segment_line(line), src_vocab, false);
    // Keep room for the appended EOS.
    if (ids.size() + 1 > static_cast<std::size_t>(cfg.max_len)) ids.resize(static_cast<std::size_t>(cfg.max_len) - 1);
    sources.push_back(std::move(ids));
  }
  std::vector<std::string> outputs(lines.size());
  const auto n = static_cast<std::ptrdiff_t>(lines.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& src = sources[static_cast<std::size_t>(i)];
    if (src.empty()) continue;
    try {
      BeamOptions opts{static_cast<std::size_t>(decode.beam),
                       decode_length_limit(cfg, src.size(), decode.max_len_offset), decode.alpha};
      const BeamResult r = beam_search(params, cfg, src, opts);
      outputs[static_cast<std::size_t>(i)] = decode_ids(r.best.tokens, tgt_vocab);
    } catch (...) {
#pragma omp critical(nmt_translate_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  write_lines(output_path, outputs);
  return outputs.size();
}

}  // namespace nmt
