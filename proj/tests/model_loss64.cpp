#include "model_loss64.hpp"

#include <algorithm>

#include "nmt/model.hpp"
#include "nmt/ops.hpp"
#include "nmt/special_tokens.hpp"

static_assert(sizeof(nmt::Real) == 8, "compiled against the 64-bit core");

namespace nmt::testing {

double model_loss_f64(const std::map<std::string, std::vector<double>>& params, const ModelConfig& cfg,
                      const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& tgt,
                      double smoothing) {
  ParameterSet p = init_parameters(cfg, 0);
  for (auto& [name, t] : p.tensors) {
    const auto& v = params.at(name);
    std::copy(v.begin(), v.end(), t.data().begin());
  }
  NoGradGuard guard;
  const TokenBatch batch = TokenBatch::build(src, tgt);
  const Tensor logits = forward(p, cfg, batch);
  const Tensor flat = reshape(logits, {batch.batch * batch.tgt_len, static_cast<std::size_t>(cfg.tgt_vocab)});
  return cross_entropy_smoothed(flat, batch.tgt_out, smoothing, kPadId, Reduction::sum).item();
}

}  // namespace nmt::testing
