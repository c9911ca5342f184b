#include "nmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "nmt/error.hpp"
#include "nmt/textnorm.hpp"

namespace nmt {

namespace {

bool is_space_char(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == 0xA0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200A);
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

}  // namespace

std::vector<std::string> char_tokenize(std::string_view s) {
  std::vector<std::string> out;
  for (char32_t cp : utf8::decode(s)) {
    if (is_space_char(cp)) continue;
    out.emplace_back();
    utf8::append(out.back(), cp);
  }
  return out;
}

BleuReport bleu(std::span<const std::string> hyps, std::span<const std::string> refs, int max_n,
                BleuSmoothing smoothing) {
  if (hyps.size() != refs.size())
    throw data_error("bleu: " + std::to_string(hyps.size()) + " hypotheses but " +
                      std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw data_error("bleu: empty corpus");
  if (max_n < 1) throw usage_error("bleu: max_n must be >= 1");

  const auto orders = static_cast<std::size_t>(max_n);
  BleuReport report;
  report.matches.assign(orders, 0);
  report.totals.assign(orders, 0);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = char_tokenize(hyps[s]);
    const auto r = char_tokenize(refs[s]);
    report.hyp_length += h.size();
    report.ref_length += r.size();
    for (std::size_t n = 1; n <= orders; ++n) {
      const auto hc = ngrams(h, n);
      const auto rc = ngrams(r, n);
      for (const auto& [gram, count] : hc) {
        auto it = rc.find(gram);
        if (it != rc.end()) report.matches[n - 1] += std::min(count, it->second);
      }
      if (h.size() >= n) report.totals[n - 1] += h.size() - n + 1;
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < orders; ++n) {
    double m = static_cast<double>(report.matches[n]);
    const double t = static_cast<double>(report.totals[n]);
    if (smoothing == BleuSmoothing::floor && m == 0.0 && t > 0.0) m = 0.1;
    const double p = t > 0.0 ? m / t : 0.0;
    report.precisions.push_back(p);
    if (p <= 0.0) zero = true;
    else log_sum += std::log(p);
  }
  if (report.hyp_length == 0) {
    report.brevity_penalty = 0.0;
  } else {
    const double ratio =
        static_cast<double>(report.ref_length) / static_cast<double>(report.hyp_length);
    report.brevity_penalty = std::min(1.0, std::exp(1.0 - ratio));
  }
  report.score =
      zero ? 0.0
           : 100.0 * report.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return report;
}

}  // namespace nmt
