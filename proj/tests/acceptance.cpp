// Acceptance checks. One line per criterion; exit status is nonzero when any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "json.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/decode.hpp"
#include "nmt/eval.hpp"
#include "nmt/pipeline.hpp"
#include "nmt/subword.hpp"
#include "nmt/textnorm.hpp"
#include "nmt/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nmt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed condition; the first few are kept in the detail line.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || failures < 3) detail << (failures ? "; " : "") << "FAILED " << what;
    pass = false;
    ++failures;
  }
  int failures = 0;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void gradients(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0;
  std::size_t ops = 0;
  for (auto& c : testing::op_cases()) {
    const auto r = testing::check_gradients(c, testing::default_settings());
    o.require(r.max_rel < c.tolerance, r.worst);
    worst_op = std::max(worst_op, r.max_rel);
    ++ops;
  }
  auto model = testing::model_case(testing::gradcheck_model_config(), 11);
  auto s = testing::default_settings();
  s.max_samples = 300;
  const auto r = testing::check_gradients(model, s);
  o.require(r.checked >= 200, "too few model coordinates");
  o.require(r.max_rel < 1e-2, r.worst);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(secs < 120, "runtime " + fmt(secs) + " s");
  o.detail << (o.pass ? "" : "; ") << ops << " ops worst rel " << fmt(worst_op, 3) << ", 2+2-layer model "
           << r.checked << " coords worst rel " << fmt(r.max_rel, 3) << ", " << fmt(secs, 3) << " s";
}

// Deep model on the reversal task. Training stops at the accuracy target or
// when the CPU budget is spent.
void deep_trainability(Outcome& o) {
  ModelConfig m = testing::tiny_model(32, 24, 64, 4, 16);
  {
    const TokenBatch batch = testing::random_batch(m, 8, 10, 21);
    const double scaled = testing::embedding_to_top_ratio(m, 9, batch);
    ModelConfig plain = m;
    plain.lipschitz_init = false;
    const double unscaled = testing::embedding_to_top_ratio(plain, 9, batch);
    o.require(scaled / unscaled > 1.0, "gradient ratio " + fmt(scaled) + " vs plain " + fmt(unscaled));
    o.detail << "gradient ratio scaled/plain " << fmt(scaled / unscaled, 3) << "; ";
  }

  const auto train = testing::reversal_pairs(5000, 32, 10, 11);
  const auto held = testing::reversal_pairs(200, 32, 10, 99);
  TrainConfig t;
  t.warmup_steps = 300;
  t.lr_scale = 0.2;
  t.token_budget = 1000;
  t.max_tokens = 1000;
  t.epochs = 1000;
  t.save_interval_steps = 1000000;
  t.label_smoothing = 0.1;
  t.seed = 3;
  const double budget = 30 * 60;
  const double start = cpu_seconds();
  double acc = 0, at = 0;
  std::uint64_t steps = 0;
  TrainOptions opts;
  opts.on_update = [&](const UpdateRecord& r, const ParameterSet& p) {
    steps = r.step;
    const double used = cpu_seconds() - start;
    if (r.step % 50 == 0 || used >= budget) {
      acc = testing::greedy_token_accuracy(p, m, held);
      at = cpu_seconds() - start;
      std::cerr << "  deep step " << r.step << " cpu " << fmt(at) << " s loss " << fmt(r.loss) << " acc "
                << fmt(acc) << '\n';
      if (acc >= 0.9) return false;
    }
    return cpu_seconds() - start < budget;
  };
  train_loop(train, {}, m, t, opts);
  o.require(acc >= 0.9 && at <= budget, "held-out accuracy " + fmt(acc) + " after " + fmt(at) + " CPU s");
  o.detail << "held-out greedy accuracy " << fmt(acc, 3) << " after " << steps << " updates, " << fmt(at / 60, 3)
           << " CPU-min";
}

void bpe_oracle(Outcome& o) {
  std::mt19937_64 rng(2718);
  std::size_t merges = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const WordCounts wc = testing::random_word_counts(rng, 50, "abcdefgh");
    const std::size_t n = 1 + rng() % 80;
    BpeOptions opt;
    opt.merges = n;
    const BpeModel m = learn_bpe(wc, opt);
    testing::BruteForceBpe oracle(wc);
    const auto want = oracle.run(n);
    o.require(m.table.merges() == want, "corpus " + std::to_string(trial) + " merge sequence");
    o.require(m.vocab == oracle.vocabulary(), "corpus " + std::to_string(trial) + " vocabulary");
    std::set<std::string> products;
    for (const auto& [l, r] : want) products.insert(l.substr(0, l.size() - 2) + r);
    const VocabStats st = vocab_stats(m.vocab);
    o.require(st.size == static_cast<std::size_t>(kNumReserved) + oracle.initial_count() + products.size() &&
                  st.size == st.reserved + st.characters + st.merge_products && st.size == m.vocab.size(),
              "corpus " + std::to_string(trial) + " size identity");
    merges += want.size();
  }
  o.detail << (o.pass ? "" : "; ") << "20 corpora, " << merges << " merges matched";
}

void beam_exactness(Outcome& o) {
  const ModelConfig c = testing::tiny_model(6, 1, 16, 2, 2);
  std::size_t exact = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ParameterSet p = init_parameters(c, seed);
    for (auto& v : p.at("tgt_embed").data()) v *= 6;
    for (double alpha : {0.0, 1.0}) {
      const std::vector<int> src = {4, 5, 5};
      const auto best = testing::exhaustive_search(p, c, src, 4, alpha);
      const BeamResult b = beam_search(p, c, src, BeamOptions{1296, 4, alpha});
      const std::vector<int> got(b.best.tokens.begin() + 1, b.best.tokens.end());
      o.require(got == best.tokens && std::abs(normalized_score(b.best, alpha) - best.score) < 1e-5,
                "beam 1296 vs exhaustive, seed " + std::to_string(seed));
      exact += got == best.tokens;
    }
  }
  const ModelConfig g = testing::tiny_model(12, 2, 16, 2, 3);
  std::mt19937_64 rng(4);
  auto source = [&](int vocab, std::size_t max_len) {
    std::vector<int> s(1 + rng() % max_len);
    for (auto& t : s) t = 4 + static_cast<int>(rng() % static_cast<std::uint64_t>(vocab - 4));
    return s;
  };
  for (int i = 0; i < 20; ++i) {
    ParameterSet p = init_parameters(g, static_cast<std::uint64_t>(i));
    for (auto& v : p.at("tgt_embed").data()) v *= 6;
    const auto src = source(12, 6);
    o.require(beam_search(p, g, src, BeamOptions{1, 10, 1.0}).best.tokens == greedy_decode(p, g, src, 10).tokens,
              "beam 1 vs greedy");
  }
  const ModelConfig d = testing::tiny_model(10, 1, 16, 2, 3);
  ParameterSet p = init_parameters(d, 5);
  for (auto& v : p.at("tgt_embed").data()) v *= 6;
  for (int i = 0; i < 50; ++i) {
    const auto src = source(10, 5);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t b : {1, 2, 4, 8}) {
      const double s = normalized_score(beam_search(p, d, src, BeamOptions{b, 8, 1.0}).best, 1.0);
      o.require(s >= prev - 1e-9, "dominance at beam " + std::to_string(b));
      prev = s;
    }
  }
  o.detail << (o.pass ? "" : "; ") << exact
           << "/6 exhaustive matches over 1296 sequences, 20 greedy checks, 50 dominance sources";
}

void bleu_fidelity(Outcome& o) {
  std::ifstream in(NMT_TEST_DATA "/bleu_fixtures.json");
  const auto fixtures = nlohmann::json::parse(in).at("fixtures");
  double worst = 0;
  for (const auto& fx : fixtures) {
    const auto hyps = fx.at("hyps").get<std::vector<std::string>>();
    const auto refs = fx.at("refs").get<std::vector<std::string>>();
    for (int n : {4, 5}) {
      const double d = std::abs(bleu(hyps, refs, n).score - fx.at("bleu" + std::to_string(n)).at("score").get<double>());
      worst = std::max(worst, d);
      o.require(d < 0.01, fx.value("name", std::string("fixture")) + " max_n " + std::to_string(n));
    }
  }
  o.require(fixtures.size() == 10, "expected 10 fixtures");
  const std::vector<std::string> a = {"今天天气很好", "我们去公园"}, b = {"ABCDEFG", "HIJKLMN"};
  const double identity = bleu(a, a, 4).score, disjoint = bleu(a, b, 4).score;
  o.require(identity == 100.0, "identity " + fmt(identity));
  o.require(disjoint == 0.0, "disjoint " + fmt(disjoint));
  o.detail << (o.pass ? "" : "; ") << fixtures.size() << " fixtures, worst deviation " << fmt(worst, 3)
           << ", identity " << identity << ", disjoint " << disjoint;
}

void recipe_constants(Outcome& o) {
  const double lr = lr_schedule(8000, 512, 8000);
  o.require(std::abs(lr - 1.0 / std::sqrt(512.0 * 8000.0)) < 1e-6 && std::abs(lr - 4.942e-4) < 1e-6,
            "lr " + fmt(lr, 7));
  const TrainConfig defaults;
  Accumulator acc(defaults);
  std::size_t seen = 0, fired_at = 0;
  for (int i = 0; i < 100 && !fired_at; ++i) {
    seen += 1000;
    if (acc.observe(1000)) fired_at = seen;
  }
  o.require(fired_at >= 25000 && fired_at < 26000, "accumulation fired at " + std::to_string(fired_at));

  const std::string dir = testing::scratch_dir("acceptance_cadence");
  const ModelConfig m = testing::tiny_model(8, 1, 8, 2, 2);
  TrainConfig t;
  t.warmup_steps = 100;
  t.token_budget = 12;
  t.max_tokens = 12;
  t.epochs = 100000;
  t.max_updates = 3100;
  t.seed = 1;
  o.require(t.save_interval_steps == 1500, "default save interval");
  TrainOptions opts;
  opts.out_dir = dir;
  const TrainResult r = train_loop(testing::reversal_pairs(100, 8, 3, 2), {}, m, t, opts);
  std::vector<std::string> want = {dir + "/" + checkpoint_name(1500), dir + "/" + checkpoint_name(3000),
                                   dir + "/" + checkpoint_name(3100)};
  o.require(r.checkpoints == want, std::to_string(r.checkpoints.size()) + " checkpoints");

  const ModelConfig c = testing::tiny_model(10, 1, 16, 2, 3);
  std::vector<ParameterSet> sets;
  std::vector<std::string> paths;
  std::mt19937_64 rng(77);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (int i = 0; i < 20; ++i) {
    ParameterSet p = init_parameters(c, static_cast<std::uint64_t>(i));
    for (auto& [name, tensor] : p.tensors)
      for (auto& v : tensor.data()) v = n(rng);
    paths.push_back(dir + "/avg_" + std::to_string(i) + ".nmtc");
    save_checkpoint(paths.back(), p, CheckpointMeta{static_cast<std::uint64_t>(i + 1), c, 0});
    sets.push_back(std::move(p));
  }
  double worst = 0;
  for (std::size_t k : {std::size_t{5}, std::size_t{20}}) {
    const Checkpoint avg = average_checkpoints({paths.end() - static_cast<std::ptrdiff_t>(k), paths.end()});
    for (const auto& [name, tensor] : avg.params.tensors) {
      std::vector<std::vector<float>> rows;
      for (std::size_t i = sets.size() - k; i < sets.size(); ++i) {
        const auto d = sets[i].at(name).data();
        rows.emplace_back(d.begin(), d.end());
      }
      const auto mean = testing::two_pass_mean(rows);
      for (std::size_t j = 0; j < mean.size(); ++j)
        worst = std::max(worst, std::abs(static_cast<double>(tensor.data()[j]) - mean[j]) /
                                    std::max(1.0, std::abs(mean[j])));
    }
  }
  o.require(worst < 1e-7, "averaging deviation " + fmt(worst));
  o.detail << (o.pass ? "" : "; ") << "lr " << fmt(lr, 7) << ", update after " << fired_at
           << " target tokens, checkpoints at 1500/3000/3100, averaging deviation " << fmt(worst, 3);
}

void pipeline_reproducibility(Outcome& o) {
  const std::string dir = testing::scratch_dir("acceptance_pipeline");
  const PipelineConfig cfg = PipelineConfig::load(NMT_SYNTHETIC "/toy.json");
  const PipelineResult a = run_pipeline(cfg, dir + "/a");
  const PipelineResult b = run_pipeline(cfg, dir + "/b");
  o.require(slurp(dir + "/a/manifest.json") == slurp(dir + "/b/manifest.json"), "manifests differ");
  o.require(slurp(dir + "/a/valid.hyp") == slurp(dir + "/b/valid.hyp"), "translations differ");
  o.require(run_pipeline(cfg, dir + "/a").executed.empty(), "rerun executed stages");

  SweepGrid grid;
  grid.base = cfg;
  grid.merge_budgets = {10, 30, 60, 120};
  const SweepReport r = run_sweep(grid, dir + "/sweep", 1);
  o.require(r.kind == "vocabulary" && r.rows.size() == 4, "sweep shape");
  std::string sizes;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    o.require(r.rows[i].status == "ok", "sweep cell " + r.rows[i].label + ": " + r.rows[i].status);
    if (i) {
      o.require(r.rows[i].src_vocab >= r.rows[i - 1].src_vocab && r.rows[i].tgt_vocab >= r.rows[i - 1].tgt_vocab,
                "vocabulary sizes not monotone");
    }
    sizes += (i ? " " : "") + std::to_string(r.rows[i].src_vocab) + "/" + std::to_string(r.rows[i].tgt_vocab);
  }
  o.require(fs::exists(dir + "/sweep/report.txt") && fs::exists(dir + "/sweep/report.tsv"), "report files");
  o.detail << (o.pass ? "" : "; ") << "identical manifests and translations (BLEU " << fmt(a.bleu, 4)
           << "), sweep vocab sizes " << sizes;
}

void textnorm_conformance(Outcome& o) {
  for (const char* s : {"&gt;", "&#62;", "&#x3e;"}) o.require(decode_html_refs(s) == ">", std::string("decode ") + s);
  std::string full, half;
  for (char32_t c = 0xFF01; c <= 0xFF5E; ++c) {
    utf8::append(full, c);
    utf8::append(half, c - 0xFEE0);
  }
  o.require(to_halfwidth(full) == half, "fullwidth block");
  o.require(to_halfwidth("\xE3\x80\x80") == " ", "ideographic space");

  const CharMapping m = CharMapping::load_file(NMT_SYNTHETIC "/t2s_sample.tsv");
  const std::vector<std::string> atoms = {"a", "Ｚ", "＆", "amp;", "&", "gt;", "#", "x", "3e;", "&#", "6", "2;",
                                          "學", "體", "　", " ", "&amp;", "&lt;", "&#65;", "；", "＃", "ｘ", "中",
                                          "&#xFF1B;", "&#12354;", "ｇｔ；", "&quot;"};
  std::mt19937_64 rng(10000);
  int stable = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int j = 0; j < n; ++j) s += atoms[rng() % atoms.size()];
    const std::string once = normalize_text(s, m, EntityTable::builtin());
    const bool ok = normalize_text(once, m, EntityTable::builtin()) == once;
    o.require(ok, "not idempotent on '" + s + "'");
    stable += ok;
  }
  o.detail << (o.pass ? "" : "; ") << "3 entity forms decode to '>', 94 fullwidth code points shift by 0xFEE0, "
           << stable << "/10000 strings idempotent";
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradients},
      {2, "deep-init trainability", deep_trainability},
      {3, "BPE oracle equivalence", bpe_oracle},
      {4, "beam-search exactness", beam_exactness},
      {5, "BLEU fidelity", bleu_fidelity},
      {6, "recipe constants", recipe_constants},
      {7, "pipeline reproducibility", pipeline_reproducibility},
      {8, "text-norm conformance", textnorm_conformance},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail.str() << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
