// Command-line front end. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/config.hpp"
#include "nmt/corpus.hpp"
#include "nmt/decode.hpp"
#include "nmt/error.hpp"
#include "nmt/eval.hpp"
#include "nmt/pipeline.hpp"
#include "nmt/subword.hpp"
#include "nmt/textnorm.hpp"
#include "nmt/train.hpp"

namespace fs = std::filesystem;
using namespace nmt;

namespace {

void apply_seed_override(TrainConfig& cfg) {
  const char* env = std::getenv("NMT_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw usage_error(std::string("NMT_SEED is not an unsigned integer: '") + env + "'");
  cfg.seed = v;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw usage_error("config '" + path + "': " + e.what());
  }
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) out += (out.empty() ? "" : " ") + t;
  return out;
}

int cmd_clean(const std::string& src, const std::string& tgt, const std::string& mapping,
              const std::string& entities, const std::string& prefix, const std::string& report_path) {
  const CharMapping m = mapping.empty() ? CharMapping() : CharMapping::load_file(mapping);
  const EntityTable table = entities.empty() ? EntityTable::builtin() : EntityTable::load_file(entities);
  const CleanResult r = clean_corpus(read_parallel(src, tgt), m, table);
  std::vector<std::string> s, t;
  for (const auto& p : r.pairs) s.push_back(p.src), t.push_back(p.tgt);
  ensure_parent(prefix + ".src");
  write_lines(prefix + ".src", s);
  write_lines(prefix + ".tgt", t);
  const nlohmann::json rep{{"input", r.report.input},
                           {"kept", r.report.kept},
                           {"dropped_encoding", r.report.dropped_encoding},
                           {"dropped_empty", r.report.dropped_empty},
                           {"transformed", r.report.transformed}};
  if (!report_path.empty()) {
    ensure_parent(report_path);
    std::ofstream out(report_path);
    if (!out) throw data_error("cannot write '" + report_path + "'");
    out << rep.dump(2) << '\n';
  }
  std::cerr << "clean: kept " << r.report.kept << " of " << r.report.input << " pairs\n";
  return 0;
}

int cmd_split(const std::string& src, const std::string& tgt, std::size_t holdout, const std::string& prefix) {
  auto [train, valid] = holdout_split(read_parallel(src, tgt), SplitSpec{holdout});
  ensure_parent(prefix + ".x");
  auto dump = [&](const std::vector<SentencePair>& ps, const std::string& part) {
    std::vector<std::string> s, t;
    for (const auto& p : ps) s.push_back(p.src), t.push_back(p.tgt);
    write_lines(prefix + "." + part + ".src", s);
    write_lines(prefix + "." + part + ".tgt", t);
  };
  dump(train, "train");
  dump(valid, "valid");
  return 0;
}

int cmd_bpe_learn(const std::string& input, std::optional<std::size_t> merges,
                  std::optional<std::size_t> vocab_size, const std::string& prefix) {
  BpeOptions opts;
  if (merges) opts.merges = *merges;
  opts.target_vocab_size = vocab_size;
  const BpeModel model = learn_bpe(count_words(read_lines(input)), opts);
  ensure_parent(prefix + ".merges");
  model.table.save(prefix + ".merges");
  model.vocab.save(prefix + ".vocab");
  const VocabStats st = vocab_stats(model.vocab);
  std::cerr << "bpe-learn: " << model.table.size() << " merges, vocabulary " << st.size << " (" << st.reserved
            << " reserved, " << st.characters << " characters, " << st.merge_products << " merged)\n";
  return 0;
}

int cmd_bpe_apply(const std::string& merges, const std::string& vocab_path, const std::string& input,
                  const std::string& output) {
  const MergeTable table = MergeTable::load(merges);
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  BpeSegmenter seg(table);
  std::vector<std::string> out;
  std::size_t unknown = 0;
  for (const auto& line : read_lines(input)) {
    const auto toks = seg.segment_line(line);
    for (const auto& t : toks)
      if (!vocab.find(t)) ++unknown;
    out.push_back(join_tokens(toks));
  }
  ensure_parent(output);
  write_lines(output, out);
  if (unknown) std::cerr << "bpe-apply: " << unknown << " tokens not in the vocabulary\n";
  return 0;
}

std::vector<EncodedPair> load_encoded(const std::string& src, const std::string& tgt, const Vocabulary& sv,
                                      const Vocabulary& tv) {
  const auto s = read_lines(src), t = read_lines(tgt);
  if (s.size() != t.size()) throw data_error("'" + src + "' and '" + tgt + "' differ in line count");
  auto ids = [](const std::string& line, const Vocabulary& v) {
    std::vector<int> out;
    std::istringstream ss(line);
    for (std::string tok; ss >> tok;) out.push_back(v.id_or_unk(tok));
    return out;
  };
  std::vector<EncodedPair> pairs;
  for (std::size_t i = 0; i < s.size(); ++i) pairs.push_back({ids(s[i], sv), ids(t[i], tv)});
  return pairs;
}

int cmd_train(const std::string& config, bool toy, const std::string& prefix, const std::string& out_dir,
              const std::string& resume, int max_updates, bool quiet) {
  ModelConfig mcfg = toy ? ModelConfig::toy() : ModelConfig::base();
  TrainConfig tcfg = toy ? TrainConfig::toy() : TrainConfig::base();
  if (!config.empty()) {
    const nlohmann::json j = read_json(config);
    try {
      if (j.contains("model")) j["model"].get_to(mcfg);
      if (j.contains("train")) j["train"].get_to(tcfg);
    } catch (const nlohmann::json::exception& e) {
      throw usage_error("config '" + config + "': " + e.what());
    }
  }
  if (max_updates > 0) tcfg.max_updates = max_updates;
  apply_seed_override(tcfg);
  const Vocabulary sv = Vocabulary::load(prefix + "bpe.src.vocab");
  const Vocabulary tv = Vocabulary::load(prefix + "bpe.tgt.vocab");
  mcfg.src_vocab = static_cast<int>(sv.size());
  mcfg.tgt_vocab = static_cast<int>(tv.size());
  const auto train = load_encoded(prefix + "train.bpe.src", prefix + "train.bpe.tgt", sv, tv);
  std::vector<EncodedPair> valid;
  if (fs::exists(prefix + "valid.bpe.src"))
    valid = load_encoded(prefix + "valid.bpe.src", prefix + "valid.bpe.tgt", sv, tv);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.resume_from = resume;
  if (!quiet) opts.progress = &std::cerr;
  const TrainResult r = train_loop(train, valid, mcfg, tcfg, opts);
  std::cerr << "train: " << r.updates.size() << " updates, " << r.checkpoints.size() << " checkpoints\n";
  return 0;
}

int cmd_average(const std::string& out, const std::vector<std::string>& inputs) {
  const Checkpoint avg = average_checkpoints(inputs);
  ensure_parent(out);
  save_checkpoint(out, avg.params, avg.meta);
  return 0;
}

int cmd_translate(const std::string& ckpt, const std::string& merges, const std::string& src_vocab,
                  const std::string& tgt_vocab, const std::string& input, const std::string& output,
                  const DecodeConfig& decode) {
  const Checkpoint c = load_checkpoint(ckpt);
  ensure_parent(output);
  const std::size_t n = translate_file(c.params, c.meta.model, MergeTable::load(merges), Vocabulary::load(src_vocab),
                                       Vocabulary::load(tgt_vocab), input, output, decode);
  std::cerr << "translate: " << n << " lines\n";
  return 0;
}

int cmd_score(const std::string& hyp, const std::string& ref, int max_n) {
  const BleuReport r = bleu(read_lines(hyp), read_lines(ref), max_n);
  std::cout << std::fixed << std::setprecision(4) << "BLEU" << max_n << '\t' << r.score;
  for (double p : r.precisions) std::cout << '\t' << p * 100.0;
  std::cout << '\t' << r.brevity_penalty << '\t' << r.hyp_length << '\t' << r.ref_length << '\n';
  std::cout << std::setprecision(2) << "BLEU-" << max_n << " = " << r.score << " (";
  for (std::size_t n = 0; n < r.precisions.size(); ++n)
    std::cout << (n ? "/" : "") << std::setprecision(1) << r.precisions[n] * 100.0;
  std::cout << std::setprecision(3) << ", BP " << r.brevity_penalty << ", hyp " << r.hyp_length << " ref "
            << r.ref_length << " chars)\n";
  return 0;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  PipelineConfig cfg = PipelineConfig::load(path);
  apply_seed_override(cfg.train);
  return cfg;
}

int cmd_pipeline(const std::string& config, const std::string& out_dir) {
  const PipelineConfig cfg = load_pipeline_config(config);
  PipelineOptions opts;
  opts.log = &std::cerr;
  const PipelineResult r = run_pipeline(cfg, out_dir, opts);
  std::cerr << "pipeline: " << r.executed.size() << " stages executed, BLEU " << std::fixed << std::setprecision(2)
            << r.bleu << '\n';
  return 0;
}

int cmd_sweep(const std::string& config, const std::string& out_dir, const std::vector<std::size_t>& merges,
              const std::vector<int>& embeddings, const std::vector<double>& dropouts, bool reference, int jobs) {
  SweepGrid grid;
  grid.base = load_pipeline_config(config);
  grid.merge_budgets = merges;
  grid.embedding_sizes = embeddings;
  grid.dropouts = dropouts;
  if (reference) grid.settings = reference_model_settings();
  if (!embeddings.empty() != !dropouts.empty())
    throw usage_error("--embeddings and --dropouts must be given together");
  if (jobs < 1) throw usage_error("--jobs must be >= 1");
  for (int d : embeddings) {
    ModelConfig m = grid.base.model;
    m.d_model = d;
    m.src_vocab = m.tgt_vocab = 5;
    m.validate();
  }
  for (double p : dropouts)
    if (!(p >= 0.0 && p < 1.0)) throw usage_error("dropout values must lie in [0, 1)");
  const SweepReport report = run_sweep(grid, out_dir, jobs, &std::cerr);
  std::cout << report.to_text();
  for (const auto& row : report.rows)
    if (row.status != "ok") return 2;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer translation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "nmt 0.1.0");
  int rc = 0;

  std::string src, tgt, mapping, entities, prefix, report, input, output, config, out_dir, resume;
  std::string merges_path, vocab_path, src_vocab, tgt_vocab, ckpt, hyp, ref, out;
  std::size_t holdout = 1000;
  std::optional<std::size_t> merges_n, vocab_size;
  std::vector<std::string> ckpts;
  DecodeConfig decode;
  int max_n = 4, max_updates = 0, jobs = 1;
  bool toy = false, quiet = false, reference = false;
  std::vector<std::size_t> sweep_merges;
  std::vector<int> sweep_emb;
  std::vector<double> sweep_drop;

  auto* clean = app.add_subcommand("clean", "Normalize and filter a parallel corpus");
  clean->add_option("--src", src, "Source file")->required();
  clean->add_option("--tgt", tgt, "Target file")->required();
  clean->add_option("--mapping", mapping, "Character mapping file");
  clean->add_option("--entities", entities, "Named entity table (name<TAB>value)");
  clean->add_option("--out-prefix", prefix, "Writes PREFIX.src and PREFIX.tgt")->required();
  clean->add_option("--report", report, "Cleaning report (JSON)");
  clean->callback([&] { rc = cmd_clean(src, tgt, mapping, entities, prefix, report); });

  auto* split = app.add_subcommand("split", "Hold out the last pairs as a validation set");
  split->add_option("--src", src)->required();
  split->add_option("--tgt", tgt)->required();
  split->add_option("--holdout", holdout, "Pairs held out")->capture_default_str();
  split->add_option("--out-prefix", prefix, "Writes PREFIX.{train,valid}.{src,tgt}")->required();
  split->callback([&] { rc = cmd_split(src, tgt, holdout, prefix); });

  auto* learn = app.add_subcommand("bpe-learn", "Learn BPE merges and a vocabulary");
  learn->add_option("--input", input)->required();
  auto* m_opt = learn->add_option("--merges", merges_n, "Number of merges");
  auto* v_opt = learn->add_option("--vocab-size", vocab_size, "Stop at this vocabulary size");
  m_opt->excludes(v_opt);
  learn->add_option("--out-prefix", prefix, "Writes PREFIX.merges and PREFIX.vocab")->required();
  learn->callback([&] {
    if (!merges_n && !vocab_size) throw CLI::RequiredError("--merges or --vocab-size");
    rc = cmd_bpe_learn(input, merges_n, vocab_size, prefix);
  });

  auto* apply = app.add_subcommand("bpe-apply", "Segment text with learned merges");
  apply->add_option("--merges", merges_path)->required();
  apply->add_option("--vocab", vocab_path)->required();
  apply->add_option("--input", input)->required();
  apply->add_option("--output", output)->required();
  apply->callback([&] { rc = cmd_bpe_apply(merges_path, vocab_path, input, output); });

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config, "JSON with optional model and train sections");
  train->add_flag("--toy", toy, "Start from the small test profile");
  train->add_option("--data-prefix", prefix,
                    "Prepended to train.bpe.{src,tgt}, valid.bpe.{src,tgt} and bpe.{src,tgt}.vocab")
      ->required();
  train->add_option("--out-dir", out_dir)->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--max-updates", max_updates, "Stop after this many updates");
  train->add_flag("--quiet", quiet, "No per-update progress");
  train->callback([&] { rc = cmd_train(config, toy, prefix, out_dir, resume, max_updates, quiet); });

  auto* avg = app.add_subcommand("average-checkpoints", "Average checkpoint parameters");
  avg->add_option("--out", out)->required();
  avg->add_option("checkpoints", ckpts)->required();
  avg->callback([&] { rc = cmd_average(out, ckpts); });

  auto* translate = app.add_subcommand("translate", "Beam-search translation of a text file");
  translate->add_option("--ckpt", ckpt)->required();
  translate->add_option("--src-merges", merges_path)->required();
  translate->add_option("--src-vocab", src_vocab)->required();
  translate->add_option("--tgt-vocab", tgt_vocab)->required();
  translate->add_option("--input", input)->required();
  translate->add_option("--output", output)->required();
  translate->add_option("--beam", decode.beam)->capture_default_str()->check(CLI::PositiveNumber);
  translate->add_option("--alpha", decode.alpha)->capture_default_str();
  translate->add_option("--max-len-offset", decode.max_len_offset)->capture_default_str();
  translate->callback(
      [&] { rc = cmd_translate(ckpt, merges_path, src_vocab, tgt_vocab, input, output, decode); });

  auto* score = app.add_subcommand("score", "Character BLEU of a hypothesis file");
  score->add_option("--hyp", hyp)->required();
  score->add_option("--ref", ref)->required();
  score->add_option("--max-n", max_n)->capture_default_str()->check(CLI::Range(1, 9));
  score->callback([&] { rc = cmd_score(hyp, ref, max_n); });

  auto* pipe = app.add_subcommand("pipeline", "Run every stage from a config file");
  pipe->add_option("--config", config)->required();
  pipe->add_option("--out-dir", out_dir)->required();
  pipe->callback([&] { rc = cmd_pipeline(config, out_dir); });

  auto* sweep = app.add_subcommand("sweep", "Merge-budget and model-setting grids");
  sweep->add_option("--config", config, "Base pipeline config")->required();
  sweep->add_option("--out-dir", out_dir)->required();
  sweep->add_option("--merges", sweep_merges, "Merge budgets")->delimiter(',');
  sweep->add_option("--embeddings", sweep_emb, "Embedding sizes")->delimiter(',');
  sweep->add_option("--dropouts", sweep_drop, "Dropout rates")->delimiter(',');
  sweep->add_flag("--reference-settings", reference, "The five A..E settings");
  sweep->add_option("--jobs", jobs, "Cells run concurrently")->capture_default_str();
  sweep->callback(
      [&] { rc = cmd_sweep(config, out_dir, sweep_merges, sweep_emb, sweep_drop, reference, jobs); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return rc;
}
