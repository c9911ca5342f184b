#pragma once

// End-to-end pipeline driver with a content-hash manifest, and the sweep
// harness built on it.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmt/config.hpp"

namespace nmt {

// Lower-case hex SHA-256 of a file's bytes. Throws data_error if unreadable.
std::string sha256_file(const std::string& path);
std::string sha256_text(const std::string& text);

struct BpeSideConfig {
  std::size_t merges = 0;
  // When set, merging stops at this vocabulary size instead.
  std::optional<std::size_t> vocab_size;
};

struct PipelineConfig {
  std::string src_path;
  std::string tgt_path;
  std::string mapping_path;   // optional
  std::string entities_path;  // optional
  std::string src_lexicon;    // optional word list for source segmentation
  std::string tgt_lexicon;    // optional word list for target segmentation
  std::size_t holdout = 1000;
  BpeSideConfig bpe_src;
  BpeSideConfig bpe_tgt;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  int bleu_max_n = 4;

  // Relative paths are resolved against base_dir; unknown keys are rejected.
  static PipelineConfig from_json(const nlohmann::json& j, const std::string& base_dir);
  static PipelineConfig load(const std::string& path);
  // Effective config with absolute paths and all defaults spelled out.
  nlohmann::json to_json() const;
};

inline constexpr const char* kStageNames[] = {
    "clean", "split", "bpe-learn-src", "bpe-learn-tgt", "bpe-apply",
    "train", "average", "translate", "score"};
inline constexpr std::size_t kStageCount = 9;

struct StageRecord {
  std::string name;
  std::string fingerprint;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
};

struct PipelineOptions {
  // Data stages (clean .. bpe-apply) live here instead of the run directory;
  // used by model sweeps to share one BPE.
  std::string shared_dir;
  // Skip stages after this many (0 = all).
  std::size_t stage_limit = 0;
  std::ostream* log = nullptr;
};

struct PipelineResult {
  std::vector<StageRecord> manifest;
  std::vector<std::string> executed;  // stage names run this time
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  double bleu = 0.0;
};

// Runs the nine stages in order. A stage runs when it has no manifest
// record, its config fingerprint changed, a recorded input hash differs, an
// output is missing, or an earlier stage ran in this invocation. Failures
// are rethrown with the stage name prefixed.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir,
                            const PipelineOptions& options = {});

nlohmann::json manifest_to_json(const std::vector<StageRecord>& manifest);

struct SweepSetting {
  std::string name;
  int d_model = 512;
  double dropout = 0.1;
};

struct SweepGrid {
  // Vocabulary sweep: one full pipeline per budget (both sides).
  std::vector<std::size_t> merge_budgets;
  // Model sweep: named (embedding, dropout) settings sharing one BPE. If
  // empty, the full embedding x dropout product is used.
  std::vector<SweepSetting> settings;
  std::vector<int> embedding_sizes;
  std::vector<double> dropouts;
  PipelineConfig base;
};

// The five model settings compared in the original study.
std::vector<SweepSetting> reference_model_settings();

struct SweepRow {
  std::string label;
  std::size_t merges = 0;
  int d_model = 0;
  double dropout = 0.0;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  double bleu = 0.0;
  std::string status = "ok";
};

struct SweepReport {
  std::string kind;  // "vocabulary" or "model"
  std::vector<SweepRow> rows;

  std::string to_text() const;
  std::string to_tsv() const;
};

// Cells run on up to `jobs` threads, each in its own subdirectory. A failing
// cell is recorded in its row and the sweep continues. Writes report.txt and
// report.tsv into out_dir.
SweepReport run_sweep(const SweepGrid& grid, const std::string& out_dir, int jobs = 1,
                      std::ostream* log = nullptr);

}  // namespace nmt
