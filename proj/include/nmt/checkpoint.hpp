#pragma once

// Binary tensor-record files used for checkpoints and optimizer state.
//
// Layout (little-endian):
//   "NMTC"  u16 version  u32 record_count
//   record_count x { u16 name_len, name bytes, u8 rank, rank x u32 dim,
//                    prod(dims) x f32 }
//   u32 CRC-32 of every byte after the header
//
// Checkpoint metadata is stored as ordinary records under "meta.*" whose
// values are small integers (exact in f32).

#include <cstdint>
#include <string>
#include <vector>

#include "nmt/config.hpp"
#include "nmt/model.hpp"

namespace nmt {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct RecordInfo {
  std::string name;
  std::vector<std::uint32_t> dims;
};

// Writes to a temporary file and renames it into place.
void write_records(const std::string& path, const std::vector<TensorRecord>& records);
// Throws data_error naming the file and offending record on any
// inconsistency; nothing is returned unless the whole file verifies.
std::vector<TensorRecord> read_records(const std::string& path);
// Names and shapes only; payloads are skipped, not read.
std::vector<RecordInfo> inspect_records(const std::string& path);

struct CheckpointMeta {
  std::uint64_t step = 0;
  ModelConfig model;
  std::uint32_t train_digest = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  ParameterSet params;
};

void save_checkpoint(const std::string& path, const ParameterSet& params, const CheckpointMeta& meta);
// Verifies the parameter name set and shapes against the stored model config
// and rejects non-finite values.
Checkpoint load_checkpoint(const std::string& path);
// Parameter records only (meta.* excluded).
std::vector<RecordInfo> inspect_checkpoint(const std::string& path);

// Elementwise mean over checkpoints, summed in input order in double
// precision; step is the maximum input step.
Checkpoint average_checkpoints(const std::vector<std::string>& paths);

// Encodes integer metadata as float records and back.
void put_meta(std::vector<TensorRecord>& records, const std::string& name, std::uint64_t value);
std::uint64_t get_meta(const std::vector<TensorRecord>& records, const std::string& name,
                       const std::string& path);

TensorRecord to_record(const std::string& name, const Tensor& t);
Tensor from_record(const TensorRecord& r, bool requires_grad);

}  // namespace nmt
