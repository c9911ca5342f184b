#include "nmt/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "nmt/error.hpp"

namespace nmt {

namespace {

constexpr char kMagic[4] = {'N', 'M', 'T', 'C'};
constexpr std::size_t kHeaderSize = 4 + 2 + 4;
constexpr std::uint64_t kMetaChunkBits = 21;
constexpr int kMetaChunks = 3;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(const std::string& path, const std::string& bytes, std::size_t end)
      : path_(path), bytes_(bytes), end_(end) {}

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  bool at_end() const { return pos_ == end_; }

  void need(std::size_t n, const std::string& what) const {
    if (n > end_ - pos_) fail("truncated " + what);
  }
  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16(const std::string& what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) |
                      static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* raw(std::size_t n, const std::string& what) {
    need(n, what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw data_error("checkpoint '" + path_ + "': " + what);
  }

 private:
  const std::string& path_;
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_header(Reader& r) {
  const std::string magic = r.str(4, "header");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic (not an NMTC file)");
  const std::uint16_t version = r.u16("header");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  return r.u32("header");
}

// Reads one record header; returns the payload element count.
std::size_t read_record_header(Reader& r, std::uint32_t index, RecordInfo& info) {
  const std::string where = "record " + std::to_string(index);
  const std::uint16_t name_len = r.u16(where + " name length");
  info.name = r.str(name_len, where + " name");
  const std::string named = where + " '" + info.name + "'";
  const std::uint8_t rank = r.u8(named + " rank");
  info.dims.clear();
  std::uint64_t count = 1;
  for (std::uint8_t d = 0; d < rank; ++d) {
    info.dims.push_back(r.u32(named + " dims"));
    count *= info.dims.back();
    if (count > (std::uint64_t{1} << 40)) r.fail(named + ": shape overflow");
  }
  return static_cast<std::size_t>(count);
}

std::string join_dims(const std::vector<std::uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

std::vector<TensorRecord> checkpoint_records(const ParameterSet& params, const CheckpointMeta& meta) {
  std::vector<TensorRecord> records;
  for (const auto& [name, t] : params.tensors) records.push_back(to_record(name, t));
  put_meta(records, "meta.step", meta.step);
  put_meta(records, "meta.train_digest", meta.train_digest);
  nlohmann::json model = meta.model;
  const std::string text = model.dump();
  TensorRecord json_rec{"meta.model_json", {static_cast<std::uint32_t>(text.size())}, {}};
  for (unsigned char c : text) json_rec.data.push_back(static_cast<float>(c));
  records.push_back(std::move(json_rec));
  return records;
}

bool is_meta(const std::string& name) { return name.rfind("meta.", 0) == 0; }

}  // namespace

void write_records(const std::string& path, const std::vector<TensorRecord>& records) {
  std::string body;
  for (const auto& rec : records) {
    std::size_t count = 1;
    for (auto d : rec.dims) count *= d;
    if (count != rec.data.size())
      throw numeric_error("record '" + rec.name + "' has " + std::to_string(rec.data.size()) +
                          " values for shape " + join_dims(rec.dims));
    if (rec.name.size() > 0xFFFF || rec.dims.size() > 0xFF)
      throw numeric_error("record '" + rec.name + "' name or rank too large");
    put_u16(body, static_cast<std::uint16_t>(rec.name.size()));
    body += rec.name;
    body.push_back(static_cast<char>(rec.dims.size()));
    for (auto d : rec.dims) put_u32(body, d);
    for (float v : rec.data) put_u32(body, std::bit_cast<std::uint32_t>(v));
  }
  std::string file(kMagic, 4);
  put_u16(file, kCheckpointVersion);
  put_u32(file, static_cast<std::uint32_t>(records.size()));
  file += body;
  put_u32(file, crc_of(body.data(), body.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write '" + tmp + "'");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw data_error("error writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw data_error("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

std::vector<TensorRecord> read_records(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kHeaderSize + 4)
    throw data_error("checkpoint '" + path + "': truncated header");
  Reader r(path, bytes, bytes.size() - 4);
  const std::uint32_t n = read_header(r);
  std::vector<TensorRecord> records;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n; ++i) {
    RecordInfo info;
    const std::size_t count = read_record_header(r, i, info);
    if (!seen.insert(info.name).second) r.fail("duplicate record '" + info.name + "'");
    const char* p = r.raw(count * 4, "record " + std::to_string(i) + " '" + info.name + "' payload");
    TensorRecord rec{info.name, info.dims, std::vector<float>(count)};
    for (std::size_t k = 0; k < count; ++k) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b)
        u |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * k + b])) << (8 * b);
      rec.data[k] = std::bit_cast<float>(u);
    }
    records.push_back(std::move(rec));
  }
  if (!r.at_end()) r.fail("trailing bytes after record " + std::to_string(n));
  Reader tail(path, bytes, bytes.size());
  tail.seek(bytes.size() - 4);
  const std::uint32_t stored = tail.u32("checksum");
  if (stored != crc_of(bytes.data() + kHeaderSize, bytes.size() - 4 - kHeaderSize))
    r.fail("checksum mismatch");
  return records;
}

std::vector<RecordInfo> inspect_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint '" + path + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  // Read headers incrementally and seek over payloads.
  auto read_exact = [&](std::size_t n, const std::string& what) {
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n)))
      throw data_error("checkpoint '" + path + "': truncated " + what);
    return s;
  };
  std::string header = read_exact(kHeaderSize, "header");
  Reader hr(path, header, header.size());
  const std::uint32_t n = read_header(hr);
  std::vector<RecordInfo> infos;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string where = "record " + std::to_string(i);
    std::string len_bytes = read_exact(2, where + " name length");
    const std::size_t name_len = static_cast<std::uint8_t>(len_bytes[0]) |
                                 (static_cast<std::size_t>(static_cast<std::uint8_t>(len_bytes[1])) << 8);
    std::string rest = read_exact(name_len + 1, where + " name");
    const std::size_t rank = static_cast<std::uint8_t>(rest.back());
    std::string dims = read_exact(4 * rank, where + " dims");
    std::string all = len_bytes + rest + dims;
    Reader rr(path, all, all.size());
    RecordInfo info;
    const std::size_t count = read_record_header(rr, i, info);
    const auto here = static_cast<std::size_t>(in.tellg());
    if (count * 4 > size - here) throw data_error("checkpoint '" + path + "': truncated " + where + " '" + info.name + "' payload");
    in.seekg(static_cast<std::streamoff>(count * 4), std::ios::cur);
    infos.push_back(std::move(info));
  }
  return infos;
}

void put_meta(std::vector<TensorRecord>& records, const std::string& name, std::uint64_t value) {
  TensorRecord rec{name, {kMetaChunks}, {}};
  for (int i = 0; i < kMetaChunks; ++i)
    rec.data.push_back(
        static_cast<float>((value >> (kMetaChunkBits * i)) & ((1u << kMetaChunkBits) - 1)));
  records.push_back(std::move(rec));
}

std::uint64_t get_meta(const std::vector<TensorRecord>& records, const std::string& name,
                       const std::string& path) {
  for (const auto& rec : records) {
    if (rec.name != name) continue;
    if (rec.data.size() != kMetaChunks)
      throw data_error("checkpoint '" + path + "': malformed record '" + name + "'");
    std::uint64_t value = 0;
    for (int i = 0; i < kMetaChunks; ++i) {
      const float f = rec.data[static_cast<std::size_t>(i)];
      if (!(f >= 0 && f < static_cast<float>(1u << kMetaChunkBits)) || f != std::floor(f))
        throw data_error("checkpoint '" + path + "': malformed record '" + name + "'");
      value |= static_cast<std::uint64_t>(f) << (kMetaChunkBits * static_cast<std::uint64_t>(i));
    }
    return value;
  }
  throw data_error("checkpoint '" + path + "': missing record '" + name + "'");
}

TensorRecord to_record(const std::string& name, const Tensor& t) {
  TensorRecord rec{name, {}, {}};
  for (auto d : t.shape()) rec.dims.push_back(static_cast<std::uint32_t>(d));
  rec.data.assign(t.data().begin(), t.data().end());
  return rec;
}

Tensor from_record(const TensorRecord& r, bool requires_grad) {
  Shape shape(r.dims.begin(), r.dims.end());
  return Tensor::from(shape, std::vector<Real>(r.data.begin(), r.data.end()), requires_grad);
}

void save_checkpoint(const std::string& path, const ParameterSet& params, const CheckpointMeta& meta) {
  for (const auto& [name, t] : params.tensors)
    for (Real v : t.data())
      if (!std::isfinite(v)) throw numeric_error("refusing to save non-finite parameter '" + name + "'");
  write_records(path, checkpoint_records(params, meta));
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto records = read_records(path);
  Checkpoint ck;
  ck.meta.step = get_meta(records, "meta.step", path);
  ck.meta.train_digest = static_cast<std::uint32_t>(get_meta(records, "meta.train_digest", path));
  const TensorRecord* json_rec = nullptr;
  for (const auto& rec : records)
    if (rec.name == "meta.model_json") json_rec = &rec;
  if (!json_rec) throw data_error("checkpoint '" + path + "': missing record 'meta.model_json'");
  std::string text;
  for (float f : json_rec->data) text.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  try {
    ck.meta.model = nlohmann::json::parse(text).get<ModelConfig>();
    ck.meta.model.validate();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw data_error("checkpoint '" + path + "': bad model config: " + e.what());
  }

  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& rec : records)
    if (!is_meta(rec.name)) by_name[rec.name] = &rec;
  const auto layout = parameter_layout(ck.meta.model);
  if (layout.size() != by_name.size())
    throw data_error("checkpoint '" + path + "': " + std::to_string(by_name.size()) +
                     " parameter records, config expects " + std::to_string(layout.size()));
  for (const auto& [name, shape] : layout) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw data_error("checkpoint '" + path + "': missing record '" + name + "'");
    const TensorRecord& rec = *it->second;
    if (Shape(rec.dims.begin(), rec.dims.end()) != shape)
      throw data_error("checkpoint '" + path + "': record '" + name + "' has shape " +
                       join_dims(rec.dims) + ", expected " + shape_str(shape));
    for (float v : rec.data)
      if (!std::isfinite(v))
        throw data_error("checkpoint '" + path + "': record '" + name + "' holds a non-finite value");
    ck.params.tensors.emplace(name, from_record(rec, true));
  }
  return ck;
}

std::vector<RecordInfo> inspect_checkpoint(const std::string& path) {
  std::vector<RecordInfo> out;
  for (auto& info : inspect_records(path))
    if (!is_meta(info.name)) out.push_back(std::move(info));
  return out;
}

Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
  if (paths.empty()) throw usage_error("average_checkpoints: no input checkpoints");
  Checkpoint first = load_checkpoint(paths[0]);
  std::map<std::string, std::vector<double>> sums;
  for (const auto& [name, t] : first.params.tensors)
    sums[name].assign(t.data().begin(), t.data().end());
  std::uint64_t step = first.meta.step;
  for (std::size_t i = 1; i < paths.size(); ++i) {
    Checkpoint ck = load_checkpoint(paths[i]);
    step = std::max(step, ck.meta.step);
    for (const auto& [name, t] : first.params.tensors) {
      auto it = ck.params.tensors.find(name);
      if (it == ck.params.tensors.end() || it->second.shape() != t.shape())
        throw data_error("average_checkpoints: tensor '" + name + "' differs between '" +
                         paths[0] + "' and '" + paths[i] + "'");
      auto& acc = sums[name];
      const auto values = it->second.data();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += values[k];
    }
    if (ck.params.size() != first.params.size())
      throw data_error("average_checkpoints: '" + paths[i] + "' and '" + paths[0] +
                       "' hold different parameter sets");
  }
  const double n = static_cast<double>(paths.size());
  Checkpoint out;
  out.meta = first.meta;
  out.meta.step = step;
  for (auto& [name, acc] : sums) {
    std::vector<Real> mean(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k) mean[k] = static_cast<Real>(acc[k] / n);
    out.params.tensors.emplace(name, Tensor::from(first.params.at(name).shape(), std::move(mean), true));
  }
  return out;
}

}  // namespace nmt
