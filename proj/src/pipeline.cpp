#include "nmt/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "nmt/checkpoint.hpp"
#include "nmt/corpus.hpp"
#include "nmt/decode.hpp"
#include "nmt/error.hpp"
#include "nmt/eval.hpp"
#include "nmt/subword.hpp"
#include "nmt/textnorm.hpp"
#include "nmt/train.hpp"

namespace fs = std::filesystem;

namespace nmt {

namespace {

std::string to_hex(const unsigned char* digest, unsigned int n) {
  static const char* const kHex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < n; ++i) {
    s.push_back(kHex[digest[i] >> 4]);
    s.push_back(kHex[digest[i] & 0xF]);
  }
  return s;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw data_error("sha256: digest initialisation failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_, digest, &n);
    return to_hex(digest, n);
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_relative()) p = fs::path(base_dir) / p;
  return fs::weakly_canonical(p).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw data_error("error writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

nlohmann::json bpe_side_json(const BpeSideConfig& c) {
  nlohmann::json j;
  if (c.vocab_size) j["vocab_size"] = *c.vocab_size;
  else j["merges"] = c.merges;
  return j;
}

BpeSideConfig bpe_side_from(const nlohmann::json& j, const char* side) {
  BpeSideConfig c;
  if (!j.is_object()) throw usage_error(std::string("bpe.") + side + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "merges" && it.key() != "vocab_size")
      throw usage_error(std::string("bpe.") + side + ": unknown key '" + it.key() + "'");
  if (j.contains("merges") && j.contains("vocab_size"))
    throw usage_error(std::string("bpe.") + side + ": give either merges or vocab_size");
  if (j.contains("merges")) c.merges = j.at("merges").get<std::size_t>();
  if (j.contains("vocab_size")) c.vocab_size = j.at("vocab_size").get<std::size_t>();
  return c;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw usage_error(section + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw usage_error(section + ": unknown key '" + it.key() + "'");
}

std::vector<EncodedPair> encode_pairs(const std::vector<std::string>& src, const std::vector<std::string>& tgt,
                                      const Vocabulary& sv, const Vocabulary& tv) {
  if (src.size() != tgt.size()) throw data_error("encoded corpus sides differ in line count");
  auto ids = [](const std::string& line, const Vocabulary& v) {
    std::vector<int> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(v.id_or_unk(tok));
    return out;
  };
  std::vector<EncodedPair> pairs;
  for (std::size_t i = 0; i < src.size(); ++i) pairs.push_back({ids(src[i], sv), ids(tgt[i], tv)});
  return pairs;
}

StageRecord record_from_json(const nlohmann::json& j) {
  StageRecord r;
  r.name = j.at("name").get<std::string>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  return r;
}

struct Stage {
  std::string name;
  nlohmann::json settings;                          // fingerprinted
  std::function<std::vector<std::string>()> inputs;  // resolved before the skip check
  std::function<std::vector<std::string>()> run;     // returns outputs
};

}  // namespace

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open '" + path + "' for hashing");
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string sha256_text(const std::string& text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  check_keys(j, {"profile", "data", "split", "bpe", "model", "train", "decode", "score"}, "config");
  PipelineConfig c;
  // Sections overlay the chosen profile's defaults.
  const std::string profile = j.value("profile", std::string("base"));
  if (profile == "toy") {
    c.model = ModelConfig::toy();
    c.train = TrainConfig::toy();
  } else if (profile != "base") {
    throw usage_error("config: profile must be 'base' or 'toy'");
  }
  const auto& data = j.at("data");
  check_keys(data, {"src", "tgt", "mapping", "entities", "src_lexicon", "tgt_lexicon"}, "data");
  c.src_path = resolve(base_dir, data.at("src").get<std::string>());
  c.tgt_path = resolve(base_dir, data.at("tgt").get<std::string>());
  c.mapping_path = resolve(base_dir, data.value("mapping", std::string()));
  c.entities_path = resolve(base_dir, data.value("entities", std::string()));
  c.src_lexicon = resolve(base_dir, data.value("src_lexicon", std::string()));
  c.tgt_lexicon = resolve(base_dir, data.value("tgt_lexicon", std::string()));
  if (j.contains("split")) {
    check_keys(j["split"], {"holdout"}, "split");
    c.holdout = j["split"].value("holdout", c.holdout);
  }
  if (j.contains("bpe")) {
    check_keys(j["bpe"], {"src", "tgt"}, "bpe");
    if (j["bpe"].contains("src")) c.bpe_src = bpe_side_from(j["bpe"]["src"], "src");
    if (j["bpe"].contains("tgt")) c.bpe_tgt = bpe_side_from(j["bpe"]["tgt"], "tgt");
  }
  if (j.contains("model")) j["model"].get_to(c.model);
  if (j.contains("train")) j["train"].get_to(c.train);
  if (j.contains("decode")) j["decode"].get_to(c.decode);
  if (j.contains("score")) {
    check_keys(j["score"], {"max_n"}, "score");
    c.bleu_max_n = j["score"].value("max_n", c.bleu_max_n);
  }
  c.train.validate();
  if (c.bleu_max_n < 1) throw usage_error("score.max_n must be >= 1");
  if (c.decode.beam < 1) throw usage_error("decode.beam must be >= 1");
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw usage_error("config '" + path + "': " + e.what());
  }
  try {
    return from_json(j, fs::absolute(path).parent_path().string());
  } catch (const nlohmann::json::exception& e) {
    throw usage_error("config '" + path + "': " + e.what());
  }
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json data{{"src", src_path}, {"tgt", tgt_path}};
  if (!mapping_path.empty()) data["mapping"] = mapping_path;
  if (!entities_path.empty()) data["entities"] = entities_path;
  if (!src_lexicon.empty()) data["src_lexicon"] = src_lexicon;
  if (!tgt_lexicon.empty()) data["tgt_lexicon"] = tgt_lexicon;
  return nlohmann::json{{"data", data},
                        {"split", {{"holdout", holdout}}},
                        {"bpe", {{"src", bpe_side_json(bpe_src)}, {"tgt", bpe_side_json(bpe_tgt)}}},
                        {"model", model},
                        {"train", train},
                        {"decode", decode},
                        {"score", {{"max_n", bleu_max_n}}}};
}

nlohmann::json manifest_to_json(const std::vector<StageRecord>& manifest) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& r : manifest)
    stages.push_back({{"name", r.name}, {"fingerprint", r.fingerprint}, {"inputs", r.inputs}, {"outputs", r.outputs}});
  return nlohmann::json{{"version", 1}, {"stages", stages}};
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::string& out_dir_arg,
                            const PipelineOptions& options) {
  fs::create_directories(out_dir_arg);
  const std::string out_dir = fs::weakly_canonical(out_dir_arg).string();
  const bool shared = !options.shared_dir.empty();
  const std::string data_dir = shared ? fs::weakly_canonical(options.shared_dir).string() : out_dir;
  auto in_data = [&](const std::string& f) { return data_dir + "/" + f; };
  auto in_run = [&](const std::string& f) { return out_dir + "/" + f; };
  auto display = [&](const std::string& path) {
    const fs::path rel = fs::path(path).lexically_relative(out_dir);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return path;
  };

  write_text(in_run("effective_config.json"), cfg.to_json().dump(2) + "\n");

  std::map<std::string, StageRecord> previous;
  const std::string manifest_path = in_run("manifest.json");
  if (fs::exists(manifest_path)) {
    try {
      const nlohmann::json stored = nlohmann::json::parse(read_text(manifest_path));
      for (const auto& s : stored.at("stages"))
        previous[s.at("name").get<std::string>()] = record_from_json(s);
    } catch (const nlohmann::json::exception&) {
      previous.clear();  // unreadable manifest: rebuild everything
    }
  }

  PipelineResult result;
  auto vocab_of = [&](const std::string& side) { return Vocabulary::load(in_data("bpe." + side + ".vocab")); };

  std::vector<Stage> stages;
  const nlohmann::json cfg_json = cfg.to_json();

  stages.push_back({"clean",
                    {{"data", cfg_json["data"]}},
                    [&] {
                      std::vector<std::string> in{cfg.src_path, cfg.tgt_path};
                      for (const auto* p : {&cfg.mapping_path, &cfg.entities_path, &cfg.src_lexicon, &cfg.tgt_lexicon})
                        if (!p->empty()) in.push_back(*p);
                      return in;
                    },
                    [&] {
                      const CharMapping mapping =
                          cfg.mapping_path.empty() ? CharMapping() : CharMapping::load_file(cfg.mapping_path);
                      const EntityTable entities =
                          cfg.entities_path.empty() ? EntityTable::builtin() : EntityTable::load_file(cfg.entities_path);
                      CleanResult cleaned = clean_corpus(read_parallel(cfg.src_path, cfg.tgt_path), mapping, entities);
                      std::optional<Segmenter> seg_src, seg_tgt;
                      if (!cfg.src_lexicon.empty()) seg_src = Segmenter::load_file(cfg.src_lexicon);
                      if (!cfg.tgt_lexicon.empty()) seg_tgt = Segmenter::load_file(cfg.tgt_lexicon);
                      std::vector<std::string> src, tgt;
                      for (const auto& p : cleaned.pairs) {
                        src.push_back(seg_src ? seg_src->segment_line(p.src) : p.src);
                        tgt.push_back(seg_tgt ? seg_tgt->segment_line(p.tgt) : p.tgt);
                      }
                      write_lines(in_data("clean.src"), src);
                      write_lines(in_data("clean.tgt"), tgt);
                      const auto& r = cleaned.report;
                      nlohmann::json report{{"input", r.input},
                                            {"kept", r.kept},
                                            {"dropped_encoding", r.dropped_encoding},
                                            {"dropped_empty", r.dropped_empty},
                                            {"transformed", r.transformed}};
                      write_text(in_data("clean.report.json"), report.dump(2) + "\n");
                      return std::vector<std::string>{in_data("clean.src"), in_data("clean.tgt"),
                                                      in_data("clean.report.json")};
                    }});

  stages.push_back({"split",
                    {{"holdout", cfg.holdout}},
                    [&] { return std::vector<std::string>{in_data("clean.src"), in_data("clean.tgt")}; },
                    [&] {
                      const auto src = read_lines(in_data("clean.src"));
                      const auto tgt = read_lines(in_data("clean.tgt"));
                      if (src.size() != tgt.size()) throw data_error("clean.src and clean.tgt differ in line count");
                      std::vector<SentencePair> pairs;
                      for (std::size_t i = 0; i < src.size(); ++i) pairs.push_back({src[i], tgt[i], i + 1});
                      auto [train, valid] = holdout_split(pairs, SplitSpec{cfg.holdout});
                      auto dump = [&](const std::vector<SentencePair>& ps, const std::string& name) {
                        std::vector<std::string> s, t;
                        for (const auto& p : ps) s.push_back(p.src), t.push_back(p.tgt);
                        write_lines(in_data(name + ".src"), s);
                        write_lines(in_data(name + ".tgt"), t);
                      };
                      dump(train, "train");
                      dump(valid, "valid");
                      return std::vector<std::string>{in_data("train.src"), in_data("train.tgt"),
                                                      in_data("valid.src"), in_data("valid.tgt")};
                    }});

  for (const std::string side : {"src", "tgt"}) {
    const BpeSideConfig& bc = side == "src" ? cfg.bpe_src : cfg.bpe_tgt;
    stages.push_back({"bpe-learn-" + side,
                      bpe_side_json(bc),
                      [&, side] { return std::vector<std::string>{in_data("train." + side)}; },
                      [&, side, bc] {
                        const auto lines = read_lines(in_data("train." + side));
                        BpeOptions opts;
                        opts.merges = bc.merges;
                        opts.target_vocab_size = bc.vocab_size;
                        const BpeModel model = learn_bpe(count_words(lines), opts);
                        model.table.save(in_data("bpe." + side + ".merges"));
                        model.vocab.save(in_data("bpe." + side + ".vocab"));
                        return std::vector<std::string>{in_data("bpe." + side + ".merges"),
                                                        in_data("bpe." + side + ".vocab")};
                      }});
  }

  stages.push_back({"bpe-apply",
                    nlohmann::json::object(),
                    [&] {
                      return std::vector<std::string>{in_data("train.src"), in_data("train.tgt"),
                                                      in_data("valid.src"), in_data("valid.tgt"),
                                                      in_data("bpe.src.merges"), in_data("bpe.tgt.merges")};
                    },
                    [&] {
                      std::vector<std::string> outs;
                      for (const std::string side : {"src", "tgt"}) {
                        const MergeTable table = MergeTable::load(in_data("bpe." + side + ".merges"));
                        BpeSegmenter seg(table);
                        for (const std::string part : {"train", "valid"}) {
                          std::vector<std::string> out;
                          for (const auto& line : read_lines(in_data(part + "." + side))) {
                            std::string joined;
                            for (const auto& t : seg.segment_line(line)) joined += (joined.empty() ? "" : " ") + t;
                            out.push_back(std::move(joined));
                          }
                          const std::string path = in_data(part + ".bpe." + side);
                          write_lines(path, out);
                          outs.push_back(path);
                        }
                      }
                      return outs;
                    }});

  if (shared) stages.erase(stages.begin(), stages.begin() + 5);

  auto model_cfg = [&] {
    ModelConfig m = cfg.model;
    m.src_vocab = static_cast<int>(vocab_of("src").size());
    m.tgt_vocab = static_cast<int>(vocab_of("tgt").size());
    return m;
  };

  stages.push_back({"train",
                    {{"model", cfg_json["model"]}, {"train", cfg_json["train"]}},
                    [&] {
                      return std::vector<std::string>{in_data("train.bpe.src"), in_data("train.bpe.tgt"),
                                                      in_data("valid.bpe.src"), in_data("valid.bpe.tgt"),
                                                      in_data("bpe.src.vocab"), in_data("bpe.tgt.vocab")};
                    },
                    [&] {
                      const Vocabulary sv = vocab_of("src"), tv = vocab_of("tgt");
                      const auto train = encode_pairs(read_lines(in_data("train.bpe.src")),
                                                      read_lines(in_data("train.bpe.tgt")), sv, tv);
                      const auto valid = encode_pairs(read_lines(in_data("valid.bpe.src")),
                                                      read_lines(in_data("valid.bpe.tgt")), sv, tv);
                      const std::string dir = in_run("train");
                      fs::remove_all(dir);
                      TrainOptions topts;
                      topts.out_dir = dir;
                      const TrainResult tr = train_loop(train, valid, model_cfg(), cfg.train, topts);
                      std::vector<std::string> names;
                      std::vector<std::string> outs;
                      for (const auto& p : tr.checkpoints) {
                        names.push_back(fs::path(p).filename().string());
                        outs.push_back(p);
                      }
                      write_lines(dir + "/checkpoints.txt", names);
                      outs.push_back(dir + "/checkpoints.txt");
                      outs.push_back(dir + "/train.log");
                      return outs;
                    }});

  auto last_checkpoints = [&] {
    const auto names = read_lines(in_run("train/checkpoints.txt"));
    const std::size_t k = std::min(names.size(), static_cast<std::size_t>(cfg.train.average_last));
    std::vector<std::string> paths;
    for (std::size_t i = names.size() - k; i < names.size(); ++i) paths.push_back(in_run("train/" + names[i]));
    return paths;
  };

  stages.push_back({"average",
                    {{"average_last", cfg.train.average_last}},
                    [&] {
                      auto in = last_checkpoints();
                      in.push_back(in_run("train/checkpoints.txt"));
                      return in;
                    },
                    [&] {
                      const auto paths = last_checkpoints();
                      if (paths.empty()) throw data_error("no checkpoints to average");
                      const Checkpoint avg = average_checkpoints(paths);
                      save_checkpoint(in_run("model.avg.nmtc"), avg.params, avg.meta);
                      return std::vector<std::string>{in_run("model.avg.nmtc")};
                    }});

  stages.push_back({"translate",
                    {{"decode", cfg_json["decode"]}},
                    [&] {
                      return std::vector<std::string>{in_run("model.avg.nmtc"), in_data("bpe.src.merges"),
                                                      in_data("bpe.src.vocab"), in_data("bpe.tgt.vocab"),
                                                      in_data("valid.src")};
                    },
                    [&] {
                      const Checkpoint ck = load_checkpoint(in_run("model.avg.nmtc"));
                      translate_file(ck.params, ck.meta.model, MergeTable::load(in_data("bpe.src.merges")),
                                     vocab_of("src"), vocab_of("tgt"), in_data("valid.src"),
                                     in_run("valid.hyp"), cfg.decode);
                      return std::vector<std::string>{in_run("valid.hyp")};
                    }});

  stages.push_back({"score",
                    {{"max_n", cfg.bleu_max_n}},
                    [&] { return std::vector<std::string>{in_run("valid.hyp"), in_data("valid.tgt")}; },
                    [&] {
                      const BleuReport r = bleu(read_lines(in_run("valid.hyp")), read_lines(in_data("valid.tgt")),
                                                cfg.bleu_max_n);
                      std::ostringstream os;
                      os << std::setprecision(17) << "bleu\t" << r.score << "\nbrevity_penalty\t" << r.brevity_penalty
                         << "\nhyp_length\t" << r.hyp_length << "\nref_length\t" << r.ref_length << '\n';
                      for (std::size_t n = 0; n < r.precisions.size(); ++n)
                        os << "p" << n + 1 << '\t' << r.precisions[n] << '\n';
                      write_text(in_run("score.tsv"), os.str());
                      return std::vector<std::string>{in_run("score.tsv")};
                    }});

  const std::size_t limit = options.stage_limit ? std::min(options.stage_limit, stages.size()) : stages.size();
  bool upstream_ran = false;
  for (std::size_t s = 0; s < limit; ++s) {
    Stage& stage = stages[s];
    try {
      StageRecord rec;
      rec.name = stage.name;
      rec.fingerprint = sha256_text(stage.settings.dump());
      bool run = upstream_ran;
      std::vector<std::string> inputs;
      try {
        inputs = stage.inputs();
        for (const auto& in : inputs) rec.inputs[display(in)] = sha256_file(in);
      } catch (const Error&) {
        if (!upstream_ran) throw;
        run = true;  // inputs are rebuilt by this run; recomputed below
      }
      auto prev = previous.find(stage.name);
      if (prev == previous.end() || prev->second.fingerprint != rec.fingerprint ||
          prev->second.inputs != rec.inputs)
        run = true;
      if (!run)
        for (const auto& [path, hash] : prev->second.outputs)
          if (!fs::exists(fs::path(path).is_absolute() ? fs::path(path) : fs::path(out_dir) / path)) run = true;

      if (run) {
        if (options.log) *options.log << "stage " << stage.name << ": run\n" << std::flush;
        const auto outputs = stage.run();
        rec.outputs.clear();
        for (const auto& out : outputs) rec.outputs[display(out)] = sha256_file(out);
        result.executed.push_back(stage.name);
        upstream_ran = true;
      } else {
        if (options.log) *options.log << "stage " << stage.name << ": up to date\n";
        rec.outputs = prev->second.outputs;
      }
      result.manifest.push_back(std::move(rec));
      previous[stage.name] = result.manifest.back();
      // Persist progress so an aborted run keeps finished stages.
      write_text(manifest_path, manifest_to_json(result.manifest).dump(2) + "\n");
    } catch (const Error& e) {
      throw Error(e.kind(), "stage " + stage.name + ": " + e.what());
    } catch (const std::exception& e) {
      throw data_error("stage " + stage.name + ": " + e.what());
    }
  }

  if (fs::exists(in_data("bpe.src.vocab"))) result.src_vocab = vocab_of("src").size();
  if (fs::exists(in_data("bpe.tgt.vocab"))) result.tgt_vocab = vocab_of("tgt").size();
  if (fs::exists(in_run("score.tsv"))) {
    std::istringstream ss(read_text(in_run("score.tsv")));
    std::string key;
    double value;
    while (ss >> key >> value)
      if (key == "bleu") result.bleu = value;
  }
  return result;
}

std::vector<SweepSetting> reference_model_settings() {
  return {{"A", 256, 0.1}, {"B", 384, 0.1}, {"C", 384, 0.3}, {"D", 512, 0.1}, {"E", 512, 0.3}};
}

std::string SweepReport::to_tsv() const {
  std::ostringstream os;
  os << "label\tmerges\td_model\tdropout\tsrc_vocab\ttgt_vocab\tbleu\tstatus\n";
  for (const auto& r : rows)
    os << r.label << '\t' << r.merges << '\t' << r.d_model << '\t' << r.dropout << '\t' << r.src_vocab << '\t'
       << r.tgt_vocab << '\t' << std::fixed << std::setprecision(2) << r.bleu << std::defaultfloat << '\t'
       << r.status << '\n';
  return os.str();
}

std::string SweepReport::to_text() const {
  // Published-table layout: one column per cell.
  std::vector<std::vector<std::string>> table;
  auto fmt = [](double v, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
  };
  std::vector<std::string> header{kind == "vocabulary" ? "Merge operations" : "Settings"};
  std::vector<std::string> emb{"Embedding size"}, drop{"Dropout"}, sv{"Source vocabulary size"},
      tv{"Target vocabulary size"}, score{"BLEU"};
  for (const auto& r : rows) {
    header.push_back(r.label);
    emb.push_back(std::to_string(r.d_model));
    drop.push_back(fmt(r.dropout, 1));
    sv.push_back(std::to_string(r.src_vocab));
    tv.push_back(std::to_string(r.tgt_vocab));
    score.push_back(r.status == "ok" ? fmt(r.bleu, 2) : "failed");
  }
  table.push_back(header);
  if (kind != "vocabulary") {
    table.push_back(emb);
    table.push_back(drop);
  }
  table.push_back(sv);
  table.push_back(tv);
  table.push_back(score);
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], utf8::length(row[c]));
  std::ostringstream os;
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << row[c];
      if (c + 1 < row.size()) os << std::string(width[c] - utf8::length(row[c]) + 2, ' ');
    }
    os << '\n';
  }
  for (const auto& r : rows)
    if (r.status != "ok") os << r.label << ": " << r.status << '\n';
  return os.str();
}

SweepReport run_sweep(const SweepGrid& grid, const std::string& out_dir, int jobs, std::ostream* log) {
  std::vector<SweepSetting> settings = grid.settings;
  if (settings.empty())
    for (int d : grid.embedding_sizes)
      for (double p : grid.dropouts) {
        std::ostringstream name;
        name << "d" << d << "/p" << p;
        settings.push_back({name.str(), d, p});
      }
  const bool model_sweep = !settings.empty();
  if (settings.empty()) settings.push_back({"base", grid.base.model.d_model, grid.base.model.dropout});
  std::vector<std::optional<std::size_t>> budgets;
  for (auto b : grid.merge_budgets) budgets.emplace_back(b);
  if (budgets.empty()) budgets.emplace_back(std::nullopt);

  SweepReport report;
  report.kind = model_sweep ? (budgets.size() > 1 ? "grid" : "model") : "vocabulary";
  fs::create_directories(out_dir);
  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    *log << msg << '\n' << std::flush;
  };

  struct Cell {
    PipelineConfig cfg;
    std::string dir;
    std::string shared;
    std::size_t row;
  };
  std::vector<Cell> cells;
  std::vector<std::string> shared_dirs;
  std::vector<PipelineConfig> shared_cfgs;
  for (const auto& budget : budgets) {
    PipelineConfig data_cfg = grid.base;
    std::string tag = "base";
    if (budget) {
      data_cfg.bpe_src = BpeSideConfig{*budget, grid.base.bpe_src.vocab_size ? budget : std::nullopt};
      data_cfg.bpe_tgt = BpeSideConfig{*budget, grid.base.bpe_tgt.vocab_size ? budget : std::nullopt};
      tag = "bpe" + std::to_string(*budget);
    }
    const std::string shared = out_dir + "/" + tag + "/data";
    shared_dirs.push_back(shared);
    shared_cfgs.push_back(data_cfg);
    for (const auto& s : settings) {
      PipelineConfig cell = data_cfg;
      cell.model.d_model = s.d_model;
      cell.model.dropout = s.dropout;
      SweepRow row;
      row.label = budget && !model_sweep ? std::to_string(*budget)
                                         : (budget ? tag + "/" : std::string()) + s.name;
      row.merges = budget.value_or(grid.base.bpe_src.vocab_size.value_or(grid.base.bpe_src.merges));
      row.d_model = s.d_model;
      row.dropout = s.dropout;
      std::string dir_name = s.name;
      std::replace(dir_name.begin(), dir_name.end(), '/', '_');
      report.rows.push_back(row);
      cells.push_back({cell, out_dir + "/" + tag + "/" + dir_name, shared, report.rows.size() - 1});
    }
  }

  // Data preparation per budget, then model cells; both bounded by jobs.
  auto parallel_for = [&](std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n));
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      });
    for (auto& t : threads) t.join();
  };

  std::vector<std::string> data_errors(shared_dirs.size());
  parallel_for(shared_dirs.size(), [&](std::size_t i) {
    try {
      PipelineOptions opts;
      opts.stage_limit = 5;
      run_pipeline(shared_cfgs[i], shared_dirs[i], opts);
      say("data " + shared_dirs[i] + ": ready");
    } catch (const std::exception& e) {
      data_errors[i] = e.what();
      say("data " + shared_dirs[i] + ": " + e.what());
    }
  });

  parallel_for(cells.size(), [&](std::size_t i) {
    Cell& cell = cells[i];
    SweepRow& row = report.rows[cell.row];
    const std::size_t data_index = static_cast<std::size_t>(
        std::find(shared_dirs.begin(), shared_dirs.end(), cell.shared) - shared_dirs.begin());
    if (!data_errors[data_index].empty()) {
      row.status = "error: " + data_errors[data_index];
      return;
    }
    try {
      PipelineOptions opts;
      opts.shared_dir = cell.shared;
      const PipelineResult r = run_pipeline(cell.cfg, cell.dir, opts);
      row.src_vocab = r.src_vocab;
      row.tgt_vocab = r.tgt_vocab;
      row.bleu = r.bleu;
      say("cell " + row.label + ": BLEU " + std::to_string(r.bleu));
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      say("cell " + row.label + ": " + row.status);
    }
  });

  write_text(out_dir + "/report.txt", report.to_text());
  write_text(out_dir + "/report.tsv", report.to_tsv());
  return report;
}

}  // namespace nmt
