#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "nmt/checkpoint.hpp"
#include "nmt/train.hpp"
#include "nmt/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nmt;
using nmt::testing::tiny_model;

namespace {

std::string bytes_of(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

ParameterSet randomized(const ModelConfig& c, std::uint64_t seed) {
  ParameterSet p = init_parameters(c, seed);
  std::mt19937_64 rng(seed * 31 + 7);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (auto& [name, t] : p.tensors)
    for (auto& v : t.data()) v = n(rng);
  return p;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
  const std::string dir = nmt::testing::scratch_dir("ckpt_roundtrip");
  const ModelConfig c = tiny_model(10, 2, 16, 2, 3);
  const ParameterSet p = randomized(c, 1);
  save_checkpoint(dir + "/a.nmtc", p, CheckpointMeta{42, c, 0xABCD});
  const Checkpoint ck = load_checkpoint(dir + "/a.nmtc");
  CHECK(ck.meta.step == 42);
  CHECK(ck.meta.train_digest == 0xABCD);
  CHECK(nlohmann::json(ck.meta.model) == nlohmann::json(c));
  REQUIRE(ck.params.size() == p.size());
  for (const auto& [name, t] : p.tensors) {
    const auto a = t.data(), b = ck.params.at(name).data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  CHECK(bytes_of(dir + "/a.nmtc").substr(0, 4) == "NMTC");
}

TEST_CASE("header inspection lists the configured layout") {
  const std::string dir = nmt::testing::scratch_dir("ckpt_inspect");
  const ModelConfig c = tiny_model(10, 1, 16, 2, 3);
  save_checkpoint(dir + "/a.nmtc", init_parameters(c, 2), CheckpointMeta{1, c, 0});
  const auto info = inspect_checkpoint(dir + "/a.nmtc");
  const auto layout = parameter_layout(c);
  REQUIRE(info.size() == layout.size());
  std::map<std::string, Shape> want(layout.begin(), layout.end());
  for (const auto& r : info) {
    REQUIRE(want.count(r.name));
    CHECK(Shape(r.dims.begin(), r.dims.end()) == want[r.name]);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string dir = nmt::testing::scratch_dir("ckpt_corrupt");
  const ModelConfig c = tiny_model(10, 1, 16, 2, 3);
  save_checkpoint(dir + "/good.nmtc", init_parameters(c, 3), CheckpointMeta{1, c, 0});
  const std::string good = bytes_of(dir + "/good.nmtc");

  auto rejects = [&](const std::string& name, const std::string& bytes, const std::string& needle) {
    write_bytes(dir + "/" + name, bytes);
    try {
      load_checkpoint(dir + "/" + name);
      FAIL("loaded " << name);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::data);
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  rejects("magic.nmtc", "XXXX" + good.substr(4), "");
  rejects("trunc.nmtc", good.substr(0, good.size() / 2), "truncated");
  rejects("header.nmtc", good.substr(0, 5), "truncated");
  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  rejects("crc.nmtc", flipped, "");
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.nmtc"), Error);
  CHECK_THROWS_AS(inspect_checkpoint(dir + "/trunc.nmtc"), Error);
  // non-finite parameters are refused at save time
  ParameterSet bad = init_parameters(c, 3);
  bad.at("src_embed").data()[0] = std::numeric_limits<Real>::infinity();
  CHECK_THROWS_AS(save_checkpoint(dir + "/inf.nmtc", bad, CheckpointMeta{1, c, 0}), Error);
}

TEST_CASE("averaging") {
  const std::string dir = nmt::testing::scratch_dir("ckpt_average");
  const ModelConfig c = tiny_model(10, 1, 16, 2, 3);
  std::vector<ParameterSet> sets;
  std::vector<std::string> paths;
  for (int i = 0; i < 20; ++i) {
    sets.push_back(randomized(c, static_cast<std::uint64_t>(100 + i)));
    paths.push_back(dir + "/" + checkpoint_name(static_cast<std::uint64_t>(10 * (i + 1))));
    save_checkpoint(paths.back(), sets.back(), CheckpointMeta{static_cast<std::uint64_t>(10 * (i + 1)), c, 0});
  }

  SUBCASE("matches the two-pass mean for the last 5 and 20") {
    for (std::size_t k : {std::size_t{5}, std::size_t{20}}) {
      const std::vector<std::string> last(paths.end() - static_cast<std::ptrdiff_t>(k), paths.end());
      const Checkpoint avg = average_checkpoints(last);
      CHECK(avg.meta.step == 200);
      double worst = 0;
      for (const auto& [name, t] : avg.params.tensors) {
        std::vector<std::vector<float>> rows;
        for (std::size_t i = sets.size() - k; i < sets.size(); ++i) {
          const auto d = sets[i].at(name).data();
          rows.emplace_back(d.begin(), d.end());
        }
        const auto want = nmt::testing::two_pass_mean(rows);
        for (std::size_t j = 0; j < want.size(); ++j)
          worst = std::max(worst, std::abs(static_cast<double>(t.data()[j]) - want[j]) /
                                      std::max(1.0, std::abs(want[j])));
      }
      CHECK(worst < 1e-7);
    }
  }
  SUBCASE("copies of one checkpoint average to itself") {
    const Checkpoint avg = average_checkpoints({paths[0], paths[0], paths[0]});
    for (const auto& [name, t] : sets[0].tensors) {
      const auto a = t.data(), b = avg.params.at(name).data();
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
  SUBCASE("zero and two average to one") {
    ParameterSet zero = init_parameters(c, 1), two = init_parameters(c, 1);
    for (auto& [name, t] : zero.tensors) std::fill(t.data().begin(), t.data().end(), Real(0));
    for (auto& [name, t] : two.tensors) std::fill(t.data().begin(), t.data().end(), Real(2));
    save_checkpoint(dir + "/zero.nmtc", zero, CheckpointMeta{1, c, 0});
    save_checkpoint(dir + "/two.nmtc", two, CheckpointMeta{2, c, 0});
    const Checkpoint avg = average_checkpoints({dir + "/zero.nmtc", dir + "/two.nmtc"});
    for (const auto& [name, t] : avg.params.tensors)
      for (Real v : t.data()) CHECK(v == Real(1));
  }
  SUBCASE("order does not matter") {
    const Checkpoint a = average_checkpoints({paths[0], paths[1], paths[2]});
    const Checkpoint b = average_checkpoints({paths[2], paths[0], paths[1]});
    for (const auto& [name, t] : a.params.tensors)
      for (std::size_t j = 0; j < t.numel(); ++j)
        CHECK(t.data()[j] == doctest::Approx(b.params.at(name).data()[j]).epsilon(1e-6));
  }
  SUBCASE("shape mismatch names the tensor") {
    const ModelConfig other = tiny_model(11, 1, 16, 2, 3);
    save_checkpoint(dir + "/other.nmtc", init_parameters(other, 1), CheckpointMeta{1, other, 0});
    try {
      average_checkpoints({paths[0], dir + "/other.nmtc"});
      FAIL("mismatched checkpoints averaged");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("other.nmtc") != std::string::npos);
    }
    CHECK_THROWS_AS(average_checkpoints({}), Error);
  }
}
