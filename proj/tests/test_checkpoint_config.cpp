#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cpn/checkpoint.hpp"
#include "cpn/config.hpp"
#include "cpn/errors.hpp"
#include "cpn/tensor.hpp"

#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;

TEST(Checkpoint, RoundTripPreservesEverything) {
  const fs::path dir = testutil::scratch_dir("ckpt_roundtrip");
  const std::string path = (dir / "weights.cpnw").string();

  std::vector<std::pair<std::string, cpn::Tensor>> params;
  params.emplace_back("enc0.conv.weight",
                      cpn::Tensor::from_values({2, 1, 3, 3},
                                               std::vector<double>{0.5,  -1.25, 3e-17, 4.0, 5.0,
                                                                   -0.0, 7.75,  8.0,   9.5, 1.0,
                                                                   2.0,  3.0,   4.0,   5.0, 6.0,
                                                                   7.0,  8.0,   9.0}));
  params.emplace_back("head.bias", cpn::Tensor::from_values({4}, {1e-300, -1e300, 0.25, 42.0}));

  cpn::save_checkpoint(path, params);
  const std::vector<cpn::CheckpointEntry> entries = cpn::load_checkpoint(path);
  ASSERT_EQ(entries.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(entries[i].name, params[i].first);
    EXPECT_EQ(entries[i].shape, params[i].second.shape());
    EXPECT_EQ(entries[i].values, params[i].second.values());
  }
}

TEST(Checkpoint, LoadRejectsCorruptFiles) {
  const fs::path dir = testutil::scratch_dir("ckpt_errors");

  const std::string bad_magic = (dir / "magic.cpnw").string();
  {
    std::ofstream out(bad_magic, std::ios::binary);
    out << "WXYZ\x01\x00\x00\x00";
  }
  EXPECT_THROW(cpn::load_checkpoint(bad_magic), cpn::data_error);

  const std::string bad_version = (dir / "version.cpnw").string();
  {
    std::ofstream out(bad_version, std::ios::binary);
    out << "CPNW";
    const std::uint32_t v = 99;
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(cpn::load_checkpoint(bad_version), cpn::data_error);

  const std::string truncated = (dir / "short.cpnw").string();
  {
    std::vector<std::pair<std::string, cpn::Tensor>> params;
    params.emplace_back("w", cpn::Tensor::from_values({4}, {1.0, 2.0, 3.0, 4.0}));
    cpn::save_checkpoint(truncated, params);
    fs::resize_file(truncated, fs::file_size(truncated) - 9);
  }
  EXPECT_THROW(cpn::load_checkpoint(truncated), cpn::data_error);

  const std::string silly_rank = (dir / "rank.cpnw").string();
  {
    std::ofstream out(silly_rank, std::ios::binary);
    out << "CPNW";
    std::uint32_t v = 1;
    out.write(reinterpret_cast<const char*>(&v), 4);
    v = 1;  // name length
    out.write(reinterpret_cast<const char*>(&v), 4);
    out << "w";
    v = 200;  // rank
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(cpn::load_checkpoint(silly_rank), cpn::data_error);

  EXPECT_THROW(cpn::load_checkpoint((dir / "missing.cpnw").string()), cpn::data_error);
}

TEST(RunConfig, DefaultsSurviveEmptyDocument) {
  const cpn::RunConfig rc = cpn::parse_run_config(nlohmann::json::object());
  EXPECT_EQ(rc.cpn.order, 4u);
  EXPECT_EQ(rc.cpn.samples, 64u);
  EXPECT_EQ(rc.cpn.stride, 2u);
  EXPECT_EQ(rc.cpn.widths, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(rc.cpn.t_sampling, cpn::TSampling::kUniform);
  EXPECT_EQ(rc.train.epochs, 25u);
  EXPECT_DOUBLE_EQ(rc.train.learning_rate, 0.03);
  EXPECT_EQ(rc.output_dir, "out");
}

TEST(RunConfig, OverridesApplyPerSection) {
  const nlohmann::json doc = {
      {"cpn",
       {{"order", 6},
        {"samples", 48},
        {"stride", 4},
        {"widths", {4, 8, 16}},
        {"lambda", 0.5},
        {"beta", {1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625}},
        {"t_sampling", "random"},
        {"seed", 7}}},
      {"synth", {{"width", 48}, {"height", 40}, {"count", 12}, {"noise", 0.0}}},
      {"train", {{"epochs", 3}, {"learning_rate", 0.01}, {"momentum", 0.8}}},
      {"paths", {{"dataset", "data/train"}, {"output", "results"}, {"checkpoint", "w.cpnw"}}}};
  const cpn::RunConfig rc = cpn::parse_run_config(doc);
  EXPECT_EQ(rc.cpn.order, 6u);
  EXPECT_EQ(rc.cpn.samples, 48u);
  EXPECT_EQ(rc.cpn.stride, 4u);
  EXPECT_EQ(rc.cpn.widths, (std::vector<std::size_t>{4, 8, 16}));
  EXPECT_DOUBLE_EQ(rc.cpn.loss.lambda, 0.5);
  ASSERT_EQ(rc.cpn.loss.beta.size(), 7u);
  EXPECT_EQ(rc.cpn.t_sampling, cpn::TSampling::kRandom);
  EXPECT_EQ(rc.cpn.seed, 7u);
  EXPECT_EQ(rc.synth.width, 48u);
  EXPECT_EQ(rc.synth.height, 40u);
  EXPECT_EQ(rc.synth.count, 12u);
  EXPECT_DOUBLE_EQ(rc.synth.noise, 0.0);
  EXPECT_EQ(rc.train.epochs, 3u);
  EXPECT_DOUBLE_EQ(rc.train.learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(rc.train.momentum, 0.8);
  EXPECT_EQ(rc.dataset_dir, "data/train");
  EXPECT_EQ(rc.output_dir, "results");
  EXPECT_EQ(rc.checkpoint, "w.cpnw");
}

TEST(RunConfig, RejectsUnknownOrMistypedKeys) {
  EXPECT_THROW(cpn::parse_run_config({{"cpnn", nlohmann::json::object()}}),
               std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"ordr", 4}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"synth", {{"widht", 32}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"train", {{"lr", 0.1}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"paths", {{"out", "x"}}}}), std::invalid_argument);

  // Wrong JSON types.
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"order", "four"}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"order", -2}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"score_threshold", "high"}}}}),
               std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"widths", "8,16"}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"t_sampling", "sometimes"}}}}),
               std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"train", nlohmann::json::array()}}),
               std::invalid_argument);

  // Values that parse but fail validation.
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"stride", 3}}}}), std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"score_threshold", 1.5}}}}),
               std::invalid_argument);
  EXPECT_THROW(cpn::parse_run_config({{"cpn", {{"beta", {1.0, 0.5}}}}}), std::invalid_argument);
}

TEST(RunConfig, LoadFromDisk) {
  const fs::path dir = testutil::scratch_dir("config_files");
  const std::string good = (dir / "run.json").string();
  {
    std::ofstream out(good);
    out << R"({"cpn": {"order": 2}, "train": {"epochs": 1}})";
  }
  const cpn::RunConfig rc = cpn::load_run_config(good);
  EXPECT_EQ(rc.cpn.order, 2u);
  EXPECT_EQ(rc.train.epochs, 1u);

  EXPECT_THROW(cpn::load_run_config((dir / "missing.json").string()), std::invalid_argument);

  const std::string bad = (dir / "bad.json").string();
  {
    std::ofstream out(bad);
    out << "{ not json";
  }
  EXPECT_THROW(cpn::load_run_config(bad), std::invalid_argument);
}

TEST(RunConfig, JsonDumpReparsesToTheSameConfig) {
  cpn::RunConfig rc;
  rc.cpn.order = 3;
  rc.cpn.widths = {4, 8};
  rc.cpn.t_sampling = cpn::TSampling::kRandom;
  rc.synth.count = 5;
  rc.train.epochs = 2;
  rc.dataset_dir = "somewhere";
  const cpn::RunConfig back = cpn::parse_run_config(cpn::run_config_to_json(rc));
  EXPECT_EQ(back.cpn.order, rc.cpn.order);
  EXPECT_EQ(back.cpn.widths, rc.cpn.widths);
  EXPECT_EQ(back.cpn.t_sampling, rc.cpn.t_sampling);
  EXPECT_EQ(back.synth.count, rc.synth.count);
  EXPECT_EQ(back.train.epochs, rc.train.epochs);
  EXPECT_EQ(back.dataset_dir, rc.dataset_dir);
  EXPECT_EQ(cpn::config_hash(back), cpn::config_hash(rc));
}

TEST(ConfigHash, IgnoresPathsAndTracksEverythingElse) {
  cpn::RunConfig a;
  cpn::RunConfig b = a;
  b.dataset_dir = "elsewhere/data";
  b.output_dir = "elsewhere/out";
  b.checkpoint = "elsewhere/w.cpnw";
  EXPECT_EQ(cpn::config_hash(a), cpn::config_hash(b));

  cpn::RunConfig c = a;
  c.cpn.order = 5;
  EXPECT_NE(cpn::config_hash(c), cpn::config_hash(a));

  cpn::RunConfig d = a;
  d.train.learning_rate = 0.001;
  EXPECT_NE(cpn::config_hash(d), cpn::config_hash(a));

  cpn::RunConfig e = a;
  e.synth.seed = 777;
  EXPECT_NE(cpn::config_hash(e), cpn::config_hash(a));

  // 16 lowercase hex characters, stable across calls.
  const std::string h = cpn::config_hash(a);
  EXPECT_EQ(h.size(), 16u);
  for (char ch : h) EXPECT_TRUE((ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f')) << ch;
  EXPECT_EQ(cpn::config_hash(a), h);
}

}  // namespace
