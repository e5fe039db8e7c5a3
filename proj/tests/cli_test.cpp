#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cmtc/config.hpp"
#include "cmtc/runner.hpp"

// End-to-end command tests: library-level runner calls plus a few spawns of
// the real binary for exit codes. CMTC_CLI_PATH is injected by CMake.

namespace {

namespace fs = std::filesystem;

std::string tmp_dir(const std::string& name) {
  const std::string d = ::testing::TempDir() + name;
  fs::remove_all(d);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CMTC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

cmtc::RunConfig tiny_cfg(std::uint64_t seed) {
  cmtc::RunConfig cfg = cmtc::RunConfig::preset("smoke");
  cfg.seed = seed;
  cfg.dataset.sensor_width = 16;
  cfg.dataset.sensor_height = 32;
  cfg.dataset.clip_len = 4;
  cfg.model.encoder_channels = {4, 6, 8};
  cfg.model.eventnet_channels = {4, 6, 8};
  return cfg;
}

}  // namespace

TEST(Config, PresetsAndRoundTrip) {
  auto desk = cmtc::RunConfig::preset("desk");
  EXPECT_EQ(desk.dataset.identities, 8);
  EXPECT_EQ(desk.train.epochs, 40);
  auto paper = cmtc::RunConfig::preset("paper");
  EXPECT_EQ(paper.train.epochs, 400);
  EXPECT_EQ(paper.dataset.sensor_height, 256);
  EXPECT_EQ(paper.train.decay_interval, 50);
  EXPECT_THROW(cmtc::RunConfig::preset("bogus"), cmtc::ValueError);

  const std::string path = ::testing::TempDir() + "cfg.json";
  auto cfg = tiny_cfg(9);
  cfg.save(path);
  auto loaded = cmtc::RunConfig::load(path);
  EXPECT_EQ(loaded.seed, 9u);
  EXPECT_EQ(loaded.dataset.sensor_width, 16);
  EXPECT_EQ(loaded.model.encoder_channels, cfg.model.encoder_channels);
  EXPECT_EQ(loaded.to_json(), cfg.to_json());
}

TEST(Config, ValidationRejectsBadValues) {
  auto cfg = tiny_cfg(1);
  cfg.precision = "f16";
  EXPECT_THROW(cfg.validate(), cmtc::ValueError);
  cfg = tiny_cfg(1);
  cfg.dataset.sensor_width = 20;  // not a multiple of 8
  EXPECT_THROW(cfg.validate(), cmtc::ValueError);
  cfg = tiny_cfg(1);
  cfg.ablation = {false, true, true};
  EXPECT_THROW(cfg.validate(), cmtc::ValueError);
}

TEST(CmdSynth, WritesExpectedLayoutAndIsByteIdentical) {
  auto cfg = tiny_cfg(4);
  const std::string out_a = tmp_dir("synth_a");
  cmtc::run_synth(cfg, out_a, false);
  auto manifest = cmtc::load_manifest(out_a);
  EXPECT_EQ(manifest.items.size(),
            static_cast<std::size_t>(cfg.dataset.identities * cfg.dataset.cameras *
                                     cfg.dataset.clips_per_id_cam));
  // manifest row count equals file count on disk
  std::size_t evs = 0;
  for (const auto& e : fs::directory_iterator(out_a + "/clips")) evs += e.is_regular_file();
  EXPECT_EQ(evs, manifest.items.size());

  // same seed -> byte-identical directory tree
  const std::string out_b = tmp_dir("synth_b");
  cmtc::run_synth(cfg, out_b, false);
  for (const auto& e : fs::recursive_directory_iterator(out_a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), out_a);
    EXPECT_EQ(slurp(e.path().string()), slurp((fs::path(out_b) / rel).string())) << rel;
  }

  // refuses to clobber without force
  EXPECT_THROW(cmtc::run_synth(cfg, out_a, false), cmtc::ValueError);
  cmtc::run_synth(cfg, out_a, true);
}

TEST(CmdSynth, DeskPresetCounts) {
  auto cfg = cmtc::RunConfig::preset("desk");
  EXPECT_EQ(cfg.dataset.identities * cfg.dataset.cameras * cfg.dataset.clips_per_id_cam, 64);
}

TEST(CmdTrainEval, SmokeAndDeterministicReports) {
  auto cfg = tiny_cfg(6);
  const std::string data = tmp_dir("cli_data");
  cmtc::run_synth(cfg, data, false);

  const std::string run1 = tmp_dir("cli_run1");
  auto final1 = cmtc::run_train(cfg, data, run1, false);
  EXPECT_TRUE(fs::exists(run1 + "/metrics.csv"));
  EXPECT_TRUE(fs::exists(run1 + "/checkpoints/epoch_0001.ckpt"));
  EXPECT_TRUE(fs::exists(run1 + "/report.json"));

  const std::string run2 = tmp_dir("cli_run2");
  cmtc::run_train(cfg, data, run2, false);
  EXPECT_EQ(slurp(run1 + "/metrics.csv"), slurp(run2 + "/metrics.csv"));
  EXPECT_EQ(slurp(run1 + "/report.json"), slurp(run2 + "/report.json"));

  // eval on the emitted checkpoint reproduces the training-time report
  const std::string ev = tmp_dir("cli_eval");
  cmtc::run_eval(cfg, run1 + "/checkpoints/epoch_0001.ckpt", data, ev, false);
  EXPECT_EQ(slurp(ev + "/report.json"), slurp(run1 + "/report.json"));
  nlohmann::json rep;
  std::ifstream(ev + "/report.json") >> rep;
  for (const char* key : {"rank1", "rank5", "rank10", "mAP"}) {
    const double v = rep.at(key).get<double>();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_TRUE(fs::exists(ev + "/embeddings.ckpt"));
  EXPECT_TRUE(fs::exists(ev + "/rankings.csv"));

  // missing checkpoint is a clean validation error
  EXPECT_THROW(cmtc::run_eval(cfg, run1 + "/checkpoints/nope.ckpt", data, tmp_dir("cli_eval2"),
                              false),
               cmtc::ValueError);
}

TEST(CmdTrain, ResumeMatchesUninterrupted) {
  auto cfg = tiny_cfg(8);
  cfg.train.epochs = 3;
  const std::string data = tmp_dir("resume_data");
  cmtc::run_synth(cfg, data, false);

  const std::string full = tmp_dir("resume_full");
  cmtc::run_train(cfg, data, full, false);

  auto short_cfg = cfg;
  short_cfg.train.epochs = 1;
  const std::string part = tmp_dir("resume_part");
  cmtc::run_train(short_cfg, data, part, false);
  cmtc::run_train(cfg, data, part, true, part + "/checkpoints/epoch_0001.ckpt");

  // the resumed run's final report matches the uninterrupted one
  EXPECT_EQ(slurp(part + "/report.json"), slurp(full + "/report.json"));
}

TEST(CmdAblate, TableShapeAndOrder) {
  auto cfg = tiny_cfg(10);
  cfg.train.epochs = 1;
  cfg.train.pretrain_epochs = 0;
  const std::string data = tmp_dir("ablate_data");
  cmtc::run_synth(cfg, data, false);
  const std::string out = tmp_dir("ablate_out");
  auto table = cmtc::run_ablate(cfg, data, out, false, 1);
  ASSERT_EQ(table.size(), 5u);
  // canonical checkmark pattern: (---), (E--), (EM-), (E-T), (EMT)
  const bool expect[5][3] = {
      {false, false, false}, {true, false, false}, {true, true, false},
      {true, false, true},   {true, true, true},
  };
  for (int r = 0; r < 5; ++r) {
    EXPECT_EQ(table[r].config.use_eventnet, expect[r][0]) << "row " << r;
    EXPECT_EQ(table[r].config.use_mc, expect[r][1]);
    EXPECT_EQ(table[r].config.use_tc, expect[r][2]);
    EXPECT_EQ(table[r].rank1.size(), 1u);
  }
  std::ifstream f(out + "/ablation.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_NE(line.find("rank1_median"), std::string::npos);
  std::size_t rows = 0;
  while (std::getline(f, line)) ++rows;
  EXPECT_EQ(rows, 5u);
}

TEST(CliBinary, TrainWithAblationFlag) {
  // a real binary invocation: tiny config file, baseline ablation, one epoch
  auto cfg = tiny_cfg(12);
  cfg.train.pretrain_epochs = 0;
  const std::string cfg_path = ::testing::TempDir() + "bin_train_cfg.json";
  cfg.save(cfg_path);
  const std::string data = tmp_dir("bin_train_data");
  cmtc::run_synth(cfg, data, false);
  const std::string out = tmp_dir("bin_train_out");
  EXPECT_EQ(run_cli("train --config " + cfg_path + " --ablation baseline --epochs 1 --data " +
                    data + " --out " + out),
            0);
  ASSERT_TRUE(fs::exists(out + "/config.json"));
  auto snapshot = cmtc::RunConfig::load(out + "/config.json");
  EXPECT_FALSE(snapshot.ablation.use_eventnet);
  EXPECT_FALSE(snapshot.ablation.use_mc);
  EXPECT_FALSE(snapshot.ablation.use_tc);
  EXPECT_TRUE(fs::exists(out + "/report.json"));
  EXPECT_FALSE(fs::exists(out + "/eventnet_pretrain.csv"));  // baseline has no EventNet
}

TEST(CliBinary, ExitCodes) {
  const std::string data = tmp_dir("bin_data");
  // 0 on success
  EXPECT_EQ(run_cli("synth --preset smoke --seed 3 --out " + data), 0);
  // 1 on validation problems: bad flag value, clobber without force
  EXPECT_EQ(run_cli("synth --preset nope --seed 3 --out " + tmp_dir("bin_x")), 1);
  EXPECT_EQ(run_cli("synth --preset smoke --seed 3 --out " + data), 1);
  // 1 on missing dataset for train
  EXPECT_EQ(run_cli("train --preset smoke --data " + tmp_dir("no_data") + " --out " +
                    tmp_dir("bin_run")),
            1);
  // 2 on runtime failure: corrupt checkpoint
  const std::string bad_ckpt = ::testing::TempDir() + "corrupt.ckpt";
  std::ofstream(bad_ckpt, std::ios::binary) << "CMTCCKPTgarbagegarbage";
  EXPECT_EQ(run_cli("eval --preset smoke --data " + data + " --checkpoint " + bad_ckpt +
                    " --out " + tmp_dir("bin_eval")),
            2);
}
