#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cmtc/dataset.hpp"
#include "cmtc/events.hpp"
#include "cmtc/frames.hpp"
#include "cmtc/protocol.hpp"
#include "cmtc/synth.hpp"

using cmtc::EventFormat;
using cmtc::EventRecord;
using cmtc::EventStream;

namespace {

std::string tmp_path(const std::string& name) { return ::testing::TempDir() + name; }

EventStream random_stream(std::size_t n, std::uint16_t w, std::uint16_t h, std::uint64_t seed) {
  cmtc::Rng rng(seed);
  EventStream s;
  s.sensor_width = w;
  s.sensor_height = h;
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.below(50);
    s.records.push_back({t, static_cast<std::uint16_t>(rng.below(w)),
                         static_cast<std::uint16_t>(rng.below(h)),
                         static_cast<std::int8_t>(rng.uniform() < 0.5 ? 1 : -1)});
  }
  return s;
}

}  // namespace

TEST(EventIo, CsvLineMapsToRecord) {
  const std::string path = tmp_path("one.csv");
  std::ofstream(path) << "t,x,y,p\n1000,3,2,1\n";
  EventStream s = cmtc::parse_events(path, EventFormat::Csv);
  ASSERT_EQ(s.records.size(), 1u);
  EXPECT_EQ(s.records[0], (EventRecord{1000, 3, 2, 1}));
}

TEST(EventIo, EmptyBodyValidHeader) {
  const std::string path = tmp_path("empty.csv");
  std::ofstream(path) << "# width=8 height=4\nt,x,y,p\n";
  EventStream s = cmtc::parse_events(path, EventFormat::Csv);
  EXPECT_TRUE(s.records.empty());
  EXPECT_EQ(s.sensor_width, 8);
  EXPECT_EQ(s.sensor_height, 4);
}

TEST(EventIo, MalformedLineNamesLineAndOffset) {
  const std::string path = tmp_path("bad.csv");
  std::ofstream(path) << "t,x,y,p\n10,1,1,1\nbogus,line\n";
  try {
    cmtc::parse_events(path, EventFormat::Csv);
    FAIL() << "expected IoError";
  } catch (const cmtc::IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
  }
}

TEST(EventIo, OutOfRangeCoordinateNamesRecord) {
  const std::string path = tmp_path("oob.csv");
  std::ofstream(path) << "# width=4 height=4\nt,x,y,p\n5,9,0,1\n";
  try {
    cmtc::parse_events(path, EventFormat::Csv);
    FAIL() << "expected IoError";
  } catch (const cmtc::IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x=9"), std::string::npos) << msg;
    EXPECT_NE(msg.find("record 0"), std::string::npos) << msg;
  }
}

TEST(EventIo, BadPolarityRejected) {
  const std::string path = tmp_path("pol.csv");
  std::ofstream(path) << "t,x,y,p\n5,0,0,2\n";
  EXPECT_THROW(cmtc::parse_events(path, EventFormat::Csv), cmtc::IoError);
}

TEST(EventIo, EmptyStreamWritesHeaderOnly) {
  EventStream s;
  s.sensor_width = 16;
  s.sensor_height = 8;
  const std::string bpath = tmp_path("empty.evs");
  cmtc::write_events(s, bpath, EventFormat::Binary);
  EXPECT_EQ(std::filesystem::file_size(bpath), 16u);
  EventStream r = cmtc::parse_events(bpath, EventFormat::Binary);
  EXPECT_EQ(r, s);
}

TEST(EventIo, SingleRecordRoundTrip) {
  EventStream s;
  s.sensor_width = 4;
  s.sensor_height = 4;
  s.records.push_back({42, 1, 2, -1});
  for (auto fmt : {EventFormat::Csv, EventFormat::Binary}) {
    const std::string path = tmp_path(fmt == EventFormat::Csv ? "one_rt.csv" : "one_rt.evs");
    cmtc::write_events(s, path, fmt);
    EXPECT_EQ(cmtc::parse_events(path, fmt), s);
  }
}

TEST(EventIo, TenThousandRecordRoundTripBitExact) {
  EventStream s = random_stream(10000, 32, 64, 1234);
  for (auto fmt : {EventFormat::Csv, EventFormat::Binary}) {
    const std::string path = tmp_path(fmt == EventFormat::Csv ? "rt.csv" : "rt.evs");
    cmtc::write_events(s, path, fmt);
    EventStream r = cmtc::parse_events(path, fmt);
    ASSERT_EQ(r.records.size(), s.records.size());
    EXPECT_EQ(r, s);
    // write the parsed stream again: files must be byte-identical
    const std::string path2 = path + ".again";
    cmtc::write_events(r, path2, fmt);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(b1, b2);
  }
}

TEST(EventIo, StableSortOnTies) {
  const std::string path = tmp_path("ties.csv");
  std::ofstream(path) << "# width=8 height=8\nt,x,y,p\n10,1,0,1\n5,2,0,1\n10,3,0,-1\n";
  EventStream s = cmtc::parse_events(path, EventFormat::Csv);
  ASSERT_EQ(s.records.size(), 3u);
  EXPECT_EQ(s.records[0].x, 2);
  EXPECT_EQ(s.records[1].x, 1);  // file order preserved for t == 10
  EXPECT_EQ(s.records[2].x, 3);
}

// --- voxelize ---------------------------------------------------------------

TEST(Voxelize, SingleEventSingleCount) {
  EventStream s;
  s.sensor_width = 8;
  s.sensor_height = 4;
  s.records.push_back({0, 3, 2, 1});
  s.records.push_back({799, 0, 0, -1});  // keeps the stream long enough
  // t0 = 0, window 100: event 0 in frame 0, event 1 in frame 7
  auto fs = cmtc::voxelize<double>(s, 8, 100, 5);
  EXPECT_EQ(fs.frames.shape(), (cmtc::Shape{8, 2, 4, 8}));
  // frames[0, 0, 2, 3] == 1/5
  const auto v = fs.frames.values();
  EXPECT_DOUBLE_EQ(v[(0 * 2 + 0) * 32 + 2 * 8 + 3], 0.2);
  double total = 0;
  for (auto x : v) total += x;
  EXPECT_DOUBLE_EQ(total, 0.4);  // exactly two cells at 0.2
}

TEST(Voxelize, ClampAtCap) {
  EventStream s;
  s.sensor_width = 4;
  s.sensor_height = 4;
  for (int i = 0; i < 7; ++i) s.records.push_back({static_cast<std::uint64_t>(i), 1, 1, 1});
  s.records.push_back({199, 0, 0, -1});
  auto fs = cmtc::voxelize<double>(s, 2, 100, 5);
  EXPECT_DOUBLE_EQ(fs.frames.values()[1 * 4 + 1], 1.0);
}

TEST(Voxelize, ConservesPreClampCounts) {
  EventStream s = random_stream(5000, 16, 16, 77);
  const std::uint64_t t0 = s.records.front().t;
  const std::uint64_t window = 500;
  const std::int64_t T = 6;
  std::vector<std::int64_t> raw;
  auto fs = cmtc::voxelize<double>(s, T, window, 5, &raw);
  std::int64_t raw_total = 0;
  for (auto c : raw) raw_total += c;
  std::int64_t in_range = 0;
  for (const auto& e : s.records) {
    if ((e.t - t0) / window < static_cast<std::uint64_t>(T)) ++in_range;
  }
  EXPECT_EQ(raw_total, in_range);
  for (auto v : fs.frames.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Voxelize, ShortStreamRejectedWithHint) {
  EventStream s;
  s.sensor_width = 4;
  s.sensor_height = 4;
  s.records.push_back({0, 0, 0, 1});
  s.records.push_back({50, 1, 1, 1});
  try {
    cmtc::voxelize<double>(s, 8, 100, 5);
    FAIL() << "expected ValueError";
  } catch (const cmtc::ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("smaller t_window"), std::string::npos);
  }
}

TEST(ResizeFrames, IdentityAndConstant) {
  EventStream s = random_stream(500, 8, 8, 5);
  auto fs = cmtc::voxelize<double>(s, 2, 1000, 5);
  auto same = cmtc::resize_frames(fs, 8, 8);
  EXPECT_EQ(same.frames.values()[10], fs.frames.values()[10]);
  cmtc::FrameStack<double> constant;
  constant.frames = cmtc::Tensor<double>::full({2, 2, 4, 4}, 0.3);
  auto up = cmtc::resize_frames(constant, 9, 7);
  for (auto v : up.frames.values()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(ResizeFrames, DownUpPreservesMeanOfSmoothGradient) {
  // smooth horizontal+vertical ramp
  std::vector<double> vals(1 * 2 * 16 * 16);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        vals[(c * 16 + y) * 16 + x] = (x + y) / 30.0;
  cmtc::FrameStack<double> fs;
  fs.frames = cmtc::Tensor<double>::from({1, 2, 16, 16}, vals);
  auto down = cmtc::resize_frames(fs, 8, 8);
  auto up = cmtc::resize_frames(down, 16, 16);
  double m0 = 0, m1 = 0;
  for (auto v : fs.frames.values()) m0 += v;
  for (auto v : up.frames.values()) m1 += v;
  m0 /= static_cast<double>(fs.frames.numel());
  m1 /= static_cast<double>(up.frames.numel());
  EXPECT_NEAR(m1, m0, 0.02 * std::abs(m0) + 1e-12);
}

// --- synthetic dataset --------------------------------------------------------

TEST(Synth, DeterministicForSameSeed) {
  cmtc::SynthConfig cfg;
  cfg.identities = 2;
  cfg.cameras = 2;
  cfg.clips_per_id_cam = 1;
  cfg.clip_len = 4;
  auto a = cmtc::synth_dataset(cfg);
  auto b = cmtc::synth_dataset(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].stream, b[i].stream);
    EXPECT_EQ(a[i].masks, b[i].masks);
  }
}

TEST(Synth, IdentityParametersDiffer) {
  cmtc::SynthConfig cfg;
  cfg.identities = 16;
  for (int i = 0; i < cfg.identities; ++i) {
    for (int j = i + 1; j < cfg.identities; ++j) {
      EXPECT_FALSE(cmtc::identity_params(cfg, i) == cmtc::identity_params(cfg, j))
          << "ids " << i << " and " << j << " share parameters";
    }
  }
}

TEST(Synth, EventRateMonotonicInGaitSpeed) {
  std::vector<double> speeds{0.6, 0.8, 1.0, 1.4, 2.0};
  std::vector<std::size_t> counts;
  for (double sp : speeds) {
    cmtc::SynthConfig cfg;
    cfg.identities = 2;
    cfg.cameras = 2;
    cfg.clips_per_id_cam = 1;
    cfg.clip_len = 4;
    cfg.speed_scale = sp;
    cfg.noise_scale = 0.0;  // isolate motion-driven events
    auto ds = cmtc::synth_dataset(cfg);
    std::size_t total = 0;
    for (const auto& c : ds) total += c.stream.records.size();
    counts.push_back(total);
  }
  for (std::size_t i = 1; i < counts.size(); ++i) {
    EXPECT_GT(counts[i], counts[i - 1]) << "speed step " << i;
  }
}

TEST(Synth, ClipsHaveSignalAndValidStreams) {
  cmtc::SynthConfig cfg;
  cfg.identities = 2;
  cfg.cameras = 2;
  cfg.clips_per_id_cam = 1;
  auto ds = cmtc::synth_dataset(cfg);
  ASSERT_EQ(ds.size(), 4u);
  for (const auto& c : ds) {
    EXPECT_GT(c.stream.records.size(), 500u);
    cmtc::validate_stream(c.stream, "synth clip");
    std::size_t on = 0;
    for (auto m : c.masks) on += m;
    EXPECT_GT(on, 100u);  // silhouettes visible in every clip
    // voxelizes cleanly at the configured geometry
    auto fs = cmtc::voxelize<float>(c.stream, cfg.clip_len, cfg.t_window_us, 5);
    EXPECT_EQ(fs.frames.dim(0), cfg.clip_len);
  }
}

TEST(Synth, InvalidConfigRejected) {
  cmtc::SynthConfig cfg;
  cfg.identities = 1;
  EXPECT_THROW(cmtc::synth_dataset(cfg), cmtc::ValueError);
  cfg.identities = 2;
  cfg.cameras = 1;
  EXPECT_THROW(cmtc::synth_dataset(cfg), cmtc::ValueError);
}

// --- protocol split ------------------------------------------------------------

TEST(Protocol, FiftyFiftySplit) {
  std::vector<cmtc::ClipLabel> labels;
  for (int id = 0; id < 8; ++id)
    for (int cam = 0; cam < 2; ++cam)
      for (int k = 0; k < 2; ++k) labels.push_back({id, cam});
  auto split = cmtc::protocol_split(labels, 3);
  EXPECT_EQ(split.train_ids.size(), 4u);
  EXPECT_EQ(split.test_ids.size(), 4u);
  EXPECT_EQ(split.train.size(), 16u);
  EXPECT_EQ(split.query.size(), 8u);
  EXPECT_EQ(split.gallery.size(), 8u);
  for (int tid : split.test_ids) {
    bool in_q = false, in_g = false;
    for (auto qi : split.query) in_q |= labels[qi].person_id == tid;
    for (auto gi : split.gallery) in_g |= labels[gi].person_id == tid;
    EXPECT_TRUE(in_q && in_g) << "test id " << tid;
  }
}

TEST(Protocol, DisjointAndCrossCameraOverSeeds) {
  std::vector<cmtc::ClipLabel> labels;
  for (int id = 0; id < 9; ++id)
    for (int cam = 0; cam < 3; ++cam) labels.push_back({id, cam});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto split = cmtc::protocol_split(labels, seed);
    std::set<int> train(split.train_ids.begin(), split.train_ids.end());
    for (int tid : split.test_ids) EXPECT_EQ(train.count(tid), 0u);
    // every query id has a cross-camera gallery clip
    for (auto qi : split.query) {
      bool found = false;
      for (auto gi : split.gallery) {
        found |= labels[gi].person_id == labels[qi].person_id &&
                 labels[gi].camera_id != labels[qi].camera_id;
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(Protocol, TooFewIdentitiesRejected) {
  std::vector<cmtc::ClipLabel> labels{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}, {2, 1}};
  EXPECT_THROW(cmtc::protocol_split(labels, 1), cmtc::ValueError);
}

// --- dataset directory ----------------------------------------------------------

TEST(Dataset, SaveLoadRoundTrip) {
  cmtc::SynthConfig cfg;
  cfg.identities = 2;
  cfg.cameras = 2;
  cfg.clips_per_id_cam = 1;
  cfg.clip_len = 4;
  auto ds = cmtc::synth_dataset(cfg);
  const std::string dir = tmp_path("dataset_rt");
  std::filesystem::remove_all(dir);
  cmtc::save_dataset(ds, cfg, dir, false);

  auto manifest = cmtc::load_manifest(dir);
  EXPECT_EQ(manifest.items.size(), ds.size());
  EXPECT_EQ(manifest.sensor_width, cfg.sensor_width);

  auto loaded = cmtc::load_dataset<float>(dir, 5);
  ASSERT_EQ(loaded.size(), ds.size());
  EXPECT_EQ(loaded[0].person_id, ds[0].person_id);
  EXPECT_EQ(loaded[0].masks, ds[0].masks);
  EXPECT_EQ(loaded[0].frames.frames.shape(), (cmtc::Shape{4, 2, 64, 32}));

  // refuses to clobber without force
  EXPECT_THROW(cmtc::save_dataset(ds, cfg, dir, false), cmtc::ValueError);
  cmtc::save_dataset(ds, cfg, dir, true);
}
