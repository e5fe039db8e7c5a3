// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
// The synthetic benchmark (criteria 6 and 7) trains 15 desk-preset models,
// so this binary runs for tens of minutes; everything else is seconds.

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "cmtc/runner.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using cmtc::Tensor;
using D = Tensor<double>;
using Clock = std::chrono::steady_clock;

namespace {

namespace fs = std::filesystem;

void report(int criterion, const std::string& what, bool ok) {
  std::printf("[ACCEPTANCE] criterion %d (%s): %s\n", criterion, what.c_str(),
              ok ? "PASS" : "FAIL");
  std::fflush(stdout);
}

std::string tmp_dir(const std::string& name) {
  const std::string d = ::testing::TempDir() + "acceptance_" + name;
  fs::remove_all(d);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

double rand_dim(cmtc::Rng& rng, int lo, int hi) {
  return static_cast<double>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
}

// FD with a random projection of the output so gradients are non-uniform.
double fd_weighted(const std::function<D()>& out_fn, const std::vector<D*>& leaves,
                   std::uint64_t seed, double h = 1e-5) {
  D probe;
  bool init = false;
  auto loss = [&]() mutable {
    D out = out_fn();
    if (!init) {
      cmtc::Rng rng(seed ^ 0xABCDEF);
      probe = D::randn(out.shape(), rng);
      init = true;
    }
    return cmtc::sum(cmtc::mul(out, probe));
  };
  return cmtc_test::fd_check(loss, leaves, h).max_rel_err;
}

}  // namespace

// --------------------------------------------------------------------------
// Criterion 1: finite-difference gradient suite, 100 randomized trials per
// differentiable op (< 1e-4) and per composite block (< 1e-3), under 2 min.
// --------------------------------------------------------------------------
TEST(Acceptance, C1_GradientSuite) {
  const auto t0 = Clock::now();
  double worst_primitive = 0, worst_composite = 0;

  for (int trial = 0; trial < 100; ++trial) {
    const auto seed = static_cast<std::uint64_t>(trial);
    cmtc::Rng rng(cmtc::Rng::hash_combine(7, seed));

    {  // conv2d
      const std::int64_t Ci = static_cast<std::int64_t>(rand_dim(rng, 1, 3));
      const std::int64_t O = static_cast<std::int64_t>(rand_dim(rng, 1, 4));
      const std::int64_t H = static_cast<std::int64_t>(rand_dim(rng, 4, 7));
      const std::int64_t W = static_cast<std::int64_t>(rand_dim(rng, 4, 7));
      const std::int64_t k = rng.uniform() < 0.3 ? 1 : 3;
      const std::int64_t stride = 1 + static_cast<std::int64_t>(rng.below(2));
      const std::int64_t pad = static_cast<std::int64_t>(rng.below(2));
      D x = D::randn({2, Ci, H, W}, rng);
      D w = D::randn({O, Ci, k, k}, rng, 0.5);
      D b = D::randn({O}, rng, 0.1);
      worst_primitive = std::max(
          worst_primitive,
          fd_weighted([&] { return cmtc::conv2d(x, w, b, stride, pad); }, {&x, &w, &b}, seed));
    }
    {  // pooling and upsampling
      D x = D::randn({2, 2, 6, 5}, rng);
      worst_primitive = std::max(
          worst_primitive, fd_weighted([&] { return cmtc::avg_pool2d(x, 2, 2); }, {&x}, seed));
      worst_primitive = std::max(
          worst_primitive, fd_weighted([&] { return cmtc::global_avg_pool2d(x); }, {&x}, seed));
      worst_primitive = std::max(
          worst_primitive,
          fd_weighted([&] { return cmtc::upsample_bilinear(x, 9, 4); }, {&x}, seed));
    }
    {  // softmax / matmul
      D x = D::randn({3, 5}, rng, 2.0);
      worst_primitive = std::max(worst_primitive,
                                 fd_weighted([&] { return cmtc::softmax(x, 1); }, {&x}, seed));
      D a = D::randn({3, 4}, rng);
      D b = D::randn({4, 2}, rng);
      worst_primitive = std::max(worst_primitive,
                                 fd_weighted([&] { return cmtc::matmul(a, b); }, {&a, &b}, seed));
    }
    {  // activations (inputs held away from the leaky kink)
      std::vector<double> vals(12);
      for (auto& v : vals) {
        v = rng.normal();
        if (std::abs(v) < 0.05) v += (v >= 0 ? 0.1 : -0.1);
      }
      D x = D::from({3, 4}, vals);
      worst_primitive = std::max(
          worst_primitive, fd_weighted([&] { return cmtc::leaky_relu(x, 0.1); }, {&x}, seed));
      worst_primitive = std::max(worst_primitive,
                                 fd_weighted([&] { return cmtc::sigmoid(x); }, {&x}, seed));
    }
    {  // elementwise with broadcasting
      D a = D::randn({2, 3, 4}, rng);
      D b = D::randn({3, 1}, rng);
      std::vector<double> bb(b.values().begin(), b.values().end());
      for (auto& v : bb) v = (v >= 0 ? 1.0 : -1.0) * (std::abs(v) + 0.5);  // away from 0 for div
      D bd = D::from({3, 1}, bb);
      worst_primitive =
          std::max(worst_primitive, fd_weighted([&] { return cmtc::add(a, b); }, {&a, &b}, seed));
      worst_primitive =
          std::max(worst_primitive, fd_weighted([&] { return cmtc::mul(a, b); }, {&a, &b}, seed));
      worst_primitive = std::max(worst_primitive,
                                 fd_weighted([&] { return cmtc::div(a, bd); }, {&a, &bd}, seed));
    }
    {  // concat + slice
      D a = D::randn({2, 3}, rng);
      D b = D::randn({2, 2}, rng);
      worst_primitive = std::max(
          worst_primitive,
          fd_weighted([&] { return cmtc::slice(cmtc::concat<double>({a, b}, 1), 1, 1, 3); },
                      {&a, &b}, seed));
    }
    {  // reductions (max routing re-tried if a tie sits under the probe)
      const double err = cmtc_test::fd_check_best(
          [&](std::uint64_t s2) {
            cmtc::Rng r2(cmtc::Rng::hash_combine(seed, s2));
            D x = D::randn({2, 3, 4}, r2);
            return std::max(
                fd_weighted([&] { return cmtc::reduce_mean_axis(x, 1); }, {&x}, s2, 1e-6),
                fd_weighted([&] { return cmtc::reduce_max_axis(x, 1); }, {&x}, s2, 1e-6));
          },
          1e-4, 3);
      worst_primitive = std::max(worst_primitive, err);
    }
    {  // batch norm, cross entropy, mse, triplet
      cmtc::nn::BatchNorm1d<double> bn(3);
      D x = D::randn({5, 3}, rng);
      worst_primitive = std::max(
          worst_primitive,
          fd_weighted([&] { return bn(x, true); }, {&x, &bn.gamma, &bn.beta}, seed));
      D logits = D::randn({4, 3}, rng);
      worst_primitive = std::max(
          worst_primitive,
          cmtc_test::fd_check([&] { return cmtc::cross_entropy(logits, {0, 2, 1, 0}); },
                              {&logits})
              .max_rel_err);
      D p = D::randn({3, 4}, rng);
      D q = D::randn({3, 4}, rng);
      worst_primitive = std::max(
          worst_primitive,
          cmtc_test::fd_check([&] { return cmtc::mse(p, q); }, {&p, &q}).max_rel_err);
      const double tri_err = cmtc_test::fd_check_best(
          [&](std::uint64_t s2) {
            cmtc::Rng r2(cmtc::Rng::hash_combine(seed ^ 0x77, s2));
            D emb = D::randn({6, 3}, r2);
            return cmtc_test::fd_check(
                       [&] { return cmtc::batch_hard_triplet(emb, {0, 0, 1, 1, 2, 2}, 0.4); },
                       {&emb}, 1e-6)
                .max_rel_err;
          },
          1e-4, 3);
      worst_primitive = std::max(worst_primitive, tri_err);
    }
  }

  // composite blocks
  for (int trial = 0; trial < 100; ++trial) {
    const auto seed = static_cast<std::uint64_t>(5000 + trial);
    {  // EventNet
      const double err = cmtc_test::fd_check_best(
          [&](std::uint64_t s) {
            cmtc::EventNet<double> net(2, {2, 3, 4}, 0.1, cmtc::Rng(s));
            cmtc::Rng rng(s + 1);
            D frames = D::rand_uniform({1, 2, 8, 8}, rng, 0.0, 1.0);
            D target = D::rand_uniform({1, 1, 8, 8}, rng, 0.0, 1.0);
            cmtc::nn::ParamMap<double> params;
            net.collect("net", params);
            std::vector<D*> leaves;
            for (auto& p : params) leaves.push_back(p.tensor);
            return cmtc_test::fd_check([&] { return cmtc::mse(net(frames), target); }, leaves,
                                       1e-6)
                .max_rel_err;
          },
          1e-3, 3);
      worst_composite = std::max(worst_composite, err);
    }
    {  // CMS + CMF
      const double err = cmtc_test::fd_check_best(
          [&](std::uint64_t s) {
            cmtc::CmsBlock<double> cms(4, 0.1, cmtc::Rng(s).fork(1));
            cmtc::CmfBlock<double> cmf(4, 0.1, cmtc::Rng(s).fork(2));
            cmtc::Rng rng(s + 1);
            D e = D::randn({1, 4, 2, 2}, rng);
            D a = D::randn({1, 4, 2, 2}, rng);
            cmtc::nn::ParamMap<double> params;
            cms.collect("cms", params);
            cmf.collect("cmf", params);
            std::vector<D*> leaves;
            for (auto& p : params) leaves.push_back(p.tensor);
            return cmtc_test::fd_check(
                       [&] { return cmtc::sum(cmtc::mc_forward(e, a, cms, cmf).fused); }, leaves,
                       1e-6)
                .max_rel_err;
          },
          1e-3, 3);
      worst_composite = std::max(worst_composite, err);
    }
    {  // CTA + CTI
      const double err = cmtc_test::fd_check_best(
          [&](std::uint64_t s) {
            cmtc::CtaBlock<double> cta_b(3, 0.1, cmtc::Rng(s).fork(1));
            cmtc::CtiBlock<double> cti_e(3, 0.1, cmtc::Rng(s).fork(2));
            cmtc::CtiBlock<double> cti_a(3, 0.1, cmtc::Rng(s).fork(3));
            cmtc::Rng rng(s + 1);
            D psi = D::randn({1, 6, 2, 2}, rng);
            D ei = D::randn({1, 3, 2, 2}, rng);
            D ej = D::randn({1, 3, 2, 2}, rng);
            D ai = D::randn({1, 3, 2, 2}, rng);
            D aj = D::randn({1, 3, 2, 2}, rng);
            cmtc::nn::ParamMap<double> params;
            cta_b.collect("cta", params);
            cti_e.collect("cti_e", params);
            cti_a.collect("cti_a", params);
            std::vector<D*> leaves;
            for (auto& p : params) leaves.push_back(p.tensor);
            return cmtc_test::fd_check(
                       [&] {
                         auto att = cmtc::cta(ei, ej, ai, aj, cta_b);
                         return cmtc::sum(cmtc::tc_forward(psi, att, cti_e, cti_a));
                       },
                       leaves, 1e-6)
                .max_rel_err;
          },
          1e-3, 3);
      worst_composite = std::max(worst_composite, err);
    }
    {  // reid_loss
      const double err = cmtc_test::fd_check_best(
          [&](std::uint64_t s) {
            cmtc::Rng rng(cmtc::Rng::hash_combine(seed, s));
            D emb = D::randn({4, 3}, rng);
            D logits = D::randn({4, 2}, rng);
            return cmtc_test::fd_check(
                       [&] { return cmtc::reid_loss(emb, logits, {0, 0, 1, 1}, 0.5).total; },
                       {&emb, &logits}, 1e-6)
                .max_rel_err;
          },
          1e-3, 3);
      worst_composite = std::max(worst_composite, err);
    }
  }

  const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool ok = worst_primitive < 1e-4 && worst_composite < 1e-3 && elapsed < 120.0;
  report(1, "gradient suite", ok);
  EXPECT_LT(worst_primitive, 1e-4);
  EXPECT_LT(worst_composite, 1e-3);
  EXPECT_LT(elapsed, 120.0) << "gradient suite took " << elapsed << " s";
}

// --------------------------------------------------------------------------
// Criterion 2: all attention matrices row-stochastic within 1e-6 over 1000
// random inputs.
// --------------------------------------------------------------------------
TEST(Acceptance, C2_AttentionRowStochastic) {
  bool ok = true;
  double worst = 0;
  cmtc::Rng rng(42);
  cmtc::CmsBlock<double> cms(6, 0.1, cmtc::Rng(1).fork(1));
  cmtc::CtaBlock<double> cta_b(6, 0.1, cmtc::Rng(1).fork(2));
  auto check = [&](const D& attn) {
    const std::int64_t N = attn.dim(0);
    for (std::int64_t r = 0; r < N; ++r) {
      double s = 0;
      for (std::int64_t c = 0; c < N; ++c) {
        const double v = attn.values()[r * N + c];
        ok &= v > 0.0 && v < 1.0;
        s += v;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  };
  for (int i = 0; i < 500; ++i) {
    D e = D::randn({1, 6, 3, 3}, rng, 2.0);
    D a = D::randn({1, 6, 3, 3}, rng, 2.0);
    auto out = cmtc::cms(e, a, cmtc::diff_modality(e, a), cms);
    check(out.attn_event);
    check(out.attn_aux);
  }
  for (int i = 0; i < 500; ++i) {
    D ei = D::randn({1, 6, 3, 3}, rng, 2.0);
    D ej = D::randn({1, 6, 3, 3}, rng, 2.0);
    D ai = D::randn({1, 6, 3, 3}, rng, 2.0);
    D aj = D::randn({1, 6, 3, 3}, rng, 2.0);
    auto out = cmtc::cta(ei, ej, ai, aj, cta_b);
    check(out.t1);
    check(out.t2);
  }
  ok &= worst < 1e-6;
  report(2, "attention normalization", ok);
  EXPECT_LT(worst, 1e-6);
  EXPECT_TRUE(ok);
}

// --------------------------------------------------------------------------
// Criterion 3: algebraic identities at 1e-12 plus exact channel arithmetic.
// --------------------------------------------------------------------------
TEST(Acceptance, C3_AlgebraicIdentities) {
  cmtc::Rng rng(77);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    D e = D::randn({1, 5, 3, 2}, rng);
    D a = D::randn({1, 5, 3, 2}, rng);
    D d = cmtc::diff_modality(e, a);
    D nd = cmtc::diff_modality(a, e);
    D back = cmtc::add(d, a);
    for (std::int64_t k = 0; k < d.numel(); ++k) {
      worst = std::max(worst, std::abs(d.values()[static_cast<std::size_t>(k)] +
                                       nd.values()[static_cast<std::size_t>(k)]));
      worst = std::max(worst, std::abs(back.values()[static_cast<std::size_t>(k)] -
                                       e.values()[static_cast<std::size_t>(k)]));
    }
  }
  // Eq. 11 distributivity through the gate
  cmtc::CtiBlock<double> cti_b(4, 0.1, cmtc::Rng(5));
  for (int i = 0; i < 100; ++i) {
    D psi = D::randn({1, 8, 2, 3}, rng);
    D tilde = D::randn({1, 4, 2, 3}, rng);
    D got = cmtc::cti(psi, tilde, cti_b);
    D lifted = cti_b.lift(tilde);
    D gate = cti_b.gate(
        cmtc::concat<double>({cmtc::global_avg_pool2d(psi), cmtc::global_avg_pool2d(lifted)}, 1));
    D expect = cmtc::mul(cmtc::add(psi, lifted), gate);
    for (std::int64_t k = 0; k < got.numel(); ++k) {
      worst = std::max(worst, std::abs(got.values()[static_cast<std::size_t>(k)] -
                                       expect.values()[static_cast<std::size_t>(k)]));
    }
  }
  // channel-count arithmetic
  cmtc::CmsBlock<double> cms(4, 0.1, cmtc::Rng(6).fork(1));
  cmtc::CmfBlock<double> cmf(4, 0.1, cmtc::Rng(6).fork(2));
  cmtc::CtaBlock<double> cta_b(4, 0.1, cmtc::Rng(6).fork(3));
  cmtc::CtiBlock<double> ce(4, 0.1, cmtc::Rng(6).fork(4));
  cmtc::CtiBlock<double> ca(4, 0.1, cmtc::Rng(6).fork(5));
  D e = D::randn({1, 4, 2, 2}, rng);
  D a = D::randn({1, 4, 2, 2}, rng);
  auto mc = cmtc::mc_forward(e, a, cms, cmf);
  auto att = cmtc::cta(e, e, a, a, cta_b);
  D phi = cmtc::tc_forward(mc.fused, att, ce, ca);
  const bool channels_ok = mc.fused.dim(1) == 8 && phi.dim(1) == 16;

  const bool ok = worst < 1e-12 && channels_ok;
  report(3, "algebraic identities", ok);
  EXPECT_LT(worst, 1e-12);
  EXPECT_TRUE(channels_ok);
}

// --------------------------------------------------------------------------
// Criterion 4: cmc_map against the counting oracle on 200 random instances
// plus the closed-form hand case.
// --------------------------------------------------------------------------
TEST(Acceptance, C4_MetricOracle) {
  double worst = 0;
  cmtc::Rng rng(4242);
  int compared = 0;
  for (int instance = 0; instance < 200; ++instance) {
    const int nq = 1 + static_cast<int>(rng.below(10));
    const int ng = 2 + static_cast<int>(rng.below(49));
    const int n_ids = 1 + static_cast<int>(rng.below(6));
    const int n_cams = 2 + static_cast<int>(rng.below(3));
    std::vector<cmtc::ClipEmbedding> q, g;
    for (int i = 0; i < nq; ++i) {
      q.push_back({{}, static_cast<int>(rng.below(n_ids)), static_cast<int>(rng.below(n_cams))});
    }
    for (int i = 0; i < ng; ++i) {
      g.push_back({{}, static_cast<int>(rng.below(n_ids)), static_cast<int>(rng.below(n_cams))});
    }
    cmtc::DistanceMatrix dist;
    dist.rows = static_cast<std::size_t>(nq);
    dist.cols = static_cast<std::size_t>(ng);
    dist.d.resize(dist.rows * dist.cols);
    for (auto& v : dist.d) v = rng.uniform(0.0, 2.0);
    if (ng > 3) {
      dist.d[0] = dist.d[1];  // exercise the index tie-break
    }
    auto oracle = cmtc_test::brute_force_cmc_map(dist, q, g);
    if (oracle.used == 0) continue;
    auto rep = cmtc::cmc_map(dist, q, g);
    worst = std::max({worst, std::abs(rep.rank1 - oracle.rank1),
                      std::abs(rep.rank5 - oracle.rank5), std::abs(rep.rank10 - oracle.rank10),
                      std::abs(rep.map - oracle.map)});
    ++compared;
  }
  // hand case: gallery ids [1,2,1] at distances [0.1,0.2,0.3]
  std::vector<cmtc::ClipEmbedding> q{{{}, 1, 0}};
  std::vector<cmtc::ClipEmbedding> g{{{}, 1, 1}, {{}, 2, 1}, {{}, 1, 1}};
  cmtc::DistanceMatrix dist;
  dist.rows = 1;
  dist.cols = 3;
  dist.d = {0.1, 0.2, 0.3};
  auto rep = cmtc::cmc_map(dist, q, g);
  const double expect_ap = (1.0 / 1.0 + 2.0 / 3.0) / 2.0;
  const bool hand_ok = rep.rank1 == 1.0 && std::abs(rep.map - expect_ap) < 1e-12;

  const bool ok = worst < 1e-9 && hand_ok && compared > 150;
  report(4, "metric oracle", ok);
  EXPECT_LT(worst, 1e-9);
  EXPECT_TRUE(hand_ok);
  EXPECT_GT(compared, 150);
}

// --------------------------------------------------------------------------
// Criterion 5: event I/O round-trips bit-exact on 10k records; voxelize
// conserves pre-clamp counts exactly.
// --------------------------------------------------------------------------
TEST(Acceptance, C5_EventIo) {
  cmtc::Rng rng(555);
  cmtc::EventStream s;
  s.sensor_width = 32;
  s.sensor_height = 64;
  std::uint64_t t = 0;
  for (int i = 0; i < 10000; ++i) {
    t += rng.below(40);
    s.records.push_back({t, static_cast<std::uint16_t>(rng.below(32)),
                         static_cast<std::uint16_t>(rng.below(64)),
                         static_cast<std::int8_t>(rng.uniform() < 0.5 ? 1 : -1)});
  }
  bool ok = true;
  for (auto fmt : {cmtc::EventFormat::Binary, cmtc::EventFormat::Csv}) {
    const std::string p1 = ::testing::TempDir() + "acc_events_a";
    const std::string p2 = ::testing::TempDir() + "acc_events_b";
    cmtc::write_events(s, p1, fmt);
    auto r = cmtc::parse_events(p1, fmt);
    ok &= (r == s);
    cmtc::write_events(r, p2, fmt);
    ok &= slurp(p1) == slurp(p2);
  }

  std::vector<std::int64_t> raw;
  cmtc::voxelize<double>(s, 8, (t / 8) + 1, 5, &raw);
  std::int64_t raw_total = 0;
  for (auto c : raw) raw_total += c;
  const std::uint64_t window = (t / 8) + 1;
  std::int64_t in_range = 0;
  const std::uint64_t t0 = s.records.front().t;
  for (const auto& e : s.records) in_range += ((e.t - t0) / window) < 8;
  ok &= raw_total == in_range;

  report(5, "event I/O and voxel conservation", ok);
  EXPECT_TRUE(ok);
}

// --------------------------------------------------------------------------
// Criteria 6 and 7 share the benchmark table: desk dataset, five ablation
// configurations, three seeds each. The three full-configuration runs are
// timed separately for the budget check.
// --------------------------------------------------------------------------
namespace {

struct BenchTable {
  std::map<std::string, std::vector<double>> rank1;
  std::map<std::string, std::vector<std::string>> run_dirs;
  double full_seconds = 0;
  std::string data_dir;

  double median_of(const std::string& name) const {
    auto v = rank1.at(name);
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  }
};

const BenchTable& bench() {
  static BenchTable table = [] {
    BenchTable t;
    cmtc::RunConfig cfg = cmtc::RunConfig::preset("desk");
    cfg.train.checkpoint_interval = 0;
    t.data_dir = tmp_dir("bench_data");
    cmtc::run_synth(cfg, t.data_dir, false);

    const std::array<const char*, 5> names = {"full", "baseline", "eventnet", "mc", "tc"};
    for (const char* name : names) {
      const auto start = Clock::now();
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        cmtc::RunConfig run_cfg = cfg;
        run_cfg.seed = seed;
        run_cfg.ablation = cmtc::AblationConfig::from_name(name);
        const std::string out =
            tmp_dir(std::string("bench_") + name + "_" + std::to_string(seed));
        auto final_row = cmtc::run_train(run_cfg, t.data_dir, out, true);
        t.rank1[name].push_back(final_row.rank1);
        t.run_dirs[name].push_back(out);
      }
      if (std::string(name) == "full") {
        t.full_seconds = std::chrono::duration<double>(Clock::now() - start).count();
      }
    }
    return t;
  }();
  return table;
}

}  // namespace

TEST(Acceptance, C6_SyntheticBenchmark) {
  const auto& t = bench();
  const double med = t.median_of("full");
  const bool ok = med >= 0.375 && t.full_seconds <= 900.0;
  std::printf("  full-config rank1 per seed:");
  for (double v : t.rank1.at("full")) std::printf(" %.4f", v);
  std::printf("  (median %.4f, %.0f s for 3 runs)\n", med, t.full_seconds);
  report(6, "synthetic benchmark rank1 >= 0.375", ok);
  EXPECT_GE(med, 0.375);
  EXPECT_LE(t.full_seconds, 900.0);
}

TEST(Acceptance, C7_AblationTrend) {
  const auto& t = bench();
  const double base = t.median_of("baseline");
  const double mc = t.median_of("mc");
  const double tc = t.median_of("tc");
  const double evn = t.median_of("eventnet");
  const double full = t.median_of("full");
  std::printf("  medians: baseline=%.4f eventnet=%.4f mc=%.4f tc=%.4f full=%.4f\n", base, evn, mc,
              tc, full);
  constexpr double kTol = 0.01;  // one rank-1 point
  const bool ok = full >= mc - kTol && mc >= base - kTol && full >= tc - kTol &&
                  tc >= base - kTol && full > base;
  report(7, "ablation ordering trend", ok);
  EXPECT_GE(full, mc - kTol);
  EXPECT_GE(mc, base - kTol);
  EXPECT_GE(full, tc - kTol);
  EXPECT_GE(tc, base - kTol);
  EXPECT_GT(full, base);
}

// Training-curve spec example: the per-epoch training loss, median across
// the three benchmark seeds, strictly decreases over the first 10 epochs.
TEST(Acceptance, TrainingLossDecreasesOverFirstTenEpochs) {
  const auto& t = bench();
  std::vector<std::vector<double>> losses;  // per seed, per epoch
  for (const auto& dir : t.run_dirs.at("full")) {
    std::ifstream f(dir + "/metrics.csv");
    std::string line;
    std::getline(f, line);  // header
    std::vector<double> curve;
    while (std::getline(f, line)) {
      // epoch,id_loss,triplet_loss,total_loss,...
      std::size_t pos = 0;
      for (int c = 0; c < 3; ++c) pos = line.find(',', pos) + 1;
      curve.push_back(std::stod(line.substr(pos)));
    }
    losses.push_back(std::move(curve));
  }
  ASSERT_EQ(losses.size(), 3u);
  bool strictly_decreasing = true;
  double prev = 1e300;
  for (int epoch = 0; epoch < 10; ++epoch) {
    std::vector<double> at_epoch{losses[0][epoch], losses[1][epoch], losses[2][epoch]};
    std::sort(at_epoch.begin(), at_epoch.end());
    const double med = at_epoch[1];
    if (med >= prev) strictly_decreasing = false;
    prev = med;
  }
  EXPECT_TRUE(strictly_decreasing);
}

// --------------------------------------------------------------------------
// Criterion 8: bit-identical metrics files when a command re-runs with the
// same seed and config.
// --------------------------------------------------------------------------
TEST(Acceptance, C8_Determinism) {
  cmtc::RunConfig cfg = cmtc::RunConfig::preset("smoke");
  cfg.seed = 17;
  bool ok = true;

  const std::string data_a = tmp_dir("det_data_a");
  const std::string data_b = tmp_dir("det_data_b");
  cmtc::run_synth(cfg, data_a, false);
  cmtc::run_synth(cfg, data_b, false);
  for (const auto& e : fs::recursive_directory_iterator(data_a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), data_a);
    ok &= slurp(e.path().string()) == slurp((fs::path(data_b) / rel).string());
  }

  const std::string run_a = tmp_dir("det_run_a");
  const std::string run_b = tmp_dir("det_run_b");
  cmtc::run_train(cfg, data_a, run_a, false);
  cmtc::run_train(cfg, data_a, run_b, false);
  for (const char* f : {"metrics.csv", "report.json", "report.csv", "rankings.csv",
                        "eventnet_pretrain.csv"}) {
    ok &= slurp(run_a + "/" + f) == slurp(run_b + "/" + f);
  }

  const std::string ev_a = tmp_dir("det_ev_a");
  const std::string ev_b = tmp_dir("det_ev_b");
  cmtc::run_eval(cfg, run_a + "/checkpoints/epoch_0001.ckpt", data_a, ev_a, false);
  cmtc::run_eval(cfg, run_a + "/checkpoints/epoch_0001.ckpt", data_a, ev_b, false);
  ok &= slurp(ev_a + "/report.json") == slurp(ev_b + "/report.json");
  ok &= slurp(ev_a + "/embeddings.ckpt") == slurp(ev_b + "/embeddings.ckpt");

  report(8, "determinism of metrics files", ok);
  EXPECT_TRUE(ok);
}

// --------------------------------------------------------------------------
// Criterion 9: EventNet pretraining halves the loss on a fixed batch within
// 50 steps and keeps every output strictly inside (0,1).
// --------------------------------------------------------------------------
TEST(Acceptance, C9_EventNetSanity) {
  cmtc::SynthConfig scfg;  // desk-scale geometry
  scfg.identities = 2;
  scfg.cameras = 2;
  scfg.clips_per_id_cam = 1;
  auto ds = cmtc::synth_dataset(scfg);

  std::vector<cmtc::Tensor<float>> frame_parts, target_parts;
  for (const auto& c : ds) {
    auto fs_ = cmtc::voxelize<float>(c.stream, scfg.clip_len, scfg.t_window_us, 5);
    frame_parts.push_back(fs_.frames);
    target_parts.push_back(cmtc::contour_targets_for_clip<float>(
        c.masks, scfg.clip_len, scfg.sensor_height, scfg.sensor_width));
  }
  auto frames = cmtc::concat(frame_parts, 0);
  auto target = cmtc::concat(target_parts, 0);

  cmtc::EventNet<float> net(2, {16, 32, 64}, 0.1, cmtc::Rng(9));
  cmtc::PerceptualExtractor<float> ext(9);
  cmtc::nn::ParamMap<float> params;
  net.collect("net", params);
  cmtc::AdamConfig acfg;
  acfg.lr = 1e-3;
  cmtc::Adam<float> opt(params, acfg);

  double first = 0, last = 0;
  bool range_ok = true;
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    cmtc::Tape<float> tape;
    double value = 0;
    {
      cmtc::GradScope<float> scope(tape);
      auto aux = net(frames);
      for (float v : aux.values()) range_ok &= v > 0.0f && v < 1.0f;
      auto loss = cmtc::eventnet_loss(aux, target, ext, 0.1);
      value = static_cast<double>(loss.total.item());
      tape.backward(loss.total);
    }
    opt.step();
    if (step == 0) first = value;
    last = value;
  }
  const bool ok = last <= 0.5 * first && range_ok;
  std::printf("  pretraining loss: %.6f -> %.6f over 50 steps\n", first, last);
  report(9, "eventnet sanity", ok);
  EXPECT_LE(last, 0.5 * first);
  EXPECT_TRUE(range_ok);
}
