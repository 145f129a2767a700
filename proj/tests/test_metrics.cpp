#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fusedmad/bench.hpp"
#include "oracles.hpp"

using namespace fusedmad;
using namespace fusedmad::metrics;
namespace fs = std::filesystem;

namespace {

struct ScoreDraw {
  std::vector<double> s;
  std::vector<Truth> t;
};

ScoreDraw random_draw(Rng& rng, std::size_t n, bool ties) {
  ScoreDraw d;
  for (std::size_t i = 0; i < n; ++i) {
    d.t.push_back(i == 0 ? Truth::Morph : i == 1 ? Truth::BonaFide : rng.uniform() < 0.4 ? Truth::Morph : Truth::BonaFide);
    const double shift = d.t.back() == Truth::Morph ? 0.7 : 0.0;
    d.s.push_back(ties ? std::round(rng.uniform(0, 6) + shift * 3) : rng.normal(shift, 1.0));
  }
  return d;
}

std::vector<Truth> swapped(const std::vector<Truth>& t) {
  std::vector<Truth> out;
  for (auto x : t) out.push_back(x == Truth::Morph ? Truth::BonaFide : Truth::Morph);
  return out;
}

}  // namespace

TEST(Det, MatchesOracleAndIsMonotone) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = random_draw(rng, 2 + rng.index(50), trial % 2 == 0);
    const auto curve = det_curve(d.s, d.t);
    const auto ref = oracle::det(d.s, d.t);
    ASSERT_EQ(curve.points, ref);
    EXPECT_EQ(curve.points.front().apcer, 0.0);
    EXPECT_EQ(curve.points.front().bpcer, 1.0);
    EXPECT_EQ(curve.points.back().apcer, 1.0);
    EXPECT_EQ(curve.points.back().bpcer, 0.0);
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      EXPECT_LT(curve.points[i - 1].threshold, curve.points[i].threshold);
      EXPECT_GE(curve.points[i].apcer, curve.points[i - 1].apcer);
      EXPECT_LE(curve.points[i].bpcer, curve.points[i - 1].bpcer);
    }
    for (double delta : {0.01, 0.1, 0.3}) {
      EXPECT_EQ(apcer_at_bpcer(curve, delta), oracle::apcer_at_bpcer(d.s, d.t, delta));
      EXPECT_EQ(bpcer_at_apcer(curve, delta), oracle::bpcer_at_apcer(d.s, d.t, delta));
    }
  }
}

TEST(Det, DegenerateInputs) {
  const std::vector<double> s(4, 0.3);
  const std::vector<Truth> t{Truth::Morph, Truth::BonaFide, Truth::Morph, Truth::BonaFide};
  const auto curve = det_curve(s, t);
  ASSERT_EQ(curve.points.size(), 3u);
  EXPECT_EQ(curve.points[1], (DetPoint{0.3, 0.0, 1.0}));
  EXPECT_THROW(det_curve({1, 2}, {Truth::Morph, Truth::Morph}), MetricError);
  EXPECT_THROW(det_curve({1, std::nan("")}, {Truth::Morph, Truth::BonaFide}), MetricError);
  EXPECT_THROW(det_curve({1}, {Truth::Morph, Truth::BonaFide}), MetricError);
}

TEST(OperatingPoints, PerfectSeparationAndFallback) {
  const auto sep = det_curve({0.1, 0.2, 0.8, 0.9}, {Truth::BonaFide, Truth::BonaFide, Truth::Morph, Truth::Morph});
  EXPECT_EQ(apcer_at_bpcer(sep, 0.1), 0.0);
  EXPECT_EQ(bpcer_at_apcer(sep, 0.1), 0.0);
  const auto eer = det_eer(sep);
  EXPECT_EQ(eer.apcer, 0.0);
  EXPECT_EQ(eer.bpcer, 0.0);
  // Every bona fide sample scores above every morph: any threshold with
  // BPCER <= 0.1 puts all morphs below it.
  const auto inverted = det_curve({0.9, 0.8, 0.2, 0.1}, {Truth::BonaFide, Truth::BonaFide, Truth::Morph, Truth::Morph});
  EXPECT_EQ(apcer_at_bpcer(inverted, 0.1), 1.0);
  EXPECT_THROW(apcer_at_bpcer(sep, 0.0), MetricError);
  EXPECT_THROW(bpcer_at_apcer(sep, 1.0), MetricError);
}

TEST(OperatingPoints, InvariantUnderIncreasingTransforms) {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const auto d = random_draw(rng, 60, trial % 2 == 1);
    std::vector<double> squashed;
    for (double v : d.s) squashed.push_back(1.0 / (1.0 + std::exp(-v)));
    const auto a = det_curve(d.s, d.t), b = det_curve(squashed, d.t);
    for (double delta : {0.05, 0.1, 0.2}) {
      EXPECT_EQ(apcer_at_bpcer(a, delta), apcer_at_bpcer(b, delta));
      EXPECT_EQ(bpcer_at_apcer(a, delta), bpcer_at_apcer(b, delta));
    }
  }
}

TEST(OperatingPoints, MirroredDataSwapsRoles) {
  // Negating the scores and swapping the labels turns apcer@bpcer into
  // bpcer@apcer, provided no ties (the >= boundary is one-sided).
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const auto d = random_draw(rng, 80, false);
    std::vector<double> neg;
    for (double v : d.s) neg.push_back(-v);
    const auto a = det_curve(d.s, d.t), b = det_curve(neg, swapped(d.t));
    for (double delta : {0.05, 0.1, 0.2}) {
      EXPECT_EQ(apcer_at_bpcer(a, delta), bpcer_at_apcer(b, delta));
      EXPECT_EQ(oracle::apcer_at_bpcer(d.s, d.t, delta), oracle::bpcer_at_apcer(neg, swapped(d.t), delta));
    }
  }
}

TEST(Protocol, ParseAndErrors) {
  std::istringstream ok("# comment\nname: p1\nbona_fide:\n  a.pgm\nmorph:\n  m.pgm\npairs:\n  a.pgm live.pgm\n  m.pgm live.pgm\n");
  const auto m = bench::parse_protocol(ok, "p.txt", "base");
  EXPECT_EQ(m.name, "p1");
  EXPECT_EQ(m.bona_fide, std::vector<std::string>{"base/a.pgm"});
  EXPECT_EQ(m.live.at("base/m.pgm"), "base/live.pgm");
  std::stringstream round;
  bench::write_protocol(round, m);
  const auto again = bench::parse_protocol(round, "q.txt");
  EXPECT_EQ(again.morph, m.morph);
  EXPECT_EQ(again.live, m.live);

  std::istringstream stray("name: p\nwhat\n");
  try {
    bench::parse_protocol(stray, "p.txt");
    FAIL();
  } catch (const bench::BenchError& e) {
    EXPECT_NE(std::string(e.what()).find("p.txt:2"), std::string::npos);
  }
  std::istringstream both("name: p\nbona_fide:\n x\nmorph:\n x\n");
  EXPECT_THROW(bench::parse_protocol(both, "p.txt"), bench::BenchError);
  std::istringstream empty("name: p\nbona_fide:\n x\n");
  EXPECT_THROW(bench::parse_protocol(empty, "p.txt"), bench::BenchError);
  std::istringstream pair("name: p\npairs:\n x\n");
  EXPECT_THROW(bench::parse_protocol(pair, "p.txt"), bench::BenchError);
}

TEST(Scores, RoundTripAndLineErrors) {
  const std::vector<ScoredSample> s{{"a.pgm", Truth::BonaFide, 0.25}, {"b.pgm", Truth::Morph, 0.1 + 0.2}};
  std::stringstream ss;
  bench::write_scores(ss, s);
  const auto back = bench::parse_scores(ss, "s.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].score, s[1].score);
  EXPECT_EQ(back[1].truth, Truth::Morph);
  std::istringstream bad("path,truth,score\na,bona_fide,1\nb,attack,2\n");
  try {
    bench::parse_scores(bad, "s.csv");
    FAIL();
  } catch (const bench::BenchError& e) {
    EXPECT_NE(std::string(e.what()).find("s.csv:3"), std::string::npos);
  }
}

class BenchFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fusedmad_bench_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    Rng rng(1);
    for (const char* name : {"b1.pgm", "b2.pgm", "m1.pgm", "m2.pgm"}) {
      Image img(8, 8, 1);
      for (double& v : img.pixels) v = rng.uniform();
      write_pnm((dir_ / name).string(), img);
    }
    bundle_ = {DualModel::initialize({{16, {4}, 3}, 2, false}, 2), 4};
  }
  void TearDown() override { fs::remove_all(dir_); }

  bench::ProtocolManifest manifest(bool missing = false) const {
    bench::ProtocolManifest m{"p", {(dir_ / "b1.pgm").string(), (dir_ / "b2.pgm").string()},
                              {(dir_ / "m1.pgm").string(), (dir_ / "m2.pgm").string()}, {}};
    if (missing) m.morph.push_back((dir_ / "gone.pgm").string());
    for (const auto& p : m.bona_fide) m.live[p] = p;
    for (const auto& p : m.morph) m.live[p] = p;
    return m;
  }

  fs::path dir_;
  ModelBundle bundle_;
};

TEST_F(BenchFiles, ScoreProtocolOrderAndErrors) {
  const auto set = bench::score_protocol(bundle_, manifest(), bench::Mode::Single);
  ASSERT_EQ(set.samples.size(), 4u);
  EXPECT_TRUE(set.errors.empty());
  EXPECT_EQ(set.samples[0].truth, Truth::BonaFide);
  EXPECT_EQ(set.samples[3].truth, Truth::Morph);
  const auto diff = bench::score_protocol(bundle_, manifest(), bench::Mode::Differential);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(diff.samples[i].score, set.samples[i].score);
  const auto parallel = bench::score_protocol(bundle_, manifest(), bench::Mode::Single, 3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(parallel.samples[i].score, set.samples[i].score);

  const auto with_missing = bench::score_protocol(bundle_, manifest(true), bench::Mode::Single);
  EXPECT_EQ(with_missing.samples.size(), 4u);
  ASSERT_EQ(with_missing.errors.size(), 1u);
  EXPECT_TRUE(with_missing.errors[0].path.ends_with("gone.pgm"));

  auto unpaired = manifest();
  unpaired.live.clear();
  EXPECT_THROW(bench::score_protocol(bundle_, unpaired, bench::Mode::Differential), bench::BenchError);
}

TEST_F(BenchFiles, ReportIsStable) {
  const auto set = bench::score_protocol(bundle_, manifest(true), bench::Mode::Single);
  const bench::ProtocolResult r{"run", "p", set.samples, set.errors.size()};
  const auto rows = bench::report({r}, dir_ / "a");
  bench::report({r}, dir_ / "b");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].errors, 1u);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto table = slurp(dir_ / "a" / "report.csv");
  EXPECT_EQ(table, slurp(dir_ / "b" / "report.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "det_run_p.csv"), slurp(dir_ / "b" / "det_run_p.csv"));
  const auto header = table.substr(0, table.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), '@'), 4);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  // External scores give the same metrics as the model path.
  std::stringstream ss;
  bench::write_scores(ss, set.samples);
  const auto ext = bench::evaluate({"run", "p", bench::parse_scores(ss, "x"), 0});
  EXPECT_EQ(ext.curve, rows[0].curve);
  EXPECT_THROW(bench::report({}, dir_), bench::BenchError);
}
