#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "fusedmad/gradcheck.hpp"
#include "fusedmad/model.hpp"
#include "fusedmad/model_io.hpp"
#include "fusedmad/train.hpp"

using namespace fusedmad;

namespace {

ModelConfig small_config(bool tied = false) { return {{4, {6}, 3}, 3, tied}; }

// Mean softmax cross-entropy written out directly.
double direct_xent(const DenseArray& z, const std::vector<std::size_t>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < z.dim(0); ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < z.dim(1); ++j) denom += std::exp(z.at(i, j));
    total += std::log(denom) - z.at(i, y[i]);
  }
  return total / static_cast<double>(z.dim(0));
}

// Two well-separated clusters, one per identity; morph rows average the two.
TrainingSet toy_set(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y1, y2;
  const std::vector<double> c0{1, 0, 0, 1}, c1{0, 1, 1, 0};
  for (int i = 0; i < 40; ++i) {
    const int kind = i % 4;  // 0,1 bona fide; 2,3 morph
    std::vector<double> v(4);
    for (int k = 0; k < 4; ++k) {
      const double base = kind == 0 ? c0[k] : kind == 1 ? c1[k] : 0.5 * (c0[k] + c1[k]);
      v[k] = base + rng.normal(0, 0.05);
    }
    x.push_back(v);
    y1.push_back(kind == 1 ? 1 : 0);
    y2.push_back(kind == 0 ? 0 : 1);
  }
  return make_training_set(x, y1, y2);
}

}  // namespace

TEST(Model, LayoutAndInitialization) {
  const auto m = DualModel::initialize(small_config(), 5);
  EXPECT_EQ(m.params.size(), 12u);
  EXPECT_EQ(m.params.at("backbone2.layer0.weight").shape(), (Shape{4, 6}));
  EXPECT_EQ(m.params.at("head1.weight").shape(), (Shape{3, 3}));
  for (double v : m.params.at("backbone1.features.bias").values()) EXPECT_EQ(v, 0.0);
  const double lim = std::sqrt(6.0 / 4.0);
  for (double v : m.params.at("backbone1.layer0.weight").values()) EXPECT_LE(std::abs(v), lim);
  EXPECT_EQ(DualModel::initialize(small_config(), 5).params, m.params);
  EXPECT_NE(DualModel::initialize(small_config(), 6).params, m.params);
  EXPECT_EQ(DualModel::initialize(small_config(true), 5).params.size(), 8u);
  EXPECT_THROW(DualModel::initialize({{4, {6}, 3}, 1, false}, 1), ModelError);
  EXPECT_THROW(DualModel::initialize({{4, {0}, 3}, 2, false}, 1), ModelError);
}

TEST(Model, ValidateCatchesLayoutMismatch) {
  auto m = DualModel::initialize(small_config(), 1);
  m.params.erase("head2.bias");
  EXPECT_THROW(m.validate(), ModelError);
  m = DualModel::initialize(small_config(), 1);
  m.params.at("head2.bias") = DenseArray(Shape{4}, 0.0);
  EXPECT_THROW(m.validate(), ModelError);
}

TEST(Losses, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 4u, 10u}) {
    const DenseArray z(Shape{5, c}, 0.7);
    EXPECT_NEAR(loss_identity(z, {0, 1, 0, 1, 1}), std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(Losses, IdentityMatchesDirectFormula) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    DenseArray z(Shape{6, 5}, 0.0);
    for (double& v : z.values()) v = rng.normal(0, 3);
    std::vector<std::size_t> y;
    for (int i = 0; i < 6; ++i) y.push_back(rng.index(5));
    EXPECT_NEAR(loss_identity(z, y), direct_xent(z, y), 1e-12);
  }
  EXPECT_THROW(loss_identity(DenseArray(Shape{1, 3}, 0.0), {3}), numgrad::GraphError);
  // Confident and correct: the loss vanishes as the margin grows.
  EXPECT_LT(loss_identity(DenseArray::matrix(1, 2, {50, 0}), {0}), 1e-20);
}

TEST(Losses, MorphBce) {
  EXPECT_NEAR(loss_morph(DenseArray::vector({0, 0}), DenseArray::vector({0, 1})), std::numbers::ln2, 1e-12);
  const double s2 = 1.0 / (1.0 + std::exp(-2.0));
  EXPECT_NEAR(loss_morph(DenseArray::vector({2}), DenseArray::vector({0})), -std::log(1.0 - s2), 1e-12);
  EXPECT_NEAR(loss_morph(DenseArray::vector({2}), DenseArray::vector({0})), 2.1269, 1e-4);
  EXPECT_NEAR(loss_morph(DenseArray::vector({1e4}), DenseArray::vector({0})), 1e4, 1e-9);
  EXPECT_EQ(loss_morph(DenseArray::vector({1e4}), DenseArray::vector({1})), 0.0);
  EXPECT_TRUE(std::isfinite(loss_morph(DenseArray::vector({-1e4}), DenseArray::vector({1}))));
}

TEST(Losses, TotalAndCrossLabels) {
  EXPECT_EQ(total_loss(1, 1, 1, {1, 1, 1}), 3.0);
  EXPECT_EQ(total_loss(5, 7, 2, {0, 0, 1}), 2.0);
  const auto t = cross_labels({0, 1, 2, 2}, {0, 2, 1, 2});
  EXPECT_EQ(t, DenseArray::vector({0, 1, 1, 0}));
  EXPECT_THROW(LossWeights({0, 0, 0}).validate(), ModelError);
  EXPECT_THROW(LossWeights({-1, 0, 1}).validate(), ModelError);
}

TEST(Losses, MorphLossIgnoresWhichLabelsDiffer) {
  const auto m = DualModel::initialize(small_config(), 3);
  DenseArray x(Shape{2, 4}, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
  const auto a = forward_pair(m, Batch::single(x, {0, 1}, {1, 1}));
  const auto b = forward_pair(m, Batch::single(x, {2, 0}, {0, 0}));
  EXPECT_EQ(a.l3, b.l3);
  EXPECT_EQ(a.d, b.d);
}

TEST(Forward, DotProductAndTiedSymmetry) {
  const auto m = DualModel::initialize(small_config(true), 4);
  DenseArray x(Shape{3, 4}, 0.0);
  Rng rng(1);
  for (double& v : x.values()) v = rng.normal();
  const auto f = forward_pair(m, Batch::single(x, {0, 1, 2}, {0, 1, 2}));
  EXPECT_EQ(f.f1, f.f2);
  for (std::size_t i = 0; i < 3; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < 3; ++k) dot += f.f1.at(i, k) * f.f2.at(i, k);
    EXPECT_NEAR(f.d[i], dot, 1e-12);
  }
  EXPECT_THROW(forward_pair(m, Batch::single(DenseArray(Shape{3, 5}, 0.0), {0, 1, 2}, {0, 1, 2})),
               numgrad::GraphError);
}

TEST(Gradients, HeadsAreDisconnectedWithoutIdentityLoss) {
  GradCheckSetup setup;
  const auto c = random_gradcheck_case(setup, 11);
  auto fg = build_fused_graph(setup.model, {0.0, 0.0, 1.0});
  fg.graph.forward(c.batch.inputs(), c.model.params);
  const auto grads = fg.graph.backward(fg.total);
  for (const auto* name : {"head1.weight", "head1.bias", "head2.weight", "head2.bias"}) {
    for (double v : grads.at(name).values()) EXPECT_EQ(v, 0.0) << name;
  }
  bool any = false;
  for (double v : grads.at("backbone1.features.weight").values()) any = any || v != 0.0;
  EXPECT_TRUE(any);
}

TEST(Gradients, FiniteDifferencesForBatchCompositions) {
  GradCheckSetup setup;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto c = random_gradcheck_case(setup, seed);
    if (seed % 3 == 1) c.batch.y2 = c.batch.y1;  // all t = 0
    if (seed % 3 == 2) {                          // all t = 1
      for (std::size_t i = 0; i < c.batch.y1.size(); ++i) c.batch.y2[i] = (c.batch.y1[i] + 1) % 3;
    }
    const auto report = check_case(setup, c);
    EXPECT_TRUE(report.pass) << "seed " << seed << " max rel err " << report.max_relative_error();
  }
}

TEST(Scoring, RangeAndDifferentialReduction) {
  const auto m = DualModel::initialize(small_config(), 2);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x(4), y(4);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    const double s = morph_score(m, x);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    EXPECT_EQ(differential_score(m, x, x), s);
    const double d = differential_score(m, x, y);
    EXPECT_GT(d, 0.0);
    EXPECT_LT(d, 1.0);
  }
  auto zero = m;
  for (auto& [name, p] : zero.params) p.fill(0.0);
  EXPECT_EQ(morph_score(zero, {1, 2, 3, 4}), 0.5);
  EXPECT_THROW(differential_score(m, {1, 2, 3, 4}, {1, 2, 3}), ModelError);
}

TEST(Training, EpochsZeroAndZeroRateKeepInitialization) {
  const auto set = toy_set(1);
  const auto init = DualModel::initialize({{4, {6}, 3}, 2, false}, 7);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(train(init, set, cfg).model.params, init.params);
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  const auto r = train(init, set, cfg);
  EXPECT_EQ(r.model.params, init.params);
  EXPECT_EQ(r.trace.size(), 2u * ((set.size() + cfg.batch_size - 1) / cfg.batch_size));
}

TEST(Training, DescendsAndIsDeterministic) {
  const auto set = toy_set(2);
  const auto init = DualModel::initialize({{4, {8}, 3}, 2, false}, 3);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 40;  // 200 steps
  cfg.learning_rate = 0.05;
  cfg.seed = 4;
  const auto before = evaluate_losses(init, set, cfg.weights);
  const auto r = train(init, set, cfg);
  EXPECT_EQ(r.trace.size(), 200u);
  const auto after = evaluate_losses(r.model, set, cfg.weights);
  EXPECT_LT(after.total, before.total);
  EXPECT_LT(after.l1, before.l1);
  EXPECT_LT(after.l2, before.l2);
  EXPECT_LT(after.l3, before.l3);
  EXPECT_EQ(train(init, set, cfg).model.params, r.model.params);
  // Morph rows should now score above bona fide rows.
  double morph = 0.0, bona = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto row = set.x.values().subspan(i * 4, 4);
    const double s = morph_score(r.model, std::vector<double>(row.begin(), row.end()));
    (set.y1[i] != set.y2[i] ? morph : bona) += s;
  }
  EXPECT_GT(morph, bona);
}

TEST(Training, RejectsBadInputs) {
  const auto set = toy_set(1);
  TrainConfig cfg;
  const auto wrong_dim = DualModel::initialize({{5, {6}, 3}, 2, false}, 1);
  EXPECT_THROW(train(wrong_dim, set, cfg), TrainError);
  auto labels = set;
  labels.y1[0] = 9;
  EXPECT_THROW(train(DualModel::initialize({{4, {6}, 3}, 2, false}, 1), labels, cfg), TrainError);
  cfg.learning_rate = -1;
  EXPECT_THROW(train(DualModel::initialize({{4, {6}, 3}, 2, false}, 1), set, cfg), TrainError);
  cfg.learning_rate = 1e200;
  try {
    train(DualModel::initialize({{4, {6}, 3}, 2, false}, 1), set, cfg);
    FAIL();
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
  EXPECT_THROW(make_training_set({{1, 2}, {1}}, {0, 0}, {0, 0}), TrainError);
}

TEST(ModelIo, RoundTrip) {
  ModelBundle b{DualModel::initialize({{16, {5, 4}, 3}, 4, true}, 8), 4};
  const auto path = (std::filesystem::temp_directory_path() / "fusedmad_model_test.ckpt").string();
  save_model(path, b);
  const auto back = load_model(path);
  EXPECT_EQ(back.input_side, 4);
  EXPECT_EQ(back.model.config, b.model.config);
  EXPECT_EQ(back.model.params, b.model.params);
  auto arrays = bundle_to_arrays(b);
  arrays.at("config.input_side") = DenseArray::scalar(5);
  EXPECT_THROW(bundle_from_arrays(arrays), ModelError);
  std::filesystem::remove(path);
}

TEST(Preprocess, StandardizesAndResizes) {
  Image img(8, 8, 3);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = (x * 8 + y) / 63.0;
    }
  }
  const auto v = preprocess(img, 4);
  ASSERT_EQ(v.size(), 16u);
  double mean = 0.0, var = 0.0;
  for (double x : v) mean += x;
  mean /= 16.0;
  for (double x : v) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(var / 16.0), 0.25, 1e-5);
  for (double x : preprocess(Image(8, 8, 1, 0.3), 4)) EXPECT_NEAR(x, 0.0, 1e-9);
}
