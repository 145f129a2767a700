#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fusedmad/checkpoint.hpp"
#include "fusedmad/gradcheck.hpp"
#include "fusedmad/numgrad.hpp"

using namespace fusedmad;
using namespace fusedmad::numgrad;

TEST(DenseArray, RejectsBadShapes) {
  EXPECT_THROW(DenseArray(Shape{2, 0}), std::invalid_argument);
  EXPECT_THROW(DenseArray(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  const auto m = DenseArray::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(m.rank(), 2u);
}

TEST(Graph, MatmulForwardAndBackward) {
  Graph g;
  auto a = g.input("a", {2, 2});
  auto w = g.parameter("w", {2, 1});
  auto y = g.matmul(a, w, false, "y");
  auto s = g.sigmoid_bce(g.dot(y, y), g.input("t", {2}), "loss");
  g.output("y", y);
  const NamedArrays in{{"a", DenseArray::matrix(2, 2, {1, 2, 3, 4})}, {"t", DenseArray::vector({0, 0})}};
  const auto out = g.forward(in, {{"w", DenseArray::matrix(2, 1, {5, 6})}});
  EXPECT_EQ(out.at("y").at(0, 0), 17.0);
  EXPECT_EQ(out.at("y").at(1, 0), 39.0);
  EXPECT_NO_THROW(g.backward(s));
}

TEST(Graph, MatmulTransposed) {
  Graph g;
  auto a = g.input("a", {1, 2});
  auto w = g.parameter("w", {3, 2});
  g.output("y", g.matmul(a, w, true));
  const auto out = g.forward({{"a", DenseArray::matrix(1, 2, {1, 1})}}, {{"w", DenseArray::matrix(3, 2, {1, 2, 3, 4, 5, 6})}});
  EXPECT_EQ(out.at("y").values()[0], 3.0);
  EXPECT_EQ(out.at("y").values()[1], 7.0);
  EXPECT_EQ(out.at("y").values()[2], 11.0);
}

TEST(Graph, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 4u, 10u}) {
    Graph g;
    auto z = g.input("z", {kAnyDim, kAnyDim});
    auto y = g.input("y", {kAnyDim});
    g.output("l", g.softmax_xent(z, y));
    const auto out = g.forward({{"z", DenseArray(Shape{3, c}, 1.5)}, {"y", DenseArray::vector({0, 1, 1})}}, {});
    EXPECT_NEAR(out.at("l").item(), std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(Graph, SoftmaxGradientRowsSumToZero) {
  Graph g;
  auto z = g.parameter("z", {2, 3});
  auto y = g.input("y", {2});
  auto l = g.softmax_xent(z, y);
  g.forward({{"y", DenseArray::vector({2, 0})}}, {{"z", DenseArray::matrix(2, 3, {0.3, -1.0, 2.0, 5.0, 0.0, -3.0})}});
  const auto grad = g.backward(l).at("z");
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(grad.at(r, 0) + grad.at(r, 1) + grad.at(r, 2), 0.0, 1e-15);
  }
  // d/dz of mean xent = (softmax - onehot) / N
  const double e0 = std::exp(0.3), e1 = std::exp(-1.0), e2 = std::exp(2.0), sum = e0 + e1 + e2;
  EXPECT_NEAR(grad.at(0, 2), (e2 / sum - 1.0) / 2.0, 1e-15);
}

TEST(Graph, LargeLogitsStayFinite) {
  Graph g;
  auto z = g.input("z", {1, 2});
  g.output("l", g.softmax_xent(z, g.input("y", {1})));
  const auto out = g.forward({{"z", DenseArray::matrix(1, 2, {1000.0, -1000.0})}, {"y", DenseArray::vector({1})}}, {});
  EXPECT_NEAR(out.at("l").item(), 2000.0, 1e-9);
}

TEST(Graph, SigmoidBceAtZeroIsLn2) {
  for (double t : {0.0, 1.0}) {
    EXPECT_NEAR(sigmoid_bce_term(0.0, t), std::numbers::ln2, 1e-15);
  }
  EXPECT_NEAR(sigmoid_bce_term(800.0, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(sigmoid_bce_term(-800.0, 1.0), 800.0, 1e-9);
  EXPECT_NEAR(sigmoid(2.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Graph, SigmoidBceGradient) {
  Graph g;
  auto d = g.parameter("d", {2});
  auto l = g.sigmoid_bce(d, g.input("t", {2}));
  g.forward({{"t", DenseArray::vector({1, 0})}}, {{"d", DenseArray::vector({0.5, -2.0})}});
  const auto grad = g.backward(l).at("d");
  EXPECT_NEAR(grad[0], (sigmoid(0.5) - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(grad[1], sigmoid(-2.0) / 2.0, 1e-15);
}

TEST(Graph, ReluAndBias) {
  Graph g;
  auto x = g.input("x", {1, 3});
  auto b = g.parameter("b", {3});
  g.output("y", g.relu(g.add_bias(x, b)));
  const auto out = g.forward({{"x", DenseArray::matrix(1, 3, {-1, 0.5, 2})}}, {{"b", DenseArray::vector({0.5, -1, 0})}});
  EXPECT_EQ(out.at("y").values()[0], 0.0);
  EXPECT_EQ(out.at("y").values()[1], 0.0);
  EXPECT_EQ(out.at("y").values()[2], 2.0);
}

TEST(Graph, UnusedParameterGetsZeroGradient) {
  Graph g;
  auto w = g.parameter("w", {1});
  auto unused = g.parameter("u", {2});
  (void)unused;
  auto l = g.sigmoid_bce(w, g.input("t", {1}));
  g.forward({{"t", DenseArray::vector({1})}}, {{"w", DenseArray::vector({0.1})}, {"u", DenseArray::vector({3, 4})}});
  const auto grads = g.backward(l);
  ASSERT_TRUE(grads.contains("u"));
  EXPECT_EQ(grads.at("u")[0], 0.0);
  EXPECT_EQ(grads.at("u")[1], 0.0);
}

TEST(Graph, TiedParameterAccumulates) {
  Graph g;
  auto x = g.input("x", {1, 2});
  auto w1 = g.parameter("w", {2, 1});
  auto w2 = g.parameter("w", {2, 1});
  EXPECT_EQ(w1.index, w2.index);
  auto y = g.add(g.matmul(x, w1), g.matmul(x, w2));
  auto l = g.sigmoid_bce(g.dot(y, g.input("one", {1, 1})), g.input("t", {1}));
  g.forward({{"x", DenseArray::matrix(1, 2, {1, 2})}, {"one", DenseArray::matrix(1, 1, {1})}, {"t", DenseArray::vector({0})}},
            {{"w", DenseArray::matrix(2, 1, {0.1, 0.2})}});
  const auto grad = g.backward(l).at("w");
  // L = softplus(2 x.w) -> dL/dw = 2 x sigmoid(2 x.w)
  const double s = sigmoid(2.0 * 0.5);
  EXPECT_NEAR(grad[0], 2.0 * 1.0 * s, 1e-14);
  EXPECT_NEAR(grad[1], 2.0 * 2.0 * s, 1e-14);
}

TEST(Graph, ErrorsNameTheNode) {
  Graph g;
  auto a = g.input("a", {2, 3});
  auto b = g.input("b", {2, 3});
  g.output("y", g.matmul(a, b, false, "bad_product"));
  try {
    g.forward({{"a", DenseArray(Shape{2, 3}, 1.0)}, {"b", DenseArray(Shape{2, 3}, 1.0)}}, {});
    FAIL() << "expected a shape error";
  } catch (const GraphError& e) {
    EXPECT_NE(std::string(e.what()).find("bad_product"), std::string::npos);
  }
}

TEST(Graph, NonScalarLossRejected) {
  Graph g;
  auto w = g.parameter("w", {2});
  g.forward({}, {{"w", DenseArray::vector({1, 2})}});
  EXPECT_THROW(g.backward(w), GraphError);
}

TEST(Graph, NonFiniteInputRejected) {
  Graph g;
  auto x = g.input("x", {1});
  g.output("y", g.scale(x, 2.0));
  EXPECT_THROW(g.forward({{"x", DenseArray::vector({std::nan("")})}}, {}), GraphError);
  EXPECT_THROW(g.forward({}, {}), GraphError);
}

TEST(Graph, ForwardIsDeterministic) {
  GradCheckSetup setup;
  const auto c = random_gradcheck_case(setup, 5);
  auto fg = build_fused_graph(setup.model, setup.weights);
  const auto a = fg.graph.forward(c.batch.inputs(), c.model.params);
  const auto ga = fg.graph.backward(fg.total);
  const auto b = fg.graph.forward(c.batch.inputs(), c.model.params);
  const auto gb = fg.graph.backward(fg.total);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ga, gb);
}

// Finite-difference agreement across many random small models.
TEST(GradCheck, RandomModelsAgreeWithCentralDifferences) {
  GradCheckSetup setup;
  setup.model = {{3, {3}, 2}, 2, false};
  setup.batch = 3;
  int passed = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    setup.model.tie_backbones = s % 4 == 3;
    setup.model.backbone.hidden = s % 3 == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{3};
    const auto report = check_case(setup, random_gradcheck_case(setup, s));
    EXPECT_TRUE(report.pass) << "seed " << s << " max rel err " << report.max_relative_error();
    passed += report.pass;
  }
  EXPECT_EQ(passed, 100);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A graph whose parameter is perturbed after backward yields disagreement.
  Graph g;
  auto w = g.parameter("w", {1});
  auto l = g.sigmoid_bce(w, g.input("t", {1}));
  const auto r = grad_check(g, l, {{"t", DenseArray::vector({1})}}, {{"w", DenseArray::vector({0.3})}}, 1e-5, 1e-4);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_relative_error(), 1e-6);
}

TEST(Sgd, StepAndValidation) {
  NamedArrays p{{"w", DenseArray::vector({1, 2})}};
  const NamedArrays g{{"w", DenseArray::vector({0.5, -1})}};
  sgd_step(p, g, 0.0);
  EXPECT_EQ(p.at("w"), DenseArray::vector({1, 2}));
  sgd_step(p, g, 0.1);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 0.95);
  EXPECT_DOUBLE_EQ(p.at("w")[1], 2.1);
  EXPECT_THROW(sgd_step(p, g, -1.0), std::invalid_argument);
  EXPECT_THROW(sgd_step(p, {{"w", DenseArray::vector({1})}}, 0.1), std::invalid_argument);
}

TEST(Checkpoint, RoundTripProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    NamedArrays params;
    const auto n = 1 + rng.index(5);
    for (std::size_t k = 0; k < n; ++k) {
      Shape shape;
      const auto rank = rng.index(3);
      for (std::size_t r = 0; r < rank; ++r) shape.push_back(1 + rng.index(4));
      DenseArray a(shape, 0.0);
      for (double& v : a.values()) v = rng.normal(0.0, 1e3);
      params.emplace("p" + std::to_string(trial) + "." + std::to_string(k), std::move(a));
    }
    const auto bytes = encode_checkpoint(params);
    EXPECT_EQ(decode_checkpoint(bytes), params);
    EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
  }
}

TEST(Checkpoint, CorruptInputRejected) {
  const NamedArrays params{{"w", DenseArray::vector({1, 2, 3})}};
  auto bytes = encode_checkpoint(params);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), CheckpointError);
}
