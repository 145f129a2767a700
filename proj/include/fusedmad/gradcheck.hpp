#pragma once

// Random small dual models with mixed-label batches, for checking the fused
// objective's analytic gradients against central differences.

#include <cstdint>
#include <vector>

#include "fusedmad/model.hpp"
#include "fusedmad/numgrad.hpp"
#include "fusedmad/rng.hpp"

namespace fusedmad {

struct GradCheckSetup {
  ModelConfig model{{6, {5}, 4}, 3, false};
  LossWeights weights{};
  std::size_t batch = 6;
  double epsilon = 1e-5;
  double rtol = 1e-4;
};

struct GradCheckCase {
  DualModel model;
  Batch batch;
};

/// Model and batch drawn from `seed`. The batch pairs independent x1/x2
/// rows and always contains both a same-label and a different-label row.
inline GradCheckCase random_gradcheck_case(const GradCheckSetup& setup, std::uint64_t seed) {
  if (setup.batch < 2) throw ModelError("gradient check batch needs at least 2 rows");
  Rng rng(Rng::mix(seed, 0x6763));
  GradCheckCase c{DualModel::initialize(setup.model, rng.next_u64()), {}};
  // Perturb biases too so that every parameter has a generic value.
  for (auto& [name, p] : c.model.params) {
    if (p.rank() == 1) {
      for (double& v : p.values()) v = rng.normal(0.0, 0.1);
    }
  }
  const std::size_t n = setup.batch, dim = setup.model.backbone.input_dim, classes = setup.model.classes;
  DenseArray x1(Shape{n, dim}, 0.0), x2(Shape{n, dim}, 0.0);
  for (double& v : x1.values()) v = rng.normal();
  for (double& v : x2.values()) v = rng.normal();
  std::vector<std::size_t> y1(n), y2(n);
  for (std::size_t i = 0; i < n; ++i) {
    y1[i] = rng.index(classes);
    if (i == 0) {
      y2[i] = y1[i];
    } else if (i == 1) {
      y2[i] = (y1[i] + 1 + rng.index(classes - 1)) % classes;
    } else {
      y2[i] = rng.index(classes);
    }
  }
  c.batch = Batch{std::move(x1), std::move(x2), std::move(y1), std::move(y2)};
  return c;
}

inline numgrad::GradCheckReport check_case(const GradCheckSetup& setup, const GradCheckCase& c) {
  auto fg = build_fused_graph(setup.model, setup.weights);
  return numgrad::grad_check(fg.graph, fg.total, c.batch.inputs(), c.model.params, setup.epsilon, setup.rtol);
}

}  // namespace fusedmad
