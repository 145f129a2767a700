#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusedmad/harvest.hpp"
#include "fusedmad/image.hpp"
#include "fusedmad/model.hpp"
#include "fusedmad/numgrad.hpp"
#include "fusedmad/parallel.hpp"
#include "fusedmad/rng.hpp"
#include "fusedmad/table.hpp"

namespace fusedmad {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimizer settings. None of these are prescribed by the method; the
/// defaults suit the desk-scale synthetic task.
struct TrainConfig {
  LossWeights weights;
  double learning_rate = 0.03;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  std::uint64_t seed = 0;

  void validate() const {
    weights.validate();
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw TrainError("learning rate must be finite and non-negative");
    }
    if (batch_size == 0) throw TrainError("batch size must be positive");
  }
};

/// Grayscale, area-resized to side x side, standardized per image to zero
/// mean and standard deviation 0.25, flattened row-major.
inline std::vector<double> preprocess(const Image& image, int side) {
  const Image small = resize_area(to_grayscale(image), side, side);
  const auto n = static_cast<double>(small.pixels.size());
  double mean = 0.0;
  for (double v : small.pixels) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : small.pixels) var += (v - mean) * (v - mean);
  const double scale = 0.25 / (std::sqrt(var / n) + 1e-6);
  std::vector<double> out(small.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (small.pixels[i] - mean) * scale;
  return out;
}

struct TrainingSet {
  DenseArray x;  // [M, input_dim]
  std::vector<std::size_t> y1;
  std::vector<std::size_t> y2;

  std::size_t size() const { return y1.size(); }
};

inline TrainingSet make_training_set(const std::vector<std::vector<double>>& inputs,
                                     const std::vector<std::size_t>& y1, const std::vector<std::size_t>& y2) {
  if (inputs.empty()) throw TrainError("training set is empty");
  if (inputs.size() != y1.size() || y1.size() != y2.size()) throw TrainError("inputs and labels differ in count");
  const std::size_t dim = inputs.front().size();
  TrainingSet s{DenseArray(Shape{inputs.size(), dim}, 0.0), y1, y2};
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != dim) throw TrainError("input " + std::to_string(i) + " has a different length");
    std::copy(inputs[i].begin(), inputs[i].end(), s.x.values().begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return s;
}

inline TrainingSet load_training_set(const std::vector<SampleRecord>& records, int side, std::size_t jobs = 1) {
  std::vector<std::vector<double>> inputs(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) { inputs[i] = preprocess(read_pnm(records[i].image_path), side); });
  std::vector<std::size_t> y1, y2;
  for (const auto& r : records) {
    y1.push_back(r.y1);
    y2.push_back(r.y2);
  }
  return make_training_set(inputs, y1, y2);
}

inline Batch gather(const TrainingSet& set, const std::vector<std::size_t>& rows) {
  const std::size_t dim = set.x.dim(1);
  DenseArray x(Shape{rows.size(), dim}, 0.0);
  std::vector<std::size_t> y1, y2;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = set.x.values().subspan(rows[r] * dim, dim);
    std::copy(src.begin(), src.end(), x.values().begin() + static_cast<std::ptrdiff_t>(r * dim));
    y1.push_back(set.y1[rows[r]]);
    y2.push_back(set.y2[rows[r]]);
  }
  return Batch::single(std::move(x), std::move(y1), std::move(y2));
}

struct TraceRow {
  std::size_t step = 0;
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, total = 0.0;
  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct TrainResult {
  DualModel model;
  std::vector<TraceRow> trace;  // losses of each step, measured before its update
};

/// Loss components over the whole set in one pass.
inline TraceRow evaluate_losses(const DualModel& model, const TrainingSet& set, const LossWeights& w) {
  std::vector<std::size_t> all(set.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto f = forward_pair(model, gather(set, all), w);
  return {0, f.l1, f.l2, f.l3, f.total};
}

/// Minibatch SGD on the fused loss in single-image mode.
inline TrainResult train(DualModel model, const TrainingSet& set, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (set.size() == 0) throw TrainError("training set is empty");
  if (set.x.dim(1) != model.config.backbone.input_dim) {
    throw TrainError("training inputs have dimension " + std::to_string(set.x.dim(1)) + ", model expects " +
                     std::to_string(model.config.backbone.input_dim));
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.y1[i] >= model.config.classes || set.y2[i] >= model.config.classes) {
      throw TrainError("sample " + std::to_string(i) + " has a class index outside [0, " +
                       std::to_string(model.config.classes) + ")");
    }
  }

  auto fg = build_fused_graph(model.config, cfg.weights);
  Rng rng(Rng::mix(cfg.seed, 0x7472616Eu));
  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{std::move(model), {}};
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(
                                                              std::min(order.size(), start + cfg.batch_size)));
      const Batch batch = gather(set, rows);
      numgrad::NamedArrays out;
      numgrad::NamedArrays grads;
      try {
        out = fg.graph.forward(batch.inputs(), result.model.params);
        grads = fg.graph.backward(fg.total);
      } catch (const numgrad::GraphError& e) {
        throw TrainError("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
      const TraceRow row{step, out.at("L1").item(), out.at("L2").item(), out.at("L3").item(), out.at("L").item()};
      if (!std::isfinite(row.total)) {
        throw TrainError("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + "): loss is not finite");
      }
      result.trace.push_back(row);
      numgrad::sgd_step(result.model.params, grads, cfg.learning_rate);
      for (const auto& [name, p] : result.model.params) {
        if (!p.all_finite()) {
          throw TrainError("step " + std::to_string(step) + ": parameter '" + name + "' became non-finite");
        }
      }
      ++step;
    }
  }
  return result;
}

inline void write_trace(std::ostream& out, const std::vector<TraceRow>& trace) {
  TableWriter w(out, {"step", "L1", "L2", "L3", "L"});
  for (const auto& r : trace) {
    w.row({std::to_string(r.step), format_double(r.l1), format_double(r.l2), format_double(r.l3),
           format_double(r.total)});
  }
}

}  // namespace fusedmad
