#pragma once

// Two-backbone fused-classification detector.
//
// Each backbone maps an input vector to a feature vector f. Each has its own
// identity-classification head (W: C x feature_dim, b: C). The morphing score
// is D = f1 . f2, trained with sigmoid binary cross-entropy against the
// cross-label t = |sgn(y1 - y2)|. The total loss is
//
//   L = alpha1 * L1 + alpha2 * L2 + beta * L3
//
// where L1/L2 are the heads' softmax cross-entropies and L3 the BCE on D.
// Polarity: a high sigmoid(D) means "morph".

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusedmad/dense_array.hpp"
#include "fusedmad/numgrad.hpp"
#include "fusedmad/rng.hpp"

namespace fusedmad {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackboneConfig {
  std::size_t input_dim = 32 * 32;
  std::vector<std::size_t> hidden{64};
  std::size_t feature_dim = 32;

  void validate() const {
    if (input_dim == 0) throw ModelError("backbone input_dim must be positive");
    if (feature_dim < 2) throw ModelError("backbone feature_dim must be at least 2");
    for (std::size_t h : hidden) {
      if (h == 0) throw ModelError("backbone hidden widths must be positive");
    }
  }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t classes = 2;
  bool tie_backbones = false;  // both networks share one set of backbone weights

  void validate() const {
    backbone.validate();
    if (classes < 2) throw ModelError("model needs at least 2 classes");
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Loss weights of the fused objective.
struct LossWeights {
  double alpha1 = 0.2;
  double alpha2 = 0.2;
  double beta = 1.0;

  void validate() const {
    if (!(alpha1 >= 0.0 && alpha2 >= 0.0 && beta >= 0.0)) throw ModelError("loss weights must be non-negative");
    if (!(alpha1 + alpha2 + beta > 0.0)) throw ModelError("loss weights must not all be zero");
  }
};

inline std::string backbone_prefix(int which, bool tied) { return tied ? "backbone1" : "backbone" + std::to_string(which); }

struct DualModel {
  ModelConfig config;
  numgrad::NamedArrays params;

  /// Parameter names and shapes the configuration implies.
  static std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, Shape>> out;
    const int backbones = cfg.tie_backbones ? 1 : 2;
    for (int b = 1; b <= backbones; ++b) {
      const std::string p = "backbone" + std::to_string(b);
      std::size_t in = cfg.backbone.input_dim;
      for (std::size_t l = 0; l < cfg.backbone.hidden.size(); ++l) {
        out.push_back({p + ".layer" + std::to_string(l) + ".weight", {in, cfg.backbone.hidden[l]}});
        out.push_back({p + ".layer" + std::to_string(l) + ".bias", {cfg.backbone.hidden[l]}});
        in = cfg.backbone.hidden[l];
      }
      out.push_back({p + ".features.weight", {in, cfg.backbone.feature_dim}});
      out.push_back({p + ".features.bias", {cfg.backbone.feature_dim}});
    }
    for (int h = 1; h <= 2; ++h) {
      const std::string p = "head" + std::to_string(h);
      out.push_back({p + ".weight", {cfg.classes, cfg.backbone.feature_dim}});
      out.push_back({p + ".bias", {cfg.classes}});
    }
    return out;
  }

  /// Uniform weights in +-sqrt(6 / fan_in) (hidden layers) or +-sqrt(3 / fan_in)
  /// (feature and head layers); zero biases.
  static DualModel initialize(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DualModel m{cfg, {}};
    Rng rng(seed);
    for (const auto& [name, shape] : layout(cfg)) {
      DenseArray a(shape, 0.0);
      if (shape.size() == 2) {
        const bool head = name.starts_with("head");
        const double fan_in = static_cast<double>(head ? shape[1] : shape[0]);
        const bool hidden = name.find(".layer") != std::string::npos;
        const double limit = std::sqrt((hidden ? 6.0 : 3.0) / fan_in);
        for (double& v : a.values()) v = rng.uniform(-limit, limit);
      }
      m.params.emplace(name, std::move(a));
    }
    return m;
  }

  /// Throws unless the parameters match the configuration's layout and are finite.
  void validate() const {
    config.validate();
    const auto expected = layout(config);
    if (expected.size() != params.size()) throw ModelError("checkpoint does not match the model layout");
    for (const auto& [name, shape] : expected) {
      auto it = params.find(name);
      if (it == params.end()) throw ModelError("checkpoint lacks parameter '" + name + "'");
      if (it->second.shape() != shape) {
        throw ModelError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                         shape_string(shape));
      }
      if (!it->second.all_finite()) throw ModelError("parameter '" + name + "' holds non-finite values");
    }
  }
};

/// Declares backbone `which` (1 or 2) applied to `x`; returns the feature node.
inline numgrad::NodeRef build_backbone(numgrad::Graph& g, const ModelConfig& cfg, int which, numgrad::NodeRef x) {
  const std::string p = backbone_prefix(which, cfg.tie_backbones);
  const std::string tag = "net" + std::to_string(which);
  std::size_t in = cfg.backbone.input_dim;
  numgrad::NodeRef h = x;
  for (std::size_t l = 0; l < cfg.backbone.hidden.size(); ++l) {
    const std::string layer = p + ".layer" + std::to_string(l);
    const auto w = g.parameter(layer + ".weight", {in, cfg.backbone.hidden[l]});
    const auto b = g.parameter(layer + ".bias", {cfg.backbone.hidden[l]});
    h = g.relu(g.add_bias(g.matmul(h, w, false, tag + ".layer" + std::to_string(l) + ".matmul"), b),
               tag + ".layer" + std::to_string(l) + ".relu");
    in = cfg.backbone.hidden[l];
  }
  const auto w = g.parameter(p + ".features.weight", {in, cfg.backbone.feature_dim});
  const auto b = g.parameter(p + ".features.bias", {cfg.backbone.feature_dim});
  return g.add_bias(g.matmul(h, w, false, tag + ".features.matmul"), b, tag + ".features");
}

/// Every node of the fused objective, wired into one graph.
struct FusedGraph {
  numgrad::Graph graph;
  numgrad::NodeRef x1, x2, y1, y2, t;
  numgrad::NodeRef f1, f2, logits1, logits2, d;
  numgrad::NodeRef l1, l2, l3, total;
};

/// Inputs: x1, x2 [N, input_dim]; y1, y2, t [N].
inline FusedGraph build_fused_graph(const ModelConfig& cfg, const LossWeights& w) {
  cfg.validate();
  w.validate();
  FusedGraph fg;
  auto& g = fg.graph;
  fg.x1 = g.input("x1", {numgrad::kAnyDim, cfg.backbone.input_dim});
  fg.x2 = g.input("x2", {numgrad::kAnyDim, cfg.backbone.input_dim});
  fg.y1 = g.input("y1", {numgrad::kAnyDim});
  fg.y2 = g.input("y2", {numgrad::kAnyDim});
  fg.t = g.input("t", {numgrad::kAnyDim});
  fg.f1 = build_backbone(g, cfg, 1, fg.x1);
  fg.f2 = build_backbone(g, cfg, 2, fg.x2);
  const auto hw1 = g.parameter("head1.weight", {cfg.classes, cfg.backbone.feature_dim});
  const auto hb1 = g.parameter("head1.bias", {cfg.classes});
  const auto hw2 = g.parameter("head2.weight", {cfg.classes, cfg.backbone.feature_dim});
  const auto hb2 = g.parameter("head2.bias", {cfg.classes});
  fg.logits1 = g.add_bias(g.matmul(fg.f1, hw1, true), hb1, "logits1");
  fg.logits2 = g.add_bias(g.matmul(fg.f2, hw2, true), hb2, "logits2");
  fg.d = g.dot(fg.f1, fg.f2, "D");
  fg.l1 = g.softmax_xent(fg.logits1, fg.y1, "L1");
  fg.l2 = g.softmax_xent(fg.logits2, fg.y2, "L2");
  fg.l3 = g.sigmoid_bce(fg.d, fg.t, "L3");
  fg.total = g.add(g.add(g.scale(fg.l1, w.alpha1), g.scale(fg.l2, w.alpha2)), g.scale(fg.l3, w.beta), "L");
  g.output("f1", fg.f1);
  g.output("f2", fg.f2);
  g.output("logits1", fg.logits1);
  g.output("logits2", fg.logits2);
  g.output("D", fg.d);
  g.output("L1", fg.l1);
  g.output("L2", fg.l2);
  g.output("L3", fg.l3);
  g.output("L", fg.total);
  return fg;
}

/// t_i = |sgn(y1_i - y2_i)|
inline DenseArray cross_labels(const std::vector<std::size_t>& y1, const std::vector<std::size_t>& y2) {
  if (y1.size() != y2.size() || y1.empty()) throw ModelError("label vectors must be non-empty and equal in length");
  DenseArray t(Shape{y1.size()}, 0.0);
  for (std::size_t i = 0; i < y1.size(); ++i) t[i] = y1[i] != y2[i] ? 1.0 : 0.0;
  return t;
}

inline DenseArray label_array(const std::vector<std::size_t>& y) {
  DenseArray a(Shape{y.size()}, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) a[i] = static_cast<double>(y[i]);
  return a;
}

/// A batch: one image stream (single-image mode) or two (differential mode).
struct Batch {
  DenseArray x1;
  DenseArray x2;
  std::vector<std::size_t> y1;
  std::vector<std::size_t> y2;

  static Batch single(DenseArray x, std::vector<std::size_t> y1, std::vector<std::size_t> y2) {
    Batch b{x, x, std::move(y1), std::move(y2)};
    return b;
  }

  numgrad::NamedArrays inputs() const {
    return {{"x1", x1}, {"x2", x2}, {"y1", label_array(y1)}, {"y2", label_array(y2)}, {"t", cross_labels(y1, y2)}};
  }
};

struct PairForward {
  DenseArray f1, f2, logits1, logits2, d;
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, total = 0.0;
};

inline PairForward forward_pair(const DualModel& model, const Batch& batch, const LossWeights& w = {}) {
  auto fg = build_fused_graph(model.config, w);
  auto out = fg.graph.forward(batch.inputs(), model.params);
  return {out.at("f1"),          out.at("f2"),          out.at("logits1"),     out.at("logits2"), out.at("D"),
          out.at("L1").item(),   out.at("L2").item(),   out.at("L3").item(),   out.at("L").item()};
}

/// Mean softmax cross-entropy of logits[N, C] against labels.
inline double loss_identity(const DenseArray& logits, const std::vector<std::size_t>& labels,
                            const std::string& head_tag = "head") {
  numgrad::Graph g;
  const auto z = g.input("logits", {numgrad::kAnyDim, numgrad::kAnyDim});
  const auto y = g.input("labels", {numgrad::kAnyDim});
  const auto l = g.softmax_xent(z, y, head_tag + ".loss");
  g.output("loss", l);
  return g.forward({{"logits", logits}, {"labels", label_array(labels)}}, {}).at("loss").item();
}

/// Mean sigmoid binary cross-entropy of scores D against cross-labels t.
inline double loss_morph(const DenseArray& d, const DenseArray& t) {
  numgrad::Graph g;
  const auto dn = g.input("D", {numgrad::kAnyDim});
  const auto tn = g.input("t", {numgrad::kAnyDim});
  g.output("loss", g.sigmoid_bce(dn, tn, "L3"));
  return g.forward({{"D", d}, {"t", t}}, {}).at("loss").item();
}

inline double total_loss(double l1, double l2, double l3, const LossWeights& w) {
  return w.alpha1 * l1 + w.alpha2 * l2 + w.beta * l3;
}

/// sigmoid(f1(enrolled_i) . f2(live_i)) for each row.
inline std::vector<double> pair_scores(const DualModel& model, const DenseArray& enrolled, const DenseArray& live) {
  if (enrolled.shape() != live.shape()) {
    throw ModelError("differential inputs differ in shape: " + shape_string(enrolled.shape()) + " vs " +
                     shape_string(live.shape()));
  }
  model.validate();
  numgrad::Graph g;
  const auto x1 = g.input("x1", {numgrad::kAnyDim, model.config.backbone.input_dim});
  const auto x2 = g.input("x2", {numgrad::kAnyDim, model.config.backbone.input_dim});
  const auto d = g.dot(build_backbone(g, model.config, 1, x1), build_backbone(g, model.config, 2, x2), "D");
  g.output("D", d);
  const auto out = g.forward({{"x1", enrolled}, {"x2", live}}, model.params);
  const DenseArray& dv = out.at("D");
  std::vector<double> scores(dv.size());
  for (std::size_t i = 0; i < dv.size(); ++i) scores[i] = numgrad::sigmoid(dv[i]);
  return scores;
}

inline DenseArray as_row(const std::vector<double>& x) { return DenseArray(Shape{1, x.size()}, x); }

/// Single-image morph score: both backbones see the same input. Higher means morph.
inline double morph_score(const DualModel& model, const std::vector<double>& input) {
  const DenseArray row = as_row(input);
  return pair_scores(model, row, row).front();
}

/// Differential score: the first backbone sees the enrolled image, the second the live capture.
inline double differential_score(const DualModel& model, const std::vector<double>& enrolled,
                                 const std::vector<double>& live) {
  if (enrolled.size() != live.size()) throw ModelError("enrolled and live inputs differ in size");
  return pair_scores(model, as_row(enrolled), as_row(live)).front();
}

}  // namespace fusedmad
