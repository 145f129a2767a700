#pragma once

// A model checkpoint stores the parameters plus the architecture under
// reserved "config.*" records, so a checkpoint file is self-describing.

#include <cmath>
#include <string>

#include "fusedmad/checkpoint.hpp"
#include "fusedmad/model.hpp"

namespace fusedmad {

struct ModelBundle {
  DualModel model;
  int input_side = 32;  // images are resized to input_side x input_side before scoring
};

inline numgrad::NamedArrays bundle_to_arrays(const ModelBundle& b) {
  numgrad::NamedArrays out = b.model.params;
  const auto& cfg = b.model.config;
  out.insert_or_assign("config.input_side", DenseArray::scalar(b.input_side));
  out.insert_or_assign("config.input_dim", DenseArray::scalar(static_cast<double>(cfg.backbone.input_dim)));
  out.insert_or_assign("config.feature_dim", DenseArray::scalar(static_cast<double>(cfg.backbone.feature_dim)));
  out.insert_or_assign("config.classes", DenseArray::scalar(static_cast<double>(cfg.classes)));
  out.insert_or_assign("config.tie_backbones", DenseArray::scalar(cfg.tie_backbones ? 1.0 : 0.0));
  if (!cfg.backbone.hidden.empty()) {
    std::vector<double> h(cfg.backbone.hidden.begin(), cfg.backbone.hidden.end());
    out.insert_or_assign("config.hidden", DenseArray(Shape{h.size()}, h));
  }
  return out;
}

inline ModelBundle bundle_from_arrays(numgrad::NamedArrays arrays) {
  auto take = [&](const std::string& key) -> double {
    auto it = arrays.find(key);
    if (it == arrays.end()) throw ModelError("checkpoint lacks '" + key + "'");
    const double v = it->second.item();
    arrays.erase(it);
    if (!(v >= 0.0) || v != std::floor(v)) throw ModelError("checkpoint '" + key + "' is not a count");
    return v;
  };
  ModelBundle b;
  b.input_side = static_cast<int>(take("config.input_side"));
  b.model.config.backbone.input_dim = static_cast<std::size_t>(take("config.input_dim"));
  b.model.config.backbone.feature_dim = static_cast<std::size_t>(take("config.feature_dim"));
  b.model.config.classes = static_cast<std::size_t>(take("config.classes"));
  b.model.config.tie_backbones = take("config.tie_backbones") != 0.0;
  b.model.config.backbone.hidden.clear();
  if (auto it = arrays.find("config.hidden"); it != arrays.end()) {
    for (double v : it->second.values()) b.model.config.backbone.hidden.push_back(static_cast<std::size_t>(v));
    arrays.erase(it);
  }
  b.model.params = std::move(arrays);
  if (b.input_side <= 0 || static_cast<std::size_t>(b.input_side) * b.input_side != b.model.config.backbone.input_dim) {
    throw ModelError("checkpoint input_side does not match input_dim");
  }
  b.model.validate();
  return b;
}

inline void save_model(const std::string& path, const ModelBundle& b) { save_checkpoint(path, bundle_to_arrays(b)); }

inline ModelBundle load_model(const std::string& path) { return bundle_from_arrays(load_checkpoint(path)); }

}  // namespace fusedmad
