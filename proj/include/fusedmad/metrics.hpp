#pragma once

// Presentation-attack detection metrics. Convention: a higher score means
// "morph", and score >= threshold is classified as morph.
//
//   APCER(th) = fraction of morphs with score <  th   (attacks accepted as bona fide)
//   BPCER(th) = fraction of bona fide with score >= th (bona fide flagged as morph)

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fusedmad::metrics {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Truth { BonaFide, Morph };

struct ScoredSample {
  std::string path;
  Truth truth = Truth::BonaFide;
  double score = 0.0;
};

struct DetPoint {
  double threshold = 0.0;
  double apcer = 0.0;
  double bpcer = 0.0;
  friend bool operator==(const DetPoint&, const DetPoint&) = default;
};

/// Operating points in increasing threshold order: -inf, every distinct
/// score, +inf. APCER is non-decreasing and BPCER non-increasing along it.
struct DetCurve {
  std::vector<DetPoint> points;
  friend bool operator==(const DetCurve&, const DetCurve&) = default;
};

inline DetCurve det_curve(const std::vector<double>& scores, const std::vector<Truth>& truth) {
  if (scores.size() != truth.size()) throw MetricError("det_curve: scores and labels differ in length");
  std::vector<std::pair<double, Truth>> items;
  std::size_t n_morph = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw MetricError("det_curve: non-finite score");
    items.emplace_back(scores[i], truth[i]);
    n_morph += truth[i] == Truth::Morph;
  }
  const std::size_t n_bona = items.size() - n_morph;
  if (n_morph == 0 || n_bona == 0) throw MetricError("det_curve: both bona fide and morph samples are required");
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const auto nm = static_cast<double>(n_morph), nb = static_cast<double>(n_bona);
  DetCurve curve;
  constexpr double inf = std::numeric_limits<double>::infinity();
  curve.points.push_back({-inf, 0.0, 1.0});
  std::size_t morph_below = 0, bona_below = 0;
  for (std::size_t i = 0; i < items.size();) {
    const double v = items[i].first;
    curve.points.push_back({v, static_cast<double>(morph_below) / nm, static_cast<double>(n_bona - bona_below) / nb});
    for (; i < items.size() && items[i].first == v; ++i) (items[i].second == Truth::Morph ? morph_below : bona_below)++;
  }
  curve.points.push_back({inf, 1.0, 0.0});
  return curve;
}

inline DetCurve det_curve(const std::vector<ScoredSample>& samples) {
  std::vector<double> s;
  std::vector<Truth> t;
  for (const auto& x : samples) {
    s.push_back(x.score);
    t.push_back(x.truth);
  }
  return det_curve(s, t);
}

inline void require_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw MetricError("operating-point delta must lie in (0, 1)");
}

/// Smallest APCER over points with BPCER <= delta; 1.0 when there are none.
inline double apcer_at_bpcer(const DetCurve& curve, double delta) {
  require_delta(delta);
  double best = 1.0;
  for (const auto& p : curve.points) {
    if (p.bpcer <= delta) best = std::min(best, p.apcer);
  }
  return best;
}

/// Smallest BPCER over points with APCER <= delta; 1.0 when there are none.
inline double bpcer_at_apcer(const DetCurve& curve, double delta) {
  require_delta(delta);
  double best = 1.0;
  for (const auto& p : curve.points) {
    if (p.apcer <= delta) best = std::min(best, p.bpcer);
  }
  return best;
}

/// Point minimising |APCER - BPCER| (ties: smaller max, then lower threshold).
inline DetPoint det_eer(const DetCurve& curve) {
  const DetPoint* best = nullptr;
  for (const auto& p : curve.points) {
    if (!best) {
      best = &p;
      continue;
    }
    const double gap = std::abs(p.apcer - p.bpcer), best_gap = std::abs(best->apcer - best->bpcer);
    const double worst = std::max(p.apcer, p.bpcer), best_worst = std::max(best->apcer, best->bpcer);
    if (gap < best_gap || (gap == best_gap && worst < best_worst)) best = &p;
  }
  if (!best) throw MetricError("det_eer: empty curve");
  return *best;
}

}  // namespace fusedmad::metrics
