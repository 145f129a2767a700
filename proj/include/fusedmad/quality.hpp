#pragma once

// Wild-dataset curation by quality-score thresholds: pluggable scorers,
// stratified sampling for manual labelling, FAR/FRR curves, EER threshold
// selection and joint (conjunctive) filtering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fusedmad/image.hpp"
#include "fusedmad/rng.hpp"
#include "fusedmad/table.hpp"

namespace fusedmad::quality {

class QualityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Variance of the 3x3 Laplacian response over the grayscale interior.
inline double blur_score(const Image& image) {
  const Image g = to_grayscale(image);
  if (g.width < 3 || g.height < 3) return 0.0;
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (int y = 1; y + 1 < g.height; ++y) {
    for (int x = 1; x + 1 < g.width; ++x) {
      const double lap = g.at(x - 1, y) + g.at(x + 1, y) + g.at(x, y - 1) + g.at(x, y + 1) - 4.0 * g.at(x, y);
      sum += lap;
      sum_sq += lap * lap;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  return std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
}

/// Mean grayscale luminance.
inline double illumination_score(const Image& image) {
  const Image g = to_grayscale(image);
  double sum = 0.0;
  for (double v : g.pixels) sum += v;
  return sum / static_cast<double>(g.pixels.size());
}

using Scorer = std::function<double(const Image&)>;

class ScorerRegistry {
 public:
  /// Registry holding the built-in "blur" and "illumination" scorers.
  static ScorerRegistry with_builtins() {
    ScorerRegistry r;
    r.add("blur", blur_score);
    r.add("illumination", illumination_score);
    return r;
  }

  void add(const std::string& id, Scorer scorer) {
    if (!scorers_.emplace(id, std::move(scorer)).second) throw QualityError("scorer '" + id + "' already registered");
  }

  bool contains(const std::string& id) const { return scorers_.contains(id); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : scorers_) out.push_back(id);
    return out;
  }

  double score(const Image& image, const std::string& id) const {
    auto it = scorers_.find(id);
    if (it == scorers_.end()) throw QualityError("unknown scorer '" + id + "'");
    const double v = it->second(image);
    if (!std::isfinite(v)) throw QualityError("scorer '" + id + "' produced a non-finite value");
    return v;
  }

 private:
  std::map<std::string, Scorer> scorers_;
};

inline double score_image(const Image& image, const std::string& scorer_id) {
  static const ScorerRegistry builtins = ScorerRegistry::with_builtins();
  return builtins.score(image, scorer_id);
}

/// image path -> scorer id -> value
using ScoreTable = std::map<std::string, std::map<std::string, double>>;

enum class Direction { HigherIsBetter, LowerIsBetter };

inline Direction parse_direction(const std::string& s) {
  if (s == "higher") return Direction::HigherIsBetter;
  if (s == "lower") return Direction::LowerIsBetter;
  throw QualityError("direction must be 'higher' or 'lower', got '" + s + "'");
}

inline bool passes(double score, double threshold, Direction dir) {
  return dir == Direction::HigherIsBetter ? score >= threshold : score <= threshold;
}

struct StratifiedSample {
  std::vector<std::string> images;  // sorted, unique
  std::vector<std::string> warnings;
};

/// For every scorer, cuts [min, max] into equal sub-ranges and draws up to
/// `min_per_bin` images from each; the union over scorers is returned.
inline StratifiedSample stratified_sample(const ScoreTable& scores, const std::vector<std::string>& scorer_ids,
                                          std::size_t bins, std::size_t min_per_bin, std::uint64_t seed) {
  if (scores.empty()) throw QualityError("stratified sampling on an empty dataset");
  if (bins < 2) throw QualityError("stratified sampling needs at least 2 bins");
  StratifiedSample out;
  std::set<std::string> chosen;
  Rng rng(seed);
  for (const auto& scorer : scorer_ids) {
    std::vector<std::pair<std::string, double>> values;
    for (const auto& [path, vec] : scores) {
      auto it = vec.find(scorer);
      if (it == vec.end()) throw QualityError("image '" + path + "' has no '" + scorer + "' score");
      values.emplace_back(path, it->second);
    }
    double lo = values.front().second, hi = lo;
    for (const auto& [_, v] : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<std::vector<std::string>> members(bins);
    for (const auto& [path, v] : values) {
      std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
      members[std::min(b, bins - 1)].push_back(path);
    }
    for (std::size_t b = 0; b < bins; ++b) {
      if (members[b].empty()) {
        out.warnings.push_back("scorer '" + scorer + "': sub-range " + std::to_string(b) + " is empty");
        continue;
      }
      rng.shuffle(members[b]);
      const std::size_t take = std::min(min_per_bin, members[b].size());
      chosen.insert(members[b].begin(), members[b].begin() + static_cast<std::ptrdiff_t>(take));
    }
  }
  out.images.assign(chosen.begin(), chosen.end());
  return out;
}

struct FarFrrPoint {
  double threshold = 0.0;
  double far = 0.0;  // manually rejected images that pass
  double frr = 0.0;  // manually accepted images that fail
  friend bool operator==(const FarFrrPoint&, const FarFrrPoint&) = default;
};

/// Operating points ordered from the loosest to the tightest threshold.
struct FarFrrCurve {
  Direction direction = Direction::HigherIsBetter;
  std::vector<FarFrrPoint> points;
};

/// FAR/FRR at every distinct score plus a reject-everything sentinel (+inf
/// for higher-is-better, -inf for lower-is-better). `accepted[i]` is the
/// manual decision for `scores[i]`.
inline FarFrrCurve far_frr(const std::vector<double>& scores, const std::vector<bool>& accepted, Direction dir) {
  if (scores.size() != accepted.size()) throw QualityError("far_frr: scores and labels differ in length");
  const auto n_acc = static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), true));
  const std::size_t n_rej = accepted.size() - n_acc;
  if (n_acc == 0 || n_rej == 0) throw QualityError("far_frr: both accept and reject labels are required");

  // Map to a higher-is-better view so one sweep serves both directions.
  const double sign = dir == Direction::HigherIsBetter ? 1.0 : -1.0;
  std::vector<std::pair<double, bool>> items;
  items.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw QualityError("far_frr: non-finite score");
    items.emplace_back(sign * scores[i], accepted[i]);
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  FarFrrCurve curve;
  curve.direction = dir;
  std::size_t acc_below = 0, rej_below = 0;
  for (std::size_t i = 0; i < items.size();) {
    const double v = items[i].first;
    curve.points.push_back({sign * v, static_cast<double>(n_rej - rej_below) / static_cast<double>(n_rej),
                            static_cast<double>(acc_below) / static_cast<double>(n_acc)});
    for (; i < items.size() && items[i].first == v; ++i) (items[i].second ? acc_below : rej_below)++;
  }
  curve.points.push_back({sign * std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return curve;
}

struct EerPoint {
  double threshold = 0.0;
  double eer = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// Point minimising |FAR - FRR|; ties go to the smaller max(FAR, FRR), then to the lower threshold.
inline EerPoint eer_threshold(const FarFrrCurve& curve) {
  if (curve.points.empty()) throw QualityError("eer_threshold: empty curve");
  const FarFrrPoint* best = nullptr;
  for (const auto& p : curve.points) {
    if (!best) {
      best = &p;
      continue;
    }
    const double gap = std::abs(p.far - p.frr), best_gap = std::abs(best->far - best->frr);
    const double worst = std::max(p.far, p.frr), best_worst = std::max(best->far, best->frr);
    if (gap < best_gap || (gap == best_gap && (worst < best_worst || (worst == best_worst && p.threshold < best->threshold)))) {
      best = &p;
    }
  }
  return {best->threshold, 0.5 * (best->far + best->frr), best->far, best->frr};
}

struct ScorerThreshold {
  double threshold = 0.0;
  Direction direction = Direction::HigherIsBetter;
};

/// Images passing every scorer's threshold, sorted by path.
inline std::vector<std::string> joint_filter(const ScoreTable& scores,
                                             const std::map<std::string, ScorerThreshold>& thresholds) {
  std::vector<std::string> accepted;
  for (const auto& [path, vec] : scores) {
    bool ok = true;
    for (const auto& [scorer, th] : thresholds) {
      auto it = vec.find(scorer);
      if (it == vec.end()) throw QualityError("image '" + path + "' is missing a '" + scorer + "' score");
      ok = ok && passes(it->second, th.threshold, th.direction);
    }
    if (ok) accepted.push_back(path);
  }
  return accepted;
}

// Score file: image_path,scorer_id,value. Label file: image_path,decision.

inline ScoreTable read_scores(const std::string& path) {
  const Table t = read_table(path, {"image_path", "scorer_id", "value"});
  ScoreTable out;
  for (const auto& row : t.rows) {
    const std::string where = path + ":" + std::to_string(row.line);
    const double v = parse_double(row.fields[2], where);
    if (!std::isfinite(v)) throw QualityError(where + ": non-finite score");
    if (!out[row.fields[0]].emplace(row.fields[1], v).second) {
      throw QualityError(where + ": duplicate score for '" + row.fields[0] + "' / '" + row.fields[1] + "'");
    }
  }
  return out;
}

inline void write_scores(std::ostream& out, const ScoreTable& scores) {
  TableWriter w(out, {"image_path", "scorer_id", "value"});
  for (const auto& [path, vec] : scores) {
    for (const auto& [scorer, v] : vec) w.row({path, scorer, format_double(v)});
  }
}

inline std::map<std::string, bool> read_labels(const std::string& path) {
  const Table t = read_table(path, {"image_path", "decision"});
  std::map<std::string, bool> out;
  for (const auto& row : t.rows) {
    const std::string where = path + ":" + std::to_string(row.line);
    const auto& d = row.fields[1];
    if (d != "accept" && d != "reject") throw QualityError(where + ": decision must be accept or reject");
    if (!out.emplace(row.fields[0], d == "accept").second) {
      throw QualityError(where + ": second label for '" + row.fields[0] + "'");
    }
  }
  return out;
}

}  // namespace fusedmad::quality
