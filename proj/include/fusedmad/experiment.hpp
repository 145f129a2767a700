#pragma once

// End-to-end synthetic experiment: generate identities, harvest morphs and
// selfmorphs with disjoint identity halves, balance, train the dual model,
// then score a held-out protocol of fresh captures and fresh morphs.

#include <chrono>
#include <cstdio>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fusedmad/harvest.hpp"
#include "fusedmad/metrics.hpp"
#include "fusedmad/model.hpp"
#include "fusedmad/morph.hpp"
#include "fusedmad/parallel.hpp"
#include "fusedmad/synthetic.hpp"
#include "fusedmad/train.hpp"

namespace fusedmad {

/// Capture indices at or above this value are never used for training.
inline constexpr std::uint64_t kHeldOutCaptureBase = 1'000'000;

struct ExperimentConfig {
  SyntheticConfig faces{};
  int captures_per_identity = 40;
  int heldout_captures = 4;          // per identity
  std::size_t heldout_morphs = 0;    // 0: as many as held-out bona fide captures
  int input_side = 32;
  BackboneConfig backbone{32 * 32, {64}, 32};
  bool tie_backbones = false;
  BalanceMode balance = BalanceMode::Full;
  TrainConfig train{};
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

struct ExperimentResult {
  TraceRow initial_losses;
  TraceRow final_losses;
  std::size_t training_samples = 0;
  TrainResult trained;
  std::vector<metrics::ScoredSample> heldout;
  metrics::DetCurve curve;
  double apcer_at_bpcer_10 = 1.0;
  double mean_morph_score = 0.0;
  double mean_bona_fide_score = 0.0;
  double seconds = 0.0;
};

struct HeldOutProbe {
  std::string name;  // file stem, unique within the protocol
  metrics::Truth truth;
  Image image;
  Image live;  // fresh capture of the (first) contributing identity; empty unless requested
};

/// Held-out protocol over capture indices the training catalog never uses:
/// `per_identity` fresh captures of every identity as bona fide, plus
/// `morphs` morphs of random distinct identity pairs (0: as many as bona fide).
inline std::vector<HeldOutProbe> heldout_probes(const SyntheticFaces& faces, int per_identity, std::size_t morphs,
                                                std::uint64_t seed, bool with_live) {
  if (per_identity < 1) throw MorphError("held-out protocol needs at least one capture per identity");
  const auto ids = static_cast<std::size_t>(faces.identities());
  const auto per = static_cast<std::uint64_t>(per_identity);
  std::vector<std::vector<SyntheticFaces::Capture>> held(ids);
  for (std::size_t id = 0; id < ids; ++id) {
    for (std::uint64_t k = 0; k < per; ++k) held[id].push_back(faces.capture(static_cast<int>(id), kHeldOutCaptureBase + k));
  }
  auto live_of = [&](std::size_t id, std::uint64_t k) {
    return with_live ? faces.capture(static_cast<int>(id), kHeldOutCaptureBase + per + k).image : Image{};
  };
  std::vector<HeldOutProbe> probes;
  for (std::size_t id = 0; id < ids; ++id) {
    for (std::uint64_t k = 0; k < per; ++k) {
      probes.push_back({SyntheticFaces::identity_name(static_cast<int>(id)) + "_" + std::to_string(k),
                        metrics::Truth::BonaFide, held[id][k].image, live_of(id, k)});
    }
  }
  const std::size_t n_morph = morphs ? morphs : ids * per;
  Rng pick(Rng::mix(seed, 8));
  for (std::size_t m = 0; m < n_morph; ++m) {
    const auto a = pick.index(ids);
    auto b = pick.index(ids - 1);
    if (b >= a) ++b;
    const auto ka = pick.index(held[a].size());
    const auto& ca = held[a][ka];
    const auto& cb = held[b][pick.index(held[b].size())];
    char name[32];
    std::snprintf(name, sizeof(name), "morph_%04zu", m);
    probes.push_back({name, metrics::Truth::Morph,
                      morph(ca.image, ca.landmarks, cb.image, cb.landmarks, kDefaultMorphAlpha, BackgroundSource::Random,
                            Rng::mix(seed, 1'000'000 + m)),
                      live_of(a, ka)});
  }
  return probes;
}

inline ExperimentResult run_experiment(ExperimentConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.faces.seed = Rng::mix(cfg.seed, 1);
  cfg.train.seed = Rng::mix(cfg.seed, 2);
  cfg.backbone.input_dim = static_cast<std::size_t>(cfg.input_side) * cfg.input_side;
  const SyntheticFaces faces(cfg.faces);

  // Catalog of training captures, kept in memory under virtual paths.
  IdentityCatalog catalog;
  std::map<std::string, SyntheticFaces::Capture> captures;
  for (int id = 0; id < faces.identities(); ++id) {
    Identity ident{SyntheticFaces::identity_name(id), {}};
    for (int k = 0; k < cfg.captures_per_identity; ++k) {
      const std::string path = ident.id + "/" + std::to_string(k);
      captures.emplace(path, faces.capture(id, static_cast<std::uint64_t>(k)));
      ident.images.push_back({path, path + ".lmk"});
    }
    catalog.identities.push_back(std::move(ident));
  }
  validate_catalog(catalog);

  PairingPlan plan;
  plan.seed = cfg.seed;
  plan.split = split_identities(catalog, Rng::mix(cfg.seed, 3));
  plan.selfmorph_pairs = plan_selfmorphs(catalog, Rng::mix(cfg.seed, 4)).pairs;
  plan.morph_pairs =
      plan_morphs(catalog, plan.split, catalog.image_count() + plan.selfmorph_pairs.size(), Rng::mix(cfg.seed, 5));
  const auto records = balance(assign_labels(plan, catalog, "generated"), Rng::mix(cfg.seed, 6), cfg.balance);

  const auto rows = plan_rows(plan, catalog);
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < rows.size(); ++i) row_of.emplace(join_path("generated", rows[i].output), i);

  std::vector<std::vector<double>> inputs(records.size());
  parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
    const auto& r = records[i];
    if (r.kind == SampleKind::BonaFide) {
      inputs[i] = preprocess(captures.at(r.image_path).image, cfg.input_side);
      return;
    }
    const auto& row = rows[row_of.at(r.image_path)];
    const auto& a = captures.at(row.a.image_path);
    const auto& b = captures.at(row.b.image_path);
    const Image m = morph(a.image, a.landmarks, b.image, b.landmarks, kDefaultMorphAlpha, BackgroundSource::Random,
                          Rng::mix(cfg.seed, 100 + row_of.at(r.image_path)));
    inputs[i] = preprocess(m, cfg.input_side);
  });
  std::vector<std::size_t> y1, y2;
  for (const auto& r : records) {
    y1.push_back(r.y1);
    y2.push_back(r.y2);
  }
  const TrainingSet set = make_training_set(inputs, y1, y2);

  ModelConfig mc{cfg.backbone, catalog.identities.size(), cfg.tie_backbones};
  DualModel model = DualModel::initialize(mc, Rng::mix(cfg.seed, 7));

  ExperimentResult result;
  result.training_samples = set.size();
  result.initial_losses = evaluate_losses(model, set, cfg.train.weights);
  result.trained = train(std::move(model), set, cfg.train);
  result.final_losses = evaluate_losses(result.trained.model, set, cfg.train.weights);

  const auto probes = heldout_probes(faces, cfg.heldout_captures, cfg.heldout_morphs, cfg.seed, false);
  std::size_t n_morph = 0;
  for (const auto& p : probes) n_morph += p.truth == metrics::Truth::Morph;
  const std::size_t n_bona = probes.size() - n_morph;
  std::vector<double> scores(probes.size());
  parallel_for(probes.size(), cfg.jobs, [&](std::size_t i) {
    scores[i] = morph_score(result.trained.model, preprocess(probes[i].image, cfg.input_side));
  });
  double sum_m = 0.0, sum_b = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    result.heldout.push_back({probes[i].name, probes[i].truth, scores[i]});
    (probes[i].truth == metrics::Truth::Morph ? sum_m : sum_b) += scores[i];
  }
  result.mean_morph_score = sum_m / static_cast<double>(n_morph);
  result.mean_bona_fide_score = sum_b / static_cast<double>(n_bona);
  result.curve = metrics::det_curve(result.heldout);
  result.apcer_at_bpcer_10 = metrics::apcer_at_bpcer(result.curve, 0.1);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace fusedmad
