// fusedmad command-line driver.
//
// Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fusedmad/bench.hpp"
#include "fusedmad/experiment.hpp"
#include "fusedmad/gradcheck.hpp"
#include "fusedmad/harvest.hpp"
#include "fusedmad/model_io.hpp"
#include "fusedmad/morph.hpp"
#include "fusedmad/quality.hpp"
#include "fusedmad/synthetic.hpp"
#include "fusedmad/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fusedmad;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown after per-item failures were already reported.
class ItemFailures : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kCommands = {"synth", "harvest", "morph", "selfmorph", "filter",
                                            "train", "score",   "bench", "gradcheck"};
const std::set<std::string> kGlobalKeys = {"seed", "jobs", "out"};

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

std::string json_scalar(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  throw UsageError("config key '" + key + "' must be a string, number, boolean or list of those");
}

json read_config_file(const std::string& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file '" + path + "': " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config file '" + path + "' must hold a JSON object");
  // A recorded run config ({"command": ..., "config": {...}}) replays directly.
  if (cfg.contains("command") && cfg.contains("config") && cfg.size() == 2) {
    if (cfg["command"] != command) {
      throw UsageError("config file '" + path + "' records a '" + cfg["command"].dump() + "' run, not '" + command + "'");
    }
    cfg = cfg["config"];
    if (!cfg.is_object()) throw UsageError("config file '" + path + "': 'config' must be an object");
  }
  if (cfg.contains("config")) throw UsageError("config file '" + path + "' may not name another config file");
  return cfg;
}

// Splices config-file keys into argv as --key=value: global keys before the
// subcommand, the rest right after it. Explicit flags come later and win.
std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string config_path;
  std::size_t command_at = 0;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.starts_with("--config=")) {
      config_path = a.substr(9);
    } else if (a == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (a.starts_with("-")) {
      if (a.find('=') == std::string::npos && (a == "--seed" || a == "--jobs" || a == "--out")) ++i;
    } else if (command_at == 0 && std::find(kCommands.begin(), kCommands.end(), a) != kCommands.end()) {
      command_at = i;
    }
  }
  if (config_path.empty()) return args;
  if (command_at == 0) throw UsageError("--config needs a subcommand");
  const json cfg = read_config_file(config_path, args[command_at]);
  std::vector<std::string> global, local;
  for (const auto& [key, value] : cfg.items()) {
    auto& dst = kGlobalKeys.contains(key) ? global : local;
    if (value.is_array()) {
      for (const auto& v : value) dst.push_back("--" + key + "=" + json_scalar(v, key));
    } else {
      dst.push_back("--" + key + "=" + json_scalar(value, key));
    }
  }
  std::vector<std::string> out(args.begin(), args.begin() + 1);
  out.insert(out.end(), global.begin(), global.end());
  out.insert(out.end(), args.begin() + 1, args.begin() + static_cast<std::ptrdiff_t>(command_at) + 1);
  out.insert(out.end(), local.begin(), local.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(command_at) + 1, args.end());
  return out;
}

json option_value(const CLI::Option* opt) {
  const bool flag = opt->get_expected_min() == 0;
  std::vector<std::string> values = opt->count() ? opt->results() : std::vector<std::string>{};
  if (values.empty() && !opt->get_default_str().empty()) values = {opt->get_default_str()};
  const std::string type = opt->get_type_name();
  const bool numeric = type.starts_with("INT") || type.starts_with("UINT") || type.starts_with("FLOAT") ||
                       type.starts_with("POSITIVE") || type.starts_with("NONNEGATIVE") || type.starts_with("NUMBER");
  auto one = [&](const std::string& s) -> json {
    if (flag) return s == "true" || s == "1";
    if (numeric) {
      try {
        return json::parse(s);
      } catch (const json::exception&) {
      }
    }
    return s;
  };
  if (flag) return values.empty() ? json(false) : one(values.back());
  if (opt->get_items_expected_max() > 1) {
    json arr = json::array();
    for (const auto& v : values) arr.push_back(v);
    return arr;
  }
  return values.empty() ? json(nullptr) : one(values.back());
}

void record_config(const CLI::App& app, const CLI::App& sub, const fs::path& dir) {
  json cfg = json::object();
  for (const CLI::App* a : {&app, &sub}) {
    for (const CLI::Option* opt : a->get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string key = opt->get_lnames().front();
      if (key == "help" || key == "config") continue;
      cfg[key] = option_value(opt);
    }
  }
  fs::create_directories(dir);
  std::ofstream out(dir / (sub.get_name() + "_config.json"), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write run config in '" + dir.string() + "'");
  out << json{{"command", sub.get_name()}, {"config", cfg}}.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

std::vector<std::size_t> parse_widths(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  for (const auto& f : split(s, ',')) {
    const long long v = parse_int(trim(f), key);
    if (v <= 0) throw UsageError(key + ": widths must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// "name=value" pairs from repeated options.
std::map<std::string, std::string> parse_assignments(const std::vector<std::string>& items, const std::string& key) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError(key + ": expected name=value, got '" + item + "'");
    out.insert_or_assign(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

// Scientific notation without exponent padding: 1e-4, 2.5e-6.
std::string short_sci(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific);
  std::string s(buf, res.ptr);
  const auto e = s.find('e');
  std::size_t digits = e + 2;
  while (digits + 1 < s.size() && s[digits] == '0') s.erase(digits, 1);
  if (s[e + 1] == '+') s.erase(e + 1, 1);
  return s;
}

void warn(const std::string& msg) { std::cerr << "fusedmad: warning: " << msg << '\n'; }

// --- synth -------------------------------------------------------------------

struct SynthOpts {
  int identities = 20, captures = 40, size = 64, heldout = 4;
  std::size_t heldout_morphs = 0;
  double jitter = 1.2, pose = 1.5, noise = 0.02;
};

void run_synth(const Globals& g, const SynthOpts& o) {
  SyntheticConfig sc{o.identities, o.size, o.jitter, o.pose, o.noise, Rng::mix(g.seed, 1)};
  const SyntheticFaces faces(sc);
  const fs::path out(g.out);
  write_synthetic_catalog(faces, out / "catalog", 0, static_cast<std::uint64_t>(o.captures));
  const auto probes = heldout_probes(faces, o.heldout, o.heldout_morphs, g.seed, true);
  fs::create_directories(out / "heldout" / "live");
  bench::ProtocolManifest m{"synthetic", {}, {}, {}};
  for (const auto& p : probes) {
    const std::string probe = "heldout/" + p.name + ".pgm", live = "heldout/live/" + p.name + ".pgm";
    write_pnm((out / probe).string(), p.image);
    write_pnm((out / live).string(), p.live);
    (p.truth == metrics::Truth::Morph ? m.morph : m.bona_fide).push_back(probe);
    m.live.emplace(probe, live);
  }
  auto f = open_out(out / "protocol.txt");
  bench::write_protocol(f, m);
  std::cout << "synth: " << o.identities << " identities x " << o.captures << " captures, protocol with "
            << m.bona_fide.size() << " bona fide and " << m.morph.size() << " morphs\n";
}

// --- harvest -----------------------------------------------------------------

struct HarvestOpts {
  std::string catalog, generated, balance = "full";
  std::size_t morphs = 0;
};

void run_harvest(const Globals& g, const HarvestOpts& o) {
  const BalanceMode mode = parse_balance_mode(o.balance);
  const IdentityCatalog catalog = scan_catalog(o.catalog);
  const fs::path out(g.out);
  const std::string generated = o.generated.empty() ? (out / "generated").string() : o.generated;

  PairingPlan plan;
  plan.seed = g.seed;
  plan.split = split_identities(catalog, Rng::mix(g.seed, 3));
  const auto selfmorphs = plan_selfmorphs(catalog, Rng::mix(g.seed, 4));
  for (const auto& w : selfmorphs.warnings) warn(w);
  plan.selfmorph_pairs = selfmorphs.pairs;
  std::size_t available = 0;
  {
    std::size_t n1 = 0, n2 = 0;
    for (const auto& id : plan.split.half1) n1 += catalog.find(id).images.size();
    for (const auto& id : plan.split.half2) n2 += catalog.find(id).images.size();
    available = n1 * n2;
  }
  std::size_t count = o.morphs;
  if (count == 0) count = std::min(available, catalog.image_count() + plan.selfmorph_pairs.size());
  plan.morph_pairs = plan_morphs(catalog, plan.split, count, Rng::mix(g.seed, 5));

  const auto records = assign_labels(plan, catalog, generated);
  const auto balanced = balance(records, Rng::mix(g.seed, 6), mode);
  fs::create_directories(out);
  {
    auto f = open_out(out / "split.csv");
    TableWriter w(f, {"identity", "half"});
    for (const auto& id : plan.split.half1) w.row({id, "1"});
    for (const auto& id : plan.split.half2) w.row({id, "2"});
  }
  {
    auto f = open_out(out / "plan.csv");
    write_plan(f, plan_rows(plan, catalog));
  }
  write_manifest_file((out / "records.csv").string(), records);
  write_manifest_file((out / "manifest.csv").string(), balanced);
  std::cout << "harvest: " << catalog.identities.size() << " identities, " << catalog.image_count() << " images, "
            << plan.morph_pairs.size() << " morphs, " << plan.selfmorph_pairs.size() << " selfmorphs, "
            << balanced.size() << " balanced training records\n";
}

// --- morph / selfmorph ---------------------------------------------------------

struct MorphOpts {
  std::string plan, background = "random";
  double alpha = kDefaultMorphAlpha;
};

BackgroundSource parse_background(const std::string& s) {
  if (s == "first") return BackgroundSource::First;
  if (s == "second") return BackgroundSource::Second;
  if (s == "random") return BackgroundSource::Random;
  throw UsageError("background must be first, second or random, got '" + s + "'");
}

void run_generate(const Globals& g, const MorphOpts& o, SampleKind kind) {
  const BackgroundSource bg = kind == SampleKind::Morph ? parse_background(o.background) : BackgroundSource::Random;
  const double alpha = kind == SampleKind::Morph ? o.alpha : kDefaultMorphAlpha;
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  const auto all = read_plan(o.plan);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].kind == kind) rows.push_back(i);
  }
  const fs::path out(g.out);
  fs::create_directories(out);
  std::vector<std::string> failures(rows.size());
  std::vector<std::vector<std::string>> warnings(rows.size());
  parallel_for(rows.size(), g.jobs, [&](std::size_t k) {
    const auto& r = all[rows[k]];
    try {
      const Image a = read_pnm(r.a.image_path), b = read_pnm(r.b.image_path);
      const auto la = read_landmarks(r.a.landmark_path), lb = read_landmarks(r.b.landmark_path);
      const auto res = morph_detailed(a, la, b, lb, alpha, bg, Rng::mix(g.seed, 100 + rows[k]));
      warnings[k] = res.warnings;
      write_pnm((out / r.output).string(), res.image);
    } catch (const std::exception& e) {
      failures[k] = e.what();
    }
  });
  std::vector<SampleRecord> records;
  std::size_t failed = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = all[rows[k]];
    for (const auto& w : warnings[k]) warn(r.output + ": " + w);
    if (!failures[k].empty()) {
      std::cerr << "fusedmad: error: " << o.plan << " row " << rows[k] + 1 << " (" << r.output << "): " << failures[k]
                << '\n';
      ++failed;
      continue;
    }
    std::vector<std::string> ids{r.id_a};
    if (r.id_b != r.id_a) ids.push_back(r.id_b);
    records.push_back({kind, (out / r.output).string(), r.y1, r.y2, ids});
  }
  write_manifest_file((out / (std::string(kind_name(kind)) + "_records.csv")).string(), records);
  std::cout << kind_name(kind) << ": " << records.size() << " of " << rows.size() << " images written\n";
  if (failed) throw ItemFailures(std::to_string(failed) + " of " + std::to_string(rows.size()) + " items failed");
}

// --- filter ------------------------------------------------------------------

struct FilterOpts {
  std::string scores, images, labels;
  std::vector<std::string> thresholds, directions;
  std::size_t bins = 0, min_per_bin = 2;
};

void run_filter(const Globals& g, const FilterOpts& o) {
  if (o.scores.empty() == o.images.empty()) throw UsageError("filter needs exactly one of --scores or --images");
  quality::ScoreTable table;
  if (!o.scores.empty()) {
    table = quality::read_scores(o.scores);
  } else {
    std::vector<std::string> paths;
    for (const auto& e : fs::recursive_directory_iterator(o.images)) {
      if (e.is_regular_file() && is_raster_path(e.path())) paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw UsageError("no images under '" + o.images + "'");
    const auto registry = quality::ScorerRegistry::with_builtins();
    std::vector<std::map<std::string, double>> rows(paths.size());
    std::vector<std::string> failures(paths.size());
    parallel_for(paths.size(), g.jobs, [&](std::size_t i) {
      try {
        const Image img = read_pnm(paths[i]);
        for (const auto& id : registry.ids()) rows[i][id] = registry.score(img, id);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    });
    std::size_t failed = 0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      if (failures[i].empty()) {
        table[paths[i]] = rows[i];
      } else {
        std::cerr << "fusedmad: error: " << paths[i] << ": " << failures[i] << '\n';
        ++failed;
      }
    }
    if (failed) throw ItemFailures(std::to_string(failed) + " images could not be scored");
  }
  if (table.empty()) throw UsageError("no scores to filter");
  std::set<std::string> scorers;
  for (const auto& [path, vec] : table) {
    for (const auto& [id, v] : vec) scorers.insert(id);
  }

  std::map<std::string, quality::Direction> direction;
  for (const auto& s : scorers) direction[s] = quality::Direction::HigherIsBetter;
  for (const auto& [s, d] : parse_assignments(o.directions, "--direction")) {
    if (!scorers.contains(s)) throw UsageError("--direction names unknown scorer '" + s + "'");
    direction[s] = quality::parse_direction(d);
  }

  const fs::path out(g.out);
  fs::create_directories(out);
  {
    auto f = open_out(out / "scores.csv");
    quality::write_scores(f, table);
  }
  if (o.bins > 0) {
    const auto sample = quality::stratified_sample(table, {scorers.begin(), scorers.end()}, o.bins, o.min_per_bin,
                                                   Rng::mix(g.seed, 9));
    for (const auto& w : sample.warnings) warn(w);
    auto f = open_out(out / "sample.csv");
    TableWriter w(f, {"image_path"});
    for (const auto& p : sample.images) w.row({p});
    std::cout << "filter: " << sample.images.size() << " images sampled for labeling\n";
  }

  std::map<std::string, quality::ScorerThreshold> thresholds;
  std::map<std::string, quality::EerPoint> eer;
  if (!o.labels.empty()) {
    const auto labels = quality::read_labels(o.labels);
    for (const auto& s : scorers) {
      std::vector<double> values;
      std::vector<bool> accepted;
      for (const auto& [path, decision] : labels) {
        auto it = table.find(path);
        if (it == table.end()) throw UsageError("labelled image '" + path + "' has no scores");
        auto sit = it->second.find(s);
        if (sit == it->second.end()) throw UsageError("labelled image '" + path + "' has no '" + s + "' score");
        values.push_back(sit->second);
        accepted.push_back(decision);
      }
      const auto point = quality::eer_threshold(quality::far_frr(values, accepted, direction.at(s)));
      eer[s] = point;
      thresholds[s] = {point.threshold, direction.at(s)};
    }
  }
  for (const auto& [s, v] : parse_assignments(o.thresholds, "--threshold")) {
    if (!scorers.contains(s)) throw UsageError("--threshold names unknown scorer '" + s + "'");
    thresholds[s] = {parse_double(v, "--threshold " + s), direction.at(s)};
    eer.erase(s);
  }
  if (thresholds.empty()) return;
  for (const auto& s : scorers) {
    if (!thresholds.contains(s)) throw UsageError("no threshold for scorer '" + s + "' (give --labels or --threshold)");
  }
  {
    auto f = open_out(out / "thresholds.csv");
    TableWriter w(f, {"scorer_id", "direction", "threshold", "eer", "far", "frr"});
    for (const auto& [s, th] : thresholds) {
      const bool has = eer.contains(s);
      w.row({s, th.direction == quality::Direction::HigherIsBetter ? "higher" : "lower", format_double(th.threshold),
             has ? format_double(eer.at(s).eer) : "", has ? format_double(eer.at(s).far) : "",
             has ? format_double(eer.at(s).frr) : ""});
    }
  }
  const auto accepted = quality::joint_filter(table, thresholds);
  auto f = open_out(out / "accepted.csv");
  TableWriter w(f, {"image_path"});
  for (const auto& p : accepted) w.row({p});
  std::cout << "filter: " << accepted.size() << " of " << table.size() << " images accepted\n";
}

// --- train -------------------------------------------------------------------

struct ModelOpts {
  std::string hidden = "64";
  std::size_t feature_dim = 32;
  bool tie = false;
  double alpha1 = 0.2, alpha2 = 0.2, beta = 1.0;
};

struct TrainOpts {
  std::string manifest;
  int input_side = 32;
  std::size_t classes = 0, batch_size = 32, epochs = 40;
  double learning_rate = 0.03;
};

void run_train(const Globals& g, const ModelOpts& m, const TrainOpts& o) {
  if (o.input_side < 4) throw UsageError("input-side must be at least 4");
  const auto records = read_manifest_file(o.manifest);
  if (records.empty()) throw UsageError("manifest '" + o.manifest + "' has no records");
  std::size_t classes = o.classes;
  std::size_t max_label = 0;
  for (const auto& r : records) max_label = std::max({max_label, r.y1, r.y2});
  if (classes == 0) classes = max_label + 1;
  if (max_label >= classes) throw UsageError("manifest uses class " + std::to_string(max_label) + " but classes=" + std::to_string(classes));

  ModelConfig mc{{static_cast<std::size_t>(o.input_side) * o.input_side, parse_widths(m.hidden, "--hidden"), m.feature_dim},
                 classes, m.tie};
  TrainConfig tc{{m.alpha1, m.alpha2, m.beta}, o.learning_rate, o.batch_size, o.epochs, Rng::mix(g.seed, 2)};
  mc.validate();
  tc.validate();
  const TrainingSet set = load_training_set(records, o.input_side, g.jobs);
  const DualModel init = DualModel::initialize(mc, Rng::mix(g.seed, 7));
  const auto before = evaluate_losses(init, set, tc.weights);
  const auto res = train(init, set, tc);
  const auto after = evaluate_losses(res.model, set, tc.weights);
  const fs::path out(g.out);
  fs::create_directories(out);
  save_model((out / "model.ckpt").string(), {res.model, o.input_side});
  auto f = open_out(out / "trace.csv");
  write_trace(f, res.trace);
  std::cout << "train: " << set.size() << " samples, " << res.trace.size() << " steps, L " << format_double(before.total)
            << " -> " << format_double(after.total) << " (L1 " << format_double(after.l1) << ", L2 "
            << format_double(after.l2) << ", L3 " << format_double(after.l3) << ")\n";
}

// --- score / bench -----------------------------------------------------------

bench::Mode parse_mode(const std::string& s) {
  if (s == "single") return bench::Mode::Single;
  if (s == "differential") return bench::Mode::Differential;
  throw UsageError("mode must be single or differential, got '" + s + "'");
}

void write_errors(const fs::path& p, const std::vector<bench::ScoreError>& errors) {
  auto f = open_out(p);
  TableWriter w(f, {"path", "message"});
  for (const auto& e : errors) {
    std::string msg = e.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    w.row({e.path, msg});
  }
}

struct ScoreOpts {
  std::string model, protocol, mode = "single";
};

void run_score(const Globals& g, const ScoreOpts& o) {
  const auto mode = parse_mode(o.mode);
  const auto bundle = load_model(o.model);
  const auto manifest = bench::read_protocol(o.protocol);
  const auto set = bench::score_protocol(bundle, manifest, mode, g.jobs);
  const fs::path out(g.out);
  fs::create_directories(out);
  auto f = open_out(out / "scores.csv");
  bench::write_scores(f, set.samples);
  write_errors(out / "errors.csv", set.errors);
  for (const auto& e : set.errors) warn(e.path + ": " + e.message);
  std::cout << "score: " << set.samples.size() << " scored, " << set.errors.size() << " errors\n";
}

struct BenchOpts {
  std::string model, run = "run", mode = "single";
  std::vector<std::string> protocols, score_files;
};

void run_bench(const Globals& g, const BenchOpts& o) {
  if (o.protocols.empty() && o.score_files.empty()) throw UsageError("bench needs --protocol or --scores");
  if (!o.protocols.empty() && o.model.empty()) throw UsageError("--protocol needs --model");
  const auto mode = parse_mode(o.mode);
  const fs::path out(g.out);
  fs::create_directories(out);
  std::vector<bench::ProtocolResult> results;
  std::set<std::string> names;
  if (!o.protocols.empty()) {
    const auto bundle = load_model(o.model);
    for (const auto& path : o.protocols) {
      const auto manifest = bench::read_protocol(path);
      if (!names.insert(manifest.name).second) throw UsageError("protocol name '" + manifest.name + "' repeats");
      auto set = bench::score_protocol(bundle, manifest, mode, g.jobs);
      for (const auto& e : set.errors) warn(manifest.name + ": " + e.path + ": " + e.message);
      auto f = open_out(out / ("scores_" + manifest.name + ".csv"));
      bench::write_scores(f, set.samples);
      write_errors(out / ("errors_" + manifest.name + ".csv"), set.errors);
      results.push_back({o.run, manifest.name, std::move(set.samples), set.errors.size()});
    }
  }
  for (const auto& [name, file] : parse_assignments(o.score_files, "--scores")) {
    if (!names.insert(name).second) throw UsageError("protocol name '" + name + "' repeats");
    results.push_back({o.run, name, bench::read_scores(file), 0});
  }
  const auto rows = bench::report(results, out);
  bench::write_report_table(std::cout, rows);
}

// --- gradcheck ---------------------------------------------------------------

struct GradOpts {
  std::size_t models = 1, input_dim = 6, classes = 3, batch = 6;
  double epsilon = 1e-5, rtol = 1e-4;
};

void run_gradcheck(const Globals& g, const ModelOpts& m, const GradOpts& o) {
  GradCheckSetup setup;
  setup.model = {{o.input_dim, parse_widths(m.hidden, "--hidden"), m.feature_dim}, o.classes, m.tie};
  setup.weights = {m.alpha1, m.alpha2, m.beta};
  setup.batch = o.batch;
  setup.epsilon = o.epsilon;
  setup.rtol = o.rtol;
  setup.model.validate();
  setup.weights.validate();
  if (o.models == 0) throw UsageError("models must be positive");
  if (!(o.epsilon > 0.0) || !(o.rtol > 0.0)) throw UsageError("epsilon and rtol must be positive");

  const fs::path out(g.out);
  fs::create_directories(out);
  auto f = open_out(out / "gradcheck.csv");
  TableWriter w(f, {"model", "parameter", "max_relative_error", "analytic", "numeric", "pass"});
  bool pass = true;
  double worst = 0.0;
  for (std::size_t k = 0; k < o.models; ++k) {
    const auto c = random_gradcheck_case(setup, Rng::mix(g.seed, k));
    const auto report = check_case(setup, c);
    for (const auto& p : report.params) {
      w.row({std::to_string(k), p.name, format_double(p.max_relative_error), format_double(p.analytic),
             format_double(p.numeric), p.pass ? "true" : "false"});
    }
    pass = pass && report.pass;
    worst = std::max(worst, report.max_relative_error());
  }
  std::cout << (pass ? "PASS" : "FAIL") << " rtol=" << short_sci(o.rtol) << " models=" << o.models
            << " max_rel_err=" << format_double(worst) << '\n';
  if (!pass) throw ItemFailures("gradient check failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fusedmad: morph generation, quality filtering, fused dual-network training and evaluation"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON file of option values; explicit flags override it");
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed (required by seeded subcommands)");
  app.add_option("--jobs", g.jobs, "worker threads for data-parallel stages")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory")->required();

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic identity catalog and a held-out protocol");
  c_synth->add_option("--identities", synth.identities)->check(CLI::Range(2, 999));
  c_synth->add_option("--captures", synth.captures, "captures per identity in the catalog")->check(CLI::Range(1, 999));
  c_synth->add_option("--size", synth.size, "image side in pixels")->check(CLI::Range(32, 1024));
  c_synth->add_option("--heldout", synth.heldout, "held-out bona fide captures per identity")->check(CLI::Range(1, 999));
  c_synth->add_option("--heldout-morphs", synth.heldout_morphs, "held-out morphs (0: as many as bona fide)");
  c_synth->add_option("--landmark-jitter", synth.jitter)->check(CLI::NonNegativeNumber);
  c_synth->add_option("--pose-shift", synth.pose)->check(CLI::NonNegativeNumber);
  c_synth->add_option("--noise", synth.noise)->check(CLI::NonNegativeNumber);

  HarvestOpts harvest;
  auto* c_harvest = app.add_subcommand("harvest", "split identities and plan morphs and selfmorphs");
  c_harvest->add_option("--catalog", harvest.catalog, "catalog root: <root>/<identity>/<image>.pgm + .lmk")->required();
  c_harvest->add_option("--morphs", harvest.morphs, "morph count (0: match bona fide + selfmorph count)");
  c_harvest->add_option("--balance", harvest.balance, "full | original-only | selfmorph-only");
  c_harvest->add_option("--generated", harvest.generated, "directory generated images will live in (default <out>/generated)");

  MorphOpts morph_o, selfmorph_o;
  auto* c_morph = app.add_subcommand("morph", "generate the morph rows of a plan");
  c_morph->add_option("--plan", morph_o.plan)->required();
  c_morph->add_option("--alpha", morph_o.alpha, "blending coefficient")->check(CLI::Range(0.0, 1.0));
  c_morph->add_option("--background", morph_o.background, "first | second | random");
  auto* c_selfmorph = app.add_subcommand("selfmorph", "generate the selfmorph rows of a plan");
  c_selfmorph->add_option("--plan", selfmorph_o.plan)->required();

  FilterOpts filter;
  auto* c_filter = app.add_subcommand("filter", "quality scoring, EER thresholds and joint filtering");
  c_filter->add_option("--scores", filter.scores, "score file: image_path,scorer_id,value");
  c_filter->add_option("--images", filter.images, "score every image under this directory with the built-in scorers");
  c_filter->add_option("--labels", filter.labels, "label file: image_path,decision (accept|reject)");
  c_filter->add_option("--threshold", filter.thresholds, "scorer=value, repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_filter->add_option("--direction", filter.directions, "scorer=higher|lower, repeatable (default higher)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_filter->add_option("--sample-bins", filter.bins, "stratified sample with this many bins per scorer (0: off)");
  c_filter->add_option("--min-per-bin", filter.min_per_bin);

  ModelOpts train_m, grad_m;
  grad_m.hidden = "5";
  grad_m.feature_dim = 4;
  auto add_model_opts = [](CLI::App* c, ModelOpts& m) {
    c->add_option("--hidden", m.hidden, "comma-separated hidden widths");
    c->add_option("--feature-dim", m.feature_dim)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
    c->add_flag("--tie-backbones", m.tie, "share one backbone between both networks");
    c->add_option("--alpha1", m.alpha1)->check(CLI::NonNegativeNumber);
    c->add_option("--alpha2", m.alpha2)->check(CLI::NonNegativeNumber);
    c->add_option("--beta", m.beta)->check(CLI::NonNegativeNumber);
  };

  TrainOpts train_o;
  auto* c_train = app.add_subcommand("train", "train the dual network on a record manifest");
  c_train->add_option("--manifest", train_o.manifest, "record manifest: kind,image_path,y1,y2,source_ids")->required();
  c_train->add_option("--input-side", train_o.input_side, "images are resized to side x side");
  c_train->add_option("--classes", train_o.classes, "class count (0: largest label + 1)");
  add_model_opts(c_train, train_m);
  c_train->add_option("--learning-rate", train_o.learning_rate)->check(CLI::NonNegativeNumber);
  c_train->add_option("--batch-size", train_o.batch_size)->check(CLI::PositiveNumber);
  c_train->add_option("--epochs", train_o.epochs);

  ScoreOpts score;
  auto* c_score = app.add_subcommand("score", "score a protocol with a trained model");
  c_score->add_option("--model", score.model)->required();
  c_score->add_option("--protocol", score.protocol)->required();
  c_score->add_option("--mode", score.mode, "single | differential");

  BenchOpts bench_o;
  auto* c_bench = app.add_subcommand("bench", "APCER/BPCER report and DET curves over protocols");
  c_bench->add_option("--model", bench_o.model);
  c_bench->add_option("--protocol", bench_o.protocols, "protocol manifest, repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_bench->add_option("--scores", bench_o.score_files, "name=score file (path,truth,score), repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  c_bench->add_option("--run", bench_o.run, "run label in the report");
  c_bench->add_option("--mode", bench_o.mode, "single | differential");

  GradOpts grad;
  auto* c_grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients on random models");
  c_grad->add_option("--models", grad.models);
  c_grad->add_option("--input-dim", grad.input_dim)->check(CLI::PositiveNumber);
  c_grad->add_option("--classes", grad.classes)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  c_grad->add_option("--batch", grad.batch)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  add_model_opts(c_grad, grad_m);
  c_grad->add_option("--epsilon", grad.epsilon);
  c_grad->add_option("--rtol", grad.rtol);

  const std::set<CLI::App*> seeded = {c_synth, c_harvest, c_morph, c_selfmorph, c_filter, c_train, c_grad};
  for (CLI::App* c : app.get_subcommands([](CLI::App*) { return true; })) {
    c->footer(std::string("Global options:\n  --config TEXT   JSON file of option values\n  --seed UINT     random seed") +
              (seeded.contains(c) ? " (required)" : "") +
              "\n  --jobs UINT     worker threads\n  --out TEXT      output directory (required)");
  }

  try {
    std::vector<std::string> args = expand_args(argc, argv);
    std::reverse(args.begin(), args.end());
    args.pop_back();  // program name
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (seeded.contains(sub) && seed_opt->count() == 0) {
    std::cerr << "fusedmad: error: " << sub->get_name() << " needs --seed (no default seed is used)\n";
    return 1;
  }

  try {
    record_config(app, *sub, g.out);
    if (sub == c_synth) run_synth(g, synth);
    if (sub == c_harvest) run_harvest(g, harvest);
    if (sub == c_morph) run_generate(g, morph_o, SampleKind::Morph);
    if (sub == c_selfmorph) run_generate(g, selfmorph_o, SampleKind::Selfmorph);
    if (sub == c_filter) run_filter(g, filter);
    if (sub == c_train) run_train(g, train_m, train_o);
    if (sub == c_score) run_score(g, score);
    if (sub == c_bench) run_bench(g, bench_o);
    if (sub == c_grad) run_gradcheck(g, grad_m, grad);
  } catch (const UsageError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const TableError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const HarvestError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const bench::BenchError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const quality::QualityError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const ModelError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const CheckpointError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 1;
  } catch (const TrainError& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fusedmad: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
