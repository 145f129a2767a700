#pragma once

// Protocol-driven evaluation: protocol manifests, scoring, DET output and
// the APCER/BPCER comparison table.
//
// Protocol manifest format (blank lines and '#' comments ignored):
//
//   name: <protocol name>
//   bona_fide:
//     <image path>
//   morph:
//     <image path>
//   pairs:                      (optional; differential mode)
//     <probe path> <live capture path>
//
// Relative paths resolve against the manifest's directory.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fusedmad/image.hpp"
#include "fusedmad/metrics.hpp"
#include "fusedmad/model_io.hpp"
#include "fusedmad/parallel.hpp"
#include "fusedmad/table.hpp"
#include "fusedmad/train.hpp"

namespace fusedmad::bench {

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProtocolManifest {
  std::string name;
  std::vector<std::string> bona_fide;
  std::vector<std::string> morph;
  std::map<std::string, std::string> live;  // probe path -> live capture path

  void validate() const {
    if (name.empty()) throw BenchError("protocol manifest has no name");
    if (bona_fide.empty() || morph.empty()) throw BenchError("protocol '" + name + "' needs bona fide and morph entries");
    const std::set<std::string> bona(bona_fide.begin(), bona_fide.end());
    for (const auto& m : morph) {
      if (bona.contains(m)) throw BenchError("protocol '" + name + "': '" + m + "' is listed as both bona fide and morph");
    }
  }
};

inline ProtocolManifest parse_protocol(std::istream& in, const std::string& what,
                                       const std::filesystem::path& base = {}) {
  ProtocolManifest m;
  enum class Section { None, Bona, Morph, Pairs } section = Section::None;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return (path.is_relative() && !base.empty() ? base / path : path).lexically_normal().string();
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = what + ":" + std::to_string(lineno);
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (s.starts_with("name:")) {
      m.name = trim(s.substr(5));
      section = Section::None;
    } else if (s == "bona_fide:") {
      section = Section::Bona;
    } else if (s == "morph:") {
      section = Section::Morph;
    } else if (s == "pairs:") {
      section = Section::Pairs;
    } else if (section == Section::Bona) {
      m.bona_fide.push_back(resolve(s));
    } else if (section == Section::Morph) {
      m.morph.push_back(resolve(s));
    } else if (section == Section::Pairs) {
      std::istringstream fields(s);
      std::string probe, live, extra;
      if (!(fields >> probe >> live) || (fields >> extra)) throw BenchError(where + ": pair lines need '<probe> <live>'");
      m.live.insert_or_assign(resolve(probe), resolve(live));
    } else {
      throw BenchError(where + ": unexpected line '" + s + "'");
    }
  }
  try {
    m.validate();
  } catch (const BenchError& e) {
    throw BenchError(what + ": " + e.what());
  }
  return m;
}

inline ProtocolManifest read_protocol(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BenchError("cannot open protocol manifest '" + path + "'");
  return parse_protocol(in, path, std::filesystem::path(path).parent_path());
}

inline void write_protocol(std::ostream& out, const ProtocolManifest& m) {
  out << "name: " << m.name << "\nbona_fide:\n";
  for (const auto& p : m.bona_fide) out << "  " << p << '\n';
  out << "morph:\n";
  for (const auto& p : m.morph) out << "  " << p << '\n';
  if (!m.live.empty()) {
    out << "pairs:\n";
    for (const auto& [probe, live] : m.live) out << "  " << probe << ' ' << live << '\n';
  }
}

enum class Mode { Single, Differential };

struct ScoreError {
  std::string path;
  std::string message;
};

struct ScoreSet {
  std::vector<metrics::ScoredSample> samples;  // bona fide entries first, then morphs, in manifest order
  std::vector<ScoreError> errors;
};

inline const char* truth_name(metrics::Truth t) { return t == metrics::Truth::Morph ? "morph" : "bona_fide"; }

/// Scores every manifest entry. Unreadable files become error rows and are left out of the samples.
inline ScoreSet score_protocol(const ModelBundle& bundle, const ProtocolManifest& manifest, Mode mode,
                               std::size_t jobs = 1) {
  manifest.validate();
  struct Item {
    std::string path;
    metrics::Truth truth;
  };
  std::vector<Item> items;
  for (const auto& p : manifest.bona_fide) items.push_back({p, metrics::Truth::BonaFide});
  for (const auto& p : manifest.morph) items.push_back({p, metrics::Truth::Morph});
  if (mode == Mode::Differential) {
    for (const auto& it : items) {
      if (!manifest.live.contains(it.path)) {
        throw BenchError("protocol '" + manifest.name + "': no live capture paired with '" + it.path + "'");
      }
    }
  }

  std::vector<double> scores(items.size(), 0.0);
  std::vector<std::string> failures(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    try {
      const auto probe = preprocess(read_pnm(items[i].path), bundle.input_side);
      if (mode == Mode::Single) {
        scores[i] = morph_score(bundle.model, probe);
      } else {
        const auto live = preprocess(read_pnm(manifest.live.at(items[i].path)), bundle.input_side);
        scores[i] = differential_score(bundle.model, probe, live);
      }
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  ScoreSet out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!failures[i].empty()) {
      out.errors.push_back({items[i].path, failures[i]});
    } else {
      out.samples.push_back({items[i].path, items[i].truth, scores[i]});
    }
  }
  return out;
}

// Score file: path,truth,score

inline void write_scores(std::ostream& out, const std::vector<metrics::ScoredSample>& samples) {
  TableWriter w(out, {"path", "truth", "score"});
  for (const auto& s : samples) w.row({s.path, truth_name(s.truth), format_double(s.score)});
}

inline std::vector<metrics::ScoredSample> parse_scores(std::istream& in, const std::string& what) {
  const Table t = parse_table(in, what, {"path", "truth", "score"});
  std::vector<metrics::ScoredSample> out;
  for (const auto& row : t.rows) {
    const std::string where = what + ":" + std::to_string(row.line);
    metrics::ScoredSample s;
    s.path = row.fields[0];
    if (row.fields[1] == "morph") {
      s.truth = metrics::Truth::Morph;
    } else if (row.fields[1] == "bona_fide") {
      s.truth = metrics::Truth::BonaFide;
    } else {
      throw BenchError(where + ": truth must be bona_fide or morph");
    }
    s.score = parse_double(row.fields[2], where);
    if (!std::isfinite(s.score)) throw BenchError(where + ": score is not finite");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<metrics::ScoredSample> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BenchError("cannot open score file '" + path + "'");
  return parse_scores(in, path);
}

inline void write_det(std::ostream& out, const metrics::DetCurve& curve) {
  TableWriter w(out, {"threshold", "apcer", "bpcer"});
  for (const auto& p : curve.points) w.row({format_double(p.threshold), format_double(p.apcer), format_double(p.bpcer)});
}

/// Operating-point deltas reported for each protocol.
inline constexpr double kReportDeltas[] = {0.1, 0.01};

struct ProtocolResult {
  std::string run;
  std::string protocol;
  std::vector<metrics::ScoredSample> samples;
  std::size_t errors = 0;
};

struct ReportRow {
  std::string run;
  std::string protocol;
  std::size_t samples = 0;
  std::size_t errors = 0;
  double apcer_at_bpcer[2] = {1.0, 1.0};
  double bpcer_at_apcer[2] = {1.0, 1.0};
  metrics::DetCurve curve;
};

inline ReportRow evaluate(const ProtocolResult& r) {
  ReportRow row{r.run, r.protocol, r.samples.size(), r.errors, {}, {}, metrics::det_curve(r.samples)};
  for (int k = 0; k < 2; ++k) {
    row.apcer_at_bpcer[k] = metrics::apcer_at_bpcer(row.curve, kReportDeltas[k]);
    row.bpcer_at_apcer[k] = metrics::bpcer_at_apcer(row.curve, kReportDeltas[k]);
  }
  return row;
}

inline const std::vector<std::string>& report_header() {
  static const std::vector<std::string> h{"run",
                                          "protocol",
                                          "samples",
                                          "errors",
                                          "apcer@bpcer=0.1",
                                          "apcer@bpcer=0.01",
                                          "bpcer@apcer=0.1",
                                          "bpcer@apcer=0.01"};
  return h;
}

inline void write_report_table(std::ostream& out, const std::vector<ReportRow>& rows) {
  TableWriter w(out, report_header());
  for (const auto& r : rows) {
    w.row({r.run, r.protocol, std::to_string(r.samples), std::to_string(r.errors), format_double(r.apcer_at_bpcer[0]),
           format_double(r.apcer_at_bpcer[1]), format_double(r.bpcer_at_apcer[0]), format_double(r.bpcer_at_apcer[1])});
  }
}

inline std::string det_file_name(const ReportRow& r) { return "det_" + r.run + "_" + r.protocol + ".csv"; }

/// Writes report.csv plus one DET point file per row into `dir`; returns the rows.
inline std::vector<ReportRow> report(const std::vector<ProtocolResult>& results, const std::filesystem::path& dir) {
  if (results.empty()) throw BenchError("report needs at least one protocol result");
  std::vector<ReportRow> rows;
  for (const auto& r : results) rows.push_back(evaluate(r));
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.csv", std::ios::trunc);
    if (!out) throw BenchError("cannot write report in '" + dir.string() + "'");
    write_report_table(out, rows);
  }
  for (const auto& r : rows) {
    std::ofstream out(dir / det_file_name(r), std::ios::trunc);
    if (!out) throw BenchError("cannot write DET file in '" + dir.string() + "'");
    write_det(out, r.curve);
  }
  return rows;
}

}  // namespace fusedmad::bench
