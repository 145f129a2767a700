#pragma once

// Training-corpus planning: identity halves, cross-half morph pairs,
// within-identity selfmorph pairs, dual labels and class balancing.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fusedmad/rng.hpp"
#include "fusedmad/table.hpp"

namespace fusedmad {

class HarvestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CatalogImage {
  std::string image_path;
  std::string landmark_path;
  friend bool operator==(const CatalogImage&, const CatalogImage&) = default;
};

struct Identity {
  std::string id;
  std::vector<CatalogImage> images;
};

/// Identities sorted by id; images sorted by path.
struct IdentityCatalog {
  std::vector<Identity> identities;

  const Identity& find(const std::string& id) const {
    auto it = std::lower_bound(identities.begin(), identities.end(), id,
                               [](const Identity& a, const std::string& b) { return a.id < b; });
    if (it == identities.end() || it->id != id) throw HarvestError("identity '" + id + "' not in catalog");
    return *it;
  }

  std::size_t image_count() const {
    std::size_t n = 0;
    for (const auto& i : identities) n += i.images.size();
    return n;
  }
};

inline void validate_catalog(IdentityCatalog& catalog) {
  std::sort(catalog.identities.begin(), catalog.identities.end(),
            [](const Identity& a, const Identity& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < catalog.identities.size(); ++i) {
    auto& ident = catalog.identities[i];
    if (i && catalog.identities[i - 1].id == ident.id) throw HarvestError("duplicate identity id '" + ident.id + "'");
    if (ident.images.empty()) throw HarvestError("identity '" + ident.id + "' has no images");
    for (const auto& img : ident.images) {
      if (img.landmark_path.empty()) throw HarvestError("image '" + img.image_path + "' has no landmark file");
    }
    std::sort(ident.images.begin(), ident.images.end(),
              [](const CatalogImage& a, const CatalogImage& b) { return a.image_path < b.image_path; });
  }
}

inline bool is_raster_path(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

/// Scans `<root>/<identity>/<image>.{pgm,ppm,pnm}` with sibling `<image>.lmk` files.
inline IdentityCatalog scan_catalog(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw HarvestError("catalog root '" + root.string() + "' is not a directory");
  IdentityCatalog catalog;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    Identity ident{dir.path().filename().string(), {}};
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (!f.is_regular_file() || !is_raster_path(f.path())) continue;
      auto lmk = f.path();
      lmk.replace_extension(".lmk");
      if (!fs::exists(lmk)) throw HarvestError("image '" + f.path().string() + "' has no landmark file");
      ident.images.push_back({f.path().string(), lmk.string()});
    }
    if (ident.images.empty()) throw HarvestError("identity '" + ident.id + "' has no images");
    catalog.identities.push_back(std::move(ident));
  }
  validate_catalog(catalog);
  return catalog;
}

struct IdentitySplit {
  std::vector<std::string> half1;  // attributed to the first network
  std::vector<std::string> half2;  // attributed to the second network
};

/// Seeded shuffle of the identity list cut into two disjoint halves; half1 takes the odd one out.
inline IdentitySplit split_identities(const IdentityCatalog& catalog, std::uint64_t seed) {
  if (catalog.identities.size() < 2) throw HarvestError("identity split needs at least 2 identities");
  std::vector<std::string> ids;
  for (const auto& i : catalog.identities) ids.push_back(i.id);
  Rng rng(seed);
  rng.shuffle(ids);
  const std::size_t cut = (ids.size() + 1) / 2;
  IdentitySplit split;
  split.half1.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
  split.half2.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  std::sort(split.half1.begin(), split.half1.end());
  std::sort(split.half2.begin(), split.half2.end());
  return split;
}

struct ImageRef {
  std::string id;
  std::size_t index = 0;  // into the identity's sorted image list
  friend auto operator<=>(const ImageRef&, const ImageRef&) = default;
};

struct ImagePair {
  ImageRef first;
  ImageRef second;
  friend auto operator<=>(const ImagePair&, const ImagePair&) = default;
};

/// `count` distinct pairs, first image from a half1 identity, second from a half2 identity.
inline std::vector<ImagePair> plan_morphs(const IdentityCatalog& catalog, const IdentitySplit& split,
                                          std::size_t count, std::uint64_t seed) {
  if (split.half1.empty() || split.half2.empty()) throw HarvestError("morph planning needs two non-empty halves");
  std::vector<ImageRef> left, right;
  for (const auto& id : split.half1) {
    for (std::size_t i = 0; i < catalog.find(id).images.size(); ++i) left.push_back({id, i});
  }
  for (const auto& id : split.half2) {
    for (std::size_t i = 0; i < catalog.find(id).images.size(); ++i) right.push_back({id, i});
  }
  const std::size_t total = left.size() * right.size();
  if (count > total) {
    throw HarvestError("requested " + std::to_string(count) + " morph pairs but only " + std::to_string(total) +
                       " distinct cross-half pairs exist");
  }
  Rng rng(seed);
  std::vector<ImagePair> pairs;
  pairs.reserve(count);
  if (2 * count > total) {
    // Dense request: sample without replacement from the full cross product.
    std::vector<std::size_t> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = i;
    rng.shuffle(all);
    for (std::size_t i = 0; i < count; ++i) pairs.push_back({left[all[i] / right.size()], right[all[i] % right.size()]});
    return pairs;
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (pairs.size() < count) {
    const auto l = static_cast<std::size_t>(rng.index(left.size()));
    const auto r = static_cast<std::size_t>(rng.index(right.size()));
    if (!seen.emplace(l, r).second) continue;
    pairs.push_back({left[l], right[r]});
  }
  return pairs;
}

struct SelfmorphPlan {
  std::vector<ImagePair> pairs;
  std::vector<std::string> warnings;
};

/// Random disjoint pairing of images within each identity. Pairs are emitted
/// with the lower-indexed image first; an odd image out is left unpaired.
inline SelfmorphPlan plan_selfmorphs(const IdentityCatalog& catalog, std::uint64_t seed) {
  SelfmorphPlan plan;
  Rng rng(seed);
  for (const auto& ident : catalog.identities) {
    if (ident.images.size() < 2) {
      plan.warnings.push_back("identity '" + ident.id + "' has a single image; no selfmorph planned");
      continue;
    }
    std::vector<std::size_t> order(ident.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i = 0; i + 1 < order.size(); i += 2) {
      const auto [lo, hi] = std::minmax(order[i], order[i + 1]);
      plan.pairs.push_back({{ident.id, lo}, {ident.id, hi}});
    }
  }
  if (plan.pairs.empty()) throw HarvestError("no identity has two or more images; selfmorphs impossible");
  return plan;
}

struct PairingPlan {
  IdentitySplit split;
  std::vector<ImagePair> morph_pairs;
  std::vector<ImagePair> selfmorph_pairs;
  std::uint64_t seed = 0;
};

enum class SampleKind { BonaFide, Selfmorph, Morph };

inline const char* kind_name(SampleKind k) {
  switch (k) {
    case SampleKind::BonaFide: return "bona_fide";
    case SampleKind::Selfmorph: return "selfmorph";
    case SampleKind::Morph: return "morph";
  }
  return "?";
}

inline SampleKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "bona_fide") return SampleKind::BonaFide;
  if (s == "selfmorph") return SampleKind::Selfmorph;
  if (s == "morph") return SampleKind::Morph;
  throw HarvestError(where + ": unknown sample kind '" + s + "'");
}

struct SampleRecord {
  SampleKind kind = SampleKind::BonaFide;
  std::string image_path;
  std::size_t y1 = 0;  // first-network class
  std::size_t y2 = 0;  // second-network class
  std::vector<std::string> source_ids;

  /// Cross-label: 1 when the two class labels differ.
  int cross_label() const { return y1 != y2 ? 1 : 0; }
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// One shared class index per identity, in sorted-id order.
inline std::map<std::string, std::size_t> class_index(const IdentityCatalog& catalog) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < catalog.identities.size(); ++i) idx.emplace(catalog.identities[i].id, i);
  return idx;
}

/// Output file name of a generated image, relative to the generation directory.
inline std::string generated_name(SampleKind kind, std::size_t ordinal) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%06zu.pgm", kind == SampleKind::Morph ? "morph" : "selfmorph", ordinal);
  return buf;
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return dir.empty() ? name : (std::filesystem::path(dir) / name).string();
}

/// Labels every bona fide catalog image and every planned morph/selfmorph.
/// Generated images are named under `generated_dir` (see generated_name).
inline std::vector<SampleRecord> assign_labels(const PairingPlan& plan, const IdentityCatalog& catalog,
                                               const std::string& generated_dir = {}) {
  const auto idx = class_index(catalog);
  auto label = [&](const std::string& id) {
    auto it = idx.find(id);
    if (it == idx.end()) throw HarvestError("identity '" + id + "' missing from class index");
    return it->second;
  };
  const std::set<std::string> half1(plan.split.half1.begin(), plan.split.half1.end());
  const std::set<std::string> half2(plan.split.half2.begin(), plan.split.half2.end());

  std::vector<SampleRecord> records;
  for (const auto& ident : catalog.identities) {
    const std::size_t y = label(ident.id);
    for (const auto& img : ident.images) records.push_back({SampleKind::BonaFide, img.image_path, y, y, {ident.id}});
  }
  for (std::size_t i = 0; i < plan.morph_pairs.size(); ++i) {
    const auto& p = plan.morph_pairs[i];
    if (!half1.contains(p.first.id) || !half2.contains(p.second.id)) {
      throw HarvestError("morph pair " + std::to_string(i) + " does not cross the identity halves");
    }
    records.push_back({SampleKind::Morph, join_path(generated_dir, generated_name(SampleKind::Morph, i)),
                       label(p.first.id), label(p.second.id), {p.first.id, p.second.id}});
  }
  for (std::size_t i = 0; i < plan.selfmorph_pairs.size(); ++i) {
    const auto& p = plan.selfmorph_pairs[i];
    if (p.first.id != p.second.id) throw HarvestError("selfmorph pair " + std::to_string(i) + " mixes identities");
    const std::size_t y = label(p.first.id);
    records.push_back(
        {SampleKind::Selfmorph, join_path(generated_dir, generated_name(SampleKind::Selfmorph, i)), y, y, {p.first.id}});
  }
  return records;
}

/// Which non-morph samples enter training.
enum class BalanceMode {
  Full,           // bona fide + selfmorphs
  OriginalOnly,   // bona fide only
  SelfmorphOnly,  // selfmorphs only
};

inline BalanceMode parse_balance_mode(const std::string& s) {
  if (s == "full") return BalanceMode::Full;
  if (s == "original-only") return BalanceMode::OriginalOnly;
  if (s == "selfmorph-only") return BalanceMode::SelfmorphOnly;
  throw HarvestError("unknown balance mode '" + s + "' (expected full, original-only or selfmorph-only)");
}

/// Downsamples the larger of {morphs} and {non-morphs} to equal size, then shuffles.
inline std::vector<SampleRecord> balance(const std::vector<SampleRecord>& records, std::uint64_t seed,
                                         BalanceMode mode = BalanceMode::Full) {
  std::vector<SampleRecord> morphs, others;
  for (const auto& r : records) {
    if (r.kind == SampleKind::Morph) {
      morphs.push_back(r);
    } else if ((r.kind == SampleKind::BonaFide && mode != BalanceMode::SelfmorphOnly) ||
               (r.kind == SampleKind::Selfmorph && mode != BalanceMode::OriginalOnly)) {
      others.push_back(r);
    }
  }
  if (morphs.empty()) throw HarvestError("balance: no morph records");
  if (others.empty()) throw HarvestError("balance: no non-morph records for the selected mode");
  Rng rng(seed);
  rng.shuffle(morphs);
  rng.shuffle(others);
  const std::size_t n = std::min(morphs.size(), others.size());
  std::vector<SampleRecord> out(morphs.begin(), morphs.begin() + static_cast<std::ptrdiff_t>(n));
  out.insert(out.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(n));
  rng.shuffle(out);
  return out;
}

// Record manifest: kind,image_path,y1,y2,source_ids (source ids joined by ';').

inline const std::vector<std::string>& manifest_header() {
  static const std::vector<std::string> h{"kind", "image_path", "y1", "y2", "source_ids"};
  return h;
}

inline void write_manifest(std::ostream& out, const std::vector<SampleRecord>& records) {
  TableWriter w(out, manifest_header());
  for (const auto& r : records) {
    std::string ids;
    for (const auto& id : r.source_ids) ids += (ids.empty() ? "" : ";") + id;
    w.row({kind_name(r.kind), r.image_path, std::to_string(r.y1), std::to_string(r.y2), ids});
  }
}

inline std::vector<SampleRecord> parse_manifest(std::istream& in, const std::string& what) {
  const Table t = parse_table(in, what, manifest_header());
  std::vector<SampleRecord> records;
  for (const auto& row : t.rows) {
    const std::string where = what + ":" + std::to_string(row.line);
    SampleRecord r;
    r.kind = parse_kind(row.fields[0], where);
    r.image_path = row.fields[1];
    const long long y1 = parse_int(row.fields[2], where);
    const long long y2 = parse_int(row.fields[3], where);
    if (y1 < 0 || y2 < 0) throw HarvestError(where + ": negative class index");
    r.y1 = static_cast<std::size_t>(y1);
    r.y2 = static_cast<std::size_t>(y2);
    r.source_ids = split(row.fields[4], ';');
    if (r.source_ids.empty() || r.source_ids.size() > 2) throw HarvestError(where + ": expected 1 or 2 source ids");
    if ((r.kind == SampleKind::Morph) != (r.y1 != r.y2)) {
      throw HarvestError(where + ": morph records need y1 != y2 and others y1 == y2");
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_manifest_file(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw HarvestError("cannot open '" + path + "' for writing");
  write_manifest(out, records);
}

inline std::vector<SampleRecord> read_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw HarvestError("cannot open manifest '" + path + "'");
  return parse_manifest(in, path);
}

// Generation plan consumed by the morph/selfmorph commands.

struct PlanRow {
  SampleKind kind = SampleKind::Morph;
  std::string output;  // file name relative to the generation directory
  CatalogImage a;
  CatalogImage b;
  std::string id_a;
  std::string id_b;
  std::size_t y1 = 0;
  std::size_t y2 = 0;
};

inline const std::vector<std::string>& plan_header() {
  static const std::vector<std::string> h{"kind", "output", "image_a", "landmarks_a", "image_b",
                                          "landmarks_b", "id_a", "id_b", "y1", "y2"};
  return h;
}

inline std::vector<PlanRow> plan_rows(const PairingPlan& plan, const IdentityCatalog& catalog) {
  const auto idx = class_index(catalog);
  std::vector<PlanRow> rows;
  auto emit = [&](SampleKind kind, std::size_t i, const ImagePair& p) {
    rows.push_back({kind, generated_name(kind, i), catalog.find(p.first.id).images.at(p.first.index),
                    catalog.find(p.second.id).images.at(p.second.index), p.first.id, p.second.id,
                    idx.at(p.first.id), idx.at(p.second.id)});
  };
  for (std::size_t i = 0; i < plan.morph_pairs.size(); ++i) emit(SampleKind::Morph, i, plan.morph_pairs[i]);
  for (std::size_t i = 0; i < plan.selfmorph_pairs.size(); ++i) {
    emit(SampleKind::Selfmorph, i, plan.selfmorph_pairs[i]);
  }
  return rows;
}

inline void write_plan(std::ostream& out, const std::vector<PlanRow>& rows) {
  TableWriter w(out, plan_header());
  for (const auto& r : rows) {
    w.row({kind_name(r.kind), r.output, r.a.image_path, r.a.landmark_path, r.b.image_path, r.b.landmark_path, r.id_a,
           r.id_b, std::to_string(r.y1), std::to_string(r.y2)});
  }
}

inline std::vector<PlanRow> read_plan(const std::string& path) {
  const Table t = read_table(path, plan_header());
  std::vector<PlanRow> rows;
  for (const auto& row : t.rows) {
    const std::string where = path + ":" + std::to_string(row.line);
    PlanRow r;
    r.kind = parse_kind(row.fields[0], where);
    if (r.kind == SampleKind::BonaFide) throw HarvestError(where + ": plans hold only morph and selfmorph rows");
    r.output = row.fields[1];
    r.a = {row.fields[2], row.fields[3]};
    r.b = {row.fields[4], row.fields[5]};
    r.id_a = row.fields[6];
    r.id_b = row.fields[7];
    const long long y1 = parse_int(row.fields[8], where);
    const long long y2 = parse_int(row.fields[9], where);
    if (y1 < 0 || y2 < 0) throw HarvestError(where + ": negative class index");
    r.y1 = static_cast<std::size_t>(y1);
    r.y2 = static_cast<std::size_t>(y2);
    if (r.output.empty() || r.output.find('/') != std::string::npos) {
      throw HarvestError(where + ": output must be a plain file name");
    }
    if ((r.kind == SampleKind::Morph) != (r.y1 != r.y2)) {
      throw HarvestError(where + ": morph rows need y1 != y2 and selfmorph rows y1 == y2");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fusedmad
