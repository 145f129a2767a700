#pragma once

// Seeded synthetic face generator for end-to-end tests and demos.
//
// Every identity owns a landmark geometry and an appearance (skin tone,
// feature darkness, a periodic skin texture and a few blemishes) defined in
// its own landmark frame. A capture jitters the landmarks, warps the
// appearance onto them and adds per-capture background, gain and sensor
// noise, so captures of one identity differ only in pose and acquisition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "fusedmad/image.hpp"
#include "fusedmad/morph.hpp"
#include "fusedmad/rng.hpp"

namespace fusedmad {

struct SyntheticConfig {
  int identities = 20;
  int size = 64;
  double landmark_jitter = 1.2;  // px, per capture
  double pose_shift = 1.5;       // px, per capture global offset
  double noise = 0.02;           // sensor noise standard deviation
  std::uint64_t seed = 1;
};

class SyntheticFaces {
 public:
  struct Capture {
    Image image;
    LandmarkSet landmarks;
  };

  explicit SyntheticFaces(SyntheticConfig cfg) : cfg_(cfg) {
    if (cfg_.identities < 2) throw MorphError("synthetic generator needs at least 2 identities");
    if (cfg_.size < 32) throw MorphError("synthetic images must be at least 32x32");
    Rng rng(Rng::mix(cfg_.seed, 0x1D));
    for (int i = 0; i < cfg_.identities; ++i) people_.push_back(make_person(rng));
  }

  const SyntheticConfig& config() const { return cfg_; }
  int identities() const { return cfg_.identities; }

  static std::string identity_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "id%03d", i);
    return buf;
  }

  /// Deterministic capture `index` of identity `id`.
  Capture capture(int id, std::uint64_t index) const {
    const Person& p = people_.at(static_cast<std::size_t>(id));
    Rng rng(Rng::mix(Rng::mix(cfg_.seed, static_cast<std::uint64_t>(id) + 1000), index));
    const double s = cfg_.size / 64.0;
    const double dx = rng.uniform(-cfg_.pose_shift, cfg_.pose_shift) * s;
    const double dy = rng.uniform(-cfg_.pose_shift, cfg_.pose_shift) * s;
    LandmarkSet target = p.landmarks;
    for (auto& pt : target.points) {
      pt.x = std::clamp(pt.x + dx + rng.normal(0.0, cfg_.landmark_jitter * s), 1.0, cfg_.size - 2.0);
      pt.y = std::clamp(pt.y + dy + rng.normal(0.0, cfg_.landmark_jitter * s), 1.0, cfg_.size - 2.0);
    }

    Image base = render_person(p, rng);
    Image img = warp(base, p.landmarks, target);
    const double gain = rng.uniform(0.92, 1.08);
    const double offset = rng.uniform(-0.04, 0.04);
    for (double& v : img.pixels) v = std::clamp(gain * v + offset + rng.normal(0.0, cfg_.noise), 0.0, 1.0);
    return {std::move(img), std::move(target)};
  }

 private:
  struct Wave {
    double kx, ky, phase, amplitude;
  };
  struct Blob {
    double x, y, radius, depth;
  };
  struct Person {
    LandmarkSet landmarks;
    double skin = 0.6;
    double feature_dark = 0.25;
    double face_rx = 20.0, face_ry = 25.0;
    std::vector<Wave> texture;
    std::vector<Blob> blemishes;
  };

  // Canonical 12-point layout on a 64x64 frame: eyes, brows, nose, mouth
  // corners, upper lip, chin, cheeks, forehead.
  static std::vector<Point> canonical_layout() {
    return {{22, 26}, {42, 26}, {22, 20}, {42, 20}, {32, 36}, {25, 45},
            {39, 45}, {32, 43}, {32, 56}, {14, 36}, {50, 36}, {32, 10}};
  }

  Person make_person(Rng& rng) const {
    const double s = cfg_.size / 64.0;
    Person p;
    const double eye_gap = rng.uniform(-2.5, 2.5);
    const double eye_height = rng.uniform(-2.0, 2.0);
    const double mouth_width = rng.uniform(-2.5, 2.5);
    const double face_len = rng.uniform(-2.5, 2.5);
    auto pts = canonical_layout();
    pts[0].x -= eye_gap, pts[1].x += eye_gap, pts[2].x -= eye_gap, pts[3].x += eye_gap;
    for (int i : {0, 1, 2, 3}) pts[i].y += eye_height;
    pts[5].x -= mouth_width, pts[6].x += mouth_width;
    pts[8].y += face_len;
    for (auto& pt : pts) {
      pt.x = (pt.x + rng.normal(0.0, 0.8)) * s;
      pt.y = (pt.y + rng.normal(0.0, 0.8)) * s;
    }
    p.landmarks.points = pts;
    p.skin = rng.uniform(0.45, 0.75);
    p.feature_dark = rng.uniform(0.15, 0.35);
    p.face_rx = rng.uniform(17.0, 22.0) * s;
    p.face_ry = rng.uniform(22.0, 27.0) * s;
    for (int k = 0; k < 3; ++k) {
      const double wavelength = rng.uniform(7.0, 14.0) * s;
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double k_abs = 2.0 * std::numbers::pi / wavelength;
      p.texture.push_back({k_abs * std::cos(angle), k_abs * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
                           rng.uniform(0.05, 0.09)});
    }
    for (int k = 0; k < 4; ++k) {
      p.blemishes.push_back({rng.uniform(18.0, 46.0) * s, rng.uniform(14.0, 54.0) * s, rng.uniform(1.5, 3.0) * s,
                             rng.uniform(0.12, 0.25)});
    }
    return p;
  }

  // Appearance in the person's own landmark frame, with a fresh background.
  Image render_person(const Person& p, Rng& rng) const {
    const int n = cfg_.size;
    const double s = n / 64.0;
    Image img(n, n, 1);
    const double bg0 = rng.uniform(0.1, 0.9), bgx = rng.uniform(-0.3, 0.3) / n, bgy = rng.uniform(-0.3, 0.3) / n;
    const auto& L = p.landmarks.points;
    const double cx = 0.5 * (L[9].x + L[10].x);
    const double cy = 0.5 * (L[11].y + L[8].y);
    auto gauss = [](double d2, double r) { return std::exp(-d2 / (2.0 * r * r)); };
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double ex = (x - cx) / p.face_rx, ey = (y - cy) / p.face_ry;
        const double r2 = ex * ex + ey * ey;
        double v = bg0 + bgx * (x - n / 2.0) + bgy * (y - n / 2.0);
        if (r2 <= 1.15) {
          const double edge = std::clamp((1.15 - r2) / 0.15, 0.0, 1.0);
          double face = p.skin;
          for (const auto& w : p.texture) face += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
          for (const auto& b : p.blemishes) {
            face -= b.depth * gauss((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y), b.radius);
          }
          const auto feature = [&](const Point& c, double rx, double ry) {
            const double fx = (x - c.x) / rx, fy = (y - c.y) / ry;
            return std::exp(-(fx * fx + fy * fy));
          };
          double dark = feature(L[0], 2.8 * s, 1.8 * s) + feature(L[1], 2.8 * s, 1.8 * s);
          dark += 0.7 * (feature(L[2], 4.0 * s, 1.0 * s) + feature(L[3], 4.0 * s, 1.0 * s));
          dark += 0.4 * feature(L[4], 1.5 * s, 2.5 * s);
          const Point mouth{0.5 * (L[5].x + L[6].x), 0.5 * (L[5].y + L[6].y)};
          dark += 0.8 * feature(mouth, 0.5 * std::abs(L[6].x - L[5].x) + 1.0, 1.4 * s);
          face -= p.feature_dark * std::min(dark, 1.5) * (p.skin / 0.6);
          v = edge * face + (1.0 - edge) * v;
        }
        img.at(x, y) = std::clamp(v, 0.0, 1.0);
      }
    }
    return img;
  }

  SyntheticConfig cfg_;
  std::vector<Person> people_;
};

/// Writes `<root>/<identity>/<NNN>.pgm` + `.lmk` for captures [first, first + count) of every identity.
inline void write_synthetic_catalog(const SyntheticFaces& faces, const std::filesystem::path& root,
                                    std::uint64_t first, std::uint64_t count) {
  for (int id = 0; id < faces.identities(); ++id) {
    const auto dir = root / SyntheticFaces::identity_name(id);
    std::filesystem::create_directories(dir);
    for (std::uint64_t k = first; k < first + count; ++k) {
      const auto cap = faces.capture(id, k);
      char name[32];
      std::snprintf(name, sizeof(name), "%03llu", static_cast<unsigned long long>(k));
      write_pnm((dir / (std::string(name) + ".pgm")).string(), cap.image);
      write_landmarks((dir / (std::string(name) + ".lmk")).string(), cap.landmarks);
    }
  }
}

}  // namespace fusedmad
