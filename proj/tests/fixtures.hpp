#pragma once

#include <string>

#include "fusedmad/harvest.hpp"
#include "fusedmad/rng.hpp"

namespace fixture {

// In-memory catalog with `ids` identities holding 1..max_images images each.
inline fusedmad::IdentityCatalog catalog(std::size_t ids, std::size_t max_images, std::uint64_t seed) {
  fusedmad::Rng rng(seed);
  fusedmad::IdentityCatalog c;
  for (std::size_t i = 0; i < ids; ++i) {
    fusedmad::Identity ident{"p" + std::to_string(1000 + i), {}};
    const auto n = 1 + rng.index(max_images);
    for (std::size_t k = 0; k < n; ++k) {
      const std::string stem = ident.id + "/" + std::to_string(k);
      ident.images.push_back({stem + ".pgm", stem + ".lmk"});
    }
    c.identities.push_back(std::move(ident));
  }
  fusedmad::validate_catalog(c);
  return c;
}

}  // namespace fixture
