#pragma once

#include <array>
#include <cstdint>

#include "hsipaws/hsi_data.hpp"
#include "hsipaws/rng.hpp"

namespace hsipaws {

enum class SpectralKind { swap, drop, suppress, average };
enum class SpatialKind { flip_h, flip_v, mirror, crop, rotate };
enum class SpectralSpatialKind { pixel_removal, noise };

// The nine probabilistic transforms: four spectral, three spatial (the flip
// slot picks horizontal/vertical/mirror uniformly when it fires), two
// spectral-spatial. phi holds the per-transform application probabilities in
// that fixed order.
struct AugmentPolicy {
  enum PhiIndex {
    kSwap = 0,
    kDrop,
    kSuppress,
    kAverage,
    kFlip,
    kCrop,
    kRotate,
    kPixelRemoval,
    kNoise,
    kTransformCount
  };

  std::array<double, kTransformCount> phi = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  double drop_fraction = 0.1;
  double suppress_min = 0.2;
  double suppress_max = 0.8;
  int average_window = 3;
  int crop_min = 0;  // 0 = ceil(0.7 * p)
  double noise_sigma = 0.05;
  double removal_fraction = 0.1;
  bool apply_to_support = false;

  static AugmentPolicy identity() {
    AugmentPolicy p;
    p.phi.fill(0.0);
    return p;
  }

  void validate() const;
  int crop_min_for(int p) const;
};

// Applies each of the nine transforms independently with its probability, in
// fixed order spectral -> spatial -> spectral-spatial. Deterministic in
// (patch, policy, seed).
Patch augment(const Patch& patch, const AugmentPolicy& policy, std::uint64_t seed);

Patch spectral_transform(const Patch& patch, SpectralKind kind, const AugmentPolicy& policy,
                         Rng& rng);
Patch spatial_transform(const Patch& patch, SpatialKind kind, const AugmentPolicy& policy,
                        Rng& rng);
Patch spectral_spatial_transform(const Patch& patch, SpectralSpatialKind kind,
                                 const AugmentPolicy& policy, Rng& rng);

}  // namespace hsipaws
