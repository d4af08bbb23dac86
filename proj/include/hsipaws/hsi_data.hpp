#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "hsipaws/tensor.hpp"

namespace hsipaws {

// M x N x B radiance cube in [row][col][band] order with an optional
// per-pixel ground-truth grid (0 = unlabeled, 1..K = classes).
struct HsiCube {
  int rows = 0;
  int cols = 0;
  int bands = 0;
  std::vector<float> values;
  std::vector<std::uint16_t> gt;

  bool has_gt() const { return !gt.empty(); }
  int class_count() const;

  float value_at(int r, int c, int b) const {
    return values[(static_cast<std::size_t>(r) * cols + c) * bands + static_cast<std::size_t>(b)];
  }
  float& value_at(int r, int c, int b) {
    return values[(static_cast<std::size_t>(r) * cols + c) * bands + static_cast<std::size_t>(b)];
  }
  std::uint16_t label_at(int r, int c) const {
    return gt[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
  }

  void validate() const;
};

// p x p x B window with the central pixel's label (0 when unlabeled).
struct Patch {
  int size = 0;
  int bands = 0;
  Tensord values;  // [p,p,B]
  int label = 0;
  int row = 0;
  int col = 0;
};

// Anchor/positive centers of two spatially overlapping windows. Patches are
// cut on demand (materializing 7e4+ pairs of full patches would not fit in
// memory at real-scene scale).
struct ViewPair {
  int anchor_row = 0;
  int anchor_col = 0;
  int positive_row = 0;
  int positive_col = 0;
  int patch_size = 0;
  double overlap_fraction = 0.0;
};

// Labelled patches plus their one-hot label matrix Y_L ([N_s, K]).
struct SupportSet {
  std::vector<Patch> patches;
  Tensord y_l;
  int class_count = 0;
  int per_class = 0;
};

// Desk-scale stand-in for a real scene: Voronoi class regions over smooth
// per-class spectra with i.i.d. per-band Gaussian noise.
struct SyntheticSpec {
  int rows = 64;
  int cols = 64;
  int bands = 32;
  int classes = 4;
  double noise_sigma = 0.05;
  int region_seeds = 8;
  std::uint64_t seed = 1;

  void validate() const;
};

// Cube file: magic "HSIC", u16 version=1, u32 M, u32 N, u32 B (little
// endian), then M*N*B float32 little-endian in [row][col][band] order.
// Ground truth lives in a sidecar "<path>.gt" ("HSIG", u32 M, u32 N, then
// M*N u16 labels); write_cube emits it when the cube has ground truth and
// read_cube picks it up when present.
HsiCube read_cube(const std::filesystem::path& path);
void write_cube(const HsiCube& cube, const std::filesystem::path& path);
std::vector<std::uint16_t> read_gt(const std::filesystem::path& path, int rows, int cols);
void write_gt(const HsiCube& cube, const std::filesystem::path& path);

HsiCube generate_synthetic(const SyntheticSpec& spec);

// Per-band min-max scaling to [0,1] over the whole cube; bands with a single
// value collapse to zero. Applied at pipeline load time, never inside I/O.
void normalize_bands(HsiCube& cube);

// Window around (row, col) taken from the reflect-padded cube. p must be odd.
Patch extract_patch(const HsiCube& cube, int row, int col, int p);

// Anchor centers are uniform over the full grid; the positive center is
// shifted by round(p/3) along one uniformly chosen axis and direction
// (flipped when the shift would leave the cube).
std::vector<ViewPair> sample_view_pairs(const HsiCube& cube, int p, int count, std::uint64_t seed);

// per_class support patches per class; test = every remaining labelled pixel.
std::pair<SupportSet, std::vector<Patch>> build_splits(const HsiCube& cube, int per_class,
                                                       std::uint64_t seed, int p);

// Index in the reflect-padded extension of [0, n): -1 -> 1, n -> n-2, ...
int reflect_index(int i, int n);

}  // namespace hsipaws
