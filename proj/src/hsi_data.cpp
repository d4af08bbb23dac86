#include "hsipaws/hsi_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "hsipaws/errors.hpp"
#include "hsipaws/rng.hpp"

namespace hsipaws {

namespace {

constexpr char kCubeMagic[4] = {'H', 'S', 'I', 'C'};
constexpr char kGtMagic[4] = {'H', 'S', 'I', 'G'};
constexpr std::uint16_t kCubeVersion = 1;

void write_u16(std::ostream& os, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(bytes, 2);
}

void write_u32(std::ostream& os, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 4);
}

std::uint16_t read_u16(std::istream& is) {
  unsigned char bytes[2];
  is.read(reinterpret_cast<char*>(bytes), 2);
  if (!is) throw FormatError("unexpected end of file in header");
  return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw FormatError("unexpected end of file in header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

void require_magic(std::istream& is, const char (&magic)[4], const std::string& what) {
  char buf[4];
  is.read(buf, 4);
  if (!is || std::memcmp(buf, magic, 4) != 0) throw FormatError("bad magic: not a " + what + " file");
}

std::uintmax_t stream_size(std::istream& is) {
  const auto pos = is.tellg();
  is.seekg(0, std::ios::end);
  const auto end = is.tellg();
  is.seekg(pos);
  return static_cast<std::uintmax_t>(end);
}

std::filesystem::path gt_sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".gt");
}

}  // namespace

int HsiCube::class_count() const {
  std::uint16_t k = 0;
  for (std::uint16_t v : gt) k = std::max(k, v);
  return k;
}

void HsiCube::validate() const {
  if (rows <= 0 || cols <= 0 || bands <= 0)
    throw ConfigError("cube dimensions must be positive, got " + std::to_string(rows) + "x" +
                      std::to_string(cols) + "x" + std::to_string(bands));
  const std::size_t expected =
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * static_cast<std::size_t>(bands);
  if (values.size() != expected) throw ConfigError("cube value count does not match dimensions");
  for (float v : values)
    if (!std::isfinite(v)) throw DataError("cube contains non-finite values");
  if (!gt.empty() && gt.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw ConfigError("ground-truth grid does not match cube dimensions");
}

HsiCube read_cube(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open cube file: " + path.string());
  const std::uintmax_t total = stream_size(is);
  require_magic(is, kCubeMagic, "cube");
  const std::uint16_t version = read_u16(is);
  if (version != kCubeVersion)
    throw FormatError("unsupported cube version " + std::to_string(version));
  HsiCube cube;
  cube.rows = static_cast<int>(read_u32(is));
  cube.cols = static_cast<int>(read_u32(is));
  cube.bands = static_cast<int>(read_u32(is));
  if (cube.rows <= 0 || cube.cols <= 0 || cube.bands <= 0)
    throw FormatError("cube header declares non-positive dimensions");
  const std::size_t count = static_cast<std::size_t>(cube.rows) * cube.cols * cube.bands;
  const std::uintmax_t expected_total = 4 + 2 + 12 + count * sizeof(float);
  if (total < expected_total)
    throw FormatError("truncated cube file: expected " + std::to_string(expected_total) +
                      " bytes, found " + std::to_string(total));
  if (total > expected_total)
    throw FormatError("cube file larger than header declares: expected " +
                      std::to_string(expected_total) + " bytes, found " + std::to_string(total));
  cube.values.resize(count);
  is.read(reinterpret_cast<char*>(cube.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!is) throw FormatError("truncated cube payload");
  for (float v : cube.values)
    if (!std::isfinite(v)) throw DataError("cube payload contains non-finite values");

  const auto sidecar = gt_sidecar(path);
  if (std::filesystem::exists(sidecar)) cube.gt = read_gt(sidecar, cube.rows, cube.cols);
  return cube;
}

void write_cube(const HsiCube& cube, const std::filesystem::path& path) {
  cube.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open cube file for writing: " + path.string());
  os.write(kCubeMagic, 4);
  write_u16(os, kCubeVersion);
  write_u32(os, static_cast<std::uint32_t>(cube.rows));
  write_u32(os, static_cast<std::uint32_t>(cube.cols));
  write_u32(os, static_cast<std::uint32_t>(cube.bands));
  os.write(reinterpret_cast<const char*>(cube.values.data()),
           static_cast<std::streamsize>(cube.values.size() * sizeof(float)));
  if (!os) throw IoError("failed to write cube payload: " + path.string());
  if (cube.has_gt()) write_gt(cube, gt_sidecar(path));
}

std::vector<std::uint16_t> read_gt(const std::filesystem::path& path, int rows, int cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open ground-truth file: " + path.string());
  require_magic(is, kGtMagic, "ground-truth");
  const int m = static_cast<int>(read_u32(is));
  const int n = static_cast<int>(read_u32(is));
  if (m != rows || n != cols)
    throw FormatError("ground-truth grid is " + std::to_string(m) + "x" + std::to_string(n) +
                      " but the cube is " + std::to_string(rows) + "x" + std::to_string(cols));
  std::vector<std::uint16_t> gt(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (auto& v : gt) v = read_u16(is);
  return gt;
}

void write_gt(const HsiCube& cube, const std::filesystem::path& path) {
  if (!cube.has_gt()) throw ConfigError("write_gt: cube has no ground truth");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open ground-truth file for writing: " + path.string());
  os.write(kGtMagic, 4);
  write_u32(os, static_cast<std::uint32_t>(cube.rows));
  write_u32(os, static_cast<std::uint32_t>(cube.cols));
  for (std::uint16_t v : cube.gt) write_u16(os, v);
  if (!os) throw IoError("failed to write ground-truth payload: " + path.string());
}

void SyntheticSpec::validate() const {
  if (rows < 2 || cols < 2) throw ConfigError("synthetic: rows and cols must be >= 2");
  if (bands < 8) throw ConfigError("synthetic: bands must be >= 8");
  if (classes < 1) throw ConfigError("synthetic: need at least one class");
  if (classes > region_seeds)
    throw ConfigError("synthetic: classes (" + std::to_string(classes) +
                      ") must not exceed region_seeds (" + std::to_string(region_seeds) + ")");
  if (classes > bands) throw ConfigError("synthetic: classes must not exceed bands");
  if (noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");
}

HsiCube generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // Distinct Voronoi seed points; classes assigned round-robin over regions
  // so every class owns at least one region.
  std::vector<std::pair<int, int>> seeds;
  while (static_cast<int>(seeds.size()) < spec.region_seeds) {
    const int r = rng.uniform_int(0, spec.rows - 1);
    const int c = rng.uniform_int(0, spec.cols - 1);
    if (std::find(seeds.begin(), seeds.end(), std::make_pair(r, c)) == seeds.end())
      seeds.emplace_back(r, c);
  }

  // Class spectra share one smooth base curve; class identity lives in small
  // orthonormal smooth deltas so the separation scales with the noise level.
  const int b_count = spec.bands;
  const double two_pi = 6.283185307179586476925286766559;
  const double f0 = rng.uniform(1.0, 2.0);
  const double f1 = rng.uniform(2.0, 4.0);
  const double ph0 = rng.uniform(0.0, two_pi);
  const double ph1 = rng.uniform(0.0, two_pi);
  std::vector<double> base(static_cast<std::size_t>(b_count));
  for (int b = 0; b < b_count; ++b) {
    const double t = static_cast<double>(b) / b_count;
    base[static_cast<std::size_t>(b)] =
        0.5 + 0.18 * std::sin(two_pi * f0 * t + ph0) + 0.12 * std::sin(two_pi * f1 * t + ph1);
  }

  std::vector<std::vector<double>> deltas(static_cast<std::size_t>(spec.classes),
                                          std::vector<double>(static_cast<std::size_t>(b_count)));
  for (auto& d : deltas) {
    for (int h = 1; h <= 4; ++h) {
      const double amp = rng.uniform(0.5, 1.0);
      const double ph = rng.uniform(0.0, two_pi);
      for (int b = 0; b < b_count; ++b)
        d[static_cast<std::size_t>(b)] += amp * std::sin(two_pi * h * (b + 0.5) / b_count + ph);
    }
  }
  // Gram-Schmidt: orthonormal deltas give exactly equal pairwise distances.
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (int b = 0; b < b_count; ++b)
        dot += deltas[k][static_cast<std::size_t>(b)] * deltas[j][static_cast<std::size_t>(b)];
      for (int b = 0; b < b_count; ++b)
        deltas[k][static_cast<std::size_t>(b)] -= dot * deltas[j][static_cast<std::size_t>(b)];
    }
    double norm = 0.0;
    for (double v : deltas[k]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw NumericError("synthetic: degenerate class spectra");
    for (double& v : deltas[k]) v /= norm;
  }
  const double delta_scale = 4.0 * spec.noise_sigma + 0.01;

  std::vector<std::vector<double>> means(static_cast<std::size_t>(spec.classes),
                                         std::vector<double>(static_cast<std::size_t>(b_count)));
  for (int k = 0; k < spec.classes; ++k)
    for (int b = 0; b < b_count; ++b)
      means[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)] =
          std::clamp(base[static_cast<std::size_t>(b)] +
                         delta_scale * deltas[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)],
                     0.02, 0.98);

  HsiCube cube;
  cube.rows = spec.rows;
  cube.cols = spec.cols;
  cube.bands = spec.bands;
  cube.values.resize(static_cast<std::size_t>(spec.rows) * spec.cols * spec.bands);
  cube.gt.resize(static_cast<std::size_t>(spec.rows) * spec.cols);

  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      int best = 0;
      long best_d2 = std::numeric_limits<long>::max();
      for (int s = 0; s < spec.region_seeds; ++s) {
        const long dr = r - seeds[static_cast<std::size_t>(s)].first;
        const long dc = c - seeds[static_cast<std::size_t>(s)].second;
        const long d2 = dr * dr + dc * dc;
        if (d2 < best_d2) {
          best_d2 = d2;
          best = s;
        }
      }
      const int klass = best % spec.classes + 1;
      cube.gt[static_cast<std::size_t>(r) * spec.cols + static_cast<std::size_t>(c)] =
          static_cast<std::uint16_t>(klass);
      const auto& mean = means[static_cast<std::size_t>(klass - 1)];
      for (int b = 0; b < b_count; ++b)
        cube.value_at(r, c, b) =
            static_cast<float>(mean[static_cast<std::size_t>(b)] + rng.normal(0.0, spec.noise_sigma));
    }
  }
  return cube;
}

void normalize_bands(HsiCube& cube) {
  cube.validate();
  for (int b = 0; b < cube.bands; ++b) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (int r = 0; r < cube.rows; ++r)
      for (int c = 0; c < cube.cols; ++c) {
        const float v = cube.value_at(r, c, b);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    const float range = hi - lo;
    for (int r = 0; r < cube.rows; ++r)
      for (int c = 0; c < cube.cols; ++c) {
        float& v = cube.value_at(r, c, b);
        v = range > 0.0f ? (v - lo) / range : 0.0f;
      }
  }
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Patch extract_patch(const HsiCube& cube, int row, int col, int p) {
  if (p <= 0 || p % 2 == 0) throw ConfigError("patch size must be a positive odd integer");
  if (row < 0 || row >= cube.rows || col < 0 || col >= cube.cols)
    throw std::out_of_range("patch center (" + std::to_string(row) + "," + std::to_string(col) +
                            ") outside cube");
  Patch patch;
  patch.size = p;
  patch.bands = cube.bands;
  patch.row = row;
  patch.col = col;
  patch.values = Tensord({p, p, cube.bands});
  const int half = p / 2;
  for (int i = 0; i < p; ++i) {
    const int rr = reflect_index(row + i - half, cube.rows);
    for (int j = 0; j < p; ++j) {
      const int cc = reflect_index(col + j - half, cube.cols);
      for (int b = 0; b < cube.bands; ++b)
        patch.values(i, j, b) = static_cast<double>(cube.value_at(rr, cc, b));
    }
  }
  if (cube.has_gt()) patch.label = cube.label_at(row, col);
  return patch;
}

std::vector<ViewPair> sample_view_pairs(const HsiCube& cube, int p, int count, std::uint64_t seed) {
  if (count <= 0) throw ConfigError("sample_view_pairs: count must be positive");
  if (p <= 0 || p % 2 == 0) throw ConfigError("sample_view_pairs: p must be a positive odd integer");
  if (cube.rows <= p || cube.cols <= p)
    throw ConfigError("sample_view_pairs: cube must be larger than the patch in both axes");
  const int shift = static_cast<int>(std::lround(static_cast<double>(p) / 3.0));
  const double overlap = static_cast<double>(p - shift) / static_cast<double>(p);

  Rng rng(seed);
  std::vector<ViewPair> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    ViewPair pair;
    pair.patch_size = p;
    pair.overlap_fraction = overlap;
    pair.anchor_row = rng.uniform_int(0, cube.rows - 1);
    pair.anchor_col = rng.uniform_int(0, cube.cols - 1);
    pair.positive_row = pair.anchor_row;
    pair.positive_col = pair.anchor_col;
    const int direction = rng.uniform_int(0, 3);
    int* coord = (direction < 2) ? &pair.positive_row : &pair.positive_col;
    const int limit = (direction < 2) ? cube.rows : cube.cols;
    const int sign = (direction % 2 == 0) ? 1 : -1;
    int moved = *coord + sign * shift;
    if (moved < 0 || moved >= limit) moved = *coord - sign * shift;
    *coord = moved;
    pairs.push_back(pair);
  }
  return pairs;
}

std::pair<SupportSet, std::vector<Patch>> build_splits(const HsiCube& cube, int per_class,
                                                       std::uint64_t seed, int p) {
  if (!cube.has_gt()) throw DataError("build_splits: cube has no ground truth");
  if (per_class < 1) throw ConfigError("build_splits: per_class must be >= 1");
  const int k = cube.class_count();
  if (k < 1) throw DataError("build_splits: ground truth has no labelled pixels");

  std::vector<std::vector<std::pair<int, int>>> by_class(static_cast<std::size_t>(k));
  for (int r = 0; r < cube.rows; ++r)
    for (int c = 0; c < cube.cols; ++c) {
      const std::uint16_t label = cube.label_at(r, c);
      if (label > 0) by_class[static_cast<std::size_t>(label - 1)].emplace_back(r, c);
    }

  SupportSet support;
  support.class_count = k;
  support.per_class = per_class;
  std::vector<Patch> test;
  for (int klass = 1; klass <= k; ++klass) {
    auto& centers = by_class[static_cast<std::size_t>(klass - 1)];
    if (static_cast<int>(centers.size()) < per_class)
      throw DataError("build_splits: class " + std::to_string(klass) + " has only " +
                      std::to_string(centers.size()) + " labelled pixels, need " +
                      std::to_string(per_class));
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(klass));
    rng.shuffle(centers.begin(), centers.end());
    for (int i = 0; i < per_class; ++i)
      support.patches.push_back(extract_patch(cube, centers[static_cast<std::size_t>(i)].first,
                                              centers[static_cast<std::size_t>(i)].second, p));
    for (std::size_t i = static_cast<std::size_t>(per_class); i < centers.size(); ++i)
      test.push_back(extract_patch(cube, centers[i].first, centers[i].second, p));
  }

  support.y_l = Tensord({static_cast<Index>(support.patches.size()), k});
  for (std::size_t i = 0; i < support.patches.size(); ++i)
    support.y_l(static_cast<Index>(i), static_cast<Index>(support.patches[i].label - 1)) = 1.0;
  return {std::move(support), std::move(test)};
}

}  // namespace hsipaws
