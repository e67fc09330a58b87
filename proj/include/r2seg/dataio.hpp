#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "r2seg/tensor.hpp"

namespace r2seg {

/// Paired single-channel images (values in [0, 1]) and binary masks, each
/// stored as a (1, 1, h, w) tensor.
struct SampleSet {
  std::vector<Tensor4> images;
  std::vector<Tensor4> masks;
  std::vector<std::string> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  void add(std::string id, Tensor4 image, Tensor4 mask);
  /// Samples with the given ids, in the order given.
  SampleSet subset(const std::vector<std::string>& wanted) const;
};

// Binary 8-bit PGM (P5). Pixel values are normalised by maxval.
Tensor4 read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor4& image);

/// Reads `images/<id>.pgm` with `masks/<id>_mask.pgm`. Masks are binarised
/// as value > 127. Ids come back sorted.
SampleSet load_dataset(const std::filesystem::path& dir);
void save_dataset(const SampleSet& set, const std::filesystem::path& dir);

enum class Interp { bilinear, nearest };

/// Half-pixel-centre resampling (align_corners = false).
Tensor4 resize(const Tensor4& x, std::size_t out_h, std::size_t out_w,
               Interp kind);

/// Resizes images bilinearly and masks by nearest neighbour.
SampleSet resize_set(const SampleSet& set, std::size_t h, std::size_t w);

struct SplitIndices {
  std::vector<std::string> train, val, test;
  std::uint64_t seed = 0;
};

inline constexpr std::array<double, 3> kDefaultSplit{0.64, 0.16, 0.20};

/// Seeded shuffle, then contiguous train/val/test cut.
SplitIndices split(const SampleSet& set,
                   std::array<double, 3> fractions = kDefaultSplit,
                   std::uint64_t seed = 0);

nlohmann::json to_json(const SplitIndices& s);
SplitIndices split_from_json(const nlohmann::json& j);
void write_split(const std::filesystem::path& path, const SplitIndices& s);
SplitIndices read_split(const std::filesystem::path& path);

struct Ellipse {
  double cx = 0, cy = 0;  // centre in pixel units
  double a = 1, b = 1;    // semi-axes
  double theta = 0;       // rotation (radians)
  double intensity = 1;

  /// <= 1 inside the ellipse.
  double eval(double x, double y) const;
};

/// Ellipses drawn for sample `index` of synth_generate(_, size, seed).
std::vector<Ellipse> synth_ellipses(std::size_t index, std::size_t size,
                                    std::uint64_t seed);

/// Dark noisy background (sigma 0.05) with 1-3 bright elliptical lesions;
/// the mask is the exact union of the ellipses at pixel centres.
SampleSet synth_generate(std::size_t n, std::size_t size, std::uint64_t seed);

}  // namespace r2seg
