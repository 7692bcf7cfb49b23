#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glgait/tensor.hpp"

namespace glgait {

inline constexpr std::size_t kFrameHeight = 64;
inline constexpr std::size_t kFrameWidth = 44;

/// Body proportions and gait of one identity, in pixels of the 2x render
/// canvas (128 x 88) and radians.
struct IdentityParams {
  double head_radius = 6.5;
  double torso_height = 34.0;
  double torso_width = 15.0;
  double thigh = 25.0;
  double shin = 25.0;
  double arm = 30.0;
  double limb_width = 6.0;
  double swing = 0.5;
  double knee_bend = 0.6;
  double bob = 2.0;
  double x_offset = 0.0;
  std::size_t period = 10;  // frames per gait cycle

  void validate() const;
};

/// In-the-wild disturbances; all zero gives lab-mode sequences.
struct WildParams {
  double pace_drift = 0.0;      // relative amplitude of the period modulation
  double occlusion_rate = 0.0;  // probability that a frame carries an occluder
  double noise_rate = 0.0;      // per-pixel probability of salt noise
};

struct Occlusion {
  std::size_t frame, y0, x0, y1, x1;  // half-open pixel rectangle
  bool operator==(const Occlusion&) const = default;
};

struct SequenceMeta {
  double pace_drift = 0.0;
  double noise_rate = 0.0;
  std::vector<Occlusion> occlusions;
  std::uint64_t seed = 0;
  bool operator==(const SequenceMeta&) const = default;
};

/// Binary frames T x 64 x 44, one byte (0 or 1) per pixel.
struct SilhouetteSequence {
  std::size_t identity = 0;
  std::size_t frames = 0;
  std::size_t height = kFrameHeight;
  std::size_t width = kFrameWidth;
  std::size_t period = 0;
  SequenceMeta meta;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t t, std::size_t y, std::size_t x) const {
    return pixels[(t * height + y) * width + x];
  }
  /// [T, H, W] tensor of 0/1 values.
  Tensor to_tensor(DType dtype = DType::f64) const;
  bool operator==(const SilhouetteSequence&) const = default;
};

/// Proportions drawn deterministically from (corpus seed, identity).
IdentityParams identity_params(std::uint64_t corpus_seed, std::size_t identity);

/// Renders a walking figure whose limb phase advances 2*pi/period per frame
/// (modulated by pace drift in wild mode), then applies occluders and noise.
SilhouetteSequence generate_sequence(const IdentityParams& params, const WildParams& wild, std::size_t frames,
                                     std::uint64_t seed, std::size_t identity = 0);

/// Figure standing still except for frames [start, start + length), where it
/// walks.
SilhouetteSequence generate_probe_sequence(const IdentityParams& params, std::size_t frames, std::size_t start,
                                           std::size_t length);

/// n ascending frame indices: without replacement when T >= n, otherwise each
/// frame repeated cyclically.
std::vector<std::size_t> sample_indices(std::size_t frames, std::size_t n, std::uint64_t seed);
SilhouetteSequence sample_fixed_length(const SilhouetteSequence& seq, std::size_t n, std::uint64_t seed);

/// Lag in [2, T/2] maximizing the mean pixel agreement between frames t and
/// t + lag (smallest lag on ties); 0 when T < 4.
std::size_t measured_period(const SilhouetteSequence& seq);

struct DatasetConfig {
  std::size_t train_identities = 20;
  std::size_t test_identities = 10;
  std::size_t sequences_per_identity = 8;
  std::size_t frames = 40;
  WildParams wild{0.15, 0.1, 0.002};
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  std::vector<std::size_t> train_identities;
  std::vector<std::size_t> test_identities;
  std::vector<SilhouetteSequence> sequences;

  std::vector<std::size_t> sequences_of(std::size_t identity) const;
  bool operator==(const SyntheticDataset& other) const = default;
};

/// Identities 0..train-1 train, the rest test. Sequence j of identity i uses
/// seed derive(derive(seed, i), j).
SyntheticDataset generate_dataset(const DatasetConfig& cfg);

/// "GLSD" | u32 version | u64 train count | u64 ids | u64 test count | u64 ids
/// | u64 sequence count | per sequence: u64 identity | u64 T | u32 H | u32 W
/// | u64 meta length | meta JSON | bit-packed frames (LSB first).
void save_dataset(const SyntheticDataset& ds, const std::string& path);
SyntheticDataset load_dataset(const std::string& path);

/// FNV-1a over identities, extents and pixels of every sequence.
std::uint64_t dataset_checksum(const SyntheticDataset& ds);

}  // namespace glgait
