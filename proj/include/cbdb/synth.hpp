#ifndef CBDB_SYNTH_HPP_
#define CBDB_SYNTH_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cbdb/tensor.hpp"

namespace cbdb {

/// Seeded multi-camera identity generator. Identity information lives in
/// `part_count` horizontal bands; cameras add a per-channel shift.
///
/// Identities [0, num_train_ids) form the training set. The remaining
/// identities are split per identity: the first `queries_per_id` samples
/// become queries and the rest the gallery. A query is occluded (bottom rows
/// zeroed) with probability `occluded_query_prob`.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t num_ids = 30;
  std::size_t samples_per_id = 20;
  std::size_t num_cameras = 4;
  std::size_t height = 8;
  std::size_t width = 4;
  std::size_t channels = 6;
  std::size_t part_count = 4;
  double signature_scale = 1.0;
  double noise_sigma = 0.3;
  double camera_shift_sigma = 0.3;
  double occlusion_fraction = 0.25;
  double occluded_query_prob = 0.5;
  std::size_t num_train_ids = 15;
  std::size_t queries_per_id = 4;

  void validate() const;
};

struct Sample {
  Tensor image;  // [H, W, Cin]
  int id = 0;
  int camera = 0;
  bool occluded = false;
};

struct SynthDataset {
  std::vector<Sample> train;
  std::vector<Sample> query;
  std::vector<Sample> gallery;
};

SynthDataset generate(const SynthConfig& config);

/// Number of rows zeroed from the bottom by occlusion.
std::size_t occluded_rows(const SynthConfig& config);

/// Stacks images into [N, H, W, Cin].
Tensor stack_images(std::span<const Sample> samples);
std::vector<int> sample_ids(std::span<const Sample> samples);
std::vector<int> sample_cameras(std::span<const Sample> samples);

/// Identity-balanced batches for one epoch: each batch has exactly P distinct
/// ids with K samples each, drawn without replacement inside the epoch.
/// Identities with fewer than K samples are never used. Throws ConfigError if
/// fewer than P identities have K samples.
std::vector<std::vector<std::size_t>> pk_batches(std::span<const int> ids, std::size_t p,
                                                 std::size_t k, std::uint64_t seed);

/// Writes manifest.csv (split,index,id,camera,occluded,file) and one
/// whitespace-separated float file per sample under `dir`.
void dump_dataset(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace cbdb

#endif  // CBDB_SYNTH_HPP_
