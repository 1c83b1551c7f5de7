#ifndef CBDB_DROPMASK_HPP_
#define CBDB_DROPMASK_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cbdb/numerics.hpp"
#include "cbdb/tensor.hpp"

namespace cbdb {

/// Horizontal bands of a feature map of height H. Ranges are [start, end),
/// sorted by start, and together cover [0, H).
struct RowPartition {
  std::size_t height = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;

  std::size_t count() const { return ranges.size(); }
};

/// m disjoint bands of height H/m, top to bottom. Rejects m that does not divide H.
RowPartition uniform_row_partition(std::size_t height, std::size_t m);

/// Bands of patch_h rows at stride patch_h - overlap. If the last band stops
/// short of H, a final band [H - patch_h, H) is appended.
RowPartition overlap_row_partition(std::size_t height, std::size_t patch_h, std::size_t overlap);

/// H x W keep/drop grid (1 = keep), broadcast over channels.
class DropMask {
 public:
  DropMask(std::size_t height, std::size_t width, std::uint8_t fill = 1);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::uint8_t at(std::size_t h, std::size_t w) const { return bits_[h * width_ + w]; }
  void set(std::size_t h, std::size_t w, std::uint8_t v) { bits_[h * width_ + w] = v ? 1 : 0; }
  std::size_t zero_count() const;
  // Rows 0..H-1 of '0'/'1' characters, newline-terminated.
  std::string to_text() const;

  friend bool operator==(const DropMask&, const DropMask&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<std::uint8_t> bits_;
};

/// Mask that zeroes band `branch` (1-based) across all W columns.
DropMask drop_patch_mask(const RowPartition& partition, std::size_t branch, std::size_t width);

/// out[h,w,c] = fm[h,w,c] * mask[h,w]. Accepts [H,W,C] or a batch [N,H,W,C].
Tensor apply_mask(const Tensor& feature_map, const DropMask& mask);

// Competing strategies. Rates are drop probabilities in [0, 1).
struct ElementDropout { double rate = 0.1; };
struct SpatialDropout { double rate = 0.1; };
struct BatchDropout { double rate = 0.1; };
struct DropBlock { std::size_t block_h = 2; std::size_t block_w = 2; double rate = 0.5; };
struct BatchDropBlock { double block_rows_fraction = 0.25; };
struct Cbdb { std::size_t m = 4; };
struct CbdbOverlap { std::size_t patch_h = 3; std::size_t overlap = 1; };
struct NoDrop {};

using DropStrategyKind = std::variant<NoDrop, ElementDropout, SpatialDropout, BatchDropout,
                                      DropBlock, BatchDropBlock, Cbdb, CbdbOverlap>;

std::string strategy_name(const DropStrategyKind& kind);
// Parses "none", "element:0.1", "spatial:0.1", "batch:0.1", "dropblock:2:2:0.5",
// "batchdropblock:0.25", "cbdb:4", "cbdb-overlap:3:1".
DropStrategyKind parse_strategy(const std::string& text);
void validate_strategy(const DropStrategyKind& kind, std::size_t height, std::size_t width);

// True for strategies whose masks are fixed functions of (H, W, branch).
bool is_deterministic(const DropStrategyKind& kind);
// Number of training branches the strategy implies, or 0 if the caller chooses.
std::size_t implied_branch_count(const DropStrategyKind& kind, std::size_t height);

/// Multiplicative mask of shape [N,H,W,C] for one branch of one training step.
/// Random strategies draw from `rng`; CBDB variants ignore it and drop band
/// `branch` (1-based). Only ElementDropout rescales kept entries by 1/(1-rate).
Tensor baseline_mask(const DropStrategyKind& kind, std::size_t batch, std::size_t height,
                     std::size_t width, std::size_t channels, Rng& rng, std::size_t branch = 1);

}  // namespace cbdb

#endif  // CBDB_DROPMASK_HPP_
