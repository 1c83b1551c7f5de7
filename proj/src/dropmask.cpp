#include "cbdb/dropmask.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbdb/errors.hpp"

namespace cbdb {

RowPartition uniform_row_partition(std::size_t height, std::size_t m) {
  if (height == 0 || m == 0) {
    throw ConfigError("uniform_row_partition: H and m must be positive");
  }
  if (height % m != 0) {
    throw ConfigError("uniform_row_partition: m=" + std::to_string(m) +
                      " does not divide H=" + std::to_string(height));
  }
  RowPartition p{height, {}};
  const std::size_t len = height / m;
  for (std::size_t i = 0; i < m; ++i) p.ranges.emplace_back(i * len, (i + 1) * len);
  return p;
}

RowPartition overlap_row_partition(std::size_t height, std::size_t patch_h, std::size_t overlap) {
  if (overlap == 0 || overlap >= patch_h || patch_h > height) {
    throw ConfigError("overlap_row_partition: need 0 < overlap < patch_h <= H, got overlap=" +
                      std::to_string(overlap) + " patch_h=" + std::to_string(patch_h) +
                      " H=" + std::to_string(height));
  }
  RowPartition p{height, {}};
  const std::size_t stride = patch_h - overlap;
  for (std::size_t start = 0; start + patch_h <= height; start += stride) {
    p.ranges.emplace_back(start, start + patch_h);
  }
  if (p.ranges.back().second < height) p.ranges.emplace_back(height - patch_h, height);
  return p;
}

DropMask::DropMask(std::size_t height, std::size_t width, std::uint8_t fill)
    : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

std::size_t DropMask::zero_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{0}));
}

std::string DropMask::to_text() const {
  std::string s;
  s.reserve(height_ * (width_ + 1));
  for (std::size_t h = 0; h < height_; ++h) {
    for (std::size_t w = 0; w < width_; ++w) s.push_back(at(h, w) ? '1' : '0');
    s.push_back('\n');
  }
  return s;
}

DropMask drop_patch_mask(const RowPartition& partition, std::size_t branch, std::size_t width) {
  if (branch < 1 || branch > partition.count()) {
    throw ConfigError("drop_patch_mask: branch " + std::to_string(branch) + " outside [1," +
                      std::to_string(partition.count()) + "]");
  }
  if (width == 0) throw ConfigError("drop_patch_mask: width must be positive");
  DropMask mask(partition.height, width);
  const auto [start, end] = partition.ranges[branch - 1];
  for (std::size_t h = start; h < end; ++h) {
    for (std::size_t w = 0; w < width; ++w) mask.set(h, w, 0);
  }
  return mask;
}

Tensor apply_mask(const Tensor& feature_map, const DropMask& mask) {
  const auto& s = feature_map.shape();
  const bool batched = s.size() == 4;
  if (!(s.size() == 3 || batched) || s[s.size() - 3] != mask.height() ||
      s[s.size() - 2] != mask.width()) {
    throw DimensionError("apply_mask: feature map " + shape_to_string(s) + " vs mask [" +
                         std::to_string(mask.height()) + "," + std::to_string(mask.width()) + "]");
  }
  const std::size_t n = batched ? s[0] : 1;
  const std::size_t cells = mask.height() * mask.width();
  const std::size_t c = s.back();
  Tensor out = feature_map;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      if (mask.at(cell / mask.width(), cell % mask.width())) continue;
      double* p = out.data().data() + (i * cells + cell) * c;
      std::fill(p, p + c, 0.0);
    }
  }
  return out;
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_rate(double rate, const char* who) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError(std::string(who) + ": rate " + std::to_string(rate) + " outside [0,1)");
  }
}

RowPartition partition_for(const DropStrategyKind& kind, std::size_t height) {
  if (const auto* c = std::get_if<Cbdb>(&kind)) return uniform_row_partition(height, c->m);
  const auto& o = std::get<CbdbOverlap>(kind);
  return overlap_row_partition(height, o.patch_h, o.overlap);
}

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

}  // namespace

std::string strategy_name(const DropStrategyKind& kind) {
  return std::visit(
      Overloaded{
          [](const NoDrop&) { return std::string("none"); },
          [](const ElementDropout& k) { return "element:" + num(k.rate); },
          [](const SpatialDropout& k) { return "spatial:" + num(k.rate); },
          [](const BatchDropout& k) { return "batch:" + num(k.rate); },
          [](const DropBlock& k) {
            return "dropblock:" + std::to_string(k.block_h) + ":" + std::to_string(k.block_w) +
                   ":" + num(k.rate);
          },
          [](const BatchDropBlock& k) {
            return "batchdropblock:" + num(k.block_rows_fraction);
          },
          [](const Cbdb& k) { return "cbdb:" + std::to_string(k.m); },
          [](const CbdbOverlap& k) {
            return "cbdb-overlap:" + std::to_string(k.patch_h) + ":" + std::to_string(k.overlap);
          },
      },
      kind);
}

DropStrategyKind parse_strategy(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty()) throw ConfigError("empty drop strategy");
  const std::string& name = parts[0];
  auto need = [&](std::size_t n) {
    if (parts.size() != n + 1) {
      throw ConfigError("drop strategy '" + text + "': expected " + std::to_string(n) +
                        " parameter(s)");
    }
  };
  try {
    if (name == "none") { need(0); return NoDrop{}; }
    if (name == "element") { need(1); return ElementDropout{std::stod(parts[1])}; }
    if (name == "spatial") { need(1); return SpatialDropout{std::stod(parts[1])}; }
    if (name == "batch") { need(1); return BatchDropout{std::stod(parts[1])}; }
    if (name == "dropblock") {
      need(3);
      return DropBlock{std::stoul(parts[1]), std::stoul(parts[2]), std::stod(parts[3])};
    }
    if (name == "batchdropblock") { need(1); return BatchDropBlock{std::stod(parts[1])}; }
    if (name == "cbdb") { need(1); return Cbdb{std::stoul(parts[1])}; }
    if (name == "cbdb-overlap") {
      need(2);
      return CbdbOverlap{std::stoul(parts[1]), std::stoul(parts[2])};
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError("drop strategy '" + text + "': bad number");
  }
  throw ConfigError("unknown drop strategy '" + name + "'");
}

void validate_strategy(const DropStrategyKind& kind, std::size_t height, std::size_t width) {
  std::visit(Overloaded{
                 [](const NoDrop&) {},
                 [](const ElementDropout& k) { check_rate(k.rate, "ElementDropout"); },
                 [](const SpatialDropout& k) { check_rate(k.rate, "SpatialDropout"); },
                 [](const BatchDropout& k) { check_rate(k.rate, "BatchDropout"); },
                 [&](const DropBlock& k) {
                   check_rate(k.rate, "DropBlock");
                   if (k.block_h == 0 || k.block_w == 0 || k.block_h > height ||
                       k.block_w > width) {
                     throw ConfigError("DropBlock: block size must be in [1, map size]");
                   }
                 },
                 [](const BatchDropBlock& k) {
                   if (!(k.block_rows_fraction >= 0.0 && k.block_rows_fraction <= 1.0)) {
                     throw ConfigError("BatchDropBlock: fraction outside [0,1]");
                   }
                 },
                 [&](const Cbdb& k) { (void)uniform_row_partition(height, k.m); },
                 [&](const CbdbOverlap& k) {
                   (void)overlap_row_partition(height, k.patch_h, k.overlap);
                 },
             },
             kind);
}

bool is_deterministic(const DropStrategyKind& kind) {
  return std::holds_alternative<NoDrop>(kind) || std::holds_alternative<Cbdb>(kind) ||
         std::holds_alternative<CbdbOverlap>(kind);
}

std::size_t implied_branch_count(const DropStrategyKind& kind, std::size_t height) {
  if (std::holds_alternative<Cbdb>(kind) || std::holds_alternative<CbdbOverlap>(kind)) {
    return partition_for(kind, height).count();
  }
  return 0;
}

Tensor baseline_mask(const DropStrategyKind& kind, std::size_t batch, std::size_t height,
                     std::size_t width, std::size_t channels, Rng& rng, std::size_t branch) {
  validate_strategy(kind, height, width);
  Tensor mask({batch, height, width, channels}, 1.0);
  const std::size_t cells = height * width;
  auto at = [&](std::size_t n, std::size_t h, std::size_t w, std::size_t c) -> double& {
    return mask[((n * height + h) * width + w) * channels + c];
  };

  std::visit(
      Overloaded{
          [](const NoDrop&) {},
          [&](const ElementDropout& k) {
            std::bernoulli_distribution keep(1.0 - k.rate);
            const double scale = 1.0 / (1.0 - k.rate);
            for (double& v : mask.data()) v = keep(rng) ? scale : 0.0;
          },
          [&](const SpatialDropout& k) {
            std::bernoulli_distribution keep(1.0 - k.rate);
            for (std::size_t n = 0; n < batch; ++n) {
              for (std::size_t c = 0; c < channels; ++c) {
                if (keep(rng)) continue;
                for (std::size_t cell = 0; cell < cells; ++cell) {
                  at(n, cell / width, cell % width, c) = 0.0;
                }
              }
            }
          },
          [&](const BatchDropout& k) {
            std::bernoulli_distribution keep(1.0 - k.rate);
            for (std::size_t c = 0; c < channels; ++c) {
              if (keep(rng)) continue;
              for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t cell = 0; cell < cells; ++cell) {
                  at(n, cell / width, cell % width, c) = 0.0;
                }
              }
            }
          },
          [&](const DropBlock& k) {
            std::bernoulli_distribution hit(k.rate);
            std::uniform_int_distribution<std::size_t> top(0, height - k.block_h);
            std::uniform_int_distribution<std::size_t> left(0, width - k.block_w);
            for (std::size_t n = 0; n < batch; ++n) {
              if (!hit(rng)) continue;
              const std::size_t t = top(rng), l = left(rng);
              for (std::size_t h = t; h < t + k.block_h; ++h) {
                for (std::size_t w = l; w < l + k.block_w; ++w) {
                  for (std::size_t c = 0; c < channels; ++c) at(n, h, w, c) = 0.0;
                }
              }
            }
          },
          [&](const BatchDropBlock& k) {
            const auto rows = static_cast<std::size_t>(
                std::llround(k.block_rows_fraction * static_cast<double>(height)));
            if (rows == 0) return;
            std::uniform_int_distribution<std::size_t> top(0, height - rows);
            const std::size_t t = top(rng);
            for (std::size_t n = 0; n < batch; ++n) {
              for (std::size_t h = t; h < t + rows; ++h) {
                for (std::size_t w = 0; w < width; ++w) {
                  for (std::size_t c = 0; c < channels; ++c) at(n, h, w, c) = 0.0;
                }
              }
            }
          },
          [&](const auto& cbdb_kind) {
            const DropMask dm =
                drop_patch_mask(partition_for(DropStrategyKind{cbdb_kind}, height), branch, width);
            for (std::size_t n = 0; n < batch; ++n) {
              for (std::size_t cell = 0; cell < cells; ++cell) {
                if (dm.at(cell / width, cell % width)) continue;
                for (std::size_t c = 0; c < channels; ++c) {
                  at(n, cell / width, cell % width, c) = 0.0;
                }
              }
            }
          },
      },
      kind);
  return mask;
}

}  // namespace cbdb
