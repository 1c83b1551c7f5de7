#include "cbdb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "cbdb/errors.hpp"
#include "cbdb/numerics.hpp"

namespace cbdb {

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("synth config: " + msg); };
  if (num_ids == 0 || samples_per_id == 0 || num_cameras == 0) {
    fail("num_ids, samples_per_id and num_cameras must be positive");
  }
  if (height == 0 || width == 0 || channels == 0) fail("image dims must be positive");
  if (part_count == 0 || height % part_count != 0) {
    fail("part_count=" + std::to_string(part_count) + " must divide H=" + std::to_string(height));
  }
  if (signature_scale < 0.0 || noise_sigma < 0.0 || camera_shift_sigma < 0.0) {
    fail("sigmas must be non-negative");
  }
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0) ||
      !(occluded_query_prob >= 0.0 && occluded_query_prob <= 1.0)) {
    fail("fractions must lie in [0,1]");
  }
  if (num_train_ids > num_ids) fail("num_train_ids exceeds num_ids");
  if (num_train_ids < num_ids && queries_per_id >= samples_per_id) {
    fail("queries_per_id must leave at least one gallery sample per identity");
  }
}

std::size_t occluded_rows(const SynthConfig& config) {
  return static_cast<std::size_t>(
      std::llround(config.occlusion_fraction * static_cast<double>(config.height)));
}

namespace {

double draw_normal(Rng& rng, double sigma) {
  if (sigma == 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

}  // namespace

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t h_dim = config.height, w_dim = config.width, c_dim = config.channels;
  const std::size_t band_rows = h_dim / config.part_count;

  // signatures[id][part][c]
  std::vector<double> signatures(config.num_ids * config.part_count * c_dim);
  for (double& v : signatures) v = draw_normal(rng, config.signature_scale);
  std::vector<double> shifts(config.num_cameras * c_dim);
  for (double& v : shifts) v = draw_normal(rng, config.camera_shift_sigma);

  const std::size_t occ_rows = occluded_rows(config);
  std::uniform_int_distribution<std::size_t> cam_offset(0, config.num_cameras - 1);
  std::bernoulli_distribution occlude(config.occluded_query_prob);

  SynthDataset data;
  for (std::size_t id = 0; id < config.num_ids; ++id) {
    const std::size_t offset = cam_offset(rng);
    const bool is_train = id < config.num_train_ids;
    for (std::size_t j = 0; j < config.samples_per_id; ++j) {
      Sample s;
      s.id = static_cast<int>(id);
      s.camera = static_cast<int>((offset + j) % config.num_cameras);
      s.image = Tensor({h_dim, w_dim, c_dim});
      const double* shift = shifts.data() + static_cast<std::size_t>(s.camera) * c_dim;
      for (std::size_t h = 0; h < h_dim; ++h) {
        const double* sig =
            signatures.data() + (id * config.part_count + h / band_rows) * c_dim;
        for (std::size_t w = 0; w < w_dim; ++w) {
          for (std::size_t c = 0; c < c_dim; ++c) {
            s.image[(h * w_dim + w) * c_dim + c] =
                sig[c] + shift[c] + draw_normal(rng, config.noise_sigma);
          }
        }
      }
      if (is_train) {
        data.train.push_back(std::move(s));
        continue;
      }
      if (j < config.queries_per_id) {
        s.occluded = occlude(rng);
        if (s.occluded) {
          std::fill(s.image.data().begin() + static_cast<std::ptrdiff_t>(
                                                 (h_dim - occ_rows) * w_dim * c_dim),
                    s.image.data().end(), 0.0);
        }
        data.query.push_back(std::move(s));
      } else {
        data.gallery.push_back(std::move(s));
      }
    }
  }
  return data;
}

Tensor stack_images(std::span<const Sample> samples) {
  if (samples.empty()) throw DimensionError("stack_images: no samples");
  const Shape& s = samples.front().image.shape();
  Tensor out({samples.size(), s[0], s[1], s[2]});
  const std::size_t per = samples.front().image.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require_same_shape(samples[i].image, samples.front().image, "stack_images");
    std::copy(samples[i].image.data().begin(), samples[i].image.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<int> sample_ids(std::span<const Sample> samples) {
  std::vector<int> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

std::vector<int> sample_cameras(std::span<const Sample> samples) {
  std::vector<int> cams;
  cams.reserve(samples.size());
  for (const auto& s : samples) cams.push_back(s.camera);
  return cams;
}

std::vector<std::vector<std::size_t>> pk_batches(std::span<const int> ids, std::size_t p,
                                                 std::size_t k, std::uint64_t seed) {
  if (p == 0 || k == 0) throw ConfigError("pk_batches: P and K must be positive");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]].push_back(i);

  Rng rng(seed);
  std::map<int, std::vector<std::vector<std::size_t>>> chunks;
  for (auto& [id, idx] : by_id) {
    if (idx.size() < k) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    auto& cs = chunks[id];
    for (std::size_t start = 0; start + k <= idx.size(); start += k) {
      cs.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                      idx.begin() + static_cast<std::ptrdiff_t>(start + k));
    }
  }
  if (chunks.size() < p) {
    throw ConfigError("pk_batches: only " + std::to_string(chunks.size()) +
                      " identities have " + std::to_string(k) + " samples, need P=" +
                      std::to_string(p));
  }

  std::vector<int> avail;
  for (const auto& [id, cs] : chunks) avail.push_back(id);
  std::vector<std::vector<std::size_t>> batches;
  while (avail.size() >= p) {
    std::shuffle(avail.begin(), avail.end(), rng);
    std::vector<std::size_t> batch;
    batch.reserve(p * k);
    for (std::size_t i = 0; i < p; ++i) {
      auto& cs = chunks[avail[i]];
      batch.insert(batch.end(), cs.back().begin(), cs.back().end());
      cs.pop_back();
    }
    batches.push_back(std::move(batch));
    std::erase_if(avail, [&](int id) { return chunks[id].empty(); });
    std::sort(avail.begin(), avail.end());
  }
  return batches;
}

void dump_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw ConfigError("cannot write " + (dir / "manifest.csv").string());
  manifest << "split,index,id,camera,occluded,height,width,channels,file\n";
  auto dump_split = [&](const std::vector<Sample>& split, const std::string& name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      const Sample& s = split[i];
      const std::string file = name + "_" + std::to_string(i) + ".txt";
      manifest << name << ',' << i << ',' << s.id << ',' << s.camera << ','
               << (s.occluded ? 1 : 0) << ',' << s.image.dim(0) << ',' << s.image.dim(1) << ','
               << s.image.dim(2) << ',' << file << '\n';
      std::ofstream out(dir / file);
      out.precision(17);
      for (std::size_t v = 0; v < s.image.size(); ++v) {
        out << s.image[v] << ((v + 1) % s.image.dim(2) == 0 ? '\n' : ' ');
      }
    }
  };
  dump_split(data.train, "train");
  dump_split(data.query, "query");
  dump_split(data.gallery, "gallery");
}

}  // namespace cbdb
