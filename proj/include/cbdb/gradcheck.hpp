#ifndef CBDB_GRADCHECK_HPP_
#define CBDB_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace cbdb {

struct GradcheckResult {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Each suite compares analytic gradients with central finite differences on
// `trials` seeded random problems and reports the worst norm-wise relative
// error.
GradcheckResult check_linear(std::size_t trials, std::uint64_t seed);
GradcheckResult check_relu(std::size_t trials, std::uint64_t seed);
GradcheckResult check_softmax_ce(std::size_t trials, std::uint64_t seed);
GradcheckResult check_hard_triplet(std::size_t trials, std::uint64_t seed);
GradcheckResult check_elastic(std::size_t trials, std::uint64_t seed, bool detach_weight);
GradcheckResult check_batch_elastic(std::size_t trials, std::uint64_t seed);
// Tiny CBDB model (H=4, W=2, m=2, N=4): every parameter tensor.
GradcheckResult check_end_to_end(std::size_t trials, std::uint64_t seed);

std::vector<GradcheckResult> run_all_gradchecks(std::size_t trials = 10, std::uint64_t seed = 7);

nlohmann::json to_json(const std::vector<GradcheckResult>& results);

}  // namespace cbdb

#endif  // CBDB_GRADCHECK_HPP_
