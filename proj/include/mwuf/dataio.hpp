#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mwuf/schema.hpp"
#include "mwuf/tensor.hpp"

namespace mwuf {

// Planted-structure interaction generator. Labels are drawn from a logistic
// model over latent vectors, item latents clustered by the visible category
// and user latents by the visible group, so feature-conditioned warm-up has
// genuine signal to find. Item popularity follows a power law, producing the
// long tail of rarely-seen items the warm-up protocol needs.
struct SyntheticSpec {
  size_t users = 800;
  size_t items = 2000;
  size_t interactions = 60000;
  size_t categories = 16;
  size_t groups = 8;
  size_t latent_dim = 8;
  double noise = 0.1;  // fraction of labels flipped after sampling
  double skew = 1.0;   // popularity exponent; 0 = uniform
  uint64_t seed = 1;
};

struct SyntheticData {
  std::vector<RawRow> rows;       // timestamp order
  std::vector<double> true_prob;  // per row, the planted pre-flip probability
  std::vector<std::vector<double>> item_latent, user_latent;
  std::vector<double> item_bias;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);
FeatureSchema synthetic_schema(size_t k = 16);

// Delimited text with a line-number in every complaint. The delimiter may be
// multi-character ("::" for the MovieLens dumps).
std::vector<std::vector<std::string>> read_delimited(const std::string& path,
                                                     const std::string& delim,
                                                     size_t expect_columns = 0);

// MovieLens-1M directory layout: ratings.dat, movies.dat, users.dat with ::
// separators. Ratings of at least 4 become positive labels. Genres (and
// optionally title words) are token lists; the release year is split out of
// the title into its own field.
struct MovieLensData {
  std::vector<RawRow> rows;  // ratings file order
};

MovieLensData load_movielens(const std::string& dir, bool include_titles = false);
FeatureSchema movielens_schema(size_t k = 16, bool include_titles = false);

// Named-tensor container format: "MWUF1" magic, then per tensor a 32-bit
// name length, the name, a 32-bit rank, 64-bit extents and a row-major
// 32-bit float payload, all little-endian, closed by a 64-bit FNV-1a
// checksum over every payload byte.
using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

void save_checkpoint(const NamedTensors& tensors, const std::string& path);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace mwuf
