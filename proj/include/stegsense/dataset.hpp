#ifndef STEGSENSE_DATASET_HPP_
#define STEGSENSE_DATASET_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stegsense/image.hpp"
#include "stegsense/tensor.hpp"

namespace stegsense {

struct SplitRatios {
  double train = 0.4;
  double val = 0.1;
  double test = 0.5;
};

struct PairPaths {
  std::string cover;
  std::string stego;
  bool operator==(const PairPaths&) const = default;
};

struct DatasetSplit {
  std::vector<PairPaths> train;
  std::vector<PairPaths> val;
  std::vector<PairPaths> test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

// Sorted *.pgm files of a directory (full paths).
std::vector<std::string> list_pgm_files(const std::string& dir);

// Seed of the embedding stream for one cover, derived from the run seed and
// the cover's file name (so it does not depend on directory order).
std::uint64_t embed_seed(std::uint64_t seed, const std::string& cover_path);

// Shuffles the covers of `cover_dir` with `seed`, cuts them into
// round(train*N) / round(val*N) / rest, embeds every cover into
// `stego_dir/<same name>` and writes the manifest. ConfigError when the
// directory has fewer than 10 covers or the ratios are invalid.
DatasetSplit build_split(const std::string& cover_dir, const std::string& stego_dir, double payload,
                         const SplitRatios& ratios, std::uint64_t seed, const std::string& manifest_path);

// Lines `train|val|test<TAB>cover<TAB>stego`.
void write_manifest(std::ostream& os, const DatasetSplit& split);
DatasetSplit read_manifest(const std::string& path);

struct ImagePair {
  Image8 cover;
  Image8 stego;
};

// DataError on unreadable files or differing image sizes.
std::vector<ImagePair> load_pairs(const std::vector<PairPaths>& paths);

// Images as raw 0..255 values, [N,1,H,W]. All images must share one size.
Tensor images_to_tensor(const std::vector<const Image8*>& images);

struct PairBatch {
  Tensor images;                 // [2B,1,H,W]: cover i at row 2i, stego i at 2i+1
  std::vector<int> labels;       // 0 cover, 1 stego
  std::vector<std::size_t> pair_ids;
};

// Per-epoch seeded shuffle of pair indices cut into full batches; the short
// tail is dropped.
std::vector<std::vector<std::size_t>> batch_plan(std::size_t num_pairs, std::size_t pairs_per_batch,
                                                 std::uint64_t seed, std::size_t epoch);
PairBatch assemble_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& ids);
std::vector<PairBatch> make_batches(const std::vector<ImagePair>& pairs, std::size_t pairs_per_batch,
                                    std::uint64_t seed, std::size_t epoch);

}  // namespace stegsense

#endif  // STEGSENSE_DATASET_HPP_
