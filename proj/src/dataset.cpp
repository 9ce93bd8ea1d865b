#include "stegsense/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "stegsense/errors.hpp"
#include "stegsense/rng.hpp"

namespace stegsense {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSplitSalt = 0x5b117;
constexpr std::uint64_t kBatchSalt = 0xba7c4;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::vector<std::string> list_pgm_files(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ConfigError("'" + dir + "' is not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t embed_seed(std::uint64_t seed, const std::string& cover_path) {
  return Rng::stream(seed, fnv1a(fs::path(cover_path).filename().string())).next_u64();
}

DatasetSplit build_split(const std::string& cover_dir, const std::string& stego_dir, double payload,
                         const SplitRatios& ratios, std::uint64_t seed, const std::string& manifest_path) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train <= 0.0 || ratios.val < 0.0 || ratios.test < 0.0 || std::fabs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative, train > 0, and sum to 1");
  }
  std::vector<std::string> covers = list_pgm_files(cover_dir);
  if (covers.size() < 10) {
    throw ConfigError("'" + cover_dir + "' holds " + std::to_string(covers.size()) +
                      " covers; at least 10 are needed");
  }
  Rng rng = Rng::stream(seed, kSplitSalt);
  rng.shuffle(covers);

  const std::size_t n = covers.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n))));

  fs::create_directories(stego_dir);
  DatasetSplit split;
  split.ratios = ratios;
  split.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string stego = (fs::path(stego_dir) / fs::path(covers[i]).filename()).string();
    const Image8 cover = read_pgm(covers[i]);
    write_pgm(embed_lsb_matching(cover, {payload, embed_seed(seed, covers[i])}), stego);
    auto& bucket = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
    bucket.push_back({covers[i], stego});
  }
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + manifest_path + "' for writing");
  write_manifest(out, split);
  return split;
}

void write_manifest(std::ostream& os, const DatasetSplit& split) {
  auto emit = [&](const char* name, const std::vector<PairPaths>& v) {
    for (const auto& p : v) os << name << '\t' << p.cover << '\t' << p.stego << '\n';
  };
  emit("train", split.train);
  emit("val", split.val);
  emit("test", split.test);
}

DatasetSplit read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  DatasetSplit split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected split<TAB>cover<TAB>stego");
    }
    const std::string name = line.substr(0, t1);
    PairPaths p{line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
    if (name == "train") {
      split.train.push_back(p);
    } else if (name == "val") {
      split.val.push_back(p);
    } else if (name == "test") {
      split.test.push_back(p);
    } else {
      throw ParseError(path + ":" + std::to_string(lineno) + ": unknown split '" + name + "'");
    }
  }
  return split;
}

std::vector<ImagePair> load_pairs(const std::vector<PairPaths>& paths) {
  std::vector<ImagePair> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    ImagePair pair{read_pgm(p.cover), read_pgm(p.stego)};
    if (pair.cover.width != pair.stego.width || pair.cover.height != pair.stego.height) {
      throw DataError("'" + p.cover + "' and '" + p.stego + "' differ in size");
    }
    if (!out.empty() && (pair.cover.width != out[0].cover.width || pair.cover.height != out[0].cover.height)) {
      throw DataError("'" + p.cover + "' differs in size from the first pair");
    }
    out.push_back(std::move(pair));
  }
  return out;
}

Tensor images_to_tensor(const std::vector<const Image8*>& images) {
  if (images.empty()) throw DataError("no images to convert");
  const std::size_t w = images[0]->width, h = images[0]->height;
  std::vector<double> v;
  v.reserve(images.size() * w * h);
  for (const Image8* img : images) {
    if (img->width != w || img->height != h) throw DataError("images differ in size");
    for (std::uint8_t px : img->pixels) v.push_back(static_cast<double>(px));
  }
  return Tensor::from({images.size(), 1, h, w}, std::move(v));
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t num_pairs, std::size_t pairs_per_batch,
                                                 std::uint64_t seed, std::size_t epoch) {
  if (pairs_per_batch == 0) throw ConfigError("pairs per batch must be positive");
  std::vector<std::size_t> order(num_pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, kBatchSalt, epoch);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + pairs_per_batch <= num_pairs; b += pairs_per_batch) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(b + pairs_per_batch));
  }
  return batches;
}

PairBatch assemble_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& ids) {
  std::vector<const Image8*> imgs;
  PairBatch batch;
  for (std::size_t id : ids) {
    imgs.push_back(&pairs.at(id).cover);
    imgs.push_back(&pairs.at(id).stego);
    batch.labels.push_back(0);
    batch.labels.push_back(1);
  }
  batch.images = images_to_tensor(imgs);
  batch.pair_ids = ids;
  return batch;
}

std::vector<PairBatch> make_batches(const std::vector<ImagePair>& pairs, std::size_t pairs_per_batch,
                                    std::uint64_t seed, std::size_t epoch) {
  std::vector<PairBatch> out;
  for (const auto& ids : batch_plan(pairs.size(), pairs_per_batch, seed, epoch)) {
    out.push_back(assemble_batch(pairs, ids));
  }
  return out;
}

}  // namespace stegsense
