#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "stegsense/dataset.hpp"
#include "stegsense/errors.hpp"
#include "stegsense/image.hpp"

using namespace stegsense;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_covers(const std::string& dir, std::size_t count, std::size_t side = 16) {
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "cover_%03zu.pgm", i);
    write_pgm(synthesize_cover(side, side, i + 1, Texture::kMixed), (fs::path(dir) / name).string());
  }
}

double mean_second_diff(const Image8& im) {
  double s = 0;
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 1; x + 1 < im.width; ++x)
      s += std::fabs(double(im.at(x - 1, y)) - 2.0 * im.at(x, y) + im.at(x + 1, y));
  return s / static_cast<double>(im.height * (im.width - 2));
}

}  // namespace

TEST_CASE("PGM round trip and header size") {
  Image8 one(1, 1, 0);
  CHECK(encode_pgm(one).size() == 12);  // 11 header bytes + 1 pixel
  CHECK(encode_pgm(one) == std::string("P5\n1 1\n255\n") + '\0');
  const Image8 img = synthesize_cover(20, 17, 4, Texture::kBusy);
  CHECK(parse_pgm(encode_pgm(img)) == img);
  CHECK(parse_pgm("P5 # note\n2 1\n# more\n255\n\x01\x02").pixels == std::vector<std::uint8_t>{1, 2});
}

TEST_CASE("PGM errors name the byte offset") {
  CHECK_THROWS_AS(parse_pgm("P5\n1 1\n65535\n\0\0"), ParseError);
  CHECK_THROWS_WITH_AS(parse_pgm("P2\n1 1\n255\n0"), doctest::Contains("byte offset"), ParseError);
  CHECK_THROWS_WITH_AS(parse_pgm("P5\n2 2\n255\n\x01"), doctest::Contains("byte offset 12"), ParseError);
  CHECK_THROWS_AS(read_pgm("/nonexistent/x.pgm"), DataError);
}

TEST_CASE("synthetic covers") {
  CHECK(synthesize_cover(32, 32, 9, Texture::kMixed) == synthesize_cover(32, 32, 9, Texture::kMixed));
  CHECK_THROWS_AS(synthesize_cover(8, 32, 1, Texture::kSmooth), ConfigError);
  int smoother = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    smoother += mean_second_diff(synthesize_cover(64, 64, s, Texture::kSmooth)) <
                mean_second_diff(synthesize_cover(64, 64, s, Texture::kBusy));
  }
  CHECK(smoother == 100);
  const Image8 im = synthesize_cover(64, 64, 3, Texture::kMixed);
  CHECK(std::set<std::uint8_t>(im.pixels.begin(), im.pixels.end()).size() > 20);
  CHECK(parse_texture("busy") == Texture::kBusy);
  CHECK_THROWS_AS(parse_texture("noisy"), ConfigError);
}

TEST_CASE("bilinear resize keeps constants and sizes") {
  const Image8 flat(40, 30, 77);
  const Image8 r = resize_bilinear(flat, 20, 15);
  CHECK(r.width == 20);
  CHECK(r.height == 15);
  for (auto p : r.pixels) CHECK(p == 77);
}

TEST_CASE("LSB matching properties") {
  const Image8 cover = synthesize_cover(64, 64, 12, Texture::kMixed);
  CHECK(secret_bits({0.4, 0}, 64, 64) == 1638);
  std::vector<EmbedChange> log;
  const Image8 stego = embed_lsb_matching(cover, {0.4, 5}, &log);
  CHECK(log.size() == 1638);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::size_t changed = 0;
  for (const auto& c : log) {
    seen.insert({c.x, c.y});
    CHECK(int(stego.at(c.x, c.y)) - int(cover.at(c.x, c.y)) == c.delta);
    changed += c.delta != 0;
  }
  CHECK(seen.size() == log.size());
  std::size_t diff = 0;
  for (std::size_t i = 0; i < cover.pixels.size(); ++i) {
    const int d = int(stego.pixels[i]) - int(cover.pixels[i]);
    CHECK(std::abs(d) <= 1);
    diff += d != 0;
  }
  CHECK(diff == changed);
  CHECK(embed_lsb_matching(cover, {0.4, 5}) == stego);
  CHECK_THROWS_AS(embed_lsb_matching(cover, {0.0, 1}), ConfigError);
  CHECK_THROWS_AS(embed_lsb_matching(cover, {1.5, 1}), ConfigError);
}

TEST_CASE("saturated pixels only move inward") {
  for (std::uint8_t level : {std::uint8_t{0}, std::uint8_t{255}}) {
    const Image8 flat(16, 16, level);
    const Image8 s = embed_lsb_matching(flat, {1.0, 3});
    for (auto p : s.pixels) CHECK((level == 0 ? p <= 1 : p >= 254));
  }
}

TEST_CASE("a seed whose bits all match leaves the cover unchanged") {
  const Image8 cover = synthesize_cover(16, 16, 1, Texture::kSmooth);
  const EmbedSpec probe{2.0 / 256.0, 0};
  bool found = false;
  for (std::uint64_t seed = 0; seed < 200 && !found; ++seed) {
    std::vector<EmbedChange> log;
    const Image8 s = embed_lsb_matching(cover, {probe.payload_bpp, seed}, &log);
    if (std::all_of(log.begin(), log.end(), [](const EmbedChange& c) { return c.delta == 0; })) {
      CHECK(s == cover);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("embed log round trip") {
  const auto dir = testing::temp_dir("embedlog");
  const std::vector<EmbedChange> log = {{1, 2, -1}, {0, 0, 0}, {5, 3, 1}};
  const std::string path = dir + "/a.log";
  {
    std::ofstream out(path);
    write_embed_log(out, log);
  }
  const auto back = read_embed_log(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0].x == 1);
  CHECK(back[0].delta == -1);
  CHECK(back[2].delta == 1);
}

TEST_CASE("split of 10 covers is 4/1/5 and deterministic") {
  const auto dir = testing::temp_dir("split");
  write_covers(dir + "/covers", 0);
  fs::create_directories(dir + "/covers");
  write_covers(dir + "/covers", 10);
  const DatasetSplit s = build_split(dir + "/covers", dir + "/stego", 0.4, {}, 7, dir + "/m1.tsv");
  CHECK(s.train.size() == 4);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 5);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& p : *part) {
      ids.insert(p.cover);
      CHECK(fs::exists(p.stego));
      CHECK(fs::path(p.stego).filename() == fs::path(p.cover).filename());
    }
  CHECK(ids.size() == 10);

  build_split(dir + "/covers", dir + "/stego2", 0.4, {}, 7, dir + "/m2.tsv");
  const std::string m1 = slurp(dir + "/m1.tsv");
  std::string m2 = slurp(dir + "/m2.tsv");
  for (std::size_t pos; (pos = m2.find("stego2/")) != std::string::npos;) m2.replace(pos, 7, "stego/");
  CHECK(m1 == m2);
  for (const auto& p : s.test) CHECK(slurp(p.stego) == slurp(dir + "/stego2/" + fs::path(p.stego).filename().string()));

  const DatasetSplit back = read_manifest(dir + "/m1.tsv");
  CHECK(back.train == s.train);
  CHECK(back.test == s.test);
}

TEST_CASE("too few covers is a config error") {
  const auto dir = testing::temp_dir("fewcovers");
  CHECK_THROWS_AS(build_split(dir, dir + "/s", 0.4, {}, 1, dir + "/m.tsv"), ConfigError);
  write_covers(dir, 9);
  CHECK_THROWS_AS(build_split(dir, dir + "/s", 0.4, {}, 1, dir + "/m.tsv"), ConfigError);
}

TEST_CASE("batches pair cover and stego rows and drop the tail") {
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < 40; ++i) {
    const Image8 c(16, 16, static_cast<std::uint8_t>(i));
    pairs.push_back({c, Image8(16, 16, static_cast<std::uint8_t>(100 + i))});
  }
  const auto batches = make_batches(pairs, 16, 3, 0);
  REQUIRE(batches.size() == 2);
  const PairBatch& b = batches[0];
  CHECK(b.images.shape() == Shape{32, 1, 16, 16});
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(b.labels[2 * i] == 0);
    CHECK(b.labels[2 * i + 1] == 1);
    CHECK(b.images.data()[2 * i * 256] == double(b.pair_ids[i]));
    CHECK(b.images.data()[(2 * i + 1) * 256] == double(100 + b.pair_ids[i]));
  }
  const auto e0 = batch_plan(40, 16, 3, 0), e1 = batch_plan(40, 16, 3, 1);
  CHECK(e0 != e1);
  CHECK(e0 == batch_plan(40, 16, 3, 0));
  std::set<std::size_t> used;
  for (const auto& ids : e0)
    for (auto i : ids) used.insert(i);
  CHECK(used.size() == 32);
}

TEST_CASE("load_pairs rejects mismatched sizes") {
  const auto dir = testing::temp_dir("loadpairs");
  write_pgm(Image8(16, 16), dir + "/a.pgm");
  write_pgm(Image8(16, 20), dir + "/b.pgm");
  CHECK_THROWS_AS(load_pairs({{dir + "/a.pgm", dir + "/b.pgm"}}), DataError);
  CHECK_THROWS_AS(load_pairs({{dir + "/a.pgm", dir + "/missing.pgm"}}), DataError);
}
