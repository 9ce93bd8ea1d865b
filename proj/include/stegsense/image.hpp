#ifndef STEGSENSE_IMAGE_HPP_
#define STEGSENSE_IMAGE_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace stegsense {

// 8-bit grayscale image, row-major.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  bool operator==(const Image8&) const = default;
};

// Binary PGM (P5, maxval 255). Comment lines starting with '#' are accepted
// between header fields. Errors are ParseError with the byte offset.
Image8 parse_pgm(std::string_view bytes, const std::string& source = "<memory>");
Image8 read_pgm(const std::string& path);
std::string encode_pgm(const Image8& img);  // "P5\n<w> <h>\n255\n" + raw bytes
void write_pgm(const Image8& img, const std::string& path);

enum class Texture { kSmooth, kMixed, kBusy };
std::string_view texture_name(Texture t);
Texture parse_texture(std::string_view name);  // ConfigError on unknown

// Seeded synthetic cover: a blurred noise field (blur radius set by the
// texture) over a random low-frequency gradient, quantised to [0,255].
// "mixed" blends a smooth and a busy field through a smooth random mask.
// ConfigError if w or h < 16.
Image8 synthesize_cover(std::size_t w, std::size_t h, std::uint64_t seed, Texture texture);

// Bilinear resampling with pixel centers aligned (half-pixel convention).
Image8 resize_bilinear(const Image8& img, std::size_t w, std::size_t h);

struct EmbedSpec {
  double payload_bpp = 0.4;
  std::uint64_t seed = 0;
};

// round(payload * w * h).
std::size_t secret_bits(const EmbedSpec& spec, std::size_t w, std::size_t h);

struct EmbedChange {
  std::size_t x;
  std::size_t y;
  int delta;  // -1, 0 or +1
};

// LSB matching at n = secret_bits() distinct positions. `log` (optional)
// receives one entry per visited position, unchanged ones with delta 0.
// ConfigError unless payload is in (0,1].
Image8 embed_lsb_matching(const Image8& cover, const EmbedSpec& spec,
                          std::vector<EmbedChange>* log = nullptr);

// Audit text: one `x y delta` line per entry.
void write_embed_log(std::ostream& os, const std::vector<EmbedChange>& log);
std::vector<EmbedChange> read_embed_log(const std::string& path);

}  // namespace stegsense

#endif  // STEGSENSE_IMAGE_HPP_
