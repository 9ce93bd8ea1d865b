#include "stegsense/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <ostream>
#include <sstream>

#include "stegsense/errors.hpp"
#include "stegsense/rng.hpp"

namespace stegsense {

namespace {

class PgmReader {
 public:
  PgmReader(std::string_view bytes, const std::string& source) : b_(bytes), src_(source) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(src_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      const char c = b_[pos_];
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      fail(std::string("expected ") + field);
    }
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 30)) fail(std::string(field) + " too large");
      ++pos_;
    }
    return v;
  }

  Image8 read() {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != '5') fail("bad magic (expected P5)");
    pos_ = 2;
    const std::size_t w = number("width");
    const std::size_t h = number("height");
    const std::size_t header_maxval_at = pos_;
    const std::size_t maxval = number("maxval");
    if (maxval != 255) {
      pos_ = header_maxval_at;
      fail("maxval " + std::to_string(maxval) + " unsupported (only 255)");
    }
    if (w == 0 || h == 0) fail("zero image dimension");
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
      fail("expected whitespace after maxval");
    }
    ++pos_;
    if (b_.size() - pos_ < w * h) {
      pos_ = b_.size();
      fail("truncated pixel data (need " + std::to_string(w * h) + " bytes)");
    }
    Image8 img(w, h);
    std::copy_n(b_.data() + pos_, w * h, reinterpret_cast<char*>(img.pixels.data()));
    return img;
  }

 private:
  std::string_view b_;
  const std::string& src_;
  std::size_t pos_ = 0;
};

// Box blur of radius r along both axes, borders clamped. Separable running
// means over a double field.
std::vector<double> box_blur(const std::vector<double>& f, std::size_t w, std::size_t h, std::size_t r) {
  if (r == 0) return f;
  const auto iw = static_cast<std::ptrdiff_t>(w), ih = static_cast<std::ptrdiff_t>(h);
  const auto ir = static_cast<std::ptrdiff_t>(r);
  const double norm = 1.0 / static_cast<double>(2 * r + 1);
  std::vector<double> tmp(f.size()), out(f.size());
  for (std::ptrdiff_t y = 0; y < ih; ++y) {
    for (std::ptrdiff_t x = 0; x < iw; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -ir; d <= ir; ++d) s += f[static_cast<std::size_t>(y * iw + std::clamp(x + d, std::ptrdiff_t{0}, iw - 1))];
      tmp[static_cast<std::size_t>(y * iw + x)] = s * norm;
    }
  }
  for (std::ptrdiff_t y = 0; y < ih; ++y) {
    for (std::ptrdiff_t x = 0; x < iw; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -ir; d <= ir; ++d) s += tmp[static_cast<std::size_t>(std::clamp(y + d, std::ptrdiff_t{0}, ih - 1) * iw + x)];
      out[static_cast<std::size_t>(y * iw + x)] = s * norm;
    }
  }
  return out;
}

// Zero-mean, unit-deviation noise field blurred `passes` times with radius r.
std::vector<double> noise_field(std::size_t w, std::size_t h, std::size_t r, int passes, Rng& rng) {
  std::vector<double> f(w * h);
  for (double& v : f) v = rng.normal();
  for (int i = 0; i < passes; ++i) f = box_blur(f, w, h, r);
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  for (double& v : f) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return f;
}

}  // namespace

Image8 parse_pgm(std::string_view bytes, const std::string& source) {
  return PgmReader(bytes, source).read();
}

Image8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pgm(bytes, path);
}

std::string encode_pgm(const Image8& img) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
    throw DataError("encode_pgm: inconsistent image " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " with " + std::to_string(img.pixels.size()) + " pixels");
  }
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

void write_pgm(const Image8& img, const std::string& path) {
  const std::string bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path + "' failed");
}

std::string_view texture_name(Texture t) {
  switch (t) {
    case Texture::kSmooth: return "smooth";
    case Texture::kMixed: return "mixed";
    case Texture::kBusy: return "busy";
  }
  return "unknown";
}

Texture parse_texture(std::string_view name) {
  if (name == "smooth") return Texture::kSmooth;
  if (name == "mixed") return Texture::kMixed;
  if (name == "busy") return Texture::kBusy;
  throw ConfigError("unknown texture '" + std::string(name) + "' (expected smooth, mixed or busy)");
}

Image8 synthesize_cover(std::size_t w, std::size_t h, std::uint64_t seed, Texture texture) {
  if (w < 16 || h < 16) {
    throw ConfigError("synthesize_cover: size " + std::to_string(w) + "x" + std::to_string(h) +
                      " below the 16x16 minimum");
  }
  Rng rng(seed);
  const double base = rng.uniform(80.0, 176.0);
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double slope = rng.uniform(20.0, 70.0);
  const std::size_t smooth_r = std::max<std::size_t>(2, std::min(w, h) / 16);
  const double smooth_amp = rng.uniform(8.0, 20.0);
  const double busy_amp = rng.uniform(18.0, 32.0);

  std::vector<double> field;
  switch (texture) {
    case Texture::kSmooth:
      field = noise_field(w, h, smooth_r, 2, rng);
      for (double& v : field) v *= smooth_amp;
      break;
    case Texture::kBusy:
      field = noise_field(w, h, 1, 1, rng);
      for (double& v : field) v *= busy_amp;
      break;
    case Texture::kMixed: {
      std::vector<double> smooth = noise_field(w, h, smooth_r, 2, rng);
      std::vector<double> busy = noise_field(w, h, 1, 1, rng);
      std::vector<double> mask = noise_field(w, h, 2 * smooth_r, 2, rng);
      const double shift = rng.uniform(-0.6, 0.6);
      field.resize(w * h);
      for (std::size_t i = 0; i < field.size(); ++i) {
        const double m = 1.0 / (1.0 + std::exp(-4.0 * (mask[i] - shift)));
        field[i] = (1.0 - m) * smooth_amp * smooth[i] + m * busy_amp * busy[i];
      }
      break;
    }
  }

  const double cx = std::cos(angle), cy = std::sin(angle);
  const double span = static_cast<double>(std::max(w, h));
  Image8 img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double g = slope * ((static_cast<double>(x) * cx + static_cast<double>(y) * cy) / span);
      const double v = std::nearbyint(base + g + field[y * w + x]);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return img;
}

Image8 resize_bilinear(const Image8& img, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0) throw ConfigError("resize_bilinear: zero target size");
  Image8 out(w, h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = (1 - tx) * img.at(x0, y0) + tx * img.at(x1, y0);
      const double bot = (1 - tx) * img.at(x0, y1) + tx * img.at(x1, y1);
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::nearbyint((1 - ty) * top + ty * bot), 0.0, 255.0));
    }
  }
  return out;
}

std::size_t secret_bits(const EmbedSpec& spec, std::size_t w, std::size_t h) {
  return static_cast<std::size_t>(std::llround(spec.payload_bpp * static_cast<double>(w * h)));
}

Image8 embed_lsb_matching(const Image8& cover, const EmbedSpec& spec, std::vector<EmbedChange>* log) {
  if (!(spec.payload_bpp > 0.0 && spec.payload_bpp <= 1.0)) {
    throw ConfigError("payload must be in (0,1] bpp, got " + std::to_string(spec.payload_bpp));
  }
  const std::size_t total = cover.width * cover.height;
  const std::size_t n = secret_bits(spec, cover.width, cover.height);
  Rng rng(spec.seed);
  // Partial Fisher-Yates: the first n entries become the visited positions.
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);

  Image8 stego = cover;
  if (log) log->clear();
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t& px = stego.pixels[idx[i]];
    const unsigned bit = rng.coin() ? 1u : 0u;
    int delta = 0;
    if ((px & 1u) != bit) {
      if (px == 0) {
        delta = 1;
      } else if (px == 255) {
        delta = -1;
      } else {
        delta = rng.coin() ? 1 : -1;
      }
      px = static_cast<std::uint8_t>(px + delta);
    }
    if (log) log->push_back({idx[i] % cover.width, idx[i] / cover.width, delta});
  }
  return stego;
}

void write_embed_log(std::ostream& os, const std::vector<EmbedChange>& log) {
  for (const auto& c : log) os << c.x << ' ' << c.y << ' ' << c.delta << '\n';
}

std::vector<EmbedChange> read_embed_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<EmbedChange> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    EmbedChange c{};
    if (!(ls >> c.x >> c.y >> c.delta) || c.delta < -1 || c.delta > 1) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected `x y delta`");
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace stegsense
