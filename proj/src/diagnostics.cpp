#include "stegsense/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "stegsense/errors.hpp"

namespace stegsense {

namespace fs = std::filesystem;

DiagnosticReport white_dot_analysis(const Tensor& feat_cover, const Tensor& feat_stego) {
  if (feat_cover.shape() != feat_stego.shape()) {
    throw DimensionError("white_dot_analysis: cover " + shape_str(feat_cover.shape()) + " vs stego " +
                         shape_str(feat_stego.shape()));
  }
  const auto c = feat_cover.data();
  const auto s = feat_stego.data();
  DiagnosticReport r;
  if (c.empty()) {
    r.degenerate = true;
    return r;
  }
  std::vector<double> d(c.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    d[i] = std::fabs(c[i] - s[i]);
    sum += d[i];
  }
  r.threshold = sum / static_cast<double>(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const bool white = d[i] > r.threshold;
    if (c[i] > 0.0) {
      ++r.pos_total;
      r.white_pos += white;
    } else if (c[i] < 0.0) {
      ++r.neg_total;
      r.white_neg += white;
    }
  }
  r.degenerate = r.pos_total == 0 && r.neg_total == 0;
  r.pos_fraction = r.pos_total ? static_cast<double>(r.white_pos) / static_cast<double>(r.pos_total) : 0.0;
  r.neg_fraction = r.neg_total ? static_cast<double>(r.white_neg) / static_cast<double>(r.neg_total) : 0.0;
  return r;
}

WhiteDotSummary batch_white_dot(const std::vector<DiagnosticReport>& reports) {
  WhiteDotSummary s;
  for (const auto& r : reports) {
    if (r.degenerate) {
      ++s.degenerate;
      continue;
    }
    s.pos_fraction += r.pos_fraction;
    s.neg_fraction += r.neg_fraction;
    ++s.pairs_used;
  }
  if (s.pairs_used) {
    s.pos_fraction /= static_cast<double>(s.pairs_used);
    s.neg_fraction /= static_cast<double>(s.pairs_used);
  }
  return s;
}

std::vector<DiagnosticReport> diagnose_pairs(ModelState& model, const std::vector<ImagePair>& pairs, std::size_t n) {
  if (n == 0 || n > pairs.size()) {
    throw ConfigError("diagnose: asked for " + std::to_string(n) + " pairs, " + std::to_string(pairs.size()) +
                      " available");
  }
  NoGradGuard no_grad;
  std::vector<DiagnosticReport> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor x = images_to_tensor({&pairs[i].cover, &pairs[i].stego});
    const Tensor f = forward(x, model, false).block1_preact;
    const std::size_t per = f.numel() / 2;
    const Shape one(f.shape().begin() + 1, f.shape().end());
    const auto d = f.data();
    const Tensor fc = Tensor::from(one, std::vector<double>(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(per)));
    const Tensor fs = Tensor::from(one, std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(per), d.end()));
    out.push_back(white_dot_analysis(fc, fs));
  }
  return out;
}

void write_report_csv(std::ostream& os, const std::vector<DiagnosticReport>& reports) {
  os << "pair_id,pos_fraction,neg_fraction,threshold,degenerate\n";
  char buf[160];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%d\n", i, r.pos_fraction, r.neg_fraction, r.threshold,
                  r.degenerate ? 1 : 0);
    os << buf;
  }
}

std::vector<PlaneRange> export_residuals(const Image8& image, const FilterBank& bank, const std::string& out_dir) {
  NoGradGuard no_grad;
  const Tensor res = compute_residuals(images_to_tensor({&image}), bank);
  fs::create_directories(out_dir);
  const std::size_t hw = image.width * image.height;
  const auto d = res.data();
  std::vector<PlaneRange> ranges;
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    const auto plane = d.subspan(k * hw, hw);
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    PlaneRange r{*lo, *hi};
    Image8 img(image.width, image.height);
    if (r.max > r.min) {
      for (std::size_t i = 0; i < hw; ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::nearbyint((plane[i] - r.min) / (r.max - r.min) * 255.0));
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "residual_%02zu.pgm", k);
    write_pgm(img, (fs::path(out_dir) / name).string());
    ranges.push_back(r);
  }
  const std::string side = (fs::path(out_dir) / "residual_ranges.txt").string();
  std::ofstream out(side, std::ios::binary);
  if (!out) throw DataError("cannot open '" + side + "' for writing");
  out << "plane,min,max\n";
  char buf[96];
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", k, ranges[k].min, ranges[k].max);
    out << buf;
  }
  if (!out) throw DataError("write to '" + side + "' failed");
  return ranges;
}

double residual_from_pixel(std::uint8_t px, const PlaneRange& r) {
  return r.min + static_cast<double>(px) / 255.0 * (r.max - r.min);
}

void export_features(ModelState& model, const std::vector<ImagePair>& pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  const std::size_t dim = model.cfg.feature_dim();
  out << "label";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << '\n';
  NoGradGuard no_grad;
  char buf[40];
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    std::vector<std::size_t> ids;
    for (std::size_t i = start; i < std::min(pairs.size(), start + kChunk); ++i) ids.push_back(i);
    const PairBatch batch = assemble_batch(pairs, ids);
    const Tensor f = forward(batch.images, model, false).features;
    const auto d = f.data();
    for (std::size_t row = 0; row < batch.labels.size(); ++row) {
      out << batch.labels[row];
      for (std::size_t j = 0; j < dim; ++j) {
        std::snprintf(buf, sizeof buf, ",%.17g", d[row * dim + j]);
        out << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace stegsense
