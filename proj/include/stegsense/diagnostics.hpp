#ifndef STEGSENSE_DIAGNOSTICS_HPP_
#define STEGSENSE_DIAGNOSTICS_HPP_

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "stegsense/dataset.hpp"
#include "stegsense/filterbank.hpp"
#include "stegsense/image.hpp"
#include "stegsense/network.hpp"
#include "stegsense/tensor.hpp"

namespace stegsense {

struct DiagnosticReport {
  double pos_fraction = 0.0;
  double neg_fraction = 0.0;
  double threshold = 0.0;
  std::size_t white_pos = 0;
  std::size_t pos_total = 0;
  std::size_t white_neg = 0;
  std::size_t neg_total = 0;
  bool degenerate = false;  // cover map all zero: both regions empty
};

// D = |cover - stego|, t = mean(D), white = D > t. Regions follow the sign
// of the cover map; zeros belong to neither. An empty region reports 0.
DiagnosticReport white_dot_analysis(const Tensor& feat_cover, const Tensor& feat_stego);

struct WhiteDotSummary {
  double pos_fraction = 0.0;
  double neg_fraction = 0.0;
  std::size_t pairs_used = 0;
  std::size_t degenerate = 0;
};

// Mean of per-pair fractions over the non-degenerate reports.
WhiteDotSummary batch_white_dot(const std::vector<DiagnosticReport>& reports);

// Block-1 activation-input maps of the first `n` pairs (eval mode) fed to
// white_dot_analysis, one report per pair.
std::vector<DiagnosticReport> diagnose_pairs(ModelState& model, const std::vector<ImagePair>& pairs, std::size_t n);

// CSV `pair_id,pos_fraction,neg_fraction,threshold,degenerate`.
void write_report_csv(std::ostream& os, const std::vector<DiagnosticReport>& reports);

struct PlaneRange {
  double min = 0.0;
  double max = 0.0;
};

// The 30 residual planes of `image`, each min-max scaled to 0..255 and
// written as residual_<kk>.pgm, plus residual_ranges.txt (`plane,min,max`).
// A flat plane (min == max) is written as all zeros.
std::vector<PlaneRange> export_residuals(const Image8& image, const FilterBank& bank, const std::string& out_dir);

// Inverse of the scaling used by export_residuals.
double residual_from_pixel(std::uint8_t px, const PlaneRange& r);

// One row per image (cover then stego for each pair): label, then the
// feature vector at 17 significant digits. Header `label,f0,...`.
void export_features(ModelState& model, const std::vector<ImagePair>& pairs, const std::string& path);

}  // namespace stegsense

#endif  // STEGSENSE_DIAGNOSTICS_HPP_
