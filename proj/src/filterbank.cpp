#include "stegsense/filterbank.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <vector>
#include <ostream>

#include "stegsense/errors.hpp"
#include "stegsense/ops.hpp"

namespace stegsense {

namespace {

constexpr int kCtr = 2;

// Eight neighbour directions, clockwise from "up".
constexpr int kDirs[8][2] = {{-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}};

void put(Kernel5& k, int dy, int dx, double v) {
  k[static_cast<std::size_t>((kCtr + dy) * 5 + (kCtr + dx))] = v;
}

Kernel5 from_rows(const double (&rows)[5][5]) {
  Kernel5 k{};
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) k[static_cast<std::size_t>(r * 5 + c)] = rows[r][c];
  return k;
}

// Off-center sum equal to 1 up to accumulated rounding.
bool near_one(double s, double magnitude) {
  return std::fabs(s - 1.0) <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, magnitude);
}

// Correctly rounded sum of all 25 cells (Shewchuk's exact partials), so the
// result is 0 exactly when the real sum is 0, whatever the cell order.
double kernel_sum(std::span<const double> w) {
  std::vector<double> partials;
  for (std::size_t i = 0; i < kKernelCells; ++i) {
    double x = w[i];
    std::size_t used = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[used++] = lo;
      x = hi;
    }
    partials.resize(used);
    partials.push_back(x);
  }
  double total = 0.0;
  for (auto it = partials.rbegin(); it != partials.rend(); ++it) total += *it;
  return total;
}

// Moves the smallest off-center weight by the kernel's exact sum until that
// sum is 0, so a flat image maps to exactly zero. The change is a few ulp.
void make_sum_exact(std::span<double> w) {
  for (int iter = 0; iter < 8; ++iter) {
    const double s = kernel_sum(w);
    if (s == 0.0) return;
    std::size_t small = kKernelCells;
    for (std::size_t i = 0; i < kKernelCells; ++i) {
      if (i == kCenterIndex || w[i] == 0.0) continue;
      if (small == kKernelCells || std::fabs(w[i]) < std::fabs(w[small])) small = i;
    }
    if (small == kKernelCells) return;
    w[small] -= s;
  }
}

}  // namespace

std::string_view filter_class_name(FilterClass c) {
  switch (c) {
    case FilterClass::kFirstOrder: return "first_order";
    case FilterClass::kSecondOrder: return "second_order";
    case FilterClass::kThirdOrder: return "third_order";
    case FilterClass::kSquare3: return "square3";
    case FilterClass::kEdge3: return "edge3";
    case FilterClass::kSquare5: return "square5";
    case FilterClass::kEdge5: return "edge5";
  }
  return "unknown";
}

std::string_view constraint_mode_name(ConstraintMode m) {
  switch (m) {
    case ConstraintMode::kSupport: return "ours";
    case ConstraintMode::kDirection: return "direction";
    case ConstraintMode::kNone: return "none";
  }
  return "unknown";
}

ConstraintMode parse_constraint_mode(std::string_view name) {
  if (name == "ours") return ConstraintMode::kSupport;
  if (name == "direction") return ConstraintMode::kDirection;
  if (name == "none") return ConstraintMode::kNone;
  throw ConfigError("unknown constraint mode '" + std::string(name) +
                    "' (expected ours, direction or none)");
}

Kernel5 rotate90(const Kernel5& k) {
  Kernel5 out{};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) out[c * 5 + (4 - r)] = k[r * 5 + c];
  return out;
}

SeedBank build_seed_bank() {
  SeedBank bank;
  std::size_t next = 0;
  auto add = [&](const Kernel5& k, FilterClass c) {
    bank.kernels[next] = k;
    bank.classes[next] = c;
    ++next;
  };

  // First order: neighbour minus center, 8 directions.
  for (const auto& d : kDirs) {
    Kernel5 k{};
    put(k, d[0], d[1], 1.0);
    put(k, 0, 0, -1.0);
    add(k, FilterClass::kFirstOrder);
  }
  // Second order (1,-2,1) along vertical, anti-diagonal, horizontal, diagonal.
  for (int i = 0; i < 4; ++i) {
    Kernel5 k{};
    put(k, kDirs[i][0], kDirs[i][1], 1.0);
    put(k, -kDirs[i][0], -kDirs[i][1], 1.0);
    put(k, 0, 0, -2.0);
    add(k, FilterClass::kSecondOrder);
  }
  // Third order (-1,3,-3,1), 8 directions.
  for (const auto& d : kDirs) {
    Kernel5 k{};
    put(k, 2 * d[0], 2 * d[1], -1.0);
    put(k, d[0], d[1], 3.0);
    put(k, 0, 0, -3.0);
    put(k, -d[0], -d[1], 1.0);
    add(k, FilterClass::kThirdOrder);
  }

  const double edge3[5][5] = {{0, 0, 0, 0, 0},
                              {0, -1, 2, -1, 0},
                              {0, 2, -4, 2, 0},
                              {0, 0, 0, 0, 0},
                              {0, 0, 0, 0, 0}};
  const double square3[5][5] = {{0, 0, 0, 0, 0},
                                {0, -1, 2, -1, 0},
                                {0, 2, -4, 2, 0},
                                {0, -1, 2, -1, 0},
                                {0, 0, 0, 0, 0}};
  const double edge5[5][5] = {{-1, 2, -2, 2, -1},
                              {2, -6, 8, -6, 2},
                              {-2, 8, -12, 8, -2},
                              {0, 0, 0, 0, 0},
                              {0, 0, 0, 0, 0}};
  const double square5[5][5] = {{-1, 2, -2, 2, -1},
                                {2, -6, 8, -6, 2},
                                {-2, 8, -12, 8, -2},
                                {2, -6, 8, -6, 2},
                                {-1, 2, -2, 2, -1}};

  Kernel5 k = from_rows(edge3);
  for (int i = 0; i < 4; ++i, k = rotate90(k)) add(k, FilterClass::kEdge3);
  add(from_rows(square3), FilterClass::kSquare3);
  k = from_rows(edge5);
  for (int i = 0; i < 4; ++i, k = rotate90(k)) add(k, FilterClass::kEdge5);
  add(from_rows(square5), FilterClass::kSquare5);
  return bank;
}

const SeedBank& seed_bank() {
  static const SeedBank bank = build_seed_bank();
  return bank;
}

std::array<Mask5, kNumFilters> derive_masks(const SeedBank& seed) {
  std::array<Mask5, kNumFilters> masks{};
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    for (std::size_t i = 0; i < kKernelCells; ++i) {
      masks[k][i] = (seed.kernels[k][i] != 0.0 || i == kCenterIndex) ? 1 : 0;
    }
  }
  return masks;
}

Kernel5 normalized_seed(const SeedBank& seed, std::size_t k) {
  Kernel5 w = seed.kernels[k];
  w[kCenterIndex] = 0.0;
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  w[kCenterIndex] = -1.0;
  make_sum_exact(w);
  return w;
}

bool project_kernel(std::span<double> w, const Mask5& mask, const Kernel5& seed_kernel,
                    const Kernel5& recovery, ConstraintMode mode) {
  if (mode != ConstraintMode::kNone) {
    for (std::size_t i = 0; i < kKernelCells; ++i) {
      if (!mask[i]) w[i] = 0.0;
    }
  }
  if (mode == ConstraintMode::kDirection) {
    for (std::size_t i = 0; i < kKernelCells; ++i) {
      if (w[i] * seed_kernel[i] < 0.0) w[i] = 0.0;
    }
  }
  w[kCenterIndex] = 0.0;
  double s = 0.0;
  double magnitude = 0.0;
  for (std::size_t i = 0; i < kKernelCells; ++i) {
    s += w[i];
    magnitude += std::fabs(w[i]);
  }
  // Direction mode keeps seed signs, so a non-positive sum cannot be divided
  // out without flipping them.
  const bool degenerate = mode == ConstraintMode::kDirection ? s < 1e-8 : std::fabs(s) < 1e-8;
  if (degenerate) {
    std::copy(recovery.begin(), recovery.end(), w.begin());
    return true;
  }
  // A sum already equal to 1 up to rounding is left alone so that projecting
  // a projected kernel is a bit-exact no-op.
  if (!near_one(s, magnitude)) {
    for (std::size_t i = 0; i < kKernelCells; ++i) w[i] /= s;
  }
  w[kCenterIndex] = -1.0;
  make_sum_exact(w);
  return false;
}

FilterBank FilterBank::initial(ConstraintMode mode) {
  const SeedBank& seed = seed_bank();
  FilterBank bank;
  std::vector<double> values(kNumFilters * kKernelCells);
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    std::copy(seed.kernels[k].begin(), seed.kernels[k].end(), values.begin() + k * kKernelCells);
  }
  bank.kernels = Tensor::from({kNumFilters, 1, kKernelSide, kKernelSide}, std::move(values), true);
  bank.masks = derive_masks(seed);
  bank.classes = seed.classes;
  bank.mode = mode;
  bank.project();
  bank.degenerate_resets = 0;
  return bank;
}

std::size_t FilterBank::project() {
  const SeedBank& seed = seed_bank();
  auto data = kernels.mutable_data();
  std::size_t resets = 0;
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    if (project_kernel(data.subspan(k * kKernelCells, kKernelCells), masks[k], seed.kernels[k],
                       normalized_seed(seed, k), mode)) {
      ++resets;
    }
  }
  degenerate_resets += resets;
  return resets;
}

Tensor project(const Tensor& kernels, const std::array<Mask5, kNumFilters>& masks,
               ConstraintMode mode, std::size_t* resets) {
  if (kernels.shape() != Shape{kNumFilters, 1, kKernelSide, kKernelSide}) {
    throw DimensionError("project: expected [30,1,5,5], got " + shape_str(kernels.shape()));
  }
  FilterBank bank;
  bank.kernels = kernels.clone();
  bank.masks = masks;
  bank.mode = mode;
  const std::size_t n = bank.project();
  if (resets) *resets = n;
  return bank.kernels;
}

Tensor compute_residuals(const Tensor& images, const FilterBank& bank) {
  if (images.ndim() != 4 || images.dim(1) != 1) {
    throw DimensionError("compute_residuals: expected [N,1,H,W], got " + shape_str(images.shape()));
  }
  // r = conv(x - x0, w) + x0 * sum(w), with x0 the image's first pixel. This
  // is the plain correlation, but a flat image gives exact zeros: x - x0
  // vanishes and the projected kernels sum to exactly 0. x0 is treated as a
  // constant; the two x0 terms cancel, so gradients are those of conv(x, w).
  const std::size_t n = images.dim(0), hw = images.dim(2) * images.dim(3);
  std::vector<double> ref(n), shifted(images.numel());
  const auto xd = images.data();
  for (std::size_t b = 0; b < n; ++b) {
    ref[b] = xd[b * hw];
    for (std::size_t i = 0; i < hw; ++i) shifted[b * hw + i] = ref[b];
  }
  const Tensor centered = ops::sub(images, Tensor::from(images.shape(), std::move(shifted)));
  const Tensor conv = ops::conv2d(ops::reflect_pad2d(centered, kKernelSide / 2), bank.kernels, 1, 0);

  const Tensor& w = bank.kernels;
  std::vector<double> out(conv.data().begin(), conv.data().end());
  const auto wd = w.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < kNumFilters; ++k) {
      const double add = ref[b] * kernel_sum(wd.subspan(k * kKernelCells, kKernelCells));
      double* plane = out.data() + (b * kNumFilters + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) plane[i] += add;
    }
  Tensor y = detail::make_result(conv.shape(), std::move(out));
  detail::attach(y, "residual_offset", {conv, w}, [conv, w, ref, n, hw](const detail::TensorImpl& o) {
    if (conv.requires_grad()) {
      double* gc = conv.impl()->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) gc[i] += o.grad[i];
    }
    if (w.requires_grad()) {
      double* gw = w.impl()->grad_buffer();
      for (std::size_t k = 0; k < kNumFilters; ++k) {
        double acc = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          double plane = 0.0;
          const double* g = o.grad.data() + (b * kNumFilters + k) * hw;
          for (std::size_t i = 0; i < hw; ++i) plane += g[i];
          acc += ref[b] * plane;
        }
        for (std::size_t i = 0; i < kKernelCells; ++i) gw[k * kKernelCells + i] += acc;
      }
    }
  });
  return y;
}

void write_filters(std::ostream& os, const FilterBank& bank) {
  const auto data = bank.kernels.data();
  char buf[64];
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    os << "# filter " << k << " class " << filter_class_name(bank.classes[k]) << '\n';
    for (std::size_t r = 0; r < kKernelSide; ++r) {
      for (std::size_t c = 0; c < kKernelSide; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", data[k * kKernelCells + r * kKernelSide + c]);
        os << (c ? " " : "") << buf;
      }
      os << '\n';
    }
  }
}

void export_filters(const FilterBank& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_filters(out, bank);
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace stegsense
