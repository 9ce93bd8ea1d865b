#ifndef STEGSENSE_FILTERBANK_HPP_
#define STEGSENSE_FILTERBANK_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <span>
#include <string_view>

#include "stegsense/tensor.hpp"

namespace stegsense {

inline constexpr std::size_t kNumFilters = 30;
inline constexpr std::size_t kKernelSide = 5;
inline constexpr std::size_t kKernelCells = kKernelSide * kKernelSide;
inline constexpr std::size_t kCenterIndex = 12;  // (2,2) in row-major 5x5

enum class FilterClass { kFirstOrder, kSecondOrder, kThirdOrder, kSquare3, kEdge3, kSquare5, kEdge5 };

std::string_view filter_class_name(FilterClass c);

// How the bank is pulled back onto the constraint set after each step.
//   kSupport:   keep the seed's support (signs free), normalise, center -1.
//   kDirection: as kSupport, and entries whose sign disagrees with the seed
//               are zeroed before normalising.
//   kNone:      no support mask; only normalise and set the center.
enum class ConstraintMode { kSupport, kDirection, kNone };

std::string_view constraint_mode_name(ConstraintMode m);
ConstraintMode parse_constraint_mode(std::string_view name);  // ConfigError on unknown

using Kernel5 = std::array<double, kKernelCells>;
using Mask5 = std::array<std::uint8_t, kKernelCells>;

// The 30 linear SRM kernels at their integer weights, embedded in 5x5.
struct SeedBank {
  std::array<Kernel5, kNumFilters> kernels{};
  std::array<FilterClass, kNumFilters> classes{};
};

const SeedBank& seed_bank();
SeedBank build_seed_bank();

// Quarter turn clockwise about the center.
Kernel5 rotate90(const Kernel5& k);

// R_k: 1 where the seed is non-zero, plus the center cell.
std::array<Mask5, kNumFilters> derive_masks(const SeedBank& seed);

// Seed k with its center removed and off-center weights scaled to sum 1,
// center set to -1. This is also the recovery value for a degenerate sum.
Kernel5 normalized_seed(const SeedBank& seed, std::size_t k);

// Projects one kernel in place. Returns true when the off-center sum was
// degenerate (|s| < 1e-8) and the kernel was reset to its normalised seed.
bool project_kernel(std::span<double> w, const Mask5& mask, const Kernel5& seed_kernel,
                    const Kernel5& recovery, ConstraintMode mode);

struct FilterBank {
  Tensor kernels;  // [30,1,5,5], trainable
  std::array<Mask5, kNumFilters> masks{};
  std::array<FilterClass, kNumFilters> classes{};
  ConstraintMode mode = ConstraintMode::kSupport;
  std::size_t degenerate_resets = 0;  // running count over the bank's life

  // Seed kernels projected once, so every invariant holds from the start.
  static FilterBank initial(ConstraintMode mode = ConstraintMode::kSupport);

  // Applies the projection to all 30 kernels in place; returns the number
  // of degenerate resets in this call.
  std::size_t project();
};

// Pure form of FilterBank::project over a [30,1,5,5] tensor.
Tensor project(const Tensor& kernels, const std::array<Mask5, kNumFilters>& masks,
               ConstraintMode mode = ConstraintMode::kSupport, std::size_t* resets = nullptr);

// Residual maps r = w * I with the projected kernels: [N,1,H,W] -> [N,30,H,W].
// The image is mirror-padded by 2, so flat regions touching the border still
// give a zero response.
Tensor compute_residuals(const Tensor& images, const FilterBank& bank);

// Text dump: per filter a `# filter <k> class <name>` line and five rows of
// five values at 17 significant digits.
void write_filters(std::ostream& os, const FilterBank& bank);
void export_filters(const FilterBank& bank, const std::string& path);

}  // namespace stegsense

#endif  // STEGSENSE_FILTERBANK_HPP_
