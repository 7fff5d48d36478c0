#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fusiontrack {

struct GradCheckEntry {
  std::string operation;
  double max_relative_error = 0.0;
  std::string worst_param;
  long coordinates = 0;
  long kinks = 0;
};

inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

/// Within tolerance, and kink-skipped coordinates stay under 1% of the total.
bool passed(const GradCheckEntry& e);

/// Central-difference checks of every fusion block, every estimator head and
/// a small end-to-end extractor, on random inputs drawn from `seed`.
/// `analytic_scale` != 1 corrupts the analytic gradients (for testing the checker).
std::vector<GradCheckEntry> run_gradient_checks(std::uint64_t seed, double analytic_scale = 1.0);

}  // namespace fusiontrack
