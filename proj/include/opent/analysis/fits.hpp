#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace opent::analysis {

enum class FitKind { LogTangent, Gaussian, PowerLaw, TrialPS, Decay };

std::string to_string(FitKind k);

/// Insufficient or degenerate input for a fit.
class FitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FitResult {
  FitKind kind = FitKind::LogTangent;
  std::vector<std::pair<std::string, double>> params;
  double residual = 0.0;  // max abs deviation of the model at the fitted points
  double lo = 0.0;        // window: times, or sector values in physical units
  double hi = 0.0;
  bool ok = true;         // false when the fitter flags a degenerate or unconverged result
  std::string note;

  /// Throws std::out_of_range for an unknown name.
  double param(const std::string& name) const;
};

struct Point {
  double t = 0.0;
  double y = 0.0;
};

/// Probability keys below this are ignored by the distribution fits.
inline constexpr double kFitThreshold = 1e-4;

/// Line through (log2 t, S) at t0 - dt, t0, t0 + dt: S = eta log2(t) + S0.
/// Sample times must match within 1e-9 dt.
FitResult fit_log_tangent(const std::vector<Point>& series, double t0, double dt);

/// Every t0 of the series whose neighbours at t0 +- dt exist.
std::vector<FitResult> log_tangent_curve(const std::vector<Point>& series, double dt);

/// p_Sz = exp(-Sz^2 / 2 delta^2) / sqrt(2 pi delta^2), keys are doubled Sz.
FitResult fit_gaussian(const std::map<int, double>& p_sz);

/// p_S = (2S+1)/sqrt(2 pi delta^2) (exp(-S^2/2delta^2) - exp(-(S+1)^2/2delta^2)),
/// keys are doubled S.
FitResult fit_trial_ps(const std::map<int, double>& p_s);
double trial_ps(double s, double delta);

/// delta = A t^alpha by a straight line in (log t, log delta) over [lo, hi].
FitResult fit_power_law(const std::vector<Point>& series, double lo, double hi);

/// y = (a + b t)^(-c), at most 200 iterations.
FitResult fit_decay(const std::vector<Point>& series);

/// log2(delta) + log2 sqrt(2 pi e).
double shannon_gaussian(double delta);

}  // namespace opent::analysis
