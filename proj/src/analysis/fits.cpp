#include "opent/analysis/fits.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_fit.h>
#include <gsl/gsl_multifit_nlinear.h>

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <numbers>

namespace opent::analysis {

namespace {

using Model = std::function<double(const double* x, std::size_t i)>;

struct NlsProblem {
  const Model* model;
  const std::vector<double>* y;
};

int residuals(const gsl_vector* x, void* data, gsl_vector* f) {
  const auto* p = static_cast<const NlsProblem*>(data);
  for (std::size_t i = 0; i < p->y->size(); ++i) {
    const double m = (*p->model)(x->data, i);
    gsl_vector_set(f, i, std::isfinite(m) ? m - (*p->y)[i] : 1e100);
  }
  return GSL_SUCCESS;
}

struct NlsResult {
  std::vector<double> x;
  bool converged = false;
  std::size_t iterations = 0;
};

// Levenberg-Marquardt with a finite-difference Jacobian.
NlsResult least_squares(const Model& model, const std::vector<double>& y, std::vector<double> x0, std::size_t max_iter) {
  NlsProblem prob{&model, &y};
  gsl_multifit_nlinear_fdf fdf{};
  fdf.f = residuals;
  fdf.df = nullptr;
  fdf.fvv = nullptr;
  fdf.n = y.size();
  fdf.p = x0.size();
  fdf.params = &prob;

  gsl_multifit_nlinear_parameters params = gsl_multifit_nlinear_default_parameters();
  gsl_multifit_nlinear_workspace* w =
      gsl_multifit_nlinear_alloc(gsl_multifit_nlinear_trust, &params, fdf.n, fdf.p);
  gsl_vector_view xv = gsl_vector_view_array(x0.data(), x0.size());
  gsl_multifit_nlinear_init(&xv.vector, &fdf, w);
  int info = 0;
  const int status = gsl_multifit_nlinear_driver(max_iter, 1e-15, 1e-15, 0.0, nullptr, nullptr, &info, w);

  NlsResult res;
  const gsl_vector* x = gsl_multifit_nlinear_position(w);
  res.x.assign(x->data, x->data + x0.size());
  res.iterations = gsl_multifit_nlinear_niter(w);
  // ENOPROG: no step can reduce the cost further, which is where exact data ends up.
  res.converged = status == GSL_SUCCESS || status == GSL_ENOPROG;
  gsl_multifit_nlinear_free(w);
  return res;
}

// Silence GSL's abort-on-error for the lifetime of a fit.
class GslErrorGuard {
 public:
  GslErrorGuard() : old_(gsl_set_error_handler_off()) {}
  ~GslErrorGuard() { gsl_set_error_handler(old_); }
  GslErrorGuard(const GslErrorGuard&) = delete;
  GslErrorGuard& operator=(const GslErrorGuard&) = delete;

 private:
  gsl_error_handler_t* old_;
};

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
};

Line fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  Line l;
  double c00, c01, c11, sumsq;
  gsl_fit_linear(x.data(), 1, y.data(), 1, x.size(), &l.intercept, &l.slope, &c00, &c01, &c11, &sumsq);
  return l;
}

const Point& sample_at(const std::vector<Point>& series, double t, double dt) {
  for (const auto& p : series)
    if (std::abs(p.t - t) <= 1e-9 * dt) return p;
  throw FitError(fmt::format("no sample at t = {}", t));
}

double gaussian(double sz, double delta) {
  return std::exp(-sz * sz / (2 * delta * delta)) / std::sqrt(2 * std::numbers::pi * delta * delta);
}

// (value in physical units, probability) for keys above the threshold.
std::vector<std::pair<double, double>> significant(const std::map<int, double>& probs) {
  std::vector<std::pair<double, double>> out;
  for (const auto& [q, p] : probs)
    if (p > kFitThreshold) out.emplace_back(0.5 * q, p);
  return out;
}

FitResult fit_one_width(FitKind kind, const std::vector<std::pair<double, double>>& data,
                        const std::function<double(double, double)>& form, double seed) {
  std::vector<double> y;
  for (const auto& d : data) y.push_back(d.second);
  const Model model = [&](const double* x, std::size_t i) { return form(data[i].first, std::exp(x[0])); };
  GslErrorGuard guard;
  const auto nls = least_squares(model, y, {std::log(seed)}, 200);
  FitResult r;
  r.kind = kind;
  const double delta = std::exp(nls.x[0]);
  r.params = {{"delta", delta}};
  for (std::size_t i = 0; i < data.size(); ++i)
    r.residual = std::max(r.residual, std::abs(form(data[i].first, delta) - y[i]));
  r.lo = data.front().first;
  r.hi = data.back().first;
  r.ok = nls.converged;
  if (!r.ok) r.note = "did not converge";
  return r;
}

}  // namespace

std::string to_string(FitKind k) {
  switch (k) {
    case FitKind::LogTangent:
      return "log_tangent";
    case FitKind::Gaussian:
      return "gaussian";
    case FitKind::PowerLaw:
      return "power_law";
    case FitKind::TrialPS:
      return "trial_pS";
    case FitKind::Decay:
      return "decay";
  }
  return "unknown";
}

double FitResult::param(const std::string& name) const {
  for (const auto& [k, v] : params)
    if (k == name) return v;
  throw std::out_of_range("fit has no parameter " + name);
}

FitResult fit_log_tangent(const std::vector<Point>& series, double t0, double dt) {
  if (!(dt > 0.0)) throw FitError("dt must be positive");
  if (t0 <= dt) throw FitError(fmt::format("t0 = {} must exceed dt = {}", t0, dt));
  std::vector<double> x, y;
  for (double t : {t0 - dt, t0, t0 + dt}) {
    const auto& p = sample_at(series, t, dt);
    x.push_back(std::log2(p.t));
    y.push_back(p.y);
  }
  const Line l = fit_line(x, y);
  FitResult r;
  r.kind = FitKind::LogTangent;
  r.params = {{"eta", l.slope}, {"S0", l.intercept}};
  for (std::size_t i = 0; i < 3; ++i) r.residual = std::max(r.residual, std::abs(l.slope * x[i] + l.intercept - y[i]));
  r.lo = t0 - dt;
  r.hi = t0 + dt;
  return r;
}

std::vector<FitResult> log_tangent_curve(const std::vector<Point>& series, double dt) {
  std::vector<FitResult> out;
  for (const auto& p : series) {
    if (p.t <= dt) continue;
    try {
      out.push_back(fit_log_tangent(series, p.t, dt));
    } catch (const FitError&) {
    }
  }
  return out;
}

FitResult fit_gaussian(const std::map<int, double>& p_sz) {
  const auto data = significant(p_sz);
  if (data.size() < 3) throw FitError(fmt::format("Gaussian fit needs 3 sectors above {}, got {}", kFitThreshold, data.size()));
  double m2 = 0.0, norm = 0.0;
  for (const auto& [sz, p] : data) {
    m2 += p * sz * sz;
    norm += p;
  }
  if (!(m2 > 0.0)) throw FitError("Gaussian fit input has zero width");
  return fit_one_width(FitKind::Gaussian, data, gaussian, std::sqrt(m2 / norm));
}

double trial_ps(double s, double delta) {
  const double d2 = 2 * delta * delta;
  return (2 * s + 1) / std::sqrt(std::numbers::pi * d2) * (std::exp(-s * s / d2) - std::exp(-(s + 1) * (s + 1) / d2));
}

FitResult fit_trial_ps(const std::map<int, double>& p_s) {
  const auto data = significant(p_s);
  if (data.size() < 2)
    throw FitError(fmt::format("trial-function fit needs 2 sectors above {}, got {}", kFitThreshold, data.size()));
  double m = 0.0, norm = 0.0;
  for (const auto& [s, p] : data) {
    m += p * s * (s + 1);
    norm += p;
  }
  return fit_one_width(FitKind::TrialPS, data, trial_ps, std::sqrt(std::max(m / (3 * norm), 0.01)));
}

FitResult fit_power_law(const std::vector<Point>& series, double lo, double hi) {
  std::vector<double> x, y;
  for (const auto& p : series) {
    if (p.t < lo || p.t > hi) continue;
    if (!(p.t > 0.0) || !(p.y > 0.0)) throw FitError(fmt::format("power-law fit needs positive values, got ({}, {})", p.t, p.y));
    x.push_back(std::log(p.t));
    y.push_back(std::log(p.y));
  }
  if (x.size() < 4) throw FitError(fmt::format("power-law fit needs 4 points in [{}, {}], got {}", lo, hi, x.size()));
  const Line l = fit_line(x, y);
  FitResult r;
  r.kind = FitKind::PowerLaw;
  r.params = {{"alpha", l.slope}, {"prefactor", std::exp(l.intercept)}};
  for (std::size_t i = 0; i < x.size(); ++i)
    r.residual = std::max(r.residual, std::abs(std::exp(l.intercept + l.slope * x[i]) - std::exp(y[i])));
  r.lo = lo;
  r.hi = hi;
  return r;
}

FitResult fit_decay(const std::vector<Point>& series) {
  if (series.size() < 5) throw FitError(fmt::format("decay fit needs 5 points, got {}", series.size()));
  std::vector<Point> pts = series;
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.t < b.t; });
  for (const auto& p : pts)
    if (!(p.y > 0.0)) throw FitError(fmt::format("decay fit needs positive values, got {} at t = {}", p.y, p.t));

  FitResult r;
  r.kind = FitKind::Decay;
  r.lo = pts.front().t;
  r.hi = pts.back().t;
  const auto [mn, mx] = std::minmax_element(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.y < b.y; });
  if (mx->y - mn->y <= 1e-12 * mx->y) {
    r.params = {{"a", std::pow(pts.front().y, -1.0)}, {"b", 0.0}, {"c", 0.0}};
    r.residual = mx->y - mn->y;
    r.ok = false;
    r.note = "degenerate: constant series";
    return r;
  }

  // Seeds: c from the log slope of the last two points, a from the first
  // value, b from the midpoint.
  const Point& p1 = pts[pts.size() - 2];
  const Point& p2 = pts.back();
  double c0 = 1.0;
  if (p1.t > 0.0) c0 = -std::log(p2.y / p1.y) / std::log(p2.t / p1.t);
  if (!(c0 > 0.05)) c0 = 1.0;
  const double a0 = std::pow(pts.front().y, -1.0 / c0);
  const Point& mid = pts[pts.size() / 2];
  double b0 = mid.t > 0.0 ? (std::pow(mid.y, -1.0 / c0) - a0) / mid.t : 0.1;
  if (!(b0 > 0.0)) b0 = 0.1;

  std::vector<double> y;
  for (const auto& p : pts) y.push_back(p.y);
  const Model model = [&](const double* x, std::size_t i) {
    const double base = x[0] + x[1] * pts[i].t;
    return base > 0.0 ? std::pow(base, -x[2]) : std::numeric_limits<double>::quiet_NaN();
  };
  GslErrorGuard guard;
  const auto nls = least_squares(model, y, {a0, b0, c0}, 200);
  r.params = {{"a", nls.x[0]}, {"b", nls.x[1]}, {"c", nls.x[2]}};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double m = model(nls.x.data(), i);
    r.residual = std::max(r.residual, std::isfinite(m) ? std::abs(m - y[i]) : std::numeric_limits<double>::infinity());
  }
  r.ok = nls.converged && std::isfinite(r.residual);
  if (!r.ok) r.note = fmt::format("stopped after {} iterations without converging", nls.iterations);
  return r;
}

double shannon_gaussian(double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
  return std::log2(delta) + 0.5 * std::log2(2 * std::numbers::pi * std::numbers::e);
}

}  // namespace opent::analysis
