#pragma once

#include <string>
#include <vector>

namespace trustdyn {

enum class BaselineFamily { AR, ARMA, SARIMA };

struct BaselineSpec {
  BaselineFamily family = BaselineFamily::AR;
  int p = 1;
  int d = 0;
  int q = 0;
  int s = 0; // seasonal period, 0 = none

  std::string label() const; // e.g. "AR(1)", "SARIMA(1,0,1)[15]"
  static BaselineSpec ar(int p) { return {BaselineFamily::AR, p, 0, 0, 0}; }
  static BaselineSpec arma(int p, int q) { return {BaselineFamily::ARMA, p, 0, q, 0}; }
  static BaselineSpec sarima(int p, int d, int q, int s) { return {BaselineFamily::SARIMA, p, d, q, s}; }
};

/// Univariate baseline fit. Seasonal terms are additive lag-s AR/MA
/// coefficients. css is the conditional sum of squares at the returned
/// parameters.
struct BaselineFit {
  BaselineSpec spec;
  std::vector<double> ar;  // phi_1..p
  std::vector<double> ma;  // theta_1..q
  double seasonal_ar = 0.0;
  double seasonal_ma = 0.0;
  double intercept = 0.0;
  double innovation_variance = 0.0;
  double css = 0.0;
  bool converged = true;
  bool stationary = true; // AR polynomial roots outside the unit circle
};

/// Exact OLS fit of the lag-p autoregression with intercept. A constant
/// series yields an intercept-only fit with zero AR coefficients.
BaselineFit fit_ar(const std::vector<double>& series, int p);

/// Conditional-sum-of-squares ARMA(p,q): Hannan-Rissanen initialization
/// followed by damped Gauss-Newton descent. The returned objective never
/// exceeds the initialization's.
BaselineFit fit_arma(const std::vector<double>& series, int p, int q);

/// Seasonal ARMA via CSS on the seasonally augmented recursion; d > 0
/// differences the series first. s = 0 reduces exactly to fit_arma.
BaselineFit fit_sarima(const std::vector<double>& series, const BaselineSpec& spec);

BaselineFit fit_baseline(const std::vector<double>& series, const BaselineSpec& spec);

/// Deterministic one-step conditional-mean forecast given the raw history
/// (residuals are rebuilt by the fit's own recursion).
double forecast_one_step(const BaselineFit& fit, const std::vector<double>& history);

} // namespace trustdyn
