#include "trustdyn/estimation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace trustdyn {

double FitResult::center_of(const std::string& var) const {
  for (size_t i = 0; i < center_vars.size(); ++i)
    if (center_vars[i] == var) return centers[i];
  throw usage_error("fit: unknown variable '" + var + "'");
}

double FitResult::variance_of(const std::string& var) const {
  for (size_t i = 0; i < endo_vars.size(); ++i)
    if (endo_vars[i] == var) return residual_variances[i];
  throw usage_error("fit: variable '" + var + "' is not endogenous");
}

double PredictionRecord::predicted_value(const std::string& var) const {
  for (size_t i = 0; i < variables.size(); ++i)
    if (variables[i] == var) return predicted[i];
  throw usage_error("prediction: unknown variable '" + var + "'");
}

int classify_over_under(double value, double threshold) {
  if (!(threshold > 0.0) || threshold > 1.0)
    throw usage_error("classify_over_under: threshold must lie in (0, 1]");
  if (!std::isfinite(value)) throw data_error("classify_over_under: non-finite value");
  if (value > threshold) return 1;
  if (value < -threshold) return -1;
  return 0;
}

double aic(double loglik, int n_params) { return -2.0 * loglik + 2.0 * n_params; }
double aic(const FitResult& fit) { return aic(fit.loglik, fit.n_params); }

namespace {

struct PanelView {
  // centered data per diagram variable; latent columns may be all-NaN
  std::vector<std::string> names;
  std::vector<std::vector<Eigen::VectorXd>> data; // [participant][variable]
  std::vector<double> centers;
  std::vector<bool> latent;

  int var_index(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }
};

double column_mean(const PanelDataset& panel, int col, bool* any = nullptr) {
  double sum = 0.0;
  long n = 0;
  for (const auto& p : panel.participants)
    for (double v : p.columns[col])
      if (!PanelDataset::is_missing(v)) {
        sum += v;
        ++n;
      }
  if (any) *any = n > 0;
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

double column_variance(const PanelDataset& panel, int col) {
  const double mean = column_mean(panel, col);
  double ss = 0.0;
  long n = 0;
  for (const auto& p : panel.participants)
    for (double v : p.columns[col])
      if (!PanelDataset::is_missing(v)) {
        ss += (v - mean) * (v - mean);
        ++n;
      }
  return n > 1 ? ss / static_cast<double>(n) : 0.0;
}

// Centering constant per variable. Observed variables use the sample mean;
// a latent uses its own column when allowed and present, else its first
// observed lag-0 parent, else the midpoint of its declared range.
std::vector<double> compute_centers(const PathDiagram& diagram, const PanelDataset& panel,
                                    bool mask_latent) {
  std::vector<double> centers(diagram.variables.size(), 0.0);
  for (size_t i = 0; i < diagram.variables.size(); ++i) {
    const auto& v = diagram.variables[i];
    const int col = panel.column_index(v.name);
    if (v.role == VarRole::observed) {
      centers[i] = column_mean(panel, col);
      continue;
    }
    if (!mask_latent && col >= 0) {
      bool any = false;
      const double m = column_mean(panel, col, &any);
      if (any) {
        centers[i] = m;
        continue;
      }
    }
    const std::string* proxy = nullptr;
    for (const auto& e : diagram.edges) {
      if (e.target != v.name || e.lag != 0) continue;
      const auto* src = diagram.find_variable(e.source);
      if (src->role == VarRole::observed) {
        proxy = &e.source;
        break;
      }
    }
    if (proxy) {
      centers[i] = column_mean(panel, panel.column_index(*proxy));
    } else {
      centers[i] = 0.5 * (v.lo + v.hi);
    }
  }
  return centers;
}

PanelView build_view(const PathDiagram& diagram, const PanelDataset& panel, bool mask_latent) {
  PanelView view;
  view.centers = compute_centers(diagram, panel, mask_latent);
  const int n = panel.n_participants();
  view.data.resize(n);
  for (size_t vi = 0; vi < diagram.variables.size(); ++vi) {
    const auto& v = diagram.variables[vi];
    view.names.push_back(v.name);
    view.latent.push_back(v.role == VarRole::latent);
    const int col = panel.column_index(v.name);
    for (int p = 0; p < n; ++p) {
      const int T = panel.participants[p].n_steps();
      Eigen::VectorXd x(T);
      for (int t = 0; t < T; ++t) {
        double raw = std::numeric_limits<double>::quiet_NaN();
        if (col >= 0 && !(mask_latent && v.role == VarRole::latent))
          raw = panel.participants[p].columns[col][t];
        x(t) = PanelDataset::is_missing(raw) ? raw : raw - view.centers[vi];
      }
      view.data[p].push_back(std::move(x));
    }
  }
  return view;
}

struct SeriesMatrices {
  Eigen::MatrixXd obs;    // T x n_obs, centered
  Eigen::MatrixXd inputs; // T x n_inputs, centered, pre-sample lags are zero
  Eigen::VectorXd a1;
};

SeriesMatrices build_series(const ModelStructure& s, const PanelView& view, int participant) {
  const auto& cols = view.data[participant];
  const int T = cols.empty() ? 0 : static_cast<int>(cols[0].size());
  SeriesMatrices out;
  out.obs.resize(T, static_cast<int>(s.obs_vars.size()));
  out.inputs.resize(T, static_cast<int>(s.inputs.size()));

  for (size_t j = 0; j < s.obs_vars.size(); ++j) {
    const int vi = view.var_index(s.obs_vars[j]);
    for (int t = 0; t < T; ++t) {
      const double v = cols[vi](t);
      if (std::isnan(v))
        throw data_error("series: observed variable '" + s.obs_vars[j] + "' missing at step " +
                         std::to_string(t));
      out.obs(t, static_cast<int>(j)) = v;
    }
  }
  for (size_t j = 0; j < s.inputs.size(); ++j) {
    const int vi = view.var_index(s.inputs[j].first);
    const int lag = s.inputs[j].second;
    for (int t = 0; t < T; ++t)
      out.inputs(t, static_cast<int>(j)) = (t - lag >= 0) ? cols[vi](t - lag) : 0.0;
  }

  out.a1 = Eigen::VectorXd::Zero(s.state_dim);
  for (size_t vi = 0; vi < s.state_vars.size(); ++vi) {
    const auto& name = s.state_vars[vi];
    const auto* spec = s.diagram.find_variable(name);
    double value = 0.0;
    if (spec->role == VarRole::observed) {
      const int ci = view.var_index(name);
      if (T > 0) value = cols[ci](0);
    } else {
      const int ci = view.var_index(name);
      value = 0.5 * (spec->lo + spec->hi) - view.centers[ci];
    }
    for (int j = 0; j < s.state_copies[vi]; ++j) out.a1(s.state_slot0[vi] + j) = value;
  }
  return out;
}

// Expected sufficient statistics for one structural equation.
struct EquationStats {
  Eigen::MatrixXd M; // moment matrix over [target, regressors]
  long n = 0;
};

double ref_mean(const Ref& ref, const SmootherResult& sm, const SeriesMatrices& d, int t) {
  switch (ref.kind) {
  case RefKind::state_now:
    return sm.mean[t](ref.index);
  case RefKind::state_prev:
    return sm.mean[t - 1](ref.index);
  case RefKind::input:
    return d.inputs(t, ref.index);
  case RefKind::obs_now:
    return d.obs(t, ref.index);
  }
  return 0.0;
}

double ref_cov(const Ref& a, const Ref& b, const SmootherResult& sm, int t) {
  const bool a_state = a.kind == RefKind::state_now || a.kind == RefKind::state_prev;
  const bool b_state = b.kind == RefKind::state_now || b.kind == RefKind::state_prev;
  if (!a_state || !b_state) return 0.0;
  const bool a_now = a.kind == RefKind::state_now;
  const bool b_now = b.kind == RefKind::state_now;
  if (a_now && b_now) return sm.cov[t](a.index, b.index);
  if (!a_now && !b_now) return sm.cov[t - 1](a.index, b.index);
  if (a_now && !b_now) return sm.lag_one[t](a.index, b.index);
  return sm.lag_one[t](b.index, a.index);
}

void accumulate_equation(const Equation& eq, const SmootherResult& sm, const SeriesMatrices& d,
                         EquationStats& stats) {
  const int T = static_cast<int>(d.obs.rows());
  const int n_terms = 1 + static_cast<int>(eq.regressors.size());
  if (stats.M.rows() != n_terms) stats.M = Eigen::MatrixXd::Zero(n_terms, n_terms);

  std::vector<Ref> terms;
  terms.reserve(n_terms);
  terms.push_back(eq.target);
  for (const auto& r : eq.regressors) terms.push_back(r);

  Eigen::VectorXd mu(n_terms);
  const int t0 = eq.is_transition ? 1 : 0;
  for (int t = t0; t < T; ++t) {
    for (int i = 0; i < n_terms; ++i) mu(i) = ref_mean(terms[i], sm, d, t);
    for (int i = 0; i < n_terms; ++i)
      for (int j = i; j < n_terms; ++j) {
        const double m = mu(i) * mu(j) + ref_cov(terms[i], terms[j], sm, t);
        stats.M(i, j) += m;
        if (i != j) stats.M(j, i) += m;
      }
    ++stats.n;
  }
}

// Per-equation exact M-step: weighted OLS on the expected moments, fixed
// coefficients folded into the target.
void solve_equation(const Equation& eq, const std::vector<bool>& is_free,
                    const EquationStats& stats, std::vector<double>& edge_coeffs,
                    double& variance, double floor) {
  const int d_all = static_cast<int>(eq.regressors.size());
  std::vector<int> free_idx, fixed_idx;
  for (int i = 0; i < d_all; ++i)
    (is_free[i] ? free_idx : fixed_idx).push_back(i);

  auto fixed_coeff = [&](int i) {
    return eq.edge_ids[i] >= 0 ? edge_coeffs[eq.edge_ids[i]] : eq.fixed_coeffs[i];
  };

  // target moments adjusted for the fixed part
  double Svv = stats.M(0, 0);
  for (int x : fixed_idx) Svv -= 2.0 * fixed_coeff(x) * stats.M(0, x + 1);
  for (int x : fixed_idx)
    for (int y : fixed_idx) Svv += fixed_coeff(x) * fixed_coeff(y) * stats.M(x + 1, y + 1);

  const int df = static_cast<int>(free_idx.size());
  Eigen::VectorXd beta(df);
  if (df > 0) {
    Eigen::MatrixXd Srr(df, df);
    Eigen::VectorXd Srv(df);
    for (int i = 0; i < df; ++i) {
      Srv(i) = stats.M(0, free_idx[i] + 1);
      for (int x : fixed_idx) Srv(i) -= fixed_coeff(x) * stats.M(free_idx[i] + 1, x + 1);
      for (int j = 0; j < df; ++j) Srr(i, j) = stats.M(free_idx[i] + 1, free_idx[j] + 1);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Srr);
    beta = ldlt.solve(Srv);
    if (ldlt.info() != Eigen::Success || !beta.allFinite())
      throw data_error("em_fit: degenerate regressors in the equation for '" + eq.variable + "'");
    double quad = Svv - 2.0 * beta.dot(Srv) + beta.dot(Srr * beta);
    variance = std::max(quad / static_cast<double>(stats.n), floor);
    for (int i = 0; i < df; ++i) edge_coeffs[eq.edge_ids[free_idx[i]]] = beta(i);
  } else {
    variance = std::max(Svv / static_cast<double>(std::max(stats.n, 1L)), floor);
  }
}

// Ordinary least squares warm start straight from the (proxy-completed)
// data columns.
void ols_initialize(const ModelStructure& s, const PanelView& view,
                    std::vector<double>& edge_coeffs, std::vector<double>& variances,
                    const std::vector<bool>& edge_free, double floor) {
  const auto& diagram = s.diagram;

  // proxy column per variable: latents fall back to their first observed
  // lag-0 parent (or zero when none exists)
  std::vector<int> proxy(diagram.variables.size());
  for (size_t vi = 0; vi < diagram.variables.size(); ++vi) {
    proxy[vi] = static_cast<int>(vi);
    const auto& v = diagram.variables[vi];
    bool has_data = false;
    for (const auto& pd : view.data)
      if (pd[vi].size() > 0 && !std::isnan(pd[vi](0))) has_data = true;
    if (has_data) continue;
    proxy[vi] = -1;
    for (const auto& e : diagram.edges) {
      if (e.target != v.name || e.lag != 0) continue;
      const int si = view.var_index(e.source);
      if (!view.latent[si]) {
        proxy[vi] = si;
        break;
      }
    }
  }
  auto value_at = [&](int vi, int p, int t) -> double {
    if (proxy[vi] < 0) return 0.0;
    const double v = view.data[p][proxy[vi]](t);
    return std::isnan(v) ? 0.0 : v;
  };

  for (size_t ei = 0; ei < s.equations.size(); ++ei) {
    const Equation& eq = s.equations[ei];
    const int qi = view.var_index(eq.variable);
    std::vector<const LaggedEdge*> parents;
    std::vector<int> parent_edge_id;
    for (size_t i = 0; i < diagram.edges.size(); ++i)
      if (diagram.edges[i].target == eq.variable) {
        parents.push_back(&diagram.edges[i]);
        parent_edge_id.push_back(static_cast<int>(i));
      }
    int max_lag = 0;
    for (const auto* e : parents) max_lag = std::max(max_lag, e->lag);

    std::vector<int> free_ids;
    for (size_t i = 0; i < parents.size(); ++i)
      if (!parents[i]->coefficient && edge_free[parent_edge_id[i]])
        free_ids.push_back(static_cast<int>(i));

    std::vector<Eigen::Triplet<double>> unused; // keep Eigen fully linked
    (void)unused;

    const int df = static_cast<int>(free_ids.size());
    Eigen::MatrixXd Srr = Eigen::MatrixXd::Zero(df, df);
    Eigen::VectorXd Srv = Eigen::VectorXd::Zero(df);
    double Svv = 0.0;
    long n = 0;
    Eigen::VectorXd row(df);
    for (size_t p = 0; p < view.data.size(); ++p) {
      const int T = static_cast<int>(view.data[p][qi].size());
      for (int t = max_lag; t < T; ++t) {
        double y = value_at(qi, static_cast<int>(p), t);
        for (size_t i = 0; i < parents.size(); ++i) {
          const auto* e = parents[i];
          const int si = view.var_index(e->source);
          const double x = value_at(si, static_cast<int>(p), t - e->lag);
          double fixed = 0.0;
          bool is_free_param = false;
          for (int fi = 0; fi < df; ++fi)
            if (free_ids[fi] == static_cast<int>(i)) {
              row(fi) = x;
              is_free_param = true;
            }
          if (!is_free_param) {
            fixed = parents[i]->coefficient ? *parents[i]->coefficient
                                            : edge_coeffs[parent_edge_id[i]];
            y -= fixed * x;
          }
        }
        Svv += y * y;
        if (df > 0) {
          Srr += row * row.transpose();
          Srv += row * y;
        }
        ++n;
      }
    }
    double variance = floor;
    if (df > 0 && n > 0) {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(Srr);
      Eigen::VectorXd beta = ldlt.solve(Srv);
      if (ldlt.info() != Eigen::Success || !beta.allFinite()) beta.setZero();
      for (int i = 0; i < df; ++i)
        edge_coeffs[parent_edge_id[free_ids[i]]] = beta(i);
      variance = std::max((Svv - 2.0 * beta.dot(Srv) + beta.dot(Srr * beta)) /
                              static_cast<double>(n),
                          floor);
    } else if (n > 0) {
      variance = std::max(Svv / static_cast<double>(n), floor);
    }
    variances[s.endo_index(eq.variable)] = variance;
  }
}

} // namespace

FitResult em_fit(const PathDiagram& diagram_in, const PanelDataset& panel,
                 const FitConfig& config) {
  const PathDiagram diagram = validate_diagram(diagram_in);
  validate_panel(panel, diagram);

  long total_steps = 0;
  for (const auto& p : panel.participants) total_steps += p.n_steps();
  if (panel.n_participants() < 2 && total_steps < 10)
    throw data_error("em_fit: need at least 2 participants or 10 total steps");

  const ModelStructure s = analyze_diagram(diagram);
  const PanelView view = build_view(diagram, panel, config.mask_latent);

  // degenerate observed regressors are a data error, reported per variable
  for (size_t i = 0; i < diagram.edges.size(); ++i) {
    const auto& e = diagram.edges[i];
    if (e.coefficient) continue;
    const auto* src = diagram.find_variable(e.source);
    if (src->role != VarRole::observed) continue;
    if (column_variance(panel, panel.column_index(e.source)) < 1e-12)
      throw data_error("em_fit: zero-variance regressor '" + e.source + "'");
  }

  // free/fixed split: preset edges are fixed, anchors are pinned at 1.0
  std::vector<bool> edge_free(diagram.edges.size(), false);
  std::vector<double> coeffs(diagram.edges.size(), 0.0);
  for (size_t i = 0; i < diagram.edges.size(); ++i) {
    if (diagram.edges[i].coefficient)
      coeffs[i] = *diagram.edges[i].coefficient;
    else
      edge_free[i] = true;
  }
  for (int a : s.anchor_edges) {
    edge_free[a] = false;
    coeffs[a] = 1.0;
  }
  int n_free_edges = 0;
  for (bool f : edge_free)
    if (f) ++n_free_edges;

  std::vector<double> variances(s.endo_vars.size(), 1.0);
  ols_initialize(s, view, coeffs, variances, edge_free, config.variance_floor);

  const int n_participants = panel.n_participants();
  std::vector<SeriesMatrices> series;
  series.reserve(n_participants);
  for (int p = 0; p < n_participants; ++p) series.push_back(build_series(s, view, p));

  // per-equation free mask against the equation's regressor list
  std::vector<std::vector<bool>> eq_free;
  for (const auto& eq : s.equations) {
    std::vector<bool> f;
    for (int id : eq.edge_ids) f.push_back(id >= 0 && edge_free[id]);
    eq_free.push_back(std::move(f));
  }

  std::vector<double> trace;
  std::vector<double> best_coeffs = coeffs, best_vars = variances;
  double best_loglik = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const StateSpaceModel model =
        assemble_state_space(s, coeffs, variances, config.variance_floor);

    double loglik = 0.0;
    std::vector<EquationStats> stats(s.equations.size());
    for (int p = 0; p < n_participants; ++p) {
      StateSpaceModel m = model;
      m.a1 = series[p].a1;
      const SmootherResult sm = kalman_smooth(m, series[p].obs, series[p].inputs);
      loglik += sm.loglik;
      for (size_t e = 0; e < s.equations.size(); ++e)
        accumulate_equation(s.equations[e], sm, series[p], stats[e]);
    }
    trace.push_back(loglik);
    if (loglik > best_loglik) {
      best_loglik = loglik;
      best_coeffs = coeffs;
      best_vars = variances;
    }

    for (size_t e = 0; e < s.equations.size(); ++e) {
      if (stats[e].n == 0) continue;
      double variance = variances[s.endo_index(s.equations[e].variable)];
      solve_equation(s.equations[e], eq_free[e], stats[e], coeffs, variance,
                     config.variance_floor);
      variances[s.endo_index(s.equations[e].variable)] = variance;
    }
    iterations = iter + 1;

    if (trace.size() >= 2) {
      const double prev = trace[trace.size() - 2];
      const double rel = std::abs(loglik - prev) / (1.0 + std::abs(prev));
      if (rel < config.tolerance) {
        converged = true;
        break;
      }
    }
  }

  // evaluate the returned parameters
  {
    const StateSpaceModel model =
        assemble_state_space(s, coeffs, variances, config.variance_floor);
    double loglik = 0.0;
    for (int p = 0; p < n_participants; ++p) {
      StateSpaceModel m = model;
      m.a1 = series[p].a1;
      loglik += kalman_filter(m, series[p].obs, series[p].inputs).loglik;
    }
    trace.push_back(loglik);
    if (loglik < best_loglik) { // fall back to the best parameters seen
      coeffs = best_coeffs;
      variances = best_vars;
      loglik = best_loglik;
    }
    best_loglik = loglik;
  }

  FitResult fit;
  fit.diagram = diagram;
  for (size_t i = 0; i < fit.diagram.edges.size(); ++i)
    if (!fit.diagram.edges[i].coefficient) fit.diagram.edges[i].coefficient = coeffs[i];
  fit.endo_vars = s.endo_vars;
  fit.residual_variances = variances;
  for (const auto& v : diagram.variables) fit.center_vars.push_back(v.name);
  fit.centers = view.centers;
  fit.loglik = best_loglik;
  fit.n_params = n_free_edges + static_cast<int>(s.endo_vars.size());
  fit.aic = aic(fit.loglik, fit.n_params);
  fit.n_iterations = iterations;
  fit.converged = converged;
  fit.threshold = config.threshold;
  fit.loglik_trace = std::move(trace);
  if (!std::isfinite(fit.loglik))
    throw data_error("em_fit: non-finite log-likelihood");
  return fit;
}

namespace {

struct CompiledFit {
  ModelStructure structure;
  StateSpaceModel model;
  std::vector<double> centers; // diagram variable order
  int target_obs = -1;
  double threshold = 0.5;
};

CompiledFit compile_fit(const FitResult& fit) {
  CompiledFit c;
  c.structure = analyze_diagram(fit.diagram);
  std::vector<double> coeffs(fit.diagram.edges.size(), 0.0);
  for (size_t i = 0; i < fit.diagram.edges.size(); ++i) {
    if (!fit.diagram.edges[i].coefficient)
      throw usage_error("predict: fit diagram has unset coefficients");
    coeffs[i] = *fit.diagram.edges[i].coefficient;
  }
  c.model = assemble_state_space(c.structure, coeffs, fit.residual_variances);
  c.centers = fit.centers;
  c.target_obs = c.structure.obs_index(fit.diagram.target);
  c.threshold = fit.threshold;
  return c;
}

// Mirrors build_series for a standalone series (prediction-time path).
SeriesMatrices series_from_history(const CompiledFit& c, const ParticipantSeries& series,
                                   const std::vector<std::string>& columns) {
  const ModelStructure& s = c.structure;
  PanelView view;
  view.names.clear();
  view.data.resize(1);
  for (size_t vi = 0; vi < s.diagram.variables.size(); ++vi) {
    const auto& v = s.diagram.variables[vi];
    view.names.push_back(v.name);
    view.latent.push_back(v.role == VarRole::latent);
    int col = -1;
    for (size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == v.name) col = static_cast<int>(j);
    const int T = series.n_steps();
    Eigen::VectorXd x(T);
    for (int t = 0; t < T; ++t) {
      double raw = std::numeric_limits<double>::quiet_NaN();
      if (col >= 0) raw = series.columns[col][t];
      if (v.role == VarRole::observed && PanelDataset::is_missing(raw))
        throw data_error("predict: observed variable '" + v.name + "' missing at step " +
                         std::to_string(t));
      x(t) = PanelDataset::is_missing(raw) ? raw : raw - c.centers[vi];
    }
    view.data[0].push_back(std::move(x));
    view.centers.push_back(c.centers[vi]);
  }
  return build_series(s, view, 0);
}

PredictionRecord make_record(const CompiledFit& c, const std::string& participant, int step,
                             const Eigen::VectorXd& state_pred, const Eigen::VectorXd& u) {
  const ModelStructure& s = c.structure;
  const Eigen::VectorXd y = c.model.Z * state_pred + c.model.D * u;

  PredictionRecord rec;
  rec.participant = participant;
  rec.step = step;
  for (size_t i = 0; i < s.obs_vars.size(); ++i) {
    const int vi = [&] {
      for (size_t j = 0; j < s.diagram.variables.size(); ++j)
        if (s.diagram.variables[j].name == s.obs_vars[i]) return static_cast<int>(j);
      return -1;
    }();
    rec.variables.push_back(s.obs_vars[i]);
    rec.predicted.push_back(y(static_cast<int>(i)) + c.centers[vi]);
  }
  for (size_t i = 0; i < s.state_vars.size(); ++i) {
    const auto& name = s.state_vars[i];
    if (s.obs_index(name) >= 0) continue; // already reported via Z
    int vi = -1;
    for (size_t j = 0; j < s.diagram.variables.size(); ++j)
      if (s.diagram.variables[j].name == name) vi = static_cast<int>(j);
    rec.variables.push_back(name);
    rec.predicted.push_back(state_pred(s.state_slot0[i]) + c.centers[vi]);
  }
  rec.predicted_label =
      classify_over_under(rec.predicted_value(s.diagram.target), c.threshold);
  return rec;
}

} // namespace

std::vector<PredictionRecord> predict_series(const FitResult& fit,
                                             const ParticipantSeries& series,
                                             const std::vector<std::string>& panel_columns,
                                             int from_step) {
  const CompiledFit c = compile_fit(fit);
  const ModelStructure& s = c.structure;
  const SeriesMatrices d = series_from_history(c, series, panel_columns);
  const int T = static_cast<int>(d.obs.rows());
  if (from_step < fit.diagram.max_lag)
    throw usage_error("predict_series: insufficient history before the first evaluated step");

  StateSpaceModel m = c.model;
  m.a1 = d.a1;
  const FilterResult f = kalman_filter(m, d.obs, d.inputs);

  int target_col = -1;
  for (size_t j = 0; j < panel_columns.size(); ++j)
    if (panel_columns[j] == fit.diagram.target) target_col = static_cast<int>(j);

  std::vector<PredictionRecord> out;
  for (int t = from_step; t < T; ++t) {
    PredictionRecord rec =
        make_record(c, series.id, t, f.pred_mean[t], d.inputs.row(t).transpose());
    if (target_col >= 0) {
      const double actual = series.columns[target_col][t];
      if (!PanelDataset::is_missing(actual))
        rec.actual_label = static_cast<int>(actual);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

PredictionRecord predict_one_step(const FitResult& fit, const ParticipantSeries& history,
                                  const std::vector<std::pair<std::string, double>>& exogenous_next) {
  const CompiledFit c = compile_fit(fit);
  const ModelStructure& s = c.structure;
  if (history.n_steps() < fit.diagram.max_lag)
    throw usage_error("predict_one_step: history must span at least max_lag steps");

  // history columns follow the diagram variable order when not stated
  std::vector<std::string> columns;
  for (const auto& v : s.diagram.variables) columns.push_back(v.name);
  if (history.columns.size() != columns.size())
    throw usage_error("predict_one_step: history must carry one column per diagram variable");

  const SeriesMatrices d = series_from_history(c, history, columns);
  const int T = static_cast<int>(d.obs.rows());

  StateSpaceModel m = c.model;
  m.a1 = d.a1;
  const FilterResult f = kalman_filter(m, d.obs, d.inputs);

  // inputs for the predicted step: lag-0 entries come from the supplied
  // exogenous values, lagged entries from the history
  Eigen::VectorXd u_next = Eigen::VectorXd::Zero(static_cast<int>(s.inputs.size()));
  for (size_t j = 0; j < s.inputs.size(); ++j) {
    const auto& [var, lag] = s.inputs[j];
    int vi = -1;
    for (size_t i = 0; i < s.diagram.variables.size(); ++i)
      if (s.diagram.variables[i].name == var) vi = static_cast<int>(i);
    if (lag == 0) {
      bool found = false;
      for (const auto& [name, value] : exogenous_next)
        if (name == var) {
          u_next(static_cast<int>(j)) = value - c.centers[vi];
          found = true;
        }
      if (!found)
        throw usage_error("predict_one_step: missing exogenous value for '" + var + "'");
    } else if (T - lag >= 0) {
      const double raw = history.columns[vi][T - lag];
      u_next(static_cast<int>(j)) =
          PanelDataset::is_missing(raw) ? 0.0 : raw - c.centers[vi];
    }
  }

  Eigen::VectorXd x_pred;
  if (T == 0) {
    x_pred = c.model.T * d.a1 + c.model.B * u_next;
  } else {
    x_pred = c.model.T * f.filt_mean[T - 1] + c.model.B * u_next;
  }
  return make_record(c, history.id, T, x_pred, u_next);
}

namespace {

std::string trailer_line(const std::string& key, const std::string& value) {
  return key + "=" + value + "\n";
}

} // namespace

std::string serialize_fit(const FitResult& fit) {
  std::ostringstream out;
  out << serialize_diagram(fit.diagram);
  out << trailer_line("loglik", format_double(fit.loglik));
  out << trailer_line("aic", format_double(fit.aic));
  out << trailer_line("n_params", std::to_string(fit.n_params));
  out << trailer_line("iterations", std::to_string(fit.n_iterations));
  out << trailer_line("converged", fit.converged ? "1" : "0");
  out << trailer_line("threshold", format_double(fit.threshold));
  for (size_t i = 0; i < fit.endo_vars.size(); ++i)
    out << trailer_line("variance." + fit.endo_vars[i], format_double(fit.residual_variances[i]));
  for (size_t i = 0; i < fit.center_vars.size(); ++i)
    out << trailer_line("center." + fit.center_vars[i], format_double(fit.centers[i]));
  return out.str();
}

FitResult parse_fit(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::string diagram_text;
  std::unordered_map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const bool edge_line = line.find(" ~ ") != std::string::npos;
    const auto eq = line.find('=');
    if (!edge_line && eq != std::string::npos && line.find(' ') == std::string::npos) {
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    } else {
      diagram_text += line + "\n";
    }
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw data_error("fit file: missing key '" + key + "'");
    return it->second;
  };
  auto to_double = [&](const std::string& v) {
    double x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc()) throw data_error("fit file: bad number '" + v + "'");
    return x;
  };

  FitResult fit;
  fit.diagram = parse_diagram(diagram_text);
  const ModelStructure s = analyze_diagram(fit.diagram);
  fit.endo_vars = s.endo_vars;
  for (const auto& name : fit.endo_vars)
    fit.residual_variances.push_back(to_double(need("variance." + name)));
  for (const auto& v : fit.diagram.variables) {
    fit.center_vars.push_back(v.name);
    fit.centers.push_back(to_double(need("center." + v.name)));
  }
  fit.loglik = to_double(need("loglik"));
  fit.aic = to_double(need("aic"));
  fit.n_params = static_cast<int>(to_double(need("n_params")));
  fit.n_iterations = static_cast<int>(to_double(need("iterations")));
  fit.converged = need("converged") == "1";
  fit.threshold = to_double(need("threshold"));
  return fit;
}

} // namespace trustdyn
