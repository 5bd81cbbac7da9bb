#include "trustdyn/statespace.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <unordered_set>

namespace trustdyn {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

int ModelStructure::state_index(const std::string& var) const {
  for (size_t i = 0; i < state_vars.size(); ++i)
    if (state_vars[i] == var) return static_cast<int>(i);
  return -1;
}

int ModelStructure::slot(const std::string& var, int lag) const {
  const int si = state_index(var);
  if (si < 0 || lag < 0 || lag >= state_copies[si]) return -1;
  return state_slot0[si] + lag;
}

int ModelStructure::obs_index(const std::string& var) const {
  for (size_t i = 0; i < obs_vars.size(); ++i)
    if (obs_vars[i] == var) return static_cast<int>(i);
  return -1;
}

int ModelStructure::input_index(const std::string& var, int lag) const {
  for (size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].first == var && inputs[i].second == lag) return static_cast<int>(i);
  return -1;
}

int ModelStructure::endo_index(const std::string& var) const {
  for (size_t i = 0; i < endo_vars.size(); ++i)
    if (endo_vars[i] == var) return static_cast<int>(i);
  return -1;
}

ModelStructure analyze_diagram(const PathDiagram& diagram) {
  ModelStructure s;
  s.diagram = diagram; // caller validates; analysis re-checks what it relies on

  std::unordered_map<std::string, std::vector<const LaggedEdge*>> incoming;
  std::unordered_map<std::string, int> max_outgoing_lag;
  std::unordered_set<std::string> lagged_sources;
  for (const auto& v : diagram.variables) {
    incoming[v.name] = {};
    max_outgoing_lag[v.name] = 0;
  }
  for (const auto& e : diagram.edges) {
    incoming[e.target].push_back(&e);
    max_outgoing_lag[e.source] = std::max(max_outgoing_lag[e.source], e.lag);
    if (e.lag >= 1) lagged_sources.insert(e.source);
  }

  auto is_latent = [&](const std::string& name) {
    return diagram.find_variable(name)->role == VarRole::latent;
  };
  auto is_endogenous = [&](const std::string& name) {
    return !incoming[name].empty() || is_latent(name) || name == diagram.target;
  };

  // State variables in lag-0 topological order (validate_diagram ordered the
  // lag-0 edges by target rank; recover a variable order from declarations,
  // then stable-sort by longest lag-0 path).
  std::unordered_map<std::string, int> depth;
  std::function<int(const std::string&)> lag0_depth = [&](const std::string& v) -> int {
    auto it = depth.find(v);
    if (it != depth.end()) return it->second;
    depth[v] = 0; // lag-0 graph is acyclic for validated diagrams
    int d = 0;
    for (const auto* e : incoming[v])
      if (e->lag == 0) d = std::max(d, 1 + lag0_depth(e->source));
    depth[v] = d;
    return d;
  };

  std::vector<std::string> state_order;
  for (const auto& v : diagram.variables)
    if (is_endogenous(v.name) && (is_latent(v.name) || lagged_sources.count(v.name)))
      state_order.push_back(v.name);
  std::stable_sort(state_order.begin(), state_order.end(),
                   [&](const std::string& a, const std::string& b) {
                     return lag0_depth(a) < lag0_depth(b);
                   });

  for (const auto& name : state_order) {
    const int K = max_outgoing_lag[name];
    const int copies = is_latent(name) ? K + 1 : std::max(K, 1);
    s.state_slot0.push_back(s.state_dim);
    s.state_copies.push_back(copies);
    s.state_vars.push_back(name);
    s.state_dim += copies;
  }

  for (const auto& v : diagram.variables) {
    if (v.role == VarRole::observed && is_endogenous(v.name)) {
      s.obs_vars.push_back(v.name);
      s.obs_state_index.push_back(s.state_index(v.name));
    }
  }

  // Endogenous equation order: state variables first (topological), then
  // observation-only variables in declaration order.
  s.endo_vars = s.state_vars;
  for (size_t i = 0; i < s.obs_vars.size(); ++i)
    if (s.obs_state_index[i] < 0) s.endo_vars.push_back(s.obs_vars[i]);

  auto add_input = [&](const std::string& var, int lag) {
    int idx = s.input_index(var, lag);
    if (idx < 0) {
      idx = static_cast<int>(s.inputs.size());
      s.inputs.emplace_back(var, lag);
    }
    return idx;
  };

  for (const auto& name : s.endo_vars) {
    Equation eq;
    eq.variable = name;
    eq.is_transition = s.state_index(name) >= 0;
    if (eq.is_transition)
      eq.target = {RefKind::state_now, s.slot(name, 0)};
    else
      eq.target = {RefKind::obs_now, s.obs_index(name)};

    for (const auto* e : incoming[name]) {
      const std::string& src = e->source;
      const bool src_endo = is_endogenous(src);
      const bool src_state = s.state_index(src) >= 0;
      Ref ref;
      if (eq.is_transition) {
        if (e->lag >= 1) {
          if (src_state) {
            ref = {RefKind::state_prev, s.slot(src, e->lag - 1)};
          } else {
            ref = {RefKind::input, add_input(src, e->lag)}; // exogenous history
          }
        } else if (src_state) {
          ref = {RefKind::state_now, s.slot(src, 0)};
        } else if (!src_endo) {
          ref = {RefKind::input, add_input(src, 0)};
        } else {
          throw data_error("state equation for '" + name +
                           "' cannot depend on non-dynamic endogenous '" + src + "' at lag 0");
        }
      } else {
        if (src_endo && is_latent(src)) {
          ref = {RefKind::state_now, s.slot(src, e->lag)};
        } else if (!src_endo) {
          ref = {RefKind::input, add_input(src, e->lag)};
        } else if (e->lag == 0) {
          ref = {RefKind::obs_now, s.obs_index(src)};
        } else {
          ref = {RefKind::input, add_input(src, e->lag)}; // lagged observed data
        }
      }
      eq.regressors.push_back(ref);
      const int edge_id = static_cast<int>(e - diagram.edges.data());
      if (e->coefficient) {
        eq.edge_ids.push_back(-1);
        eq.fixed_coeffs.push_back(*e->coefficient);
      } else {
        eq.edge_ids.push_back(edge_id);
        eq.fixed_coeffs.push_back(0.0);
      }
    }
    s.equations.push_back(std::move(eq));
  }

  // Latent scale anchors: each latent fixes its first free outgoing edge to
  // an observed endogenous target at 1.0, unless some outgoing edge to an
  // observed target already carries a preset coefficient.
  for (const auto& name : s.state_vars) {
    if (!is_latent(name)) continue;
    int anchor = -1;
    bool pinned = false;
    for (size_t i = 0; i < diagram.edges.size(); ++i) {
      const auto& e = diagram.edges[i];
      if (e.source != name) continue;
      const auto* tv = diagram.find_variable(e.target);
      if (tv->role != VarRole::observed || !is_endogenous(e.target)) continue;
      if (e.coefficient) {
        pinned = true;
        break;
      }
      if (anchor < 0) anchor = static_cast<int>(i);
    }
    if (pinned) continue;
    if (anchor < 0)
      throw data_error("latent variable '" + name +
                       "' has no outgoing edge to an observed variable; its scale is not identified");
    s.anchor_edges.push_back(anchor);
  }

  return s;
}

StateSpaceModel assemble_state_space(const ModelStructure& s,
                                     const std::vector<double>& edge_coeffs,
                                     const std::vector<double>& endo_variances,
                                     double variance_floor) {
  const int m = s.state_dim;
  const int q = static_cast<int>(s.obs_vars.size());
  const int k = static_cast<int>(s.inputs.size());
  const int n_state = static_cast<int>(s.state_vars.size());

  StateSpaceModel model;
  model.state_dim = m;
  model.n_obs = q;
  model.n_inputs = k;
  model.T = Eigen::MatrixXd::Zero(m, m);
  model.B = Eigen::MatrixXd::Zero(m, k);
  model.noise_mix_state = Eigen::MatrixXd::Zero(m, n_state);
  model.process_var = Eigen::VectorXd::Zero(n_state);
  model.obs_var = Eigen::VectorXd::Zero(q);

  auto coeff_of = [&](const Equation& eq, size_t i) {
    const int id = eq.edge_ids[i];
    return id >= 0 ? edge_coeffs[id] : eq.fixed_coeffs[i];
  };
  auto variance_of = [&](const std::string& var) {
    const int idx = s.endo_index(var);
    const double v = endo_variances[idx];
    if (!(v > 0.0) || !std::isfinite(v))
      throw data_error("non-positive variance for '" + var + "'");
    return std::max(v, variance_floor);
  };

  // Transition rows in topological order, substituting contemporaneous state
  // parents so the assembled form is reduced.
  for (int vi = 0; vi < n_state; ++vi) {
    const auto& name = s.state_vars[vi];
    const Equation& eq = s.equations[s.endo_index(name)];
    const int row = s.state_slot0[vi];
    Eigen::RowVectorXd trow = Eigen::RowVectorXd::Zero(m);
    Eigen::RowVectorXd brow = Eigen::RowVectorXd::Zero(k);
    Eigen::RowVectorXd rrow = Eigen::RowVectorXd::Zero(n_state);
    rrow(vi) = 1.0;
    for (size_t i = 0; i < eq.regressors.size(); ++i) {
      const Ref& ref = eq.regressors[i];
      const double c = coeff_of(eq, i);
      switch (ref.kind) {
      case RefKind::state_prev:
        trow(ref.index) += c;
        break;
      case RefKind::input:
        brow(ref.index) += c;
        break;
      case RefKind::state_now: {
        // contemporaneous parent: fold in its already-reduced row
        trow += c * model.T.row(ref.index);
        brow += c * model.B.row(ref.index);
        rrow += c * model.noise_mix_state.row(ref.index);
        break;
      }
      case RefKind::obs_now:
        throw data_error("internal: observation reference in state equation");
      }
    }
    model.T.row(row) = trow;
    model.B.row(row) = brow;
    model.noise_mix_state.row(row) = rrow;
    model.process_var(vi) = variance_of(name);
    for (int j = 1; j < s.state_copies[vi]; ++j)
      model.T(row + j, row + j - 1) = 1.0;
  }
  model.Q = model.noise_mix_state * model.process_var.asDiagonal() *
            model.noise_mix_state.transpose();

  // Observation rows: structural form first, then the within-time solve.
  Eigen::MatrixXd Zs = Eigen::MatrixXd::Zero(q, m);
  Eigen::MatrixXd Ds = Eigen::MatrixXd::Zero(q, k);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd Ss = Eigen::MatrixXd::Zero(q, q);
  for (int oi = 0; oi < q; ++oi) {
    const auto& name = s.obs_vars[oi];
    if (s.obs_state_index[oi] >= 0) {
      Zs(oi, s.state_slot0[s.obs_state_index[oi]]) = 1.0; // exact observation
      continue;
    }
    const Equation& eq = s.equations[s.endo_index(name)];
    for (size_t i = 0; i < eq.regressors.size(); ++i) {
      const Ref& ref = eq.regressors[i];
      const double c = coeff_of(eq, i);
      switch (ref.kind) {
      case RefKind::state_now:
        Zs(oi, ref.index) += c;
        break;
      case RefKind::input:
        Ds(oi, ref.index) += c;
        break;
      case RefKind::obs_now:
        C(oi, ref.index) += c;
        break;
      case RefKind::state_prev:
        throw data_error("internal: lagged state reference in observation equation");
      }
    }
    Ss(oi, oi) = 1.0;
    model.obs_var(oi) = variance_of(name);
  }
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(q, q) - C;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  model.Z = lu.solve(Zs);
  model.D = lu.solve(Ds);
  model.noise_mix_obs = lu.solve(Ss);
  model.H = model.noise_mix_obs * model.obs_var.asDiagonal() * model.noise_mix_obs.transpose();

  model.a1 = Eigen::VectorXd::Zero(m);
  model.P1 = Eigen::MatrixXd::Identity(m, m);
  return model;
}

std::string edge_key(const LaggedEdge& e) {
  return e.source + "@" + std::to_string(e.lag) + "->" + e.target;
}

StateSpaceModel to_state_space(const PathDiagram& diagram,
                               const std::map<std::string, double>& coefficients,
                               const std::map<std::string, double>& variances) {
  const PathDiagram valid = validate_diagram(diagram);
  const ModelStructure s = analyze_diagram(valid);

  std::vector<double> coeffs(valid.edges.size(), 0.0);
  for (size_t i = 0; i < valid.edges.size(); ++i) {
    const auto& e = valid.edges[i];
    if (e.coefficient) {
      coeffs[i] = *e.coefficient;
    } else {
      auto it = coefficients.find(edge_key(e));
      if (it == coefficients.end())
        throw usage_error("to_state_space: missing coefficient for edge " + edge_key(e));
      coeffs[i] = it->second;
    }
  }
  std::vector<double> vars(s.endo_vars.size(), 0.0);
  for (size_t i = 0; i < s.endo_vars.size(); ++i) {
    auto it = variances.find(s.endo_vars[i]);
    if (it == variances.end())
      throw usage_error("to_state_space: missing variance for '" + s.endo_vars[i] + "'");
    if (!(it->second > 0.0))
      throw data_error("to_state_space: non-positive variance for '" + s.endo_vars[i] + "'");
    vars[i] = it->second;
  }
  return assemble_state_space(s, coeffs, vars);
}

FilterResult kalman_filter(const StateSpaceModel& model, const Eigen::MatrixXd& obs,
                           const Eigen::MatrixXd& inputs) {
  const int T = static_cast<int>(obs.rows());
  const int m = model.state_dim;
  const int q = model.n_obs;
  if (T > 0 && obs.cols() != q)
    throw data_error("kalman_filter: observation width does not match the model");
  if (T > 0 && inputs.cols() != model.n_inputs)
    throw data_error("kalman_filter: input width does not match the model");

  FilterResult res;
  res.pred_mean.reserve(T);
  res.filt_mean.reserve(T);
  res.pred_cov.reserve(T);
  res.filt_cov.reserve(T);

  Eigen::VectorXd x = model.a1;
  Eigen::MatrixXd P = model.P1;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);

  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      x = model.T * x + model.B * inputs.row(t).transpose();
      P = model.T * P * model.T.transpose() + model.Q;
      P = 0.5 * (P + P.transpose());
    }
    res.pred_mean.push_back(x);
    res.pred_cov.push_back(P);

    const Eigen::VectorXd yhat = model.Z * x + model.D * inputs.row(t).transpose();
    const Eigen::VectorXd v = obs.row(t).transpose() - yhat;
    Eigen::MatrixXd F = model.Z * P * model.Z.transpose() + model.H;
    F = 0.5 * (F + F.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(F);
    if (llt.info() != Eigen::Success)
      throw data_error("kalman_filter: singular innovation covariance at step " +
                       std::to_string(t));
    double logdet = 0.0;
    for (int i = 0; i < q; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const Eigen::VectorXd Finv_v = llt.solve(v);
    res.loglik += -0.5 * (q * kLog2Pi + logdet + v.dot(Finv_v));

    const Eigen::MatrixXd K = P * model.Z.transpose() * llt.solve(Eigen::MatrixXd::Identity(q, q));
    x = x + K * v;
    const Eigen::MatrixXd IKZ = I - K * model.Z;
    P = IKZ * P * IKZ.transpose() + K * model.H * K.transpose(); // Joseph form
    P = 0.5 * (P + P.transpose());
    res.filt_mean.push_back(x);
    res.filt_cov.push_back(P);
  }
  return res;
}

SmootherResult kalman_smooth(const StateSpaceModel& model, const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& inputs) {
  const FilterResult f = kalman_filter(model, obs, inputs);
  const int T = static_cast<int>(obs.rows());
  const int m = model.state_dim;

  SmootherResult res;
  res.loglik = f.loglik;
  if (T == 0) return res;
  res.mean.resize(T);
  res.cov.resize(T);
  res.lag_one.resize(T);

  res.mean[T - 1] = f.filt_mean[T - 1];
  res.cov[T - 1] = f.filt_cov[T - 1];
  for (int t = T - 2; t >= 0; --t) {
    Eigen::MatrixXd Ppred = f.pred_cov[t + 1];
    // the prediction covariance can be exactly singular when observed
    // variables are embedded in the state; regularize for the gain solve
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Ppred);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-12).any()) {
      Ppred += 1e-12 * Eigen::MatrixXd::Identity(m, m);
      ldlt.compute(Ppred);
    }
    const Eigen::MatrixXd J =
        ldlt.solve(model.T * f.filt_cov[t]).transpose(); // P_f T' Ppred^{-1}
    res.mean[t] = f.filt_mean[t] + J * (res.mean[t + 1] - f.pred_mean[t + 1]);
    Eigen::MatrixXd V =
        f.filt_cov[t] + J * (res.cov[t + 1] - f.pred_cov[t + 1]) * J.transpose();
    res.cov[t] = 0.5 * (V + V.transpose());
    res.lag_one[t + 1] = res.cov[t + 1] * J.transpose(); // Cov(a_{t+1}, a_t | Y)
  }
  return res;
}

} // namespace trustdyn
