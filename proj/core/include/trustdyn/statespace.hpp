#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "trustdyn/pathmodel.hpp"

namespace trustdyn {

/// Where a compiled regressor (or target) reads its value from.
///   state_now  — slot of the state vector at time t
///   state_prev — slot of the state vector at time t-1 (transition rows only)
///   input      — column of the exogenous input matrix at time t
///   obs_now    — observed endogenous column at time t (within-time edge)
enum class RefKind { state_now, state_prev, input, obs_now };

struct Ref {
  RefKind kind;
  int index = 0;
};

/// One structural equation v_t = sum(coeff_i * regressor_i) + noise, compiled
/// against the state/input/observation layout. Fixed coefficients (preset
/// edges and latent scale anchors) carry edge_id = -1 entries resolved via
/// fixed_coeffs.
struct Equation {
  std::string variable;
  bool is_transition = false; // transition row (valid t >= 1) vs observation row
  Ref target;
  std::vector<Ref> regressors;
  std::vector<int> edge_ids;        // index into the diagram's edge list, -1 if fixed
  std::vector<double> fixed_coeffs; // used where edge_ids[i] < 0
};

/// Diagram classification and layout shared by assembly, fitting and
/// prediction. Variables split into exogenous inputs (no inflow), state
/// variables (latent, or lagged sources) and observed endogenous columns.
struct ModelStructure {
  PathDiagram diagram; // validated

  std::vector<std::string> state_vars;  // in lag-0 topological order
  std::vector<int> state_copies;        // slots per state var
  std::vector<int> state_slot0;         // first slot of each state var
  int state_dim = 0;

  std::vector<std::string> obs_vars;          // all observed endogenous
  std::vector<int> obs_state_index;           // >=0 if also a state var, else -1
  std::vector<std::pair<std::string, int>> inputs; // (variable, lag) data columns

  std::vector<Equation> equations;      // one per endogenous variable
  std::vector<int> anchor_edges;        // edge ids pinned to 1.0 when fitted
  std::vector<std::string> endo_vars;   // equation order

  int slot(const std::string& var, int lag) const;
  int state_index(const std::string& var) const;
  int obs_index(const std::string& var) const;
  int input_index(const std::string& var, int lag) const;
  int endo_index(const std::string& var) const;
};

/// Classifies a validated diagram and compiles its equations; throws
/// Error(data) for structures outside the supported family (e.g. a state
/// equation depending on a non-dynamic observed endogenous variable).
ModelStructure analyze_diagram(const PathDiagram& diagram);

/// Linear-Gaussian state-space form
///   alpha_t = T alpha_{t-1} + B u_t + w_t,   w ~ N(0, Q)
///   y_t     = Z alpha_t     + D u_t + e_t,   e ~ N(0, H)
/// with alpha_0 ~ N(a1, P1). Q and H are the reduced-form covariances induced
/// by the diagonal structural variances (process_var per state variable,
/// obs_var per observation-only variable).
struct StateSpaceModel {
  int state_dim = 0;
  int n_obs = 0;
  int n_inputs = 0;

  Eigen::MatrixXd T, B;       // transition
  Eigen::MatrixXd Z, D;       // observation
  Eigen::MatrixXd Q, H;       // reduced-form noise covariances
  Eigen::VectorXd process_var; // structural diagonal, one per state var
  Eigen::VectorXd obs_var;     // structural diagonal, one per observed endo
  Eigen::VectorXd a1;          // initial state mean
  Eigen::MatrixXd P1;          // initial state covariance

  Eigen::MatrixXd noise_mix_state; // maps structural state noise into slots
  Eigen::MatrixXd noise_mix_obs;   // maps structural obs noise into rows
};

/// Assembles the reduced-form matrices for the given coefficients (indexed by
/// diagram edge) and structural variances (indexed by endogenous equation).
/// Variances must be positive; values below the floor are raised to it.
StateSpaceModel assemble_state_space(const ModelStructure& structure,
                                     const std::vector<double>& edge_coeffs,
                                     const std::vector<double>& endo_variances,
                                     double variance_floor = 1e-8);

/// Spec-level entry point: compiles a diagram whose free coefficients are
/// supplied by name maps. Keys are "source@lag->target" for coefficients and
/// the variable name for variances. Throws on non-positive variance or
/// missing coefficient.
StateSpaceModel to_state_space(const PathDiagram& diagram,
                               const std::map<std::string, double>& coefficients,
                               const std::map<std::string, double>& variances);

std::string edge_key(const LaggedEdge& e);

struct FilterResult {
  double loglik = 0.0;
  std::vector<Eigen::VectorXd> pred_mean, filt_mean;
  std::vector<Eigen::MatrixXd> pred_cov, filt_cov;
};

/// Kalman filter over one series. obs is T x n_obs (no missing values),
/// inputs is T x n_inputs. Throws Error(data) with the step index if an
/// innovation covariance is numerically singular.
FilterResult kalman_filter(const StateSpaceModel& model,
                           const Eigen::MatrixXd& obs,
                           const Eigen::MatrixXd& inputs);

struct SmootherResult {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> cov;
  /// lag_one[t] = Cov(alpha_t, alpha_{t-1} | all data), defined for t >= 1.
  std::vector<Eigen::MatrixXd> lag_one;
  double loglik = 0.0;
};

/// RTS smoother (runs the filter internally).
SmootherResult kalman_smooth(const StateSpaceModel& model,
                             const Eigen::MatrixXd& obs,
                             const Eigen::MatrixXd& inputs);

} // namespace trustdyn
