#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trustdyn/error.hpp"

namespace trustdyn {

enum class VarRole { observed, latent };
enum class VarScale { continuous, binary, ternary };

/// One node of a path diagram. Binary variables take values in {0,1},
/// ternary in {-1,0,1}; continuous variables carry an explicit closed range.
struct VariableSpec {
  std::string name;
  VarRole role = VarRole::observed;
  VarScale scale = VarScale::continuous;
  double lo = 0.0;
  double hi = 1.0;

  bool in_range(double v) const;
  bool operator==(const VariableSpec&) const = default;
};

/// Directed edge source -> target, acting with the given lag in steps.
/// A set coefficient means the edge is fixed; unset edges are fitted.
struct LaggedEdge {
  std::string source;
  std::string target;
  int lag = 0;
  std::optional<double> coefficient;

  bool operator==(const LaggedEdge&) const = default;
};

struct PathDiagram {
  std::vector<VariableSpec> variables;
  std::vector<LaggedEdge> edges;
  int max_lag = 1;
  std::string target;

  const VariableSpec* find_variable(const std::string& name) const;
  bool has_variable(const std::string& name) const { return find_variable(name) != nullptr; }

  /// Structural equality ignoring edge order.
  bool structurally_equal(const PathDiagram& other) const;
};

/// Checks all diagram invariants (declared endpoints, lag bounds, duplicate
/// edges, lag-0 acyclicity, inflow into the target) and returns a copy whose
/// edge list is topologically ordered within its lag-0 subgraph.
/// Throws Error(data) naming the offending variable, edge, or cycle.
PathDiagram validate_diagram(const PathDiagram& diagram);

/// Canonical variable names used by the built-in trust diagram and the
/// panel CSV format.
namespace var_names {
inline constexpr const char* aip = "AIP";
inline constexpr const char* hp = "HP";
inline constexpr const char* trust = "E_AIP";
inline constexpr const char* reliance = "reliance";
inline constexpr const char* cue = "cue";
inline constexpr const char* over_under = "over_under";
} // namespace var_names

/// Builds the six-variable trust diagram: AI performance and human
/// performance feed the over/under-trust node, latent trust (E_AIP) carries
/// the autoregressive structure at the given lags, and reliance is driven by
/// trust and the trust state. With include_cue the calibration-cue inputs are
/// added. All coefficients are left unset; target is over_under.
PathDiagram build_paper_diagram(bool include_cue, const std::set<int>& trust_lags);

/// Parses the textual diagram format (see serialize_diagram); throws
/// Error(data) with a line number on syntax errors. The result is validated.
PathDiagram parse_diagram(const std::string& text);

/// Line format, one declaration per line:
///   target <name>
///   max_lag <n>
///   var <name> <observed|latent> <continuous|binary|ternary> [<lo> <hi>]
///   <target> ~ <source>@<lag> [= <coefficient>]
/// '#' starts a comment. parse_diagram(serialize_diagram(d)) == d structurally.
std::string serialize_diagram(const PathDiagram& diagram);

} // namespace trustdyn
