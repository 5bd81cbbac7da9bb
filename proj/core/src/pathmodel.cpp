#include "trustdyn/pathmodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "trustdyn/panel.hpp"

namespace trustdyn {

bool VariableSpec::in_range(double v) const {
  switch (scale) {
  case VarScale::continuous:
    return v >= lo && v <= hi;
  case VarScale::binary:
    return v == 0.0 || v == 1.0;
  case VarScale::ternary:
    return v == -1.0 || v == 0.0 || v == 1.0;
  }
  return false;
}

const VariableSpec* PathDiagram::find_variable(const std::string& name) const {
  for (const auto& v : variables)
    if (v.name == name) return &v;
  return nullptr;
}

bool PathDiagram::structurally_equal(const PathDiagram& other) const {
  if (max_lag != other.max_lag || target != other.target) return false;
  if (variables.size() != other.variables.size() || edges.size() != other.edges.size())
    return false;
  for (const auto& v : variables) {
    const VariableSpec* o = other.find_variable(v.name);
    if (!o || !(*o == v)) return false;
  }
  auto key = [](const LaggedEdge& e) {
    return e.source + "@" + std::to_string(e.lag) + "->" + e.target;
  };
  std::map<std::string, std::optional<double>> mine;
  for (const auto& e : edges) mine[key(e)] = e.coefficient;
  for (const auto& e : other.edges) {
    auto it = mine.find(key(e));
    if (it == mine.end()) return false;
    if (it->second.has_value() != e.coefficient.has_value()) return false;
    if (it->second && *it->second != *e.coefficient) return false;
  }
  return true;
}

namespace {

void check_variables(const PathDiagram& d) {
  std::unordered_set<std::string> seen;
  for (const auto& v : d.variables) {
    if (v.name.empty()) throw data_error("diagram: empty variable name");
    if (!seen.insert(v.name).second)
      throw data_error("diagram: duplicate variable '" + v.name + "'");
    if (v.scale == VarScale::continuous) {
      if (!std::isfinite(v.lo) || !std::isfinite(v.hi) || !(v.lo < v.hi))
        throw data_error("diagram: variable '" + v.name + "' needs a finite range with lo < hi");
    }
  }
}

// Kahn toposort over the lag-0 subgraph; on failure extracts one cycle for
// the error message.
std::vector<std::string> lag0_topo_order(const PathDiagram& d) {
  std::unordered_map<std::string, std::vector<std::string>> children;
  std::unordered_map<std::string, int> indegree;
  for (const auto& v : d.variables) indegree[v.name] = 0;
  for (const auto& e : d.edges) {
    if (e.lag != 0) continue;
    children[e.source].push_back(e.target);
    ++indegree[e.target];
  }
  std::vector<std::string> order;
  std::vector<std::string> ready;
  for (const auto& v : d.variables)
    if (indegree[v.name] == 0) ready.push_back(v.name);
  while (!ready.empty()) {
    std::string n = ready.front();
    ready.erase(ready.begin());
    order.push_back(n);
    for (const auto& c : children[n])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  if (order.size() == d.variables.size()) return order;

  // walk successors among the remaining nodes until one repeats
  std::unordered_set<std::string> remaining;
  for (const auto& [name, deg] : indegree)
    if (deg > 0) remaining.insert(name);
  std::string node = *remaining.begin();
  std::vector<std::string> path;
  std::unordered_set<std::string> on_path;
  while (on_path.insert(node).second) {
    path.push_back(node);
    for (const auto& c : children[node]) {
      if (remaining.count(c)) {
        node = c;
        break;
      }
    }
  }
  auto start = std::find(path.begin(), path.end(), node);
  std::string cycle;
  for (auto it = start; it != path.end(); ++it) cycle += *it + " -> ";
  cycle += node;
  throw data_error("diagram: cycle among lag-0 edges: " + cycle);
}

} // namespace

PathDiagram validate_diagram(const PathDiagram& diagram) {
  PathDiagram d = diagram;
  check_variables(d);
  if (d.max_lag < 1) throw data_error("diagram: max_lag must be positive");
  if (!d.has_variable(d.target))
    throw data_error("diagram: target '" + d.target + "' is not declared");

  std::set<std::tuple<std::string, std::string, int>> triples;
  bool target_inflow = false;
  for (const auto& e : d.edges) {
    if (!d.has_variable(e.source))
      throw data_error("diagram: edge references unknown variable '" + e.source + "'");
    if (!d.has_variable(e.target))
      throw data_error("diagram: edge references unknown variable '" + e.target + "'");
    if (e.lag < 0) throw data_error("diagram: negative lag on edge into '" + e.target + "'");
    if (e.lag > d.max_lag)
      throw data_error("diagram: edge " + e.source + "@" + std::to_string(e.lag) + " -> " +
                       e.target + " exceeds max_lag " + std::to_string(d.max_lag));
    if (!triples.insert({e.source, e.target, e.lag}).second)
      throw data_error("diagram: duplicate edge " + e.source + "@" + std::to_string(e.lag) +
                       " -> " + e.target);
    if (e.target == d.target) target_inflow = true;
    if (e.coefficient && !std::isfinite(*e.coefficient))
      throw data_error("diagram: non-finite coefficient on edge into '" + e.target + "'");
  }
  if (!target_inflow)
    throw data_error("diagram: no edges into target '" + d.target + "'");

  const std::vector<std::string> order = lag0_topo_order(d);
  std::unordered_map<std::string, int> rank;
  for (size_t i = 0; i < order.size(); ++i) rank[order[i]] = static_cast<int>(i);

  // lagged edges first (stable), then lag-0 edges by topological target rank
  std::stable_sort(d.edges.begin(), d.edges.end(), [&](const LaggedEdge& a, const LaggedEdge& b) {
    const bool a0 = a.lag == 0, b0 = b.lag == 0;
    if (a0 != b0) return !a0;
    if (!a0) return false;
    return rank[a.target] < rank[b.target];
  });
  return d;
}

PathDiagram build_paper_diagram(bool include_cue, const std::set<int>& trust_lags) {
  if (trust_lags.empty())
    throw usage_error("build_paper_diagram: trust_lags must be nonempty");
  for (int lag : trust_lags)
    if (lag < 1) throw usage_error("build_paper_diagram: lags must be positive");

  using namespace var_names;
  PathDiagram d;
  d.variables = {
      {aip, VarRole::observed, VarScale::continuous, 0.0, 1.0},
      {hp, VarRole::observed, VarScale::continuous, 0.0, 1.0},
      {trust, VarRole::latent, VarScale::continuous, 0.0, 1.0},
      {over_under, VarRole::observed, VarScale::ternary, -1.0, 1.0},
      {reliance, VarRole::observed, VarScale::binary, 0.0, 1.0},
  };
  if (include_cue)
    d.variables.push_back({cue, VarRole::observed, VarScale::binary, 0.0, 1.0});

  auto edge = [&](const char* s, const char* t, int lag) { d.edges.push_back({s, t, lag, {}}); };
  edge(aip, trust, 0);
  edge(aip, over_under, 0);
  edge(hp, over_under, 0);
  edge(trust, over_under, 0);
  edge(trust, reliance, 0);
  edge(over_under, reliance, 0);
  if (include_cue) {
    edge(cue, trust, 0);
    edge(cue, over_under, 0);
  }
  for (int lag : trust_lags) edge(trust, trust, lag);

  d.max_lag = *trust_lags.rbegin();
  d.target = over_under;
  return validate_diagram(d);
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') break;
    tokens.push_back(tok);
  }
  return tokens;
}

double parse_number(const std::string& s, int line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw data_error("diagram line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

int parse_int(const std::string& s, int line_no) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw data_error("diagram line " + std::to_string(line_no) + ": bad integer '" + s + "'");
  return v;
}

} // namespace

PathDiagram parse_diagram(const std::string& text) {
  PathDiagram d;
  d.max_lag = 0; // filled from declarations; defaulted later
  bool saw_max_lag = false;

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    auto fail = [&](const std::string& msg) -> Error {
      return data_error("diagram line " + std::to_string(line_no) + ": " + msg);
    };

    if (toks[0] == "var") {
      if (toks.size() != 4 && toks.size() != 6) throw fail("expected: var <name> <role> <scale> [lo hi]");
      VariableSpec v;
      v.name = toks[1];
      if (toks[2] == "observed") v.role = VarRole::observed;
      else if (toks[2] == "latent") v.role = VarRole::latent;
      else throw fail("role must be observed|latent");
      if (toks[3] == "continuous") v.scale = VarScale::continuous;
      else if (toks[3] == "binary") { v.scale = VarScale::binary; v.lo = 0; v.hi = 1; }
      else if (toks[3] == "ternary") { v.scale = VarScale::ternary; v.lo = -1; v.hi = 1; }
      else throw fail("scale must be continuous|binary|ternary");
      if (toks.size() == 6) {
        v.lo = parse_number(toks[4], line_no);
        v.hi = parse_number(toks[5], line_no);
      } else if (v.scale == VarScale::continuous) {
        throw fail("continuous variable needs a range");
      }
      d.variables.push_back(v);
    } else if (toks[0] == "target") {
      if (toks.size() != 2) throw fail("expected: target <name>");
      d.target = toks[1];
    } else if (toks[0] == "max_lag") {
      if (toks.size() != 2) throw fail("expected: max_lag <n>");
      d.max_lag = parse_int(toks[1], line_no);
      saw_max_lag = true;
    } else if (toks.size() >= 3 && toks[1] == "~") {
      // <target> ~ <source>@<lag> [= <coefficient>]
      LaggedEdge e;
      e.target = toks[0];
      auto at = toks[2].find('@');
      if (at == std::string::npos) throw fail("edge source must be <name>@<lag>");
      e.source = toks[2].substr(0, at);
      e.lag = parse_int(toks[2].substr(at + 1), line_no);
      if (toks.size() == 5 && toks[3] == "=") {
        e.coefficient = parse_number(toks[4], line_no);
      } else if (toks.size() != 3) {
        throw fail("expected: <target> ~ <source>@<lag> [= <coefficient>]");
      }
      d.edges.push_back(e);
    } else {
      throw fail("unrecognized declaration '" + toks[0] + "'");
    }
  }

  if (!saw_max_lag) {
    d.max_lag = 1;
    for (const auto& e : d.edges) d.max_lag = std::max(d.max_lag, e.lag);
  }
  if (d.target.empty() && !d.variables.empty()) {
    // a one-line fragment is allowed a defaulted target: the first edge's target
    d.target = d.edges.empty() ? d.variables.front().name : d.edges.front().target;
  }
  return validate_diagram(d);
}

std::string serialize_diagram(const PathDiagram& diagram) {
  std::ostringstream out;
  out << "target " << diagram.target << "\n";
  out << "max_lag " << diagram.max_lag << "\n";
  for (const auto& v : diagram.variables) {
    out << "var " << v.name << ' ' << (v.role == VarRole::latent ? "latent" : "observed") << ' ';
    switch (v.scale) {
    case VarScale::continuous:
      out << "continuous " << format_double(v.lo) << ' ' << format_double(v.hi);
      break;
    case VarScale::binary:
      out << "binary";
      break;
    case VarScale::ternary:
      out << "ternary";
      break;
    }
    out << "\n";
  }
  for (const auto& e : diagram.edges) {
    out << e.target << " ~ " << e.source << '@' << e.lag;
    if (e.coefficient) out << " = " << format_double(*e.coefficient);
    out << "\n";
  }
  return out.str();
}

} // namespace trustdyn
