#include "optout/ot_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "optout/common.hpp"

namespace optout::ot {

namespace {

constexpr double kMassTolerance = 1e-9;

struct Cell {
  std::size_t row;
  std::size_t col;
  double flow;
};

void check_marginals(std::span<const double> alpha, std::span<const double> beta,
                     const Matrix& cost) {
  if (alpha.empty() || beta.empty()) {
    throw Error("exact_ot: empty marginal");
  }
  if (cost.rows != alpha.size() || cost.cols != beta.size()) {
    throw ShapeError("exact_ot: cost matrix is " + std::to_string(cost.rows) + "x" +
                     std::to_string(cost.cols) + ", marginals are " +
                     std::to_string(alpha.size()) + " and " + std::to_string(beta.size()));
  }
  for (double a : alpha) {
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw Error("exact_ot: source weights must be finite and non-negative");
    }
  }
  for (double b : beta) {
    if (!(b >= 0.0) || !std::isfinite(b)) {
      throw Error("exact_ot: target weights must be finite and non-negative");
    }
  }
  for (double c : cost.data) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw Error("exact_ot: costs must be finite and non-negative");
    }
  }
  const double sa = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  const double sb = std::accumulate(beta.begin(), beta.end(), 0.0);
  if (std::abs(sa - sb) > kMassTolerance) {
    throw Error("exact_ot: infeasible marginals (mass " + std::to_string(sa) + " vs " +
                std::to_string(sb) + ")");
  }
}

TransportPlan make_plan(std::size_t m, std::size_t n, const std::vector<Cell>& cells,
                        const Matrix& cost) {
  TransportPlan out;
  out.plan = Matrix(m, n);
  out.cost_matrix = cost;
  for (const auto& c : cells) {
    out.plan(c.row, c.col) += c.flow;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m * n; ++i) {
    total += out.plan.data[i] * cost.data[i];
  }
  out.total_cost = total;
  return out;
}

// Tree over m row nodes [0, m) and n column nodes [m, m+n), one edge per basic cell.
class BasisTree {
 public:
  BasisTree(std::size_t m, std::size_t n, const std::vector<Cell>& cells)
      : m_(m), adjacency_(m + n) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      adjacency_[cells[k].row].push_back(k);
      adjacency_[m + cells[k].col].push_back(k);
    }
  }

  // Returns basic-cell indices on the path from `from` to `to`, in order.
  std::vector<std::size_t> path(std::size_t from, std::size_t to,
                                const std::vector<Cell>& cells) const {
    const std::size_t nodes = adjacency_.size();
    std::vector<std::size_t> parent_edge(nodes, SIZE_MAX);
    std::vector<std::size_t> parent_node(nodes, SIZE_MAX);
    std::vector<bool> seen(nodes, false);
    std::vector<std::size_t> queue{from};
    seen[from] = true;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t node = queue[head];
      if (node == to) {
        break;
      }
      for (std::size_t e : adjacency_[node]) {
        const std::size_t other = other_end(cells[e], node);
        if (!seen[other]) {
          seen[other] = true;
          parent_edge[other] = e;
          parent_node[other] = node;
          queue.push_back(other);
        }
      }
    }
    if (!seen[to]) {
      throw Error("exact_ot: basis is not a spanning tree");
    }
    std::vector<std::size_t> edges;
    for (std::size_t node = to; node != from; node = parent_node[node]) {
      edges.push_back(parent_edge[node]);
    }
    std::reverse(edges.begin(), edges.end());
    return edges;
  }

  // Dual potentials with u[0] = 0 so that u_i + v_j = C_ij on basic cells.
  void potentials(const std::vector<Cell>& cells, const Matrix& cost, std::vector<double>& u,
                  std::vector<double>& v) const {
    const std::size_t nodes = adjacency_.size();
    std::vector<double> pot(nodes, 0.0);
    std::vector<bool> seen(nodes, false);
    std::vector<std::size_t> queue{0};
    seen[0] = true;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t node = queue[head];
      for (std::size_t e : adjacency_[node]) {
        const std::size_t other = other_end(cells[e], node);
        if (!seen[other]) {
          seen[other] = true;
          pot[other] = cost(cells[e].row, cells[e].col) - pot[node];
          queue.push_back(other);
        }
      }
    }
    u.assign(pot.begin(), pot.begin() + static_cast<std::ptrdiff_t>(m_));
    v.assign(pot.begin() + static_cast<std::ptrdiff_t>(m_), pot.end());
  }

 private:
  std::size_t other_end(const Cell& c, std::size_t node) const {
    return node == c.row ? m_ + c.col : c.row;
  }

  std::size_t m_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

std::vector<Cell> northwest_corner(std::span<const double> alpha, std::span<const double> beta) {
  const std::size_t m = alpha.size();
  const std::size_t n = beta.size();
  std::vector<double> supply(alpha.begin(), alpha.end());
  std::vector<double> demand(beta.begin(), beta.end());
  std::vector<Cell> cells;
  cells.reserve(m + n - 1);
  std::size_t i = 0;
  std::size_t j = 0;
  while (true) {
    const double f = std::min(supply[i], demand[j]);
    cells.push_back({i, j, f});
    supply[i] -= f;
    demand[j] -= f;
    if (i == m - 1 && j == n - 1) {
      break;
    }
    if (j == n - 1 || (i < m - 1 && supply[i] <= demand[j])) {
      ++i;
    } else {
      ++j;
    }
  }
  return cells;
}

}  // namespace

void DiscreteDistribution::validate() const {
  if (weights.size() != support.rows) {
    throw ShapeError("distribution has " + std::to_string(support.rows) + " points but " +
                     std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) {
      throw Error("distribution weights must be non-negative");
    }
    total += w;
  }
  if (std::abs(total - 1.0) >= kMassTolerance) {
    throw Error("distribution weights sum to " + std::to_string(total) + ", expected 1");
  }
}

DiscreteDistribution DiscreteDistribution::uniform(Matrix support) {
  const std::size_t n = support.rows;
  if (n == 0) {
    throw Error("uniform distribution over an empty support");
  }
  return {std::move(support), std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

void SWDConfig::validate() const {
  if (!(p >= 1.0)) {
    throw ConfigError("sliced Wasserstein order p must be >= 1");
  }
  if (num_projections < 1) {
    throw ConfigError("sliced Wasserstein needs at least one projection");
  }
}

TransportPlan exact_ot(std::span<const double> alpha, std::span<const double> beta,
                       const Matrix& cost) {
  check_marginals(alpha, beta, cost);
  const std::size_t m = alpha.size();
  const std::size_t n = beta.size();

  std::vector<Cell> basis = northwest_corner(alpha, beta);
  std::vector<char> in_basis(m * n, 0);
  for (const auto& c : basis) {
    in_basis[c.row * n + c.col] = 1;
  }

  double scale = 1.0;
  for (double c : cost.data) {
    scale = std::max(scale, c);
  }
  const double tolerance = 1e-12 * scale;
  // Dantzig pricing first; Bland's rule afterwards rules out cycling on
  // degenerate pivots.
  const std::size_t dantzig_budget = 20 * (m + n) + 100;
  const std::size_t max_iterations = dantzig_budget + 100 * m * n * (m + n) + 1000;

  std::vector<double> u;
  std::vector<double> v;
  for (std::size_t iteration = 0;; ++iteration) {
    if (iteration > max_iterations) {
      throw Error("exact_ot: simplex did not converge");
    }
    const bool bland = iteration >= dantzig_budget;
    BasisTree tree(m, n, basis);
    tree.potentials(basis, cost, u, v);

    std::size_t enter = SIZE_MAX;
    double best = -tolerance;
    for (std::size_t i = 0; i < m && !(bland && enter != SIZE_MAX); ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (in_basis[i * n + j]) {
          continue;
        }
        const double reduced = cost(i, j) - u[i] - v[j];
        if (reduced < best) {
          best = reduced;
          enter = i * n + j;
          if (bland) {
            break;
          }
        }
      }
    }
    if (enter == SIZE_MAX) {
      break;
    }

    const std::size_t ei = enter / n;
    const std::size_t ej = enter % n;
    // Path from the entering column back to the entering row; edges
    // alternate donor (-), receiver (+), starting and ending with a donor.
    const std::vector<std::size_t> cycle = tree.path(m + ej, ei, basis);
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = SIZE_MAX;
    for (std::size_t k = 0; k < cycle.size(); k += 2) {
      const Cell& c = basis[cycle[k]];
      const std::size_t key = c.row * n + c.col;
      if (c.flow < theta ||
          (c.flow == theta && leave != SIZE_MAX &&
           key < basis[leave].row * n + basis[leave].col)) {
        theta = c.flow;
        leave = cycle[k];
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      Cell& c = basis[cycle[k]];
      c.flow += (k % 2 == 0) ? -theta : theta;
      if (c.flow < 0.0) {
        c.flow = 0.0;
      }
    }
    in_basis[basis[leave].row * n + basis[leave].col] = 0;
    basis[leave] = {ei, ej, theta};
    in_basis[enter] = 1;
  }
  return make_plan(m, n, basis, cost);
}

TransportPlan exact_ot_enumerate(std::span<const double> alpha, std::span<const double> beta,
                                 const Matrix& cost) {
  check_marginals(alpha, beta, cost);
  const std::size_t m = alpha.size();
  const std::size_t n = beta.size();
  if (m > 4 || n > 4) {
    throw Error("exact_ot_enumerate: limited to 4x4 problems");
  }
  const std::size_t cells = m * n;
  const std::size_t basis_size = m + n - 1;

  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<Cell> best;

  for (std::uint32_t mask = 0; mask < (1u << cells); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != basis_size) {
      continue;
    }
    std::vector<Cell> chosen;
    for (std::size_t k = 0; k < cells; ++k) {
      if (mask & (1u << k)) {
        chosen.push_back({k / n, k % n, 0.0});
      }
    }
    // Solve flows by repeatedly peeling leaves; any cycle leaves edges unresolved.
    std::vector<double> supply(alpha.begin(), alpha.end());
    std::vector<double> demand(beta.begin(), beta.end());
    std::vector<bool> resolved(chosen.size(), false);
    std::size_t remaining = chosen.size();
    bool progress = true;
    while (remaining > 0 && progress) {
      progress = false;
      for (std::size_t node = 0; node < m + n; ++node) {
        std::size_t degree = 0;
        std::size_t edge = 0;
        for (std::size_t e = 0; e < chosen.size(); ++e) {
          if (resolved[e]) {
            continue;
          }
          const bool touches = node < m ? chosen[e].row == node : chosen[e].col == node - m;
          if (touches) {
            ++degree;
            edge = e;
          }
        }
        if (degree != 1) {
          continue;
        }
        Cell& c = chosen[edge];
        c.flow = node < m ? supply[c.row] : demand[c.col];
        supply[c.row] -= c.flow;
        demand[c.col] -= c.flow;
        resolved[edge] = true;
        --remaining;
        progress = true;
      }
    }
    if (remaining > 0) {
      continue;
    }
    bool feasible = true;
    double total = 0.0;
    for (const auto& c : chosen) {
      if (c.flow < -1e-12) {
        feasible = false;
        break;
      }
      total += c.flow * cost(c.row, c.col);
    }
    for (double s : supply) {
      feasible = feasible && std::abs(s) < 1e-9;
    }
    for (double d : demand) {
      feasible = feasible && std::abs(d) < 1e-9;
    }
    if (feasible && total < best_cost) {
      best_cost = total;
      best = chosen;
    }
  }
  if (best.empty()) {
    throw Error("exact_ot_enumerate: no feasible vertex");
  }
  for (auto& c : best) {
    c.flow = std::max(c.flow, 0.0);
  }
  return make_plan(m, n, best, cost);
}

double wasserstein_1d(std::span<const double> xs, std::span<const double> ys, double p) {
  if (xs.empty() || ys.empty()) {
    throw Error("wasserstein_1d: empty input");
  }
  if (xs.size() != ys.size()) {
    throw ShapeError("wasserstein_1d: sample counts differ (" + std::to_string(xs.size()) +
                     " vs " + std::to_string(ys.size()) + ")");
  }
  if (!(p >= 1.0)) {
    throw Error("wasserstein_1d: p must be >= 1");
  }
  std::vector<double> a(xs.begin(), xs.end());
  std::vector<double> b(ys.begin(), ys.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += std::pow(std::abs(a[i] - b[i]), p);
  }
  return std::pow(total / static_cast<double>(a.size()), 1.0 / p);
}

Matrix sample_directions(std::size_t dim, std::size_t count, std::uint64_t seed) {
  if (dim == 0) {
    throw Error("sample_directions: dimension must be positive");
  }
  Rng rng(seed);
  Matrix dirs(count, dim);
  for (std::size_t l = 0; l < count; ++l) {
    auto row = dirs.row(l);
    double norm2 = 0.0;
    while (norm2 == 0.0) {
      norm2 = 0.0;
      for (auto& x : row) {
        x = rng.normal();
        norm2 += x * x;
      }
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : row) {
      x *= inv;
    }
  }
  return dirs;
}

namespace {

// Projects each row of `points` on each direction: out(l, i) = <points_i, dir_l>.
Matrix project(const Matrix& points, const Matrix& dirs) {
  Matrix out(dirs.rows, points.rows);
  for (std::size_t l = 0; l < dirs.rows; ++l) {
    const auto u = dirs.row(l);
    for (std::size_t i = 0; i < points.rows; ++i) {
      const auto x = points.row(i);
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) {
        s += x[k] * u[k];
      }
      out(l, i) = s;
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      t(j, i) = m(i, j);
    }
  }
  return t;
}

struct SlicedTerm {
  double value = 0.0;
  Matrix gradient;  // same shape as the point cloud `a`
};

// Sliced Wasserstein of two n x d clouds with an optional gradient w.r.t. `a`.
SlicedTerm sliced_term(const Matrix& a, const Matrix& b, const Matrix& dirs, double p,
                       bool with_gradient) {
  const std::size_t n = a.rows;
  const std::size_t count = dirs.rows;
  const Matrix pa = project(a, dirs);
  const Matrix pb = project(b, dirs);

  SlicedTerm out;
  if (with_gradient) {
    out.gradient = Matrix(a.rows, a.cols);
  }
  std::vector<std::size_t> order_a(n);
  std::vector<std::size_t> order_b(n);
  // d(sum of |diff|^p) / d(projected a_i), per direction.
  Matrix coeff(with_gradient ? count : 0, n);
  double total = 0.0;
  for (std::size_t l = 0; l < count; ++l) {
    const auto xa = pa.row(l);
    const auto xb = pb.row(l);
    std::iota(order_a.begin(), order_a.end(), std::size_t{0});
    std::iota(order_b.begin(), order_b.end(), std::size_t{0});
    std::stable_sort(order_a.begin(), order_a.end(),
                     [&](std::size_t i, std::size_t j) { return xa[i] < xa[j]; });
    std::stable_sort(order_b.begin(), order_b.end(),
                     [&](std::size_t i, std::size_t j) { return xb[i] < xb[j]; });
    double w = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double diff = xa[order_a[k]] - xb[order_b[k]];
      const double mag = std::abs(diff);
      w += std::pow(mag, p);
      if (with_gradient && diff != 0.0) {
        coeff(l, order_a[k]) = p * std::pow(mag, p - 1.0) * (diff > 0.0 ? 1.0 : -1.0);
      }
    }
    total += w / static_cast<double>(n);
  }
  const double mean_power = total / static_cast<double>(count);
  out.value = std::pow(mean_power, 1.0 / p);
  if (!with_gradient || mean_power <= 0.0) {
    return out;
  }
  // d value / d mean_power, folded with the 1/(n*L) averaging.
  const double outer = (1.0 / p) * std::pow(mean_power, 1.0 / p - 1.0) /
                       (static_cast<double>(n) * static_cast<double>(count));
  for (std::size_t l = 0; l < count; ++l) {
    const auto u = dirs.row(l);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = coeff(l, i);
      if (c == 0.0) {
        continue;
      }
      auto g = out.gradient.row(i);
      const double s = outer * c;
      for (std::size_t k = 0; k < u.size(); ++k) {
        g[k] += s * u[k];
      }
    }
  }
  return out;
}

}  // namespace

double sliced_wasserstein(const Matrix& a, const Matrix& b, const SWDConfig& cfg) {
  cfg.validate();
  if (!a.same_shape(b)) {
    throw ShapeError("sliced_wasserstein: clouds are " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " and " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols));
  }
  if (a.cols == 0) {
    throw Error("sliced_wasserstein: dimension must be positive");
  }
  if (a.rows == 0) {
    throw Error("sliced_wasserstein: empty clouds");
  }
  const Matrix dirs = sample_directions(a.cols, cfg.num_projections, cfg.seed);
  return sliced_term(a, b, dirs, cfg.p, false).value;
}

RegularizerValue param_swd(const ParamSet& theta, const ParamSet& theta0, const SWDConfig& cfg,
                           bool with_gradient) {
  cfg.validate();
  theta.require_compatible(theta0, "param_swd");
  RegularizerValue out;
  if (with_gradient) {
    out.gradient = theta.zeros_like();
  }
  if (theta.empty()) {
    return out;
  }
  const double scale =
      cfg.aggregation == Aggregation::mean ? 1.0 / static_cast<double>(theta.size()) : 1.0;
  double total = 0.0;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const bool by_rows = cfg.axis == CloudAxis::rows;
    const Matrix& cur = theta[k].value;
    const Matrix& init = theta0[k].value;
    const Matrix a = by_rows ? cur : transpose(cur);
    const Matrix b = by_rows ? init : transpose(init);
    if (a.cols == 0 || a.rows == 0) {
      continue;
    }
    const Matrix dirs = sample_directions(a.cols, cfg.num_projections, derive_seed(cfg.seed, k));
    SlicedTerm term = sliced_term(a, b, dirs, cfg.p, with_gradient);
    total += term.value;
    if (with_gradient) {
      Matrix g = by_rows ? std::move(term.gradient) : transpose(term.gradient);
      auto& dst = out.gradient[k].value.data;
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = scale * g.data[i];
      }
    }
  }
  out.value = scale * total;
  return out;
}

DistanceMetric parse_distance_metric(const std::string& name) {
  if (name == "manhattan") return DistanceMetric::manhattan;
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "chebyshev") return DistanceMetric::chebyshev;
  if (name == "cosine") return DistanceMetric::cosine;
  throw ConfigError("unknown distance metric '" + name + "'");
}

std::string to_string(DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::manhattan:
      return "manhattan";
    case DistanceMetric::euclidean:
      return "euclidean";
    case DistanceMetric::chebyshev:
      return "chebyshev";
    case DistanceMetric::cosine:
      return "cosine";
  }
  return "unknown";
}

RegularizerValue baseline_distance_with_gradient(const ParamSet& theta, const ParamSet& theta0,
                                                 DistanceMetric metric) {
  theta.require_compatible(theta0, "baseline_distance");
  const std::vector<double> a = theta.flatten();
  const std::vector<double> b = theta0.flatten();
  std::vector<double> g(a.size(), 0.0);
  double value = 0.0;

  switch (metric) {
    case DistanceMetric::manhattan:
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        value += std::abs(d);
        g[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      }
      break;
    case DistanceMetric::euclidean: {
      double ss = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        ss += (a[i] - b[i]) * (a[i] - b[i]);
      }
      value = std::sqrt(ss);
      if (value > 0.0) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          g[i] = (a[i] - b[i]) / value;
        }
      }
      break;
    }
    case DistanceMetric::chebyshev: {
      std::size_t arg = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        if (d > value) {
          value = d;
          arg = i;
        }
      }
      if (value > 0.0) {
        g[arg] = a[arg] > b[arg] ? 1.0 : -1.0;
      }
      break;
    }
    case DistanceMetric::cosine: {
      double dot = 0.0;
      double na = 0.0;
      double nb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      if (na == 0.0 || nb == 0.0) {
        throw Error("cosine distance undefined for a zero-norm parameter vector");
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      const double cosine = dot / (na * nb);
      value = 1.0 - cosine;
      for (std::size_t i = 0; i < a.size(); ++i) {
        g[i] = -(b[i] / (na * nb) - cosine * a[i] / (na * na));
      }
      break;
    }
  }

  RegularizerValue out;
  out.value = value;
  out.gradient = theta.zeros_like();
  std::size_t offset = 0;
  for (auto& entry : out.gradient) {
    std::copy(g.begin() + static_cast<std::ptrdiff_t>(offset),
              g.begin() + static_cast<std::ptrdiff_t>(offset + entry.value.size()),
              entry.value.data.begin());
    offset += entry.value.size();
  }
  return out;
}

double baseline_distance(const ParamSet& theta, const ParamSet& theta0, DistanceMetric metric) {
  return baseline_distance_with_gradient(theta, theta0, metric).value;
}

}  // namespace optout::ot
