#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "optout/tensor.hpp"

namespace optout::ot {

/// Weighted point cloud: one support point per row.
struct DiscreteDistribution {
  Matrix support;
  std::vector<double> weights;

  /// Throws Error unless weights are non-negative, sum to 1 within 1e-9,
  /// and match the support size.
  void validate() const;

  static DiscreteDistribution uniform(Matrix support);
};

struct TransportPlan {
  Matrix plan;         // m x n coupling
  Matrix cost_matrix;  // m x n
  double total_cost = 0.0;
};

enum class Aggregation { mean, sum };

/// Which axis of a weight matrix forms the sample points.
enum class CloudAxis { rows, columns };

struct SWDConfig {
  double p = 2.0;
  std::size_t num_projections = 64;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::mean;
  CloudAxis axis = CloudAxis::rows;

  void validate() const;
};

/// Exact discrete optimal transport by the transportation (network) simplex.
/// Marginals need only agree in total mass (within 1e-9); the solver
/// serves as the reference for every Wasserstein routine here.
TransportPlan exact_ot(std::span<const double> alpha, std::span<const double> beta,
                       const Matrix& cost);

/// Brute force over all basic feasible solutions (spanning trees of the
/// bipartite support graph). Limited to m, n <= 4.
TransportPlan exact_ot_enumerate(std::span<const double> alpha, std::span<const double> beta,
                                 const Matrix& cost);

/// Closed-form 1-D p-Wasserstein between equal-size uniform samples.
double wasserstein_1d(std::span<const double> xs, std::span<const double> ys, double p);

/// L unit directions in R^dim (normalized isotropic Gaussians), one per row.
Matrix sample_directions(std::size_t dim, std::size_t count, std::uint64_t seed);

/// Monte Carlo sliced Wasserstein between two n x d clouds:
/// (mean over directions of W_p^p)^(1/p).
double sliced_wasserstein(const Matrix& a, const Matrix& b, const SWDConfig& cfg);

struct RegularizerValue {
  double value = 0.0;
  ParamSet gradient;  // w.r.t. theta; empty when not requested
};

/// Sliced Wasserstein between each current weight matrix and its initial
/// copy, aggregated over matrices. The subgradient treats the sort
/// permutations as fixed at the evaluation point.
RegularizerValue param_swd(const ParamSet& theta, const ParamSet& theta0, const SWDConfig& cfg,
                           bool with_gradient = true);

enum class DistanceMetric { manhattan, euclidean, chebyshev, cosine };

DistanceMetric parse_distance_metric(const std::string& name);
std::string to_string(DistanceMetric metric);

/// Distance between the flattened parameter vectors.
double baseline_distance(const ParamSet& theta, const ParamSet& theta0, DistanceMetric metric);

/// Same distance plus its (sub)gradient w.r.t. theta.
RegularizerValue baseline_distance_with_gradient(const ParamSet& theta, const ParamSet& theta0,
                                                 DistanceMetric metric);

}  // namespace optout::ot
