// Shared numeric plumbing: training configuration, fit reports, seeded RNG.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace situ {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Covariance regularization floor shared by HMM and GMM M-steps (feature units^2).
inline constexpr double kCovFloor = 1e-6;

struct TrainConfig {
  int max_iter = 500;
  double tol = 1e-4;       // relative log-likelihood improvement
  std::uint64_t seed = 0;
};

struct FitReport {
  int iterations = 0;               // main EM loop iterations (trace length)
  int init_iterations = 0;          // EM iterations spent on a from-scratch init
  std::vector<double> log_likelihood_trace;
  bool converged = false;
  std::vector<std::string> events;  // e.g. component re-seed notices

  int total_iterations() const { return iterations + init_iterations; }
};

// splitmix64; used to derive independent per-model / per-sample sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. Gaussian draws are hand-rolled (Box-Muller) so streams
// do not depend on the standard library's normal_distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // 53-bit mantissa uniform in [0, 1)
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // uniform integer in [0, n)
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

inline double log_sum_exp(const VectorXd& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace situ
