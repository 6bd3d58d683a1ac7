#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fedmerge/dataset.hpp"
#include "fedmerge/errors.hpp"
#include "fedmerge/gma.hpp"  // FitnessFn
#include "fedmerge/merge.hpp"
#include "fedmerge/rng.hpp"
#include "fedmerge/soma.hpp"

namespace fedmerge {

/// Deterministic subset -> utility map with a thread-safe cache.
/// Subsets are bitmasks over the n sources; the empty set has utility 0 by
/// convention and never reaches the evaluator.
class UtilityFunction {
 public:
  using Evaluator = std::function<double(std::uint64_t mask)>;

  UtilityFunction(std::size_t n, Evaluator evaluator)
      : n_(n), evaluator_(std::move(evaluator)) {
    if (n_ == 0 || n_ > 63) {
      throw std::invalid_argument("utility function supports 1..63 sources");
    }
  }

  std::size_t n() const { return n_; }
  std::uint64_t full_mask() const { return (std::uint64_t{1} << n_) - 1; }

  double operator()(std::uint64_t mask) const {
    if (mask == 0) return 0.0;
    if (mask >> n_) throw std::out_of_range("subset mask out of range");
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = cache_.find(mask);
      if (it != cache_.end()) return it->second;
    }
    const double value = evaluator_(mask);
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = cache_.emplace(mask, value);
    return it->second;  // first insertion wins; duplicates see one value
  }

  /// Primes the cache with a known value (e.g. the full-coalition utility
  /// computed alongside its merge coefficients).
  void prime(std::uint64_t mask, double value) const {
    std::lock_guard<std::mutex> lock(mutex_);
    cache_.emplace(mask, value);
  }

  /// Evaluates the distinct uncached masks, optionally with a few workers.
  void prefetch(const std::vector<std::uint64_t>& masks, std::size_t jobs = 1) const {
    std::vector<std::uint64_t> todo;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      for (std::uint64_t m : masks) {
        if (m != 0 && cache_.find(m) == cache_.end()) todo.push_back(m);
      }
    }
    std::sort(todo.begin(), todo.end());
    todo.erase(std::unique(todo.begin(), todo.end()), todo.end());
    if (jobs <= 1 || todo.size() <= 1) {
      for (std::uint64_t m : todo) (*this)(m);
      return;
    }
    std::vector<std::future<void>> futures;
    std::size_t next = 0;
    std::mutex next_mutex;
    const std::size_t workers = std::min(jobs, todo.size());
    for (std::size_t w = 0; w < workers; ++w) {
      futures.push_back(std::async(std::launch::async, [&]() {
        for (;;) {
          std::uint64_t mask = 0;
          {
            std::lock_guard<std::mutex> lock(next_mutex);
            if (next == todo.size()) return;
            mask = todo[next++];
          }
          (*this)(mask);
        }
      }));
    }
    for (auto& f : futures) f.get();
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.size();
  }

 private:
  std::size_t n_;
  Evaluator evaluator_;
  mutable std::mutex mutex_;
  mutable std::map<std::uint64_t, double> cache_;
};

/// Exact Shapley values by subset enumeration:
///   s_i = sum_{S not containing i} |S|!(n-1-|S|)!/n! * (U(S+i) - U(S)).
/// 2^n evaluations; capped at n <= 12.
inline std::vector<double> exact_shapley(const UtilityFunction& u) {
  const std::size_t n = u.n();
  if (n > 12) {
    throw CapacityError("exact Shapley is capped at n = 12; use group testing");
  }
  std::vector<double> fact(n + 1, 1.0);
  for (std::size_t k = 1; k <= n; ++k) fact[k] = fact[k - 1] * static_cast<double>(k);
  std::vector<double> weight(n);  // weight[|S|]
  for (std::size_t s = 0; s < n; ++s) {
    weight[s] = fact[s] * fact[n - 1 - s] / fact[n];
  }
  std::vector<double> shapley(n, 0.0);
  const std::uint64_t full = u.full_mask();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    const std::uint64_t others = full ^ bit;
    // Enumerate subsets of `others` (including the empty set).
    std::uint64_t sub = 0;
    for (;;) {
      const auto size = static_cast<std::size_t>(std::popcount(sub));
      shapley[i] += weight[size] * (u(sub | bit) - u(sub));
      if (sub == others) break;
      sub = (sub - others) & others;
    }
  }
  return shapley;
}

/// Group-test size distribution: Z = 2 sum_{k=1}^{n-1} 1/k and
/// q_k = (1/Z)(1/k + 1/(n-k)).
struct SamplingDistribution {
  double z = 0.0;
  std::vector<double> q;  // q[k-1] = P(subset size = k), k = 1..n-1
};

inline SamplingDistribution sampling_distribution(std::size_t n) {
  if (n < 2) throw std::domain_error("sampling distribution needs n >= 2");
  SamplingDistribution d;
  double harmonic = 0.0;
  for (std::size_t k = 1; k <= n - 1; ++k) harmonic += 1.0 / static_cast<double>(k);
  d.z = 2.0 * harmonic;
  d.q.resize(n - 1);
  for (std::size_t k = 1; k <= n - 1; ++k) {
    d.q[k - 1] = (1.0 / d.z) * (1.0 / static_cast<double>(k) +
                                1.0 / static_cast<double>(n - k));
  }
  return d;
}

/// The (size, subset) draws of a group-testing run, pre-drawn so tests can
/// be evaluated in any order (or in parallel).
inline std::vector<std::uint64_t> draw_group_tests(std::size_t n, std::size_t tests,
                                                   Rng& rng) {
  const auto dist = sampling_distribution(n);
  std::vector<std::uint64_t> masks;
  masks.reserve(tests);
  for (std::size_t t = 0; t < tests; ++t) {
    const double uval = rng.uniform();
    std::size_t size = dist.q.size();  // falls through to n-1 on rounding
    double acc = 0.0;
    for (std::size_t k = 0; k < dist.q.size(); ++k) {
      acc += dist.q[k];
      if (uval < acc) {
        size = k + 1;
        break;
      }
    }
    // Uniform subset of the drawn size: partial Fisher-Yates.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::uint64_t mask = 0;
    for (std::size_t j = 0; j < size; ++j) {
      const std::size_t pick = j + rng.index(n - j);
      std::swap(idx[j], idx[pick]);
      mask |= std::uint64_t{1} << idx[j];
    }
    masks.push_back(mask);
  }
  return masks;
}

struct GroupTestResult {
  std::size_t n = 0;
  std::size_t tests = 0;
  double z = 0.0;
  std::vector<double> utilities;      // u_t, one per test
  std::vector<std::uint8_t> beta;     // T x n membership indicators
  std::vector<double> delta_u;        // n x n, antisymmetric
  double at(std::size_t i, std::size_t j) const { return delta_u[i * n + j]; }
};

/// Computes DeltaU_ij = (Z/T) sum_t u_t (beta_ti - beta_tj) for the given
/// pre-drawn subsets.
inline GroupTestResult group_test_with(const UtilityFunction& u,
                                       const std::vector<std::uint64_t>& masks) {
  if (masks.empty()) throw std::invalid_argument("at least one test is required");
  const std::size_t n = u.n();
  GroupTestResult r;
  r.n = n;
  r.tests = masks.size();
  r.z = sampling_distribution(n).z;
  r.beta.assign(r.tests * n, 0);
  r.utilities.resize(r.tests);
  for (std::size_t t = 0; t < r.tests; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      r.beta[t * n + i] = (masks[t] >> i) & 1u;
    }
    r.utilities[t] = u(masks[t]);
  }
  r.delta_u.assign(n * n, 0.0);
  const double scale = r.z / static_cast<double>(r.tests);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < r.tests; ++t) {
        acc += r.utilities[t] * (static_cast<double>(r.beta[t * n + i]) -
                                 static_cast<double>(r.beta[t * n + j]));
      }
      r.delta_u[i * n + j] = scale * acc;
      r.delta_u[j * n + i] = -(scale * acc);
    }
  }
  return r;
}

inline GroupTestResult group_test(const UtilityFunction& u, std::size_t tests,
                                  Rng& rng) {
  if (tests == 0) throw std::invalid_argument("at least one test is required");
  return group_test_with(u, draw_group_tests(u.n(), tests, rng));
}

struct FeasibilityResult {
  std::vector<double> estimates;
  double residual_max = 0.0;
  double tolerance = 0.0;  // epsilon / (2 sqrt(n))
  bool feasible = false;
};

/// Resolves the pairwise difference system into values:
///   s_i = U_total/n + (1/n) sum_j DeltaU_ij,
/// the least-squares point of |(s_i - s_j) - DeltaU_ij| that meets the sum
/// constraint exactly. Infeasibility w.r.t. epsilon/(2 sqrt n) is reported,
/// not thrown.
inline FeasibilityResult solve_feasibility(const std::vector<double>& delta_u,
                                           std::size_t n, double u_total,
                                           double epsilon) {
  if (delta_u.size() != n * n || n == 0) {
    throw std::invalid_argument("delta_u must be n x n");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(delta_u[i * n + j] + delta_u[j * n + i]) > 1e-12) {
        throw std::invalid_argument("delta_u must be antisymmetric");
      }
    }
  }
  FeasibilityResult r;
  r.estimates.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += delta_u[i * n + j];
    r.estimates[i] = u_total / static_cast<double>(n) + row / static_cast<double>(n);
  }
  r.tolerance = epsilon / (2.0 * std::sqrt(static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double res =
          std::abs((r.estimates[i] - r.estimates[j]) - delta_u[i * n + j]);
      r.residual_max = std::max(r.residual_max, res);
    }
  }
  r.feasible = r.residual_max <= r.tolerance;
  return r;
}

struct ShapleyReport {
  std::size_t n = 0;
  std::size_t tests = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  std::vector<double> estimates;
  std::optional<std::vector<double>> exact;
  std::vector<double> delta_u;  // n x n
  double residual_max = 0.0;
  bool feasible = false;
};

/// Group-testing Shapley estimation: T randomized subset probes, then the
/// feasibility solve. Efficiency (sum of estimates = U(full)) holds by
/// construction of the solve.
inline ShapleyReport estimate_shapley(const UtilityFunction& u, std::size_t tests,
                                      double epsilon, double delta, Rng& rng,
                                      bool include_exact = false,
                                      std::size_t jobs = 1) {
  if (tests == 0) throw std::invalid_argument("at least one test is required");
  if (u.n() < 2) throw std::domain_error("estimation needs n >= 2");
  const auto masks = draw_group_tests(u.n(), tests, rng);
  u.prefetch(masks, jobs);
  const auto gt = group_test_with(u, masks);
  const double u_total = u(u.full_mask());
  auto fr = solve_feasibility(gt.delta_u, u.n(), u_total, epsilon);
  ShapleyReport report;
  report.n = u.n();
  report.tests = tests;
  report.epsilon = epsilon;
  report.delta = delta;
  report.estimates = std::move(fr.estimates);
  report.delta_u = gt.delta_u;
  report.residual_max = fr.residual_max;
  report.feasible = fr.feasible;
  if (include_exact && u.n() <= 12) report.exact = exact_shapley(u);
  return report;
}

/// Number of tests guaranteeing an (epsilon, delta)-approximation:
///   T >= 8 log(n(n-1)/(2 delta)) / ((1 - q_tot^2) h(eps / (Z sqrt n (1 - q_tot^2))))
/// with h(v) = (1+v)log(1+v) - v and
///   q_tot = ((n-2)/n) q_1 + sum_{k=2}^{n-1} q_k [1 + 2k(n-k)/(n(n-1))].
/// The formula degenerates (h argument <= 0) for some n; that is a domain
/// error rather than a numeric answer.
inline std::uint64_t sample_bound(std::size_t n, double epsilon, double delta) {
  if (n < 2) throw std::domain_error("sample bound needs n >= 2");
  if (!(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0)) {
    throw std::domain_error("epsilon and delta must lie in (0, 1)");
  }
  const auto dist = sampling_distribution(n);
  const double nd = static_cast<double>(n);
  double q_tot = (nd - 2.0) / nd * dist.q[0];
  for (std::size_t k = 2; k <= n - 1; ++k) {
    const double kd = static_cast<double>(k);
    q_tot += dist.q[k - 1] * (1.0 + 2.0 * kd * (nd - kd) / (nd * (nd - 1.0)));
  }
  const double shrink = 1.0 - q_tot * q_tot;
  const double harg = epsilon / (dist.z * std::sqrt(nd) * shrink);
  if (!(harg > 0.0) || !std::isfinite(harg)) {
    throw std::domain_error("sample bound degenerates for this n (h argument <= 0)");
  }
  const double h = (1.0 + harg) * std::log1p(harg) - harg;
  const double bound = 8.0 * std::log(nd * (nd - 1.0) / (2.0 * delta)) / (shrink * h);
  if (!std::isfinite(bound) || bound < 0.0) {
    throw std::domain_error("sample bound degenerates for this n");
  }
  return static_cast<std::uint64_t>(std::ceil(bound));
}

/// Utility of a source subset: merge the sub-bank with SOMA on the validation
/// split, score on the test split, return 1 - metric. The SOMA seed is
/// derived from the subset so utilities are deterministic; results are cached
/// by the UtilityFunction wrapper.
inline UtilityFunction make_model_utility(const SourceBank& bank,
                                          const Dataset& valset,
                                          const Dataset& testset,
                                          const SomaConfig& soma_cfg,
                                          const FitnessFn& metric) {
  const std::size_t n = bank.size();
  // Captured by value so the utility owns everything it needs.
  auto evaluator = [sources = bank.models(), valset, testset, soma_cfg, metric,
                    n](std::uint64_t mask) {
    std::vector<ModelParams> members;
    for (std::size_t i = 0; i < n; ++i) {
      if ((mask >> i) & 1u) members.push_back(sources[i]);
    }
    SourceBank sub(std::move(members));
    SomaConfig cfg = soma_cfg;
    cfg.seed = derive_seed(soma_cfg.seed, tag_hash("subset"), mask);
    const auto merged = soma_run(sub, valset, cfg, metric);
    return 1.0 - metric(merged.model, testset);
  };
  return UtilityFunction(n, std::move(evaluator));
}

}  // namespace fedmerge
