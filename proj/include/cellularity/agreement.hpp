#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cellularity::agreement {

struct ScorePair {
  double predicted = 0.0;
  double reference = 0.0;
};

/// Paired (predicted, reference) cellularity scores, both in [0,1].
struct ScorePairSet {
  std::vector<ScorePair> pairs;
  std::vector<std::string> ids;  // optional; empty or one per pair

  std::size_t size() const { return pairs.size(); }
  /// Throws std::invalid_argument when empty or any score is outside [0,1].
  void validate() const;
};

/// Raised by a metric that is undefined on a particular sample. Bootstrap
/// resampling redraws when it sees one.
class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

double mse(const ScorePairSet& s);

/// Coarse cellularity category: 1 for [0, 0.25], 2 for (0.25, 0.5],
/// 3 for (0.5, 0.75], 4 for (0.75, 1].
int bin4(double score);

/// Unweighted Cohen's kappa between two label sequences. Defined as 1 when
/// chance agreement is 1 (both raters constant on the same label).
double cohens_kappa(std::span<const int> a, std::span<const int> b);

/// Kappa after binning both columns with bin4.
double kappa4(const ScorePairSet& s);

/// ICC(2,1): two-way random effects, absolute agreement, single rater, on the
/// n x 2 matrix of (predicted, reference). 1 when every rating is identical.
double icc21(const ScorePairSet& s);

using Metric = std::function<double(const ScorePairSet&)>;

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Percentile bootstrap: resample pairs with replacement `n_boot` times and
/// take the 2.5% and 97.5% quantiles (linear interpolation between order
/// statistics). Replicate b draws from its own generator seeded from
/// (seed, b), so replicates can run in any order or thread count. A replicate
/// whose metric throws MetricUndefined is redrawn; more than 10 * n_boot
/// draws in total is an error.
Interval bootstrap_ci(const Metric& metric, const ScorePairSet& s, int n_boot,
                      std::uint64_t seed, int threads = 1);

/// Linear-interpolation quantile (type 7) of already sorted values.
double sorted_quantile(std::span<const double> sorted, double q);

/// Stateless 64-bit mixer used to derive per-replicate and per-patch seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cellularity::agreement
