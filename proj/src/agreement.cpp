#include "cellularity/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "cellularity/parallel.hpp"

namespace cellularity::agreement {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Index in [0, n) from one 64-bit draw (multiply-shift).
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  const unsigned __int128 wide = static_cast<unsigned __int128>(rng()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

}  // namespace

void ScorePairSet::validate() const {
  if (pairs.empty()) throw std::invalid_argument("score set is empty");
  if (!ids.empty() && ids.size() != pairs.size()) {
    throw std::invalid_argument("score set ids and pairs differ in length");
  }
  for (const auto& p : pairs) {
    if (!(p.predicted >= 0.0 && p.predicted <= 1.0 && p.reference >= 0.0 && p.reference <= 1.0)) {
      throw std::invalid_argument("score outside [0,1]");
    }
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ull));
}

double mse(const ScorePairSet& s) {
  s.validate();
  double sum = 0.0;
  for (const auto& p : s.pairs) {
    const double d = p.predicted - p.reference;
    sum += d * d;
  }
  return sum / static_cast<double>(s.size());
}

int bin4(double score) {
  if (!(score >= 0.0 && score <= 1.0)) {
    throw std::invalid_argument("cellularity score outside [0,1]: " + std::to_string(score));
  }
  if (score <= 0.25) return 1;
  if (score <= 0.5) return 2;
  if (score <= 0.75) return 3;
  return 4;
}

double cohens_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("kappa: sequences differ in length");
  if (a.size() < 2) throw std::invalid_argument("kappa needs at least 2 ratings");
  const double n = static_cast<double>(a.size());
  std::map<int, std::pair<double, double>> marginals;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    marginals[a[i]].first += 1.0;
    marginals[b[i]].second += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  const double observed = agree / n;
  double chance = 0.0;
  for (const auto& [label, counts] : marginals) chance += (counts.first / n) * (counts.second / n);
  if (chance >= 1.0) return 1.0;
  return (observed - chance) / (1.0 - chance);
}

double kappa4(const ScorePairSet& s) {
  s.validate();
  std::vector<int> a, b;
  a.reserve(s.size());
  b.reserve(s.size());
  for (const auto& p : s.pairs) {
    a.push_back(bin4(p.predicted));
    b.push_back(bin4(p.reference));
  }
  return cohens_kappa(a, b);
}

double icc21(const ScorePairSet& s) {
  s.validate();
  const std::size_t n = s.size();
  if (n < 3) throw std::invalid_argument("ICC needs at least 3 pairs");

  const double first = s.pairs.front().predicted;
  const bool constant = std::all_of(s.pairs.begin(), s.pairs.end(), [&](const ScorePair& p) {
    return p.predicted == first && p.reference == first;
  });
  if (constant) return 1.0;

  // With two raters the two-way ANOVA splits into per-subject sums and
  // differences: rows vary through the sums, columns and error through the
  // differences.
  const double nn = static_cast<double>(n);
  double sum_mean = 0.0;
  double diff_mean = 0.0;
  for (const auto& p : s.pairs) {
    sum_mean += p.predicted + p.reference;
    diff_mean += p.predicted - p.reference;
  }
  sum_mean /= nn;
  diff_mean /= nn;
  double ss_rows = 0.0;
  double ss_error = 0.0;
  for (const auto& p : s.pairs) {
    const double u = p.predicted + p.reference - sum_mean;
    const double v = p.predicted - p.reference - diff_mean;
    ss_rows += u * u;
    ss_error += v * v;
  }
  ss_rows /= 2.0;
  ss_error /= 2.0;
  const double ss_cols = nn * diff_mean * diff_mean / 2.0;

  const double ms_rows = ss_rows / (nn - 1.0);
  const double ms_cols = ss_cols;  // k - 1 = 1
  const double ms_error = ss_error / (nn - 1.0);
  const double denom = ms_rows + ms_error + 2.0 * (ms_cols - ms_error) / nn;
  if (!(denom > 0.0)) throw MetricUndefined("ICC undefined: zero variance");
  return (ms_rows - ms_error) / denom;
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(const Metric& metric, const ScorePairSet& s, int n_boot,
                      std::uint64_t seed, int threads) {
  s.validate();
  if (n_boot < 100) throw std::invalid_argument("bootstrap needs n_boot >= 100");
  const auto replicates = static_cast<std::size_t>(n_boot);
  const std::size_t max_draws = 10 * replicates;
  const std::size_t n = s.size();

  std::vector<double> stats(replicates);
  std::vector<std::size_t> draws(replicates, 0);
  parallel_for(replicates, threads, [&](std::size_t b) {
    std::mt19937_64 rng(mix_seed(seed, b));
    ScorePairSet sample;
    sample.pairs.resize(n);
    while (draws[b] < max_draws) {
      ++draws[b];
      for (auto& p : sample.pairs) p = s.pairs[draw_index(rng, n)];
      try {
        stats[b] = metric(sample);
        return;
      } catch (const MetricUndefined&) {
      }
    }
  });

  std::size_t total = 0;
  for (std::size_t d : draws) total += d;
  if (total > max_draws) {
    throw std::runtime_error("bootstrap: metric undefined on too many resamples");
  }
  std::sort(stats.begin(), stats.end());
  return {sorted_quantile(stats, 0.025), sorted_quantile(stats, 0.975)};
}

}  // namespace cellularity::agreement
