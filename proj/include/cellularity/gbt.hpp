#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cellularity/feature_table.hpp"

namespace cellularity::gbt {

struct GbtParams {
  int n_rounds = 600;
  double learning_rate = 0.01;
  int max_depth = 5;
  int max_leaves = 8;
  int min_samples_leaf = 5;
  // Recorded with the model. Training uses no subsampling, so it does not
  // influence the result.
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GbtParams&, const GbtParams&) = default;
};

/// Internal nodes have feature >= 0 and route x[feature] <= threshold to the
/// left child. Leaves have feature == -1 and carry `value`.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double gain = 0.0;

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double evaluate(std::span<const double> x) const;
  int leaf_count() const;
  int depth() const;
  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct GbtModel {
  GbtParams params;
  std::size_t n_features = 0;
  std::string feature_schema;
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
  std::vector<double> feature_gain;

  /// base_score plus learning_rate times each tree output, accumulated tree by
  /// tree in the same order the trainer updates its scores.
  double predict_raw(std::span<const double> x) const;
  /// predict_raw clamped to [0,1].
  double predict(std::span<const double> x) const;

  friend bool operator==(const GbtModel&, const GbtModel&) = default;
};

struct SplitCandidate {
  double threshold = 0.0;
  double gain = 0.0;
  std::size_t left_count = 0;
};

/// Exact greedy search over one feature column. `values` must be sorted
/// ascending with `residuals` aligned to them. Candidates are midpoints
/// between consecutive distinct values leaving at least `min_samples_leaf`
/// samples on each side; the gain is S_L^2/n_L + S_R^2/n_R - S_P^2/n_P.
/// Returns nullopt unless some split clears the minimum gain. The earliest
/// (lowest) threshold wins ties.
std::optional<SplitCandidate> best_split(std::span<const double> values,
                                         std::span<const double> residuals,
                                         std::size_t min_samples_leaf,
                                         std::optional<double> parent_sum = std::nullopt);

/// Gain a split must exceed to count as positive, given the leaf's sum of
/// squared residuals. Filters out rounding noise on constant residuals.
double minimum_gain(double sum_squared_residuals);

/// True when `candidate` beats `incumbent` by more than rounding noise.
bool clearly_better(double candidate, double incumbent);

/// Arithmetic mean with one refinement pass; exact for constant inputs.
double refined_mean(std::span<const double> values);

struct FitReport {
  std::vector<double> train_mse;     // after each accepted round; [0] is base_score only
  std::vector<double> final_scores;  // trainer's unclamped scores per sample
  double total_gain = 0.0;
};

/// L2 gradient boosting with leaf-wise growth. Each round fits one tree to
/// the current residuals, splitting the leaf with the largest gain until
/// max_leaves, max_depth or no positive gain. Boosting stops early if the
/// root itself has no positive split.
GbtModel fit(const FeatureMatrix& features, std::span<const double> targets,
             const GbtParams& params, FitReport* report = nullptr, int threads = 1);

/// (feature index, total gain) sorted by descending gain, then index.
std::vector<std::pair<std::size_t, double>> feature_importance(const GbtModel& model);

/// Fold (0..k-1) of each id for grouped k-fold cross-validation. Ids sharing
/// the prefix before the first `delimiter` form one group (an id without it
/// is its own group); sorted distinct groups are dealt to folds round-robin.
/// Throws std::invalid_argument unless 2 <= k <= number of groups.
std::vector<int> group_folds(const std::vector<std::string>& ids, int k, char delimiter = '_');

struct FoldResult {
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  double validation_mse = 0.0;  // of clamped predictions
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  double mean_mse = 0.0;  // unweighted mean over folds
};

/// Fits one model per fold on the other folds and scores the held-out rows.
CrossValidation cross_validate(const FeatureMatrix& features, std::span<const double> targets,
                               const std::vector<int>& folds, const GbtParams& params,
                               int threads = 1);

void save_model(const GbtModel& model, const std::filesystem::path& path);
GbtModel load_model(const std::filesystem::path& path);
std::string model_to_json(const GbtModel& model);
GbtModel model_from_json(const std::string& text);

}  // namespace cellularity::gbt
