#include "cellularity/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cellularity/parallel.hpp"
#include "json.hpp"

namespace cellularity::gbt {

namespace {

constexpr std::string_view kModelMagic = "CGMODEL1";
constexpr int kModelFormatVersion = 1;
constexpr double kRelativeGainFloor = 1e-10;
constexpr double kTieTolerance = 1e-10;

// Splits of one feature column are evaluated on the samples of one leaf.
struct FeatureSplit {
  int feature = -1;
  SplitCandidate split;
};

struct OpenLeaf {
  int node = 0;
  int depth = 0;
  std::vector<std::uint32_t> ids;  // ascending
  double sum = 0.0;                // residual sum, accumulated in id order
  std::optional<FeatureSplit> best;
};

class TreeGrower {
 public:
  TreeGrower(const FeatureMatrix& x, const std::vector<std::vector<std::uint32_t>>& order,
             const GbtParams& params, int threads)
      : x_(x), order_(order), params_(params), threads_(threads), leaf_of_(x.rows(), 0) {}

  // Grows one tree on `residuals`. Returns the tree and writes each sample's
  // leaf value into `outputs`.
  RegressionTree grow(std::span<const double> residuals, std::vector<double>& outputs) {
    residuals_ = residuals;
    std::fill(leaf_of_.begin(), leaf_of_.end(), 0);
    RegressionTree tree;
    tree.nodes.emplace_back();

    std::vector<OpenLeaf> open;
    OpenLeaf root;
    root.ids.resize(x_.rows());
    std::iota(root.ids.begin(), root.ids.end(), 0u);
    root.sum = sum_of(root.ids);
    evaluate(root);
    open.push_back(std::move(root));

    int leaves = 1;
    while (leaves < params_.max_leaves) {
      // Open leaves stay ordered by node index, so the first wins ties.
      std::size_t chosen = open.size();
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (!open[i].best) continue;
        if (chosen == open.size() || clearly_better(open[i].best->split.gain,
                                                    open[chosen].best->split.gain)) {
          chosen = i;
        }
      }
      if (chosen == open.size()) break;

      OpenLeaf parent = std::move(open[chosen]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(chosen));
      const FeatureSplit& s = *parent.best;

      OpenLeaf left, right;
      left.node = static_cast<int>(tree.nodes.size());
      right.node = left.node + 1;
      left.depth = right.depth = parent.depth + 1;
      for (std::uint32_t id : parent.ids) {
        auto& side = x_(id, static_cast<std::size_t>(s.feature)) <= s.split.threshold ? left : right;
        side.ids.push_back(id);
        leaf_of_[id] = side.node;
      }
      left.sum = sum_of(left.ids);
      right.sum = sum_of(right.ids);

      TreeNode& node = tree.nodes[static_cast<std::size_t>(parent.node)];
      node.feature = s.feature;
      node.threshold = s.split.threshold;
      node.gain = s.split.gain;
      node.left = left.node;
      node.right = right.node;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();

      evaluate(left);
      evaluate(right);
      open.push_back(std::move(left));
      open.push_back(std::move(right));
      ++leaves;
    }

    for (const OpenLeaf& leaf : open) {
      const double value = leaf.sum / static_cast<double>(leaf.ids.size());
      tree.nodes[static_cast<std::size_t>(leaf.node)].value = value;
      for (std::uint32_t id : leaf.ids) outputs[id] = value;
    }
    return tree;
  }

 private:
  double sum_of(const std::vector<std::uint32_t>& ids) const {
    double s = 0.0;
    for (std::uint32_t id : ids) s += residuals_[id];
    return s;
  }

  void evaluate(OpenLeaf& leaf) {
    leaf.best.reset();
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    if (leaf.depth >= params_.max_depth || leaf.ids.size() < 2 * min_leaf) return;

    std::vector<std::optional<SplitCandidate>> per_feature(x_.cols());
    parallel_for(x_.cols(), threads_, [&](std::size_t f) {
      std::vector<double> values;
      std::vector<double> res;
      values.reserve(leaf.ids.size());
      res.reserve(leaf.ids.size());
      for (std::uint32_t id : order_[f]) {
        if (leaf_of_[id] != leaf.node) continue;
        values.push_back(x_(id, f));
        res.push_back(residuals_[id]);
      }
      per_feature[f] = best_split(values, res, min_leaf, leaf.sum);
    });

    for (std::size_t f = 0; f < per_feature.size(); ++f) {
      if (!per_feature[f]) continue;
      if (!leaf.best || clearly_better(per_feature[f]->gain, leaf.best->split.gain)) {
        leaf.best = FeatureSplit{static_cast<int>(f), *per_feature[f]};
      }
    }
  }

  const FeatureMatrix& x_;
  const std::vector<std::vector<std::uint32_t>>& order_;
  const GbtParams& params_;
  int threads_;
  std::vector<int> leaf_of_;
  std::span<const double> residuals_;
};

double mean_squared(std::span<const double> targets, std::span<const double> scores) {
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = targets[i] - scores[i];
    s += d * d;
  }
  return s / static_cast<double>(targets.size());
}

int subtree_depth(const RegressionTree& tree, int node) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return 0;
  return 1 + std::max(subtree_depth(tree, n.left), subtree_depth(tree, n.right));
}

}  // namespace

void GbtParams::validate() const {
  if (n_rounds < 1 || max_depth < 1 || max_leaves < 1 || min_samples_leaf < 1) {
    throw std::invalid_argument("GBT counts must all be >= 1");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be > 0");
  }
}

double RegressionTree::evaluate(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const TreeNode& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                        : n.right);
  }
  return nodes[i].value;
}

int RegressionTree::leaf_count() const {
  return static_cast<int>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

int RegressionTree::depth() const { return nodes.empty() ? 0 : subtree_depth(*this, 0); }

double GbtModel::predict_raw(std::span<const double> x) const {
  if (x.size() != n_features) {
    throw std::invalid_argument("feature width " + std::to_string(x.size()) +
                                " does not match the model's " + std::to_string(n_features));
  }
  double score = base_score;
  for (const auto& tree : trees) score += params.learning_rate * tree.evaluate(x);
  return score;
}

double GbtModel::predict(std::span<const double> x) const {
  return std::clamp(predict_raw(x), 0.0, 1.0);
}

double minimum_gain(double sum_squared_residuals) {
  return kRelativeGainFloor * sum_squared_residuals;
}

bool clearly_better(double candidate, double incumbent) {
  return candidate > incumbent + kTieTolerance * std::max(std::abs(candidate), std::abs(incumbent));
}

double refined_mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean of an empty set");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double correction = 0.0;
  for (double v : values) correction += v - mean;
  return mean + correction / n;
}

std::optional<SplitCandidate> best_split(std::span<const double> values,
                                         std::span<const double> residuals,
                                         std::size_t min_samples_leaf,
                                         std::optional<double> parent_sum) {
  const std::size_t n = values.size();
  if (residuals.size() != n) throw std::invalid_argument("values and residuals differ in length");
  const std::size_t min_leaf = std::max<std::size_t>(min_samples_leaf, 1);
  if (n < 2 * min_leaf) return std::nullopt;

  double total = 0.0;
  double sum_sq = 0.0;
  for (double r : residuals) {
    total += r;
    sum_sq += r * r;
  }
  if (parent_sum) total = *parent_sum;
  const double parent_term = total * total / static_cast<double>(n);
  const double floor = minimum_gain(sum_sq);

  std::optional<SplitCandidate> best;
  double left_sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    left_sum += residuals[i];
    if (values[i] == values[i + 1]) continue;
    const std::size_t n_left = i + 1;
    const std::size_t n_right = n - n_left;
    if (n_left < min_leaf || n_right < min_leaf) continue;
    const double right_sum = total - left_sum;
    const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                        right_sum * right_sum / static_cast<double>(n_right) - parent_term;
    if (!(gain > floor)) continue;
    if (best && !clearly_better(gain, best->gain)) continue;

    const double lo = values[i];
    const double hi = values[i + 1];
    double threshold = lo + (hi - lo) / 2.0;
    if (!(threshold < hi)) threshold = lo;
    best = SplitCandidate{threshold, gain, n_left};
  }
  return best;
}

GbtModel fit(const FeatureMatrix& features, std::span<const double> targets,
             const GbtParams& params, FitReport* report, int threads) {
  params.validate();
  const std::size_t n = features.rows();
  if (n == 0 || features.cols() == 0) throw std::invalid_argument("cannot fit on an empty dataset");
  if (targets.size() != n) {
    throw std::invalid_argument(std::to_string(targets.size()) + " targets for " +
                                std::to_string(n) + " feature rows");
  }
  if (n < 2 * static_cast<std::size_t>(params.min_samples_leaf)) {
    throw std::invalid_argument("need at least 2 * min_samples_leaf samples, got " +
                                std::to_string(n));
  }
  for (double t : targets) {
    if (!std::isfinite(t)) throw std::invalid_argument("targets must be finite");
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (double v : features.row(r)) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("non-finite feature value in row " + std::to_string(r));
      }
    }
  }

  std::vector<std::vector<std::uint32_t>> order(features.cols());
  for (std::size_t f = 0; f < features.cols(); ++f) {
    auto& o = order[f];
    o.resize(n);
    std::iota(o.begin(), o.end(), 0u);
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
      return features(a, f) < features(b, f);
    });
  }

  GbtModel model;
  model.params = params;
  model.n_features = features.cols();
  model.feature_schema =
      features.cols() == kFeatureCount ? std::string(kFeatureSchemaVersion) : std::string("custom");
  model.base_score = refined_mean(targets);
  model.feature_gain.assign(features.cols(), 0.0);

  std::vector<double> scores(n, model.base_score);
  std::vector<double> residuals(n);
  std::vector<double> outputs(n);
  FitReport local;
  local.train_mse.push_back(mean_squared(targets, scores));

  TreeGrower grower(features, order, params, threads);
  for (int round = 0; round < params.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) residuals[i] = targets[i] - scores[i];
    RegressionTree tree = grower.grow(residuals, outputs);
    if (tree.nodes.size() == 1) break;

    for (const TreeNode& node : tree.nodes) {
      if (node.is_leaf()) continue;
      model.feature_gain[static_cast<std::size_t>(node.feature)] += node.gain;
      local.total_gain += node.gain;
    }
    for (std::size_t i = 0; i < n; ++i) scores[i] += params.learning_rate * outputs[i];
    model.trees.push_back(std::move(tree));
    local.train_mse.push_back(mean_squared(targets, scores));
  }

  if (report) {
    local.final_scores = std::move(scores);
    *report = std::move(local);
  }
  return model;
}

std::vector<std::pair<std::size_t, double>> feature_importance(const GbtModel& model) {
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(model.feature_gain.size());
  for (std::size_t f = 0; f < model.feature_gain.size(); ++f) out.emplace_back(f, model.feature_gain[f]);
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::vector<int> group_folds(const std::vector<std::string>& ids, int k, char delimiter) {
  std::vector<std::string> keys;
  keys.reserve(ids.size());
  for (const auto& id : ids) keys.push_back(id.substr(0, id.find(delimiter)));
  std::vector<std::string> groups = keys;
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  if (k < 2 || static_cast<std::size_t>(k) > groups.size()) {
    throw std::invalid_argument("cross-validation needs 2 <= folds <= " +
                                std::to_string(groups.size()) + " groups, got " +
                                std::to_string(k));
  }
  std::vector<int> folds;
  folds.reserve(ids.size());
  for (const auto& key : keys) {
    const auto g = std::lower_bound(groups.begin(), groups.end(), key) - groups.begin();
    folds.push_back(static_cast<int>(g % k));
  }
  return folds;
}

CrossValidation cross_validate(const FeatureMatrix& features, std::span<const double> targets,
                               const std::vector<int>& folds, const GbtParams& params,
                               int threads) {
  if (folds.size() != features.rows() || targets.size() != features.rows()) {
    throw std::invalid_argument("fold, target and feature row counts differ");
  }
  const int k = folds.empty() ? 0 : *std::max_element(folds.begin(), folds.end()) + 1;
  CrossValidation cv;
  for (int f = 0; f < k; ++f) {
    FeatureMatrix train(0, features.cols());
    std::vector<double> y;
    std::vector<std::size_t> held_out;
    for (std::size_t r = 0; r < features.rows(); ++r) {
      if (folds[r] == f) {
        held_out.push_back(r);
      } else {
        train.append_row(features.row(r));
        y.push_back(targets[r]);
      }
    }
    if (held_out.empty()) throw std::invalid_argument("fold " + std::to_string(f) + " is empty");
    const GbtModel model = fit(train, y, params, nullptr, threads);
    double sq = 0.0;
    for (std::size_t r : held_out) {
      const double d = model.predict(features.row(r)) - targets[r];
      sq += d * d;
    }
    cv.folds.push_back({train.rows(), held_out.size(), sq / static_cast<double>(held_out.size())});
    cv.mean_mse += cv.folds.back().validation_mse;
  }
  if (k > 0) cv.mean_mse /= k;
  return cv;
}

std::string model_to_json(const GbtModel& model) {
  nlohmann::ordered_json doc;
  doc["magic"] = kModelMagic;
  doc["format_version"] = kModelFormatVersion;
  doc["feature_schema"] = model.feature_schema;
  doc["n_features"] = model.n_features;
  doc["params"] = {{"n_rounds", model.params.n_rounds},
                   {"learning_rate", model.params.learning_rate},
                   {"max_depth", model.params.max_depth},
                   {"max_leaves", model.params.max_leaves},
                   {"min_samples_leaf", model.params.min_samples_leaf},
                   {"seed", model.params.seed}};
  doc["base_score"] = model.base_score;
  doc["feature_gain"] = model.feature_gain;
  auto trees = nlohmann::ordered_json::array();
  for (const auto& tree : model.trees) {
    auto nodes = nlohmann::ordered_json::array();
    for (const auto& n : tree.nodes) {
      nlohmann::ordered_json node;
      if (n.is_leaf()) {
        node["kind"] = "leaf";
        node["value"] = n.value;
      } else {
        node["kind"] = "split";
        node["feature"] = n.feature;
        node["threshold"] = n.threshold;
        node["left"] = n.left;
        node["right"] = n.right;
        node["gain"] = n.gain;
      }
      nodes.push_back(std::move(node));
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  doc["trees"] = std::move(trees);
  return doc.dump(1) + "\n";
}

GbtModel model_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }
  if (!doc.is_object() || doc.value("magic", "") != kModelMagic) {
    throw FormatError("not a model file (bad magic)");
  }
  if (doc.value("format_version", -1) != kModelFormatVersion) {
    throw FormatError("unsupported model format version");
  }
  GbtModel m;
  try {
    m.feature_schema = doc.at("feature_schema").get<std::string>();
    m.n_features = doc.at("n_features").get<std::size_t>();
    const auto& p = doc.at("params");
    m.params.n_rounds = p.at("n_rounds").get<int>();
    m.params.learning_rate = p.at("learning_rate").get<double>();
    m.params.max_depth = p.at("max_depth").get<int>();
    m.params.max_leaves = p.at("max_leaves").get<int>();
    m.params.min_samples_leaf = p.at("min_samples_leaf").get<int>();
    m.params.seed = p.at("seed").get<std::uint64_t>();
    m.base_score = doc.at("base_score").get<double>();
    m.feature_gain = doc.at("feature_gain").get<std::vector<double>>();
    for (const auto& t : doc.at("trees")) {
      RegressionTree tree;
      for (const auto& jn : t.at("nodes")) {
        TreeNode n;
        const auto kind = jn.at("kind").get<std::string>();
        if (kind == "leaf") {
          n.value = jn.at("value").get<double>();
        } else if (kind == "split") {
          n.feature = jn.at("feature").get<int>();
          n.threshold = jn.at("threshold").get<double>();
          n.left = jn.at("left").get<int>();
          n.right = jn.at("right").get<int>();
          n.gain = jn.at("gain").get<double>();
        } else {
          throw FormatError("unknown node kind \"" + kind + "\"");
        }
        tree.nodes.push_back(n);
      }
      m.trees.push_back(std::move(tree));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model file: ") + e.what());
  }

  m.params.validate();
  if (m.feature_gain.size() != m.n_features) throw FormatError("feature_gain length mismatch");
  for (const auto& tree : m.trees) {
    const auto size = static_cast<int>(tree.nodes.size());
    if (size == 0) throw FormatError("empty tree");
    for (int i = 0; i < size; ++i) {
      const TreeNode& n = tree.nodes[static_cast<std::size_t>(i)];
      if (n.is_leaf()) continue;
      // Children always follow their parent, which also rules out cycles.
      if (n.feature >= static_cast<int>(m.n_features) || n.left <= i || n.right <= i ||
          n.left >= size || n.right >= size) {
        throw FormatError("tree node references out of range");
      }
    }
  }
  return m;
}

void save_model(const GbtModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << model_to_json(model);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

GbtModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return model_from_json(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cellularity::gbt
