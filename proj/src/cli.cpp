#include "cellularity/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cellularity/agreement.hpp"
#include "cellularity/annotations.hpp"
#include "cellularity/csv.hpp"
#include "cellularity/feature_table.hpp"
#include "cellularity/features.hpp"
#include "cellularity/gbt.hpp"
#include "cellularity/loss.hpp"
#include "cellularity/parallel.hpp"
#include "cellularity/synthdata.hpp"
#include "json.hpp"

namespace cellularity::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
};

// Thrown for failures that should exit with status 1 and a one-line message.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json artifact_versions() {
  return {{"tool", kToolVersion},
          {"pmap", "PMAP1"},
          {"feature_schema", std::string(kFeatureSchemaVersion)},
          {"model", "CGMODEL1"}};
}

fs::path output_dir_of(const fs::path& file) {
  const auto parent = file.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

// Paths are recorded relative to the manifest's directory so a run is
// byte-identical wherever its outputs live.
std::string rel(const std::string& path, const fs::path& dir) {
  if (path.empty()) return path;
  return fs::absolute(path).lexically_normal().lexically_relative(
      fs::absolute(dir).lexically_normal()).generic_string();
}

// Records the resolved configuration of one subcommand under "runs" in
// <dir>/manifest.json, keeping whatever else the manifest already holds.
// --threads and --quiet do not affect results and are not recorded.
void record_run(const fs::path& dir, const std::string& command, json config) {
  fs::create_directories(dir);
  const fs::path path = dir / "manifest.json";
  json manifest = json::object();
  if (std::ifstream in(path); in) {
    try {
      manifest = json::parse(in);
    } catch (const json::exception&) {
      manifest = json::object();
    }
    if (!manifest.is_object()) manifest = json::object();
  }
  manifest["versions"] = artifact_versions();
  manifest["runs"][command] = std::move(config);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CommandError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
}

void ensure_parent(const fs::path& file) {
  const auto parent = file.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// ---------------------------------------------------------------- synth-masks

struct SynthMasksArgs {
  std::string annotations;
  int width = 0;
  int height = 0;
  int diameter = kDefaultNucleusDiameter;
  std::string out_dir;
};

void cmd_synth_masks(const SynthMasksArgs& a, const Globals& g, std::ostream& err) {
  const auto sets = parse_annotations(a.annotations, Extent{a.width, a.height});
  fs::create_directories(a.out_dir);
  parallel_for(sets.size(), g.threads, [&](std::size_t i) {
    const PixelMap masks = synthesize_masks(sets[i], a.width, a.height, a.diameter);
    save_pmap(masks, fs::path(a.out_dir) / (sets[i].patch_id + ".pmap"));
  });
  record_run(a.out_dir, "synth-masks",
             {{"annotations", rel(a.annotations, a.out_dir)},
              {"width", a.width},
              {"height", a.height},
              {"diameter", a.diameter},
              {"out_dir", "."},
              {"seed", g.seed},
              {"patches", sets.size()}});
  if (!g.quiet) err << "wrote " << sets.size() << " mask files to " << a.out_dir << '\n';
}

// -------------------------------------------------------------------- extract

struct ExtractArgs {
  std::string maps_dir;
  std::string targets;
  std::string target_column = "true_cellularity";
  std::string out;
};

void cmd_extract(const ExtractArgs& a, const Globals& g, std::ostream& err) {
  std::vector<fs::path> files;
  if (!fs::is_directory(a.maps_dir)) throw CommandError("not a directory: " + a.maps_dir);
  for (const auto& entry : fs::directory_iterator(a.maps_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pmap") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<FeatureVector81> rows(files.size());
  std::vector<std::pair<int, int>> dims(files.size());
  parallel_for(files.size(), g.threads, [&](std::size_t i) {
    const PixelMap map = load_pmap(files[i]);
    dims[i] = {map.width(), map.height()};
    rows[i] = extract_features(map);
  });
  for (std::size_t i = 1; i < dims.size(); ++i) {
    if (dims[i] != dims[0]) {
      throw CommandError("mixed patch dimensions: " + files[0].filename().string() + " is " +
                         std::to_string(dims[0].first) + "x" + std::to_string(dims[0].second) +
                         ", " + files[i].filename().string() + " is " +
                         std::to_string(dims[i].first) + "x" + std::to_string(dims[i].second));
    }
  }

  FeatureTable table;
  table.features = FeatureMatrix(0, kFeatureCount);
  for (std::size_t i = 0; i < files.size(); ++i) {
    table.ids.push_back(files[i].stem().string());
    table.features.append_row(rows[i].values);
  }
  if (!a.targets.empty()) {
    std::map<std::string, double> by_id;
    for (const auto& [id, v] : read_id_value_csv(a.targets, a.target_column)) by_id[id] = v;
    table.targets.emplace();
    for (const auto& id : table.ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw CommandError("no target for patch " + id + " in " + a.targets);
      table.targets->push_back(it->second);
    }
  }

  ensure_parent(a.out);
  write_feature_csv(table, a.out);
  write_feature_schema(schema_sidecar_path(a.out));
  record_run(output_dir_of(a.out), "extract",
             {{"maps_dir", rel(a.maps_dir, output_dir_of(a.out))},
              {"targets", rel(a.targets, output_dir_of(a.out))},
              {"target_column", a.target_column},
              {"out", rel(a.out, output_dir_of(a.out))},
              {"log_sigma", matched_log_sigma()},
              {"seed", g.seed},
              {"rows", table.ids.size()}});
  if (!g.quiet) err << "extracted " << table.ids.size() << " feature rows to " << a.out << '\n';
}

// ---------------------------------------------------------------------- train

struct TrainArgs {
  std::string features;
  std::string out;
  gbt::GbtParams params;
  int cv_folds = 0;  // 0 = no cross-validation
  char group_delimiter = '_';
};

std::string schema_of(const std::string& features_csv, std::size_t width) {
  const auto sidecar = schema_sidecar_path(features_csv);
  if (fs::exists(sidecar)) return read_feature_schema_version(sidecar);
  return width == kFeatureCount ? std::string(kFeatureSchemaVersion) : std::string("custom");
}

void cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const FeatureTable table = read_feature_csv(a.features);
  if (!table.targets) throw CommandError(a.features + " has no target column");
  std::vector<int> folds;
  if (a.cv_folds > 0) folds = gbt::group_folds(table.ids, a.cv_folds, a.group_delimiter);
  gbt::GbtParams params = a.params;
  params.seed = g.seed;
  gbt::FitReport report;
  gbt::GbtModel model = gbt::fit(table.features, *table.targets, params, &report, g.threads);
  model.feature_schema = schema_of(a.features, table.features.cols());

  ensure_parent(a.out);
  gbt::save_model(model, a.out);

  double sq = 0.0;
  for (std::size_t r = 0; r < table.ids.size(); ++r) {
    const double d = model.predict(table.features.row(r)) - (*table.targets)[r];
    sq += d * d;
  }
  const double train_mse = sq / static_cast<double>(table.ids.size());

  out << "train_mse " << csv::format_double(train_mse) << '\n';
  out << "trees " << model.trees.size() << '\n';
  const auto importance = gbt::feature_importance(model);
  const bool canonical = model.n_features == kFeatureCount;
  for (std::size_t i = 0; i < std::min<std::size_t>(10, importance.size()); ++i) {
    const auto [f, gain] = importance[i];
    out << "importance " << (i + 1) << ' ' << feature_column_name(f);
    if (canonical) {
      const auto& col = feature_columns()[f];
      out << ' ' << to_string(col.channel) << ' ' << to_string(col.family);
      if (col.threshold) out << '@' << csv::format_double(*col.threshold);
    }
    out << ' ' << csv::format_double(gain) << '\n';
  }

  json cv_json = nullptr;
  if (a.cv_folds > 0) {
    const auto cv = gbt::cross_validate(table.features, *table.targets, folds, params, g.threads);
    cv_json = {{"folds", a.cv_folds},
               {"group_delimiter", std::string(1, a.group_delimiter)},
               {"mean_mse", cv.mean_mse},
               {"fold_mse", json::array()}};
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
      const auto& r = cv.folds[f];
      out << "cv_fold " << f << " train " << r.n_train << " validation " << r.n_validation
          << " mse " << csv::format_double(r.validation_mse) << '\n';
      cv_json["fold_mse"].push_back(r.validation_mse);
    }
    out << "cv_mean_mse " << csv::format_double(cv.mean_mse) << '\n';
  }

  record_run(output_dir_of(a.out), "train",
             {{"features", rel(a.features, output_dir_of(a.out))},
              {"out", rel(a.out, output_dir_of(a.out))},
              {"rounds", params.n_rounds},
              {"lr", params.learning_rate},
              {"max_depth", params.max_depth},
              {"max_leaves", params.max_leaves},
              {"min_leaf", params.min_samples_leaf},
              {"seed", g.seed},
              {"train_mse", train_mse},
              {"trees", model.trees.size()},
              {"cross_validation", cv_json}});
  if (!g.quiet) err << "trained " << model.trees.size() << " trees, model written to " << a.out << '\n';
}

// -------------------------------------------------------------------- predict

struct PredictArgs {
  std::string model;
  std::string features;
  std::string out;
};

void cmd_predict(const PredictArgs& a, const Globals& g, std::ostream& err) {
  const gbt::GbtModel model = gbt::load_model(a.model);
  const FeatureTable table = read_feature_csv(a.features);
  const std::string schema = schema_of(a.features, table.features.cols());
  if (schema != model.feature_schema) {
    throw CommandError("feature schema mismatch: model expects " + model.feature_schema + ", " +
                       a.features + " is " + schema);
  }
  if (!table.ids.empty() && table.features.cols() != model.n_features) {
    throw CommandError("feature width mismatch: model expects " + std::to_string(model.n_features) +
                       " columns, got " + std::to_string(table.features.cols()));
  }
  ensure_parent(a.out);
  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw CommandError("cannot write " + a.out);
  out << "patch_id,predicted\n";
  for (std::size_t r = 0; r < table.ids.size(); ++r) {
    out << table.ids[r] << ',' << csv::format_double(model.predict(table.features.row(r))) << '\n';
  }
  if (!out) throw CommandError("write failed: " + a.out);
  record_run(output_dir_of(a.out), "predict",
             {{"model", rel(a.model, output_dir_of(a.out))},
              {"features", rel(a.features, output_dir_of(a.out))},
              {"out", rel(a.out, output_dir_of(a.out))},
              {"seed", g.seed},
              {"rows", table.ids.size()}});
  if (!g.quiet) err << "wrote " << table.ids.size() << " predictions to " << a.out << '\n';
}

// ------------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string predictions;
  std::string targets;
  std::string target_column = "true_cellularity";
  int n_boot = 2000;
  std::string out;
};

json metric_entry(const agreement::Metric& metric, const agreement::ScorePairSet& s, int n_boot,
                  std::uint64_t seed, int threads) {
  const auto ci = agreement::bootstrap_ci(metric, s, n_boot, seed, threads);
  return {{"point", metric(s)}, {"ci95", {ci.lower, ci.upper}}};
}

void cmd_evaluate(const EvaluateArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto predicted = read_id_value_csv(a.predictions, "predicted");
  const auto reference = read_id_value_csv(a.targets, a.target_column);
  std::map<std::string, double> ref_by_id;
  for (const auto& [id, v] : reference) {
    if (!ref_by_id.emplace(id, v).second) throw CommandError("duplicate id " + id + " in " + a.targets);
  }
  if (predicted.size() != ref_by_id.size()) {
    throw CommandError("id mismatch: " + std::to_string(predicted.size()) + " predictions vs " +
                       std::to_string(ref_by_id.size()) + " targets");
  }
  agreement::ScorePairSet s;
  std::set<std::string> seen;
  for (const auto& [id, p] : predicted) {
    const auto it = ref_by_id.find(id);
    if (it == ref_by_id.end()) throw CommandError("id mismatch: no target for " + id);
    if (!seen.insert(id).second) throw CommandError("duplicate id " + id + " in " + a.predictions);
    s.pairs.push_back({p, it->second});
    s.ids.push_back(id);
  }
  s.validate();

  // Each metric gets its own bootstrap stream derived from the run seed.
  json report;
  report["n"] = s.size();
  report["n_boot"] = a.n_boot;
  report["seed"] = g.seed;
  report["mse"] = metric_entry(agreement::mse, s, a.n_boot, agreement::mix_seed(g.seed, 1), g.threads);
  report["kappa4"] =
      metric_entry(agreement::kappa4, s, a.n_boot, agreement::mix_seed(g.seed, 2), g.threads);
  if (s.size() >= 3) {
    report["icc21"] =
        metric_entry(agreement::icc21, s, a.n_boot, agreement::mix_seed(g.seed, 3), g.threads);
  } else {
    report["icc21"] = nullptr;
  }

  ensure_parent(a.out);
  {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw CommandError("cannot write " + a.out);
    f << report.dump(2) << '\n';
  }
  fs::path per_patch = a.out;
  per_patch.replace_extension(".csv");
  {
    std::ofstream f(per_patch, std::ios::trunc);
    if (!f) throw CommandError("cannot write " + per_patch.string());
    f << "patch_id,predicted,reference,bin_pred,bin_ref\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& p = s.pairs[i];
      f << s.ids[i] << ',' << csv::format_double(p.predicted) << ','
        << csv::format_double(p.reference) << ',' << agreement::bin4(p.predicted) << ','
        << agreement::bin4(p.reference) << '\n';
    }
  }
  record_run(output_dir_of(a.out), "evaluate",
             {{"predictions", rel(a.predictions, output_dir_of(a.out))},
              {"targets", rel(a.targets, output_dir_of(a.out))},
              {"target_column", a.target_column},
              {"n_boot", a.n_boot},
              {"out", rel(a.out, output_dir_of(a.out))},
              {"seed", g.seed}});
  out << report.dump(2) << '\n';
  if (!g.quiet) err << "evaluated " << s.size() << " pairs, report written to " << a.out << '\n';
}

// ------------------------------------------------------------------ gen-synth

struct GenSynthArgs {
  std::size_t n = 100;
  synth::SynthParams params;
  double scale = 0.0;  // 0 = derived
  std::string out_dir;
};

void cmd_gen_synth(const GenSynthArgs& a, const Globals& g, std::ostream& err) {
  synth::SynthParams params = a.params;
  params.seed = g.seed;
  if (a.scale > 0.0) params.cellularity_scale = a.scale;
  params.validate();
  const auto patches = synth::generate(params, a.n, g.threads);
  synth::emit_dataset(patches, params, a.out_dir);
  record_run(a.out_dir, "gen-synth",
             {{"n", a.n}, {"out_dir", "."}, {"seed", g.seed}, {"params", synth::to_json(params)}});
  if (!g.quiet) err << "generated " << patches.size() << " patches in " << a.out_dir << '\n';
}

// ----------------------------------------------------------------- loss-check

struct LossCheckArgs {
  int size = 16;
  std::size_t trials = 1000;
  double alpha = LossConfig{}.alpha;
};

int cmd_loss_check(const LossCheckArgs& a, const Globals& g, std::ostream& out) {
  constexpr double kTolerance = 1e-4;
  LossConfig cfg;
  cfg.alpha = a.alpha;
  cfg.validate();
  const auto c = random_loss_case(a.size, g.seed);
  const GradientCheck check =
      check_gradient(c.target, c.pred, cfg, a.trials, agreement::mix_seed(g.seed, 1));
  out << "coordinates " << check.coordinates << '\n';
  out << "alpha " << csv::format_double(cfg.alpha) << '\n';
  out << "max_relative_error " << std::scientific << std::setprecision(6)
      << check.max_relative_error << std::defaultfloat << '\n';
  out << "worst " << to_string(check.worst_channel) << ' ' << check.worst_index << " analytic "
      << csv::format_double(check.worst_analytic) << " numeric "
      << csv::format_double(check.worst_numeric) << '\n';
  const bool ok = check.max_relative_error < kTolerance;
  out << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cellularity estimation pipeline: masks, features, boosted trees, agreement"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "TOML/INI file with default flag values");
  app.require_subcommand(1);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stage")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for parallel stages")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  SynthMasksArgs masks;
  auto* sm = app.add_subcommand("synth-masks", "Rasterize point annotations into 4-channel masks");
  sm->add_option("annotations", masks.annotations, "CSV with patch_id,x,y,class")->required();
  sm->add_option("--width", masks.width, "Patch width")->required()->check(CLI::PositiveNumber);
  sm->add_option("--height", masks.height, "Patch height")->required()->check(CLI::PositiveNumber);
  sm->add_option("--diameter", masks.diameter, "Disk diameter in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sm->add_option("--out-dir", masks.out_dir, "Output directory")->required();

  ExtractArgs ex;
  auto* ec = app.add_subcommand("extract", "Extract 81 features per probability map");
  ec->add_option("--maps-dir", ex.maps_dir, "Directory of .pmap files")->required();
  ec->add_option("--targets", ex.targets, "targets.csv to join as the target column");
  ec->add_option("--target-column", ex.target_column, "Column of --targets to use")
      ->capture_default_str();
  ec->add_option("--out", ex.out, "Feature CSV to write")->required();

  TrainArgs tr;
  auto* tc = app.add_subcommand("train", "Fit gradient boosted trees to a feature CSV");
  tc->add_option("--features", tr.features, "Feature CSV with a target column")->required();
  tc->add_option("--rounds", tr.params.n_rounds, "Boosting rounds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tc->add_option("--lr", tr.params.learning_rate, "Learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tc->add_option("--max-depth", tr.params.max_depth, "Maximum tree depth")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tc->add_option("--max-leaves", tr.params.max_leaves, "Maximum leaves per tree")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tc->add_option("--min-leaf", tr.params.min_samples_leaf, "Minimum samples per leaf")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tc->add_option("--cv-folds", tr.cv_folds,
                 "Also report k-fold validation MSE, grouping rows by patch_id prefix (0: off)")
      ->check(CLI::Range(0, 1000000))
      ->capture_default_str();
  tc->add_option("--group-delimiter", tr.group_delimiter,
                 "patch_id prefix ends at the first occurrence of this character")
      ->capture_default_str();
  tc->add_option("--out", tr.out, "Model JSON to write")->required();

  PredictArgs pr;
  auto* pc = app.add_subcommand("predict", "Predict cellularity for a feature CSV");
  pc->add_option("--model", pr.model, "Model JSON")->required();
  pc->add_option("--features", pr.features, "Feature CSV")->required();
  pc->add_option("--out", pr.out, "Predictions CSV to write")->required();

  EvaluateArgs ev;
  auto* vc = app.add_subcommand("evaluate", "Agreement statistics between predictions and targets");
  vc->add_option("--predictions", ev.predictions, "CSV with patch_id,predicted")->required();
  vc->add_option("--targets", ev.targets, "CSV with patch_id and the target column")->required();
  vc->add_option("--target-column", ev.target_column, "Reference column of --targets")
      ->capture_default_str();
  vc->add_option("--n-boot", ev.n_boot, "Bootstrap replicates")
      ->check(CLI::Range(100, 10000000))
      ->capture_default_str();
  vc->add_option("--out", ev.out, "Report JSON to write")->required();

  GenSynthArgs gs;
  auto* gc = app.add_subcommand("gen-synth", "Generate a synthetic dataset");
  gc->add_option("--n", gs.n, "Number of patches")->capture_default_str();
  gc->add_option("--width", gs.params.width)->capture_default_str();
  gc->add_option("--height", gs.params.height)->capture_default_str();
  gc->add_option("--normal-min", gs.params.normal.min)->capture_default_str();
  gc->add_option("--normal-max", gs.params.normal.max)->capture_default_str();
  gc->add_option("--lymphocyte-min", gs.params.lymphocyte.min)->capture_default_str();
  gc->add_option("--lymphocyte-max", gs.params.lymphocyte.max)->capture_default_str();
  gc->add_option("--malignant-min", gs.params.malignant.min)->capture_default_str();
  gc->add_option("--malignant-max", gs.params.malignant.max)->capture_default_str();
  gc->add_option("--diameter", gs.params.diameter)->capture_default_str();
  gc->add_option("--softness", gs.params.softness_sigma, "Disk blur sigma")->capture_default_str();
  gc->add_option("--map-noise", gs.params.map_noise_sigma, "Map noise sigma")->capture_default_str();
  gc->add_option("--label-noise", gs.params.label_noise_sigma, "Target noise sigma")
      ->capture_default_str();
  gc->add_option("--min-separation", gs.params.min_separation)->capture_default_str();
  gc->add_option("--scale", gs.scale, "Cellularity scale (0 derives it)")->capture_default_str();
  gc->add_option("--out-dir", gs.out_dir, "Dataset directory")->required();

  LossCheckArgs lc;
  auto* lcc = app.add_subcommand("loss-check", "Finite-difference check of the loss gradient");
  lcc->add_option("--size", lc.size, "Map side length")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  lcc->add_option("--trials", lc.trials, "Coordinates to check")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  lcc->add_option("--alpha", lc.alpha, "BCE/Jaccard balance")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*sm) cmd_synth_masks(masks, g, err);
    if (*ec) cmd_extract(ex, g, err);
    if (*tc) cmd_train(tr, g, out, err);
    if (*pc) cmd_predict(pr, g, err);
    if (*vc) cmd_evaluate(ev, g, out, err);
    if (*gc) cmd_gen_synth(gs, g, err);
    if (*lcc) return cmd_loss_check(lc, g, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("cellularity");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cellularity::cli
