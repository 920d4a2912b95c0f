#pragma once

// Training, evaluation and diagnostics drivers shared by the CLI, the Python
// module and the acceptance suite.

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qkalign/checkpoint.hpp"
#include "qkalign/config.hpp"
#include "qkalign/diagnostics.hpp"
#include "qkalign/model.hpp"
#include "qkalign/objectives.hpp"
#include "qkalign/synth.hpp"

namespace qkalign {

struct EvalSample {
  std::size_t index = 0;  // position in the test split
  std::size_t scene = 0;
  std::size_t predicted_scene = 0;
  PoseError error;
};

struct SceneEval {
  std::size_t scene = 0;
  std::size_t samples = 0;
  double median_position = 0.0;
  double median_angle = 0.0;
  std::vector<double> recall;  // one per threshold
  double scene_accuracy = 0.0;
};

struct EvalReport {
  std::vector<EvalSample> samples;
  // Scenes without test samples are left out (and named in warnings).
  std::vector<SceneEval> scenes;
  // Over all evaluated samples.
  double median_position = 0.0;
  double median_angle = 0.0;
  std::vector<double> recall;
  double scene_accuracy = 0.0;
  // Unweighted means of the per-scene medians.
  double mean_scene_median_position = 0.0;
  double mean_scene_median_angle = 0.0;
  std::vector<std::string> warnings;
};

// Evenly spaced indices into [0, count); all of them when limit is 0 or
// covers count.
std::vector<std::size_t> spread_indices(std::size_t count, std::size_t limit);

// Contract error when the model and the dataset disagree on grids, token
// width or scene count.
void check_compatible(const ModelConfig& model, const DataConfig& data);

struct Prediction {
  Vec3 t{};
  Quat r{1.0, 0.0, 0.0, 0.0};
  std::size_t scene = 0;
};

using Predictor = std::function<Prediction(const SyntheticObservation&)>;

Predictor model_predictor(const PoseTransformer& model);

EvalReport evaluate(const Predictor& predict, const Dataset& dataset, const std::vector<Threshold>& thresholds,
                    std::span<const std::size_t> test_indices);
EvalReport evaluate(const PoseTransformer& model, const Dataset& dataset, const std::vector<Threshold>& thresholds,
                    std::span<const std::size_t> test_indices);
EvalReport evaluate(const PoseTransformer& model, const Dataset& dataset, const std::vector<Threshold>& thresholds);

// Diagnostics for every encoder self-attention record of the chosen test
// samples; `sample` in each row is the test-split index.
std::vector<RecordDiagnostics> diagnose(const PoseTransformer& model, const Dataset& dataset,
                                        std::span<const std::size_t> test_indices);

struct LossMeans {
  double l_t = 0.0, l_r = 0.0, l_pose = 0.0, l_scene = 0.0;
  double l_qka_t = 0.0, l_qka_r = 0.0, l_aux = 0.0, l_total = 0.0;
  double s_t = 0.0, s_r = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps so far
  double lr = 0.0;
  LossMeans loss;
  double median_position = 0.0;
  double median_angle = 0.0;
  std::vector<double> recall;
  double scene_accuracy = 0.0;
  std::optional<DiagnosticsSummary> diagnostics;
};

struct TrainOptions {
  // Empty: nothing is written to disk.
  std::string out_dir;
  // Starting point (required for position fine-tuning).
  const Checkpoint* init = nullptr;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_median_position = 0.0;
  PoseTransformer model;
  LossParams loss;
};

// Runs config.train.epochs epochs. Writes run.cfg, metrics.csv (one row per
// epoch), steps.csv (one row per optimizer step), checkpoint_best.qkc and
// checkpoint_final.qkc when out_dir is set. A non-finite loss aborts with a
// numeric error naming the epoch and step.
TrainResult train(const RunConfig& config, const Dataset& dataset, const TrainOptions& options = {});

std::vector<std::string> metrics_header(const std::vector<Threshold>& thresholds);
std::vector<std::string> metrics_row(const EpochMetrics& m);

// CSV writers used by the CLI.
void write_eval_csvs(const std::string& dir, const EvalReport& report, const std::vector<Threshold>& thresholds);
void write_diagnostics_csvs(const std::string& dir, std::span<const RecordDiagnostics> rows,
                            const std::string& phase, std::size_t epoch);

}  // namespace qkalign
