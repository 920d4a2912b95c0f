#include "qkalign/training.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <random>

#include "qkalign/csv.hpp"
#include "qkalign/error.hpp"
#include "qkalign/optim.hpp"

namespace qkalign {

std::vector<std::size_t> spread_indices(std::size_t count, std::size_t limit) {
  std::vector<std::size_t> out;
  if (limit == 0 || limit >= count) {
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = i;
    return out;
  }
  for (std::size_t i = 0; i < limit; ++i) out.push_back(i * count / limit);
  return out;
}

void check_compatible(const ModelConfig& model, const DataConfig& data) {
  if (model.dim != data.raw_dim) {
    throw ContractError("dataset token width " + std::to_string(data.raw_dim) + " != model dim " +
                        std::to_string(model.dim));
  }
  if (model.grid_t.count() != data.grid_t.count() || model.grid_r.count() != data.grid_r.count() ||
      model.grid_t.height != data.grid_t.height || model.grid_r.height != data.grid_r.height) {
    throw ContractError("dataset grids " + to_string(data.grid_t) + "/" + to_string(data.grid_r) +
                        " do not match model grids " + to_string(model.grid_t) + "/" + to_string(model.grid_r));
  }
  if (model.scenes != data.scenes) {
    throw ContractError("dataset has " + std::to_string(data.scenes) + " scenes, model expects " +
                        std::to_string(model.scenes));
  }
}

namespace {

Vec3 to_vec3(const Tensor& t) { return {t.data()[0], t.data()[1], t.data()[2]}; }
Quat to_quat(const Tensor& r) { return {r.data()[0], r.data()[1], r.data()[2], r.data()[3]}; }

std::string threshold_label(const Threshold& t) {
  char a[32], b[32];
  auto ra = std::to_chars(a, a + sizeof a, t.position);
  auto rb = std::to_chars(b, b + sizeof b, t.angle_deg);
  return "recall_" + std::string(a, ra.ptr) + "_" + std::string(b, rb.ptr);
}

}  // namespace

Predictor model_predictor(const PoseTransformer& model) {
  return [&model](const SyntheticObservation& obs) {
    NoGradGuard guard;
    auto out = model.forward(obs, ForwardMode::inference());
    return Prediction{to_vec3(out.t_hat), to_quat(out.r_hat), out.selected_scene};
  };
}

EvalReport evaluate(const PoseTransformer& model, const Dataset& dataset, const std::vector<Threshold>& thresholds,
                    std::span<const std::size_t> test_indices) {
  check_compatible(model.config(), dataset.config);
  return evaluate(model_predictor(model), dataset, thresholds, test_indices);
}

EvalReport evaluate(const Predictor& predict, const Dataset& dataset, const std::vector<Threshold>& thresholds,
                    std::span<const std::size_t> test_indices) {
  NoGradGuard guard;
  Renderer renderer(dataset.seed, dataset.config);
  EvalReport report;
  for (auto idx : test_indices) {
    const auto& rec = dataset.split.test.at(idx);
    auto obs = renderer.render(dataset.scenes.at(rec.scene_id), rec.pose);
    auto pred = predict(obs);
    report.samples.push_back({idx, rec.scene_id, pred.scene, pose_error(rec.pose, pred.t, pred.r)});
  }

  auto summarize = [&](const std::vector<const EvalSample*>& group, double& med_p, double& med_a,
                       std::vector<double>& recall, double& accuracy) {
    std::vector<double> pos, ang;
    std::vector<PoseError> errs;
    std::size_t correct = 0;
    for (const auto* s : group) {
      pos.push_back(s->error.position);
      ang.push_back(s->error.angle_deg);
      errs.push_back(s->error);
      if (s->predicted_scene == s->scene) ++correct;
    }
    med_p = median(pos);
    med_a = median(ang);
    recall.clear();
    for (const auto& t : thresholds) recall.push_back(recall_at(errs, t.position, t.angle_deg));
    accuracy = static_cast<double>(correct) / static_cast<double>(group.size());
  };

  std::vector<std::vector<const EvalSample*>> by_scene(dataset.config.scenes);
  std::vector<const EvalSample*> all;
  for (const auto& s : report.samples) {
    by_scene[s.scene].push_back(&s);
    all.push_back(&s);
  }
  for (std::size_t m = 0; m < by_scene.size(); ++m) {
    if (by_scene[m].empty()) {
      report.warnings.push_back("scene " + std::to_string(m) + " has no test samples; omitted");
      continue;
    }
    SceneEval se;
    se.scene = m;
    se.samples = by_scene[m].size();
    summarize(by_scene[m], se.median_position, se.median_angle, se.recall, se.scene_accuracy);
    report.mean_scene_median_position += se.median_position;
    report.mean_scene_median_angle += se.median_angle;
    report.scenes.push_back(std::move(se));
  }
  if (all.empty()) throw ContractError("evaluate: no test samples");
  summarize(all, report.median_position, report.median_angle, report.recall, report.scene_accuracy);
  report.mean_scene_median_position /= static_cast<double>(report.scenes.size());
  report.mean_scene_median_angle /= static_cast<double>(report.scenes.size());
  return report;
}

EvalReport evaluate(const PoseTransformer& model, const Dataset& dataset, const std::vector<Threshold>& thresholds) {
  auto idx = spread_indices(dataset.split.test.size(), 0);
  return evaluate(model, dataset, thresholds, idx);
}

std::vector<RecordDiagnostics> diagnose(const PoseTransformer& model, const Dataset& dataset,
                                        std::span<const std::size_t> test_indices) {
  check_compatible(model.config(), dataset.config);
  NoGradGuard guard;
  Renderer renderer(dataset.seed, dataset.config);
  std::vector<RecordDiagnostics> rows;
  for (auto idx : test_indices) {
    const auto& rec = dataset.split.test.at(idx);
    auto obs = renderer.render(dataset.scenes.at(rec.scene_id), rec.pose);
    auto out = model.forward(obs, ForwardMode::inference());
    auto d = diagnose_records(out.records, idx);
    rows.insert(rows.end(), d.begin(), d.end());
  }
  return rows;
}

std::vector<std::string> metrics_header(const std::vector<Threshold>& thresholds) {
  std::vector<std::string> h = {"epoch", "step", "lr", "l_t", "l_r", "l_pose", "l_scene", "l_qka_t", "l_qka_r",
                                "l_aux", "l_total", "s_t", "s_r", "median_position", "median_angle"};
  for (const auto& t : thresholds) h.push_back(threshold_label(t));
  for (const char* c : {"scene_accuracy", "entropy_t", "entropy_r", "purity_t", "purity_r", "region_distance_t",
                        "region_distance_r"}) {
    h.emplace_back(c);
  }
  return h;
}

std::vector<std::string> metrics_row(const EpochMetrics& m) {
  const auto& l = m.loss;
  std::vector<std::string> r = {std::to_string(m.epoch),    std::to_string(m.step),   format_double(m.lr),
                                format_double(l.l_t),       format_double(l.l_r),     format_double(l.l_pose),
                                format_double(l.l_scene),   format_double(l.l_qka_t), format_double(l.l_qka_r),
                                format_double(l.l_aux),     format_double(l.l_total), format_double(l.s_t),
                                format_double(l.s_r),       format_double(m.median_position),
                                format_double(m.median_angle)};
  for (double v : m.recall) r.push_back(format_double(v));
  r.push_back(format_double(m.scene_accuracy));
  auto cell = [&](const BranchSummary& b, double BranchSummary::*field) {
    return b.records ? format_double(b.*field) : std::string();
  };
  if (m.diagnostics) {
    const auto& d = *m.diagnostics;
    r.push_back(cell(d.t, &BranchSummary::mean_entropy));
    r.push_back(cell(d.r, &BranchSummary::mean_entropy));
    r.push_back(cell(d.t, &BranchSummary::mean_purity));
    r.push_back(cell(d.r, &BranchSummary::mean_purity));
    r.push_back(cell(d.t, &BranchSummary::mean_region_distance));
    r.push_back(cell(d.r, &BranchSummary::mean_region_distance));
  } else {
    r.insert(r.end(), 6, std::string());
  }
  return r;
}

namespace {

std::vector<std::string> step_header() {
  return {"epoch", "step", "lr", "l_t", "l_r", "l_pose", "l_scene", "l_qka_t", "l_qka_r", "l_aux", "l_total",
          "s_t", "s_r"};
}

std::vector<std::string> step_row(std::size_t epoch, std::size_t step, double lr, const LossMeans& l) {
  return {std::to_string(epoch), std::to_string(step), format_double(lr),      format_double(l.l_t),
          format_double(l.l_r),  format_double(l.l_pose), format_double(l.l_scene), format_double(l.l_qka_t),
          format_double(l.l_qka_r), format_double(l.l_aux), format_double(l.l_total), format_double(l.s_t),
          format_double(l.s_r)};
}

void accumulate(LossMeans& acc, const LossBreakdown& b) {
  acc.l_t += b.l_t;
  acc.l_r += b.l_r;
  acc.l_pose += b.l_pose;
  acc.l_scene += b.l_scene;
  acc.l_qka_t += b.l_qka_t;
  acc.l_qka_r += b.l_qka_r;
  acc.l_aux += b.l_aux;
  acc.l_total += b.l_total;
}

void divide(LossMeans& acc, double n) {
  for (double* v : {&acc.l_t, &acc.l_r, &acc.l_pose, &acc.l_scene, &acc.l_qka_t, &acc.l_qka_r, &acc.l_aux,
                    &acc.l_total}) {
    *v /= n;
  }
}

}  // namespace

TrainResult train(const RunConfig& config_in, const Dataset& dataset, const TrainOptions& options) {
  RunConfig config = config_in;
  config.sync();
  check_compatible(config.model, dataset.config);
  if (config.train.finetune_position && options.init == nullptr) {
    throw ContractError("position fine-tuning needs an initial checkpoint");
  }

  TrainResult result{{}, 0, std::numeric_limits<double>::infinity(), PoseTransformer(config.model, config.seed),
                     LossParams::init(config.loss)};
  auto& model = result.model;
  auto& loss_params = result.loss;
  std::size_t epoch_offset = 0;
  if (options.init) {
    check_compatible(options.init->config.model, dataset.config);
    restore(*options.init, model, loss_params);
    epoch_offset = options.init->epoch;
  }
  const std::string phase = config.train.finetune_position ? "finetune-position" : "train";

  std::vector<Tensor> params;
  if (config.train.finetune_position) {
    for (auto& p : model.position_branch_parameters()) params.push_back(p.tensor);
    params.push_back(loss_params.s_t);
  } else {
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    params.push_back(loss_params.s_t);
    params.push_back(loss_params.s_r);
  }
  AdamState adam = AdamState::for_params(params);

  std::optional<CsvWriter> metrics_csv, steps_csv;
  namespace fs = std::filesystem;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir + ": " + ec.message());
    save_config((fs::path(options.out_dir) / "run.cfg").string(), config);
    metrics_csv.emplace((fs::path(options.out_dir) / "metrics.csv").string(), metrics_header(config.thresholds));
    steps_csv.emplace((fs::path(options.out_dir) / "steps.csv").string(), step_header());
  }
  auto save = [&](const std::string& name, std::size_t epoch) {
    if (options.out_dir.empty()) return;
    Checkpoint ck{config, phase, epoch, checkpoint_tensors(model, loss_params)};
    save_checkpoint((fs::path(options.out_dir) / name).string(), ck);
  };

  Renderer renderer(dataset.seed, dataset.config);
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    0x7261696eu};
  std::mt19937_64 rng(seq);
  const auto eval_idx = spread_indices(dataset.split.test.size(), config.train.eval_samples);
  const auto diag_idx =
      config.train.diag_samples ? spread_indices(dataset.split.test.size(), config.train.diag_samples)
                                : std::vector<std::size_t>{};
  AdamConfig adam_cfg = config.adam;
  std::size_t step = 0;

  for (std::size_t e = 0; e < config.train.epochs; ++e) {
    const std::size_t epoch = epoch_offset + e + 1;
    adam_cfg.lr = config.learning_rate(e);
    const auto order = epoch_order(dataset.split, rng);
    LossMeans epoch_loss;
    std::size_t epoch_samples = 0;

    for (std::size_t start = 0; start < order.size(); start += config.train.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.train.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      zero_grads(params);
      LossMeans batch;
      ++step;
      for (std::size_t i = start; i < end; ++i) {
        const auto& rec = dataset.split.train[order[i]];
        auto obs = renderer.render(dataset.scenes[rec.scene_id], rec.pose);
        auto out = model.forward(obs, ForwardMode::training(rec.scene_id));
        auto b = total_loss(out, rec.pose, rec.scene_id, loss_params, config.loss, config.model);
        if (!std::isfinite(b.l_total)) {
          LossMeans bad;
          accumulate(bad, b);
          bad.s_t = b.s_t;
          bad.s_r = b.s_r;
          if (steps_csv) steps_csv->row(step_row(epoch, step, adam_cfg.lr, bad));
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                             " (train sample " + std::to_string(order[i]) + ")");
        }
        accumulate(batch, b);
        backward(scale(b.total, inv));
      }
      adam_step(params, adam, adam_cfg);
      epoch_loss.l_t += batch.l_t;
      epoch_loss.l_r += batch.l_r;
      epoch_loss.l_pose += batch.l_pose;
      epoch_loss.l_scene += batch.l_scene;
      epoch_loss.l_qka_t += batch.l_qka_t;
      epoch_loss.l_qka_r += batch.l_qka_r;
      epoch_loss.l_aux += batch.l_aux;
      epoch_loss.l_total += batch.l_total;
      epoch_samples += end - start;
      divide(batch, static_cast<double>(end - start));
      batch.s_t = loss_params.s_t.item();
      batch.s_r = loss_params.s_r.item();
      if (steps_csv) steps_csv->row(step_row(epoch, step, adam_cfg.lr, batch));
    }
    zero_grads(params);

    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.lr = adam_cfg.lr;
    m.loss = epoch_loss;
    divide(m.loss, static_cast<double>(std::max<std::size_t>(epoch_samples, 1)));
    m.loss.s_t = loss_params.s_t.item();
    m.loss.s_r = loss_params.s_r.item();
    if (!eval_idx.empty()) {
      auto report = evaluate(model, dataset, config.thresholds, eval_idx);
      m.median_position = report.median_position;
      m.median_angle = report.median_angle;
      m.recall = report.recall;
      m.scene_accuracy = report.scene_accuracy;
    } else {
      m.median_position = m.median_angle = std::numeric_limits<double>::quiet_NaN();
      m.recall.assign(config.thresholds.size(), std::numeric_limits<double>::quiet_NaN());
      m.scene_accuracy = std::numeric_limits<double>::quiet_NaN();
    }
    if (!diag_idx.empty()) {
      auto rows = diagnose(model, dataset, diag_idx);
      m.diagnostics = summarize(rows);
    }
    if (metrics_csv) metrics_csv->row(metrics_row(m));
    if (options.log) {
      *options.log << "epoch " << epoch << " loss " << m.loss.l_total << " median_t " << m.median_position
                   << " median_r " << m.median_angle << " acc " << m.scene_accuracy << '\n';
    }
    if (m.median_position < result.best_median_position) {
      result.best_median_position = m.median_position;
      result.best_epoch = epoch;
      save("checkpoint_best.qkc", epoch);
    }
    result.epochs.push_back(std::move(m));
  }
  save("checkpoint_final.qkc", epoch_offset + config.train.epochs);
  if (result.epochs.empty() || result.best_epoch == 0) save("checkpoint_best.qkc", epoch_offset + config.train.epochs);
  return result;
}

void write_eval_csvs(const std::string& dir, const EvalReport& report, const std::vector<Threshold>& thresholds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::vector<std::string> header = {"scene", "samples", "median_position", "median_angle"};
  for (const auto& t : thresholds) header.push_back(threshold_label(t));
  header.emplace_back("scene_accuracy");
  CsvWriter summary((fs::path(dir) / "eval.csv").string(), header);
  auto emit = [&](const std::string& scene, std::size_t n, double mp, double ma, const std::vector<double>& rec,
                  double acc) {
    std::vector<std::string> row = {scene, std::to_string(n), format_double(mp), format_double(ma)};
    for (double v : rec) row.push_back(format_double(v));
    row.push_back(format_double(acc));
    summary.row(row);
  };
  for (const auto& s : report.scenes) {
    emit(std::to_string(s.scene), s.samples, s.median_position, s.median_angle, s.recall, s.scene_accuracy);
  }
  emit("all", report.samples.size(), report.median_position, report.median_angle, report.recall,
       report.scene_accuracy);

  CsvWriter samples((fs::path(dir) / "eval_samples.csv").string(),
                    {"index", "scene", "predicted_scene", "position_error", "angle_error_deg"});
  for (const auto& s : report.samples) {
    samples.row({std::to_string(s.index), std::to_string(s.scene), std::to_string(s.predicted_scene),
                 format_double(s.error.position), format_double(s.error.angle_deg)});
  }
}

void write_diagnostics_csvs(const std::string& dir, std::span<const RecordDiagnostics> rows,
                            const std::string& phase, std::size_t epoch) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  CsvWriter records((fs::path(dir) / "records.csv").string(),
                    {"sample", "branch", "layer", "head", "purity", "swapped", "entropy", "entropy_normalized",
                     "region_distance"});
  for (const auto& r : rows) {
    records.row({std::to_string(r.sample), to_string(r.branch), std::to_string(r.layer), std::to_string(r.head),
                 r.purity ? format_double(*r.purity) : std::string(), r.swapped ? "1" : "0",
                 format_double(r.entropy), format_double(r.entropy_normalized), format_double(r.region_distance)});
  }
  const auto s = summarize(rows);
  CsvWriter summary((fs::path(dir) / "summary.csv").string(),
                    {"phase", "epoch", "branch", "layer", "records", "mean_entropy", "mean_entropy_normalized",
                     "mean_purity", "undefined_purity", "swaps", "mean_region_distance"});
  for (const auto& l : s.layers) {
    summary.row({phase, std::to_string(epoch), to_string(l.branch), std::to_string(l.layer),
                 std::to_string(l.records), format_double(l.mean_entropy), format_double(l.mean_entropy_normalized),
                 l.records > l.undefined_purity ? format_double(l.mean_purity) : std::string(),
                 std::to_string(l.undefined_purity), std::to_string(l.swaps), format_double(l.mean_region_distance)});
  }
}

}  // namespace qkalign
