#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <random>

#include "qkalign/checkpoint.hpp"
#include "qkalign/config.hpp"
#include "qkalign/csv.hpp"
#include "qkalign/error.hpp"
#include "qkalign/training.hpp"

using namespace qkalign;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> settings;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config_path, "key = value config file");
  cmd->add_option("--set", c.settings, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "random seed")->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_option("--out", c.out, out_help)->required();
}

RunConfig resolve_config(const Common& c, const RunConfig* base = nullptr) {
  RunConfig cfg = base ? *base : RunConfig{};
  if (!c.config_path.empty()) cfg = load_config(c.config_path);
  for (const auto& s : c.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.sync();
  return cfg;
}

// Seeded subset of [0, count), sorted; everything when limit is 0 or covers count.
std::vector<std::size_t> choose_samples(std::size_t count, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  if (limit == 0 || limit >= count) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void run_gen_data(const Common& c) {
  auto cfg = resolve_config(c);
  const std::uint64_t seed = c.seed_given ? c.seed : cfg.seed;
  auto ds = Dataset::generate(seed, cfg.data);
  write_dataset(c.out, ds);
  for (std::size_t m = 0; m < ds.scenes.size(); ++m) {
    std::cout << "scene " << m << " extent " << format_double(ds.scenes[m].extent) << " train "
              << ds.split.train_counts[m] << " test " << ds.split.test_counts[m] << '\n';
  }
}

void run_train(const Common& c, const std::string& data_path, const std::string& init_path, bool finetune) {
  std::optional<Checkpoint> init;
  if (!init_path.empty()) init = load_checkpoint(init_path);
  auto cfg = resolve_config(c, init ? &init->config : nullptr);
  if (c.seed_given) cfg.seed = c.seed;
  if (finetune) cfg.train.finetune_position = true;
  auto ds = read_dataset(data_path);
  TrainOptions opts{c.out, init ? &*init : nullptr, &std::cout};
  auto result = train(cfg, ds, opts);
  std::cout << "best epoch " << result.best_epoch << " median position " << format_double(result.best_median_position)
            << '\n';
}

void run_eval(const Common& c, const std::string& ckpt, const std::string& data_path, std::size_t samples) {
  auto lm = load_model(ckpt);
  auto ds = read_dataset(data_path);
  auto cfg = lm.checkpoint.config;
  if (!c.config_path.empty() || !c.settings.empty()) {
    auto over = resolve_config(c, &cfg);
    cfg.thresholds = over.thresholds;
  }
  auto idx = choose_samples(ds.split.test.size(), samples, c.seed_given ? c.seed : cfg.seed);
  auto report = evaluate(lm.model, ds, cfg.thresholds, idx);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  write_eval_csvs(c.out, report, cfg.thresholds);
  for (const auto& s : report.scenes) {
    std::cout << "scene " << s.scene << " median " << format_double(s.median_position) << " / "
              << format_double(s.median_angle) << " deg, accuracy " << format_double(s.scene_accuracy) << '\n';
  }
  std::cout << "all median " << format_double(report.median_position) << " / " << format_double(report.median_angle)
            << " deg, accuracy " << format_double(report.scene_accuracy) << '\n';
}

void run_diagnose(const Common& c, const std::string& ckpt, const std::string& data_path, std::size_t samples) {
  auto lm = load_model(ckpt);
  auto ds = read_dataset(data_path);
  auto idx = choose_samples(ds.split.test.size(), samples, c.seed_given ? c.seed : lm.checkpoint.config.seed);
  auto rows = diagnose(lm.model, ds, idx);
  write_diagnostics_csvs(c.out, rows, lm.checkpoint.phase, lm.checkpoint.epoch);
  std::cout << "records " << rows.size() << " from " << idx.size() << " samples (" << lm.checkpoint.phase
            << ", epoch " << lm.checkpoint.epoch << ")\n";
}

void run_pe_map(const Common& c, const std::string& kind_text, const std::string& grid_text, std::size_t dim,
                const std::vector<std::size_t>& anchor, const std::string& ckpt, const std::string& branch) {
  const PeKind kind = parse_pe_kind(kind_text);
  if (anchor.size() != 2) throw ConfigError("--anchor expects row,col");
  PosEncoding pe;
  if (kind == PeKind::Learnable) {
    if (ckpt.empty()) throw ContractError("learnable positional encodings need --checkpoint");
    auto lm = load_model(ckpt);
    if (branch != "t" && branch != "r") throw ConfigError("--branch must be t or r");
    pe = lm.model.branch(branch == "t" ? BranchKind::Position : BranchKind::Orientation).pe;
    if (pe.kind != PeKind::Learnable) throw ContractError("checkpoint uses fixed positional encodings");
  } else {
    auto cfg = resolve_config(c);
    const GridSize grid = grid_text.empty() ? cfg.model.grid_t : parse_grid(grid_text);
    pe = build_sinusoidal_2d(grid, dim ? dim : cfg.model.dim);
  }
  auto map = pe_distance_map(pe, {anchor[0], anchor[1]});
  CsvWriter out(c.out, {"row", "col", "distance"});
  for (std::size_t r = 0; r < map.grid.height; ++r) {
    for (std::size_t col = 0; col < map.grid.width; ++col) {
      out.row({std::to_string(r), std::to_string(col), format_double(map.at(r, col))});
    }
  }
  auto ac = axis_contrast(map);
  std::cout << "on-axis mean " << format_double(ac.on_axis_mean) << " off-axis mean "
            << format_double(ac.off_axis_mean) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scene pose regression transformer with query-key alignment"};
  app.require_subcommand(1);

  Common gen, tr, ev, dg, pm;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  add_common(gen_cmd, gen, "dataset file to write");

  std::string tr_data, tr_init;
  bool tr_finetune = false;
  auto* tr_cmd = app.add_subcommand("train", "train a model");
  add_common(tr_cmd, tr, "output directory");
  tr_cmd->add_option("--data", tr_data, "dataset file")->required();
  tr_cmd->add_option("--init", tr_init, "checkpoint to start from");
  tr_cmd->add_flag("--finetune-position", tr_finetune, "train only the position branch (needs --init)");

  std::string ev_ckpt, ev_data;
  std::size_t ev_samples = 0;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev_cmd, ev, "output directory");
  ev_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev_cmd->add_option("--data", ev_data, "dataset file")->required();
  ev_cmd->add_option("--samples", ev_samples, "evaluate a seeded subset of this size (0 = all)");

  std::string dg_ckpt, dg_data;
  std::size_t dg_samples = 64;
  auto* dg_cmd = app.add_subcommand("diagnose", "query-key diagnostics of encoder self-attention");
  add_common(dg_cmd, dg, "output directory");
  dg_cmd->add_option("--checkpoint", dg_ckpt, "checkpoint file")->required();
  dg_cmd->add_option("--data", dg_data, "dataset file")->required();
  dg_cmd->add_option("--samples", dg_samples, "number of test samples (0 = all)");

  std::string pm_kind = "fixed", pm_grid, pm_ckpt, pm_branch = "t";
  std::size_t pm_dim = 0;
  std::vector<std::size_t> pm_anchor{0, 0};
  auto* pm_cmd = app.add_subcommand("pe-map", "distance map of positional encodings from one anchor cell");
  add_common(pm_cmd, pm, "CSV file to write");
  pm_cmd->add_option("--kind", pm_kind, "fixed or learnable");
  pm_cmd->add_option("--grid", pm_grid, "HxW grid for fixed encodings");
  pm_cmd->add_option("--dim", pm_dim, "encoding width for fixed encodings");
  pm_cmd->add_option("--anchor", pm_anchor, "anchor cell row,col")->delimiter(',')->expected(2);
  pm_cmd->add_option("--checkpoint", pm_ckpt, "checkpoint holding learnable encodings");
  pm_cmd->add_option("--branch", pm_branch, "t or r");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen_cmd) run_gen_data(gen);
    if (*tr_cmd) run_train(tr, tr_data, tr_init, tr_finetune);
    if (*ev_cmd) run_eval(ev, ev_ckpt, ev_data, ev_samples);
    if (*dg_cmd) run_diagnose(dg, dg_ckpt, dg_data, dg_samples);
    if (*pm_cmd) run_pe_map(pm, pm_kind, pm_grid, pm_dim, pm_anchor, pm_ckpt, pm_branch);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
