#include "qkalign/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "qkalign/csv.hpp"
#include "qkalign/error.hpp"

namespace qkalign {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_uint(key, item));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<Threshold> parse_thresholds(const std::string& key, const std::string& v) {
  std::vector<Threshold> out;
  for (const auto& item : split_list(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(key + ": expected position:angle pairs, got '" + item + "'");
    out.push_back({parse_double(key, trim(item.substr(0, colon))), parse_double(key, trim(item.substr(colon + 1)))});
  }
  return out;
}

std::string join_thresholds(const std::vector<Threshold>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i].position) + ":" + format_double(v[i].angle_deg);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_uint(k, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field double_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); },
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field bool_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Field grid_field(Member member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { member(c) = parse_grid(v); },
          [member](const RunConfig& c) { return to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field sizes_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_sizes(k, v); },
          [member](const RunConfig& c) { return join_sizes(member(const_cast<RunConfig&>(c))); }};
}

// Ordered: serialization follows this order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", size_field([](RunConfig& c) -> std::uint64_t& { return c.seed; })},
      {"model.dim", size_field([](RunConfig& c) -> std::size_t& { return c.model.dim; })},
      {"model.heads", size_field([](RunConfig& c) -> std::size_t& { return c.model.heads; })},
      {"model.layers", size_field([](RunConfig& c) -> std::size_t& { return c.model.layers; })},
      {"model.grid_t", grid_field([](RunConfig& c) -> GridSize& { return c.model.grid_t; })},
      {"model.grid_r", grid_field([](RunConfig& c) -> GridSize& { return c.model.grid_r; })},
      {"model.mlp_hidden", size_field([](RunConfig& c) -> std::size_t& { return c.model.mlp_hidden; })},
      {"model.regressor_hidden", size_field([](RunConfig& c) -> std::size_t& { return c.model.regressor_hidden; })},
      {"model.pe_kind",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.model.pe_kind = parse_pe_kind(v); },
        [](const RunConfig& c) { return to_string(c.model.pe_kind); }}},
      {"model.encoder_sa_enabled", bool_field([](RunConfig& c) -> bool& { return c.model.encoder_sa_enabled; })},
      {"model.ln_eps", double_field([](RunConfig& c) -> double& { return c.model.ln_eps; })},
      {"data.scenes", size_field([](RunConfig& c) -> std::size_t& { return c.data.scenes; })},
      {"data.landmarks", size_field([](RunConfig& c) -> std::size_t& { return c.data.landmarks; })},
      {"data.extent_min", double_field([](RunConfig& c) -> double& { return c.data.extent_min; })},
      {"data.extent_max", double_field([](RunConfig& c) -> double& { return c.data.extent_max; })},
      {"data.shell_inner", double_field([](RunConfig& c) -> double& { return c.data.shell_inner; })},
      {"data.shell_outer", double_field([](RunConfig& c) -> double& { return c.data.shell_outer; })},
      {"data.fov_deg", double_field([](RunConfig& c) -> double& { return c.data.fov_deg; })},
      {"data.train_sizes", sizes_field([](RunConfig& c) -> std::vector<std::size_t>& { return c.data.train_sizes; })},
      {"data.test_sizes", sizes_field([](RunConfig& c) -> std::vector<std::size_t>& { return c.data.test_sizes; })},
      {"loss.lambda_aux", double_field([](RunConfig& c) -> double& { return c.loss.lambda_aux; })},
      {"loss.s_t_init", double_field([](RunConfig& c) -> double& { return c.loss.s_t_init; })},
      {"loss.s_r_init", double_field([](RunConfig& c) -> double& { return c.loss.s_r_init; })},
      {"loss.qka_enabled", bool_field([](RunConfig& c) -> bool& { return c.loss.qka_enabled; })},
      {"optim.lr", double_field([](RunConfig& c) -> double& { return c.adam.lr; })},
      {"optim.beta1", double_field([](RunConfig& c) -> double& { return c.adam.beta1; })},
      {"optim.beta2", double_field([](RunConfig& c) -> double& { return c.adam.beta2; })},
      {"optim.eps", double_field([](RunConfig& c) -> double& { return c.adam.eps; })},
      {"train.epochs", size_field([](RunConfig& c) -> std::size_t& { return c.train.epochs; })},
      {"train.batch_size", size_field([](RunConfig& c) -> std::size_t& { return c.train.batch_size; })},
      {"train.lr_decay_epochs",
       sizes_field([](RunConfig& c) -> std::vector<std::size_t>& { return c.train.lr_decay_epochs; })},
      {"train.lr_decay_factor", double_field([](RunConfig& c) -> double& { return c.train.lr_decay_factor; })},
      {"train.diag_samples", size_field([](RunConfig& c) -> std::size_t& { return c.train.diag_samples; })},
      {"train.eval_samples", size_field([](RunConfig& c) -> std::size_t& { return c.train.eval_samples; })},
      {"train.finetune_position", bool_field([](RunConfig& c) -> bool& { return c.train.finetune_position; })},
      {"eval.thresholds",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.thresholds = parse_thresholds(k, v); },
        [](const RunConfig& c) { return join_thresholds(c.thresholds); }}},
  };
  return table;
}

}  // namespace

void RunConfig::sync() {
  data.raw_dim = model.dim;
  data.grid_t = model.grid_t;
  data.grid_r = model.grid_r;
  model.scenes = data.scenes;
  validate();
}

void RunConfig::validate() const {
  model.validate();
  data.validate();
  if (data.raw_dim != model.dim) throw ConfigError("data token width must equal model.dim");
  if (data.grid_t.count() != model.grid_t.count() || data.grid_r.count() != model.grid_r.count()) {
    throw ConfigError("data grids must match model grids");
  }
  if (data.scenes != model.scenes) throw ConfigError("data.scenes must match the model scene count");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) throw ConfigError("optim.lr must be positive");
  if (!(adam.eps > 0.0)) throw ConfigError("optim.eps must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("optim betas must lie in [0, 1)");
  }
  if (!(loss.lambda_aux >= 0.0)) throw ConfigError("loss.lambda_aux must be non-negative");
  if (!(train.lr_decay_factor > 0.0)) throw ConfigError("train.lr_decay_factor must be positive");
  for (const auto& t : thresholds) {
    if (!(t.position > 0.0 && t.angle_deg > 0.0)) throw ConfigError("eval.thresholds must be positive");
  }
}

double RunConfig::learning_rate(std::size_t epoch) const {
  double lr = adam.lr;
  for (auto boundary : train.lr_decay_epochs) {
    if (epoch >= boundary) lr *= train.lr_decay_factor;
  }
  return lr;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.sync();
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

void save_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path);
  out << serialize_config(config);
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace qkalign
