#include "qkalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "qkalign/error.hpp"

namespace qkalign {

namespace {

constexpr std::uint32_t kSceneStream = 1;
constexpr std::uint32_t kBackgroundStream = 2;
constexpr std::uint32_t kTrainStream = 3;
constexpr std::uint32_t kTestStream = 4;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t id, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32), stream};
  return std::mt19937_64(seq);
}

Vec3 sample_in_box(double extent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5 * extent, 0.5 * extent);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

void DataConfig::validate() const {
  if (scenes == 0) throw ConfigError("data: scenes must be positive");
  if (landmarks == 0) throw ConfigError("data: landmarks must be positive");
  if (raw_dim == 0) throw ConfigError("data: raw_dim must be positive");
  if (grid_t.count() == 0 || grid_r.count() == 0) throw ConfigError("data: grids must be non-empty");
  if (!(extent_min > 0.0) || extent_max < extent_min) throw ConfigError("data: invalid extent range");
  if (!(shell_inner > 0.5) || shell_outer < shell_inner) {
    throw ConfigError("data: landmark shell must lie outside the camera box");
  }
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw ConfigError("data: fov must be in (0, 180)");
  auto check_sizes = [&](const std::vector<std::size_t>& sizes, const char* what) {
    if (sizes.size() != 1 && sizes.size() != scenes) {
      throw ConfigError(std::string("data: ") + what + " needs 1 or " + std::to_string(scenes) + " entries");
    }
  };
  check_sizes(train_sizes, "train_sizes");
  check_sizes(test_sizes, "test_sizes");
  for (std::size_t s = 0; s < scenes; ++s) {
    if (train_size(s) == 0) throw ConfigError("data: every scene needs training samples");
  }
}

std::size_t DataConfig::train_size(std::size_t scene) const {
  return train_sizes.size() == 1 ? train_sizes[0] : train_sizes.at(scene);
}

std::size_t DataConfig::test_size(std::size_t scene) const {
  return test_sizes.size() == 1 ? test_sizes[0] : test_sizes.at(scene);
}

Scene generate_scene(std::uint64_t global_seed, std::size_t scene_id, const DataConfig& config) {
  auto rng = stream_rng(global_seed, scene_id, kSceneStream);
  Scene scene;
  scene.id = scene_id;
  scene.extent = std::uniform_real_distribution<double>(config.extent_min, config.extent_max)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> radius(config.shell_inner * scene.extent,
                                                config.shell_outer * scene.extent);
  scene.landmarks.reserve(config.landmarks);
  for (std::size_t i = 0; i < config.landmarks; ++i) {
    Vec3 dir{normal(rng), normal(rng), normal(rng)};
    double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (n == 0.0) dir = {1.0, 0.0, 0.0}, n = 1.0;
    const double rad = radius(rng);
    scene.landmarks.push_back({dir[0] / n * rad, dir[1] / n * rad, dir[2] / n * rad});
  }
  const double sd = 1.0 / std::sqrt(static_cast<double>(config.raw_dim));
  scene.descriptors.resize(config.landmarks * config.raw_dim);
  for (auto& v : scene.descriptors) v = sd * normal(rng);
  return scene;
}

std::vector<double> background_descriptor(std::uint64_t global_seed, std::size_t raw_dim) {
  auto rng = stream_rng(global_seed, 0, kBackgroundStream);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(raw_dim)));
  std::vector<double> bg(raw_dim);
  for (auto& v : bg) v = normal(rng);
  return bg;
}

Renderer::Renderer(std::uint64_t global_seed, const DataConfig& config)
    : config_(config), background_(background_descriptor(global_seed, config.raw_dim)) {}

SyntheticObservation Renderer::render(const Scene& scene, const Pose& pose) const {
  if (std::abs(quat_norm(pose.r) - 1.0) > 1e-6) {
    throw ContractError("render_tokens: pose quaternion is not unit-norm");
  }
  const std::size_t d = config_.raw_dim;
  if (scene.descriptors.size() != scene.landmarks.size() * d) {
    throw DimensionError("render_tokens: scene descriptors do not match raw_dim");
  }
  const Mat3 rot = rotation_matrix(pose.r);
  const double half_fov = std::tan(0.5 * config_.fov_deg * std::numbers::pi / 180.0);

  struct Hit {
    std::size_t landmark;
    double u, v;  // normalized image coordinates in [-1, 1]
  };
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < scene.landmarks.size(); ++i) {
    const Vec3& p = scene.landmarks[i];
    const Vec3 rel{p[0] - pose.t[0], p[1] - pose.t[1], p[2] - pose.t[2]};
    // camera frame: R^T (p - t)
    Vec3 c{};
    for (int a = 0; a < 3; ++a) c[a] = rot[0][a] * rel[0] + rot[1][a] * rel[1] + rot[2][a] * rel[2];
    if (c[2] <= 1e-9) continue;
    const double u = c[0] / c[2] / half_fov;
    const double v = c[1] / c[2] / half_fov;
    if (std::abs(u) > 1.0 || std::abs(v) > 1.0) continue;
    hits.push_back({i, u, v});
  }

  auto splat = [&](GridSize grid) {
    std::vector<double> tokens(grid.count() * d, 0.0);
    std::vector<std::size_t> counts(grid.count(), 0);
    for (const auto& h : hits) {
      auto col = static_cast<std::size_t>((h.u + 1.0) * 0.5 * static_cast<double>(grid.width));
      auto row = static_cast<std::size_t>((h.v + 1.0) * 0.5 * static_cast<double>(grid.height));
      col = std::min(col, grid.width - 1);
      row = std::min(row, grid.height - 1);
      const std::size_t cell = row * grid.width + col;
      const double* desc = scene.descriptors.data() + h.landmark * d;
      for (std::size_t j = 0; j < d; ++j) tokens[cell * d + j] += desc[j];
      ++counts[cell];
    }
    for (std::size_t cell = 0; cell < grid.count(); ++cell) {
      double* tok = tokens.data() + cell * d;
      if (counts[cell] == 0) {
        std::copy(background_.begin(), background_.end(), tok);
      } else {
        const double inv = 1.0 / static_cast<double>(counts[cell]);
        for (std::size_t j = 0; j < d; ++j) tok[j] *= inv;
      }
    }
    return Tensor({grid.count(), d}, std::move(tokens));
  };

  SyntheticObservation obs;
  obs.tokens_t = splat(config_.grid_t);
  obs.tokens_r = splat(config_.grid_r);
  obs.scene_id = scene.id;
  obs.pose = pose;
  return obs;
}

SyntheticObservation render_tokens(const Scene& scene, const Pose& pose, const Renderer& renderer) {
  return renderer.render(scene, pose);
}

DatasetSplit build_splits(const std::vector<Scene>& scenes, const DataConfig& config, std::uint64_t seed) {
  DatasetSplit split;
  for (const auto& scene : scenes) {
    const std::size_t n_train = config.train_size(scene.id);
    const std::size_t n_test = config.test_size(scene.id);
    if (n_train == 0) throw ContractError("build_splits: scene sizes must be positive");
    auto train_rng = stream_rng(seed, scene.id, kTrainStream);
    auto test_rng = stream_rng(seed, scene.id, kTestStream);
    for (std::size_t i = 0; i < n_train; ++i) {
      Pose p;
      p.t = sample_in_box(scene.extent, train_rng);
      p.r = quat_canonical(random_unit_quaternion(train_rng));
      split.train.push_back({scene.id, p});
    }
    for (std::size_t i = 0; i < n_test; ++i) {
      Pose p;
      p.t = sample_in_box(scene.extent, test_rng);
      p.r = quat_canonical(random_unit_quaternion(test_rng));
      split.test.push_back({scene.id, p});
    }
    split.train_counts.push_back(n_train);
    split.test_counts.push_back(n_test);
  }
  return split;
}

std::vector<std::size_t> epoch_order(const DatasetSplit& split, std::mt19937_64& rng) {
  const std::size_t scenes = split.train_counts.size();
  std::vector<std::vector<std::size_t>> by_scene(scenes);
  for (std::size_t i = 0; i < split.train.size(); ++i) by_scene.at(split.train[i].scene_id).push_back(i);
  std::size_t quota = 0;
  for (const auto& s : by_scene) quota = std::max(quota, s.size());

  std::vector<std::size_t> order;
  order.reserve(quota * scenes);
  for (auto& members : by_scene) {
    if (members.empty()) continue;
    std::size_t drawn = 0;
    while (drawn < quota) {
      std::shuffle(members.begin(), members.end(), rng);
      const std::size_t take = std::min(members.size(), quota - drawn);
      order.insert(order.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
      drawn += take;
    }
  }
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Dataset Dataset::generate(std::uint64_t seed, const DataConfig& config) {
  config.validate();
  Dataset ds;
  ds.seed = seed;
  ds.config = config;
  for (std::size_t s = 0; s < config.scenes; ++s) ds.scenes.push_back(generate_scene(seed, s, config));
  ds.split = build_splits(ds.scenes, config, seed);
  return ds;
}

// --- file format -----------------------------------------------------------

namespace {

constexpr char kDatasetMagic[8] = {'Q', 'K', 'A', 'D', 'S', 'E', 'T', '1'};

nlohmann::json config_to_json(const DataConfig& c) {
  return {{"scenes", c.scenes},
          {"landmarks", c.landmarks},
          {"raw_dim", c.raw_dim},
          {"grid_t", to_string(c.grid_t)},
          {"grid_r", to_string(c.grid_r)},
          {"extent_min", c.extent_min},
          {"extent_max", c.extent_max},
          {"shell_inner", c.shell_inner},
          {"shell_outer", c.shell_outer},
          {"fov_deg", c.fov_deg},
          {"train_sizes", c.train_sizes},
          {"test_sizes", c.test_sizes}};
}

DataConfig config_from_json(const nlohmann::json& j) {
  DataConfig c;
  c.scenes = j.at("scenes").get<std::size_t>();
  c.landmarks = j.at("landmarks").get<std::size_t>();
  c.raw_dim = j.at("raw_dim").get<std::size_t>();
  c.grid_t = parse_grid(j.at("grid_t").get<std::string>());
  c.grid_r = parse_grid(j.at("grid_r").get<std::string>());
  c.extent_min = j.at("extent_min").get<double>();
  c.extent_max = j.at("extent_max").get<double>();
  c.shell_inner = j.at("shell_inner").get<double>();
  c.shell_outer = j.at("shell_outer").get<double>();
  c.fov_deg = j.at("fov_deg").get<double>();
  c.train_sizes = j.at("train_sizes").get<std::vector<std::size_t>>();
  c.test_sizes = j.at("test_sizes").get<std::vector<std::size_t>>();
  return c;
}

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("dataset file truncated");
  return value;
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& dataset) {
  nlohmann::json header;
  header["format"] = "qkalign-dataset";
  header["version"] = 1;
  header["seed"] = dataset.seed;
  header["config"] = config_to_json(dataset.config);
  auto table = nlohmann::json::array();
  for (const auto& s : dataset.scenes) {
    table.push_back({{"id", s.id},
                     {"extent", s.extent},
                     {"landmarks", s.landmarks.size()},
                     {"train", dataset.split.train_counts.at(s.id)},
                     {"test", dataset.split.test_counts.at(s.id)}});
  }
  header["scenes"] = table;
  header["records"] = dataset.split.train.size() + dataset.split.test.size();
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kDatasetMagic, sizeof(kDatasetMagic));
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write_records = [&](const std::vector<SampleRecord>& records, std::uint8_t split) {
    for (const auto& r : records) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(r.scene_id));
      put<std::uint8_t>(os, split);
      for (double v : r.pose.t) put<double>(os, v);
      for (double v : r.pose.r) put<double>(os, v);
    }
  };
  write_records(dataset.split.train, 0);
  write_records(dataset.split.test, 1);
  if (!os) throw IoError("failed writing '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  char magic[sizeof(kDatasetMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw IoError("'" + path + "' is not a qkalign dataset");
  }
  const auto len = get<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("dataset header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("dataset header is not valid JSON: ") + e.what());
  }

  Dataset ds;
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.config = config_from_json(header.at("config"));
  ds.config.validate();
  for (std::size_t s = 0; s < ds.config.scenes; ++s) ds.scenes.push_back(generate_scene(ds.seed, s, ds.config));
  const auto& table = header.at("scenes");
  if (table.size() != ds.scenes.size()) throw IoError("dataset scene table does not match its config");
  ds.split.train_counts.assign(ds.scenes.size(), 0);
  ds.split.test_counts.assign(ds.scenes.size(), 0);
  for (const auto& row : table) {
    const auto id = row.at("id").get<std::size_t>();
    if (id >= ds.scenes.size() || row.at("extent").get<double>() != ds.scenes[id].extent) {
      throw IoError("dataset scene table disagrees with regenerated scene " + std::to_string(id));
    }
  }
  const auto n = header.at("records").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.scene_id = get<std::uint32_t>(is);
    const auto split = get<std::uint8_t>(is);
    for (auto& v : r.pose.t) v = get<double>(is);
    for (auto& v : r.pose.r) v = get<double>(is);
    if (r.scene_id >= ds.scenes.size() || split > 1) throw IoError("corrupt dataset record");
    if (split == 0) {
      ds.split.train.push_back(r);
      ++ds.split.train_counts[r.scene_id];
    } else {
      ds.split.test.push_back(r);
      ++ds.split.test_counts[r.scene_id];
    }
  }
  return ds;
}

}  // namespace qkalign
