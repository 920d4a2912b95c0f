#pragma once

// Synthetic multi-scene pose data. A scene is a fixed cloud of landmarks
// with random descriptors surrounding a box of camera positions; an
// observation splats the descriptors of the landmarks a pinhole camera sees
// onto two token grids (one per transformer branch).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qkalign/pose.hpp"
#include "qkalign/positional.hpp"
#include "qkalign/tensor.hpp"

namespace qkalign {

struct DataConfig {
  std::size_t scenes = 8;
  std::size_t landmarks = 64;
  std::size_t raw_dim = 64;
  GridSize grid_t{7, 7};
  GridSize grid_r{14, 14};
  double extent_min = 1.0;
  double extent_max = 2.5;
  // Landmark radii, as multiples of the scene extent.
  double shell_inner = 2.0;
  double shell_outer = 3.0;
  double fov_deg = 90.0;
  // One entry per scene; a single entry applies to every scene.
  std::vector<std::size_t> train_sizes{256};
  std::vector<std::size_t> test_sizes{64};

  void validate() const;
  std::size_t train_size(std::size_t scene) const;
  std::size_t test_size(std::size_t scene) const;
};

struct Scene {
  std::size_t id = 0;
  double extent = 1.0;
  std::vector<Vec3> landmarks;
  std::vector<double> descriptors;  // landmarks.size() x raw_dim
};

struct SyntheticObservation {
  Tensor tokens_t;  // grid_t.count() x raw_dim
  Tensor tokens_r;  // grid_r.count() x raw_dim
  std::size_t scene_id = 0;
  Pose pose;
};

Scene generate_scene(std::uint64_t global_seed, std::size_t scene_id, const DataConfig& config);

// Shared by all scenes: the descriptor of a cell no landmark projects into.
std::vector<double> background_descriptor(std::uint64_t global_seed, std::size_t raw_dim);

class Renderer {
 public:
  Renderer(std::uint64_t global_seed, const DataConfig& config);

  SyntheticObservation render(const Scene& scene, const Pose& pose) const;
  const DataConfig& config() const { return config_; }
  const std::vector<double>& background() const { return background_; }

 private:
  DataConfig config_;
  std::vector<double> background_;
};

SyntheticObservation render_tokens(const Scene& scene, const Pose& pose, const Renderer& renderer);

struct SampleRecord {
  std::size_t scene_id = 0;
  Pose pose;
};

struct DatasetSplit {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  std::vector<std::size_t> train_counts;
  std::vector<std::size_t> test_counts;
};

DatasetSplit build_splits(const std::vector<Scene>& scenes, const DataConfig& config, std::uint64_t seed);

// Indices into the train list for one epoch. Every scene contributes as many
// draws as the largest scene holds; smaller scenes cycle through fresh
// shuffles of their samples.
std::vector<std::size_t> epoch_order(const DatasetSplit& split, std::mt19937_64& rng);

struct Dataset {
  std::uint64_t seed = 0;
  DataConfig config;
  std::vector<Scene> scenes;
  DatasetSplit split;

  static Dataset generate(std::uint64_t seed, const DataConfig& config);
};

// Binary container: see docs/FORMATS.md.
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

}  // namespace qkalign
