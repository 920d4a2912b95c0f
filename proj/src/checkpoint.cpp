#include "qkalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>

#include "qkalign/error.hpp"

namespace qkalign {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'Q', 'K', 'A', 'C', 'K', 'P', 'T', '1'};

}  // namespace

std::vector<NamedTensor> checkpoint_tensors(const PoseTransformer& model, const LossParams& loss) {
  auto out = model.parameters();
  out.push_back({"loss.s_t", loss.s_t});
  out.push_back({"loss.s_r", loss.s_r});
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  nlohmann::json manifest;
  manifest["format"] = "qkalign-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = serialize_config(checkpoint.config);
  manifest["phase"] = checkpoint.phase;
  manifest["epoch"] = checkpoint.epoch;
  std::uint64_t offset = 0;
  auto& list = manifest["params"] = nlohmann::json::array();
  for (const auto& p : checkpoint.params) {
    list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += p.tensor.numel();
  }
  manifest["values"] = offset;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : checkpoint.params) {
    auto d = p.tensor.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path + ": not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 26)) throw IoError(path + ": bad manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path + ": truncated manifest");

  Checkpoint ck;
  try {
    auto manifest = nlohmann::json::parse(text);
    if (manifest.at("format") != "qkalign-checkpoint" || manifest.at("version") != 1) {
      throw IoError(path + ": unsupported checkpoint version");
    }
    ck.config = parse_config(manifest.at("config").get<std::string>());
    ck.phase = manifest.at("phase").get<std::string>();
    ck.epoch = manifest.at("epoch").get<std::size_t>();
    for (const auto& p : manifest.at("params")) {
      Shape shape = p.at("shape").get<Shape>();
      std::vector<double> values(shape_numel(shape));
      in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
      if (!in) throw IoError(path + ": truncated parameter data");
      ck.params.push_back({p.at("name").get<std::string>(), Tensor(shape, std::move(values), true)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad manifest: " + e.what());
  }
  return ck;
}

void restore(const Checkpoint& checkpoint, PoseTransformer& model, LossParams& loss) {
  std::map<std::string, const Tensor*> stored;
  for (const auto& p : checkpoint.params) stored[p.name] = &p.tensor;
  for (auto& target : checkpoint_tensors(model, loss)) {
    auto it = stored.find(target.name);
    if (it == stored.end()) throw ContractError("checkpoint is missing " + target.name);
    if (it->second->shape() != target.tensor.shape()) {
      throw ContractError("checkpoint shape mismatch for " + target.name + ": " + shape_str(it->second->shape()) +
                          " vs " + shape_str(target.tensor.shape()));
    }
    auto src = it->second->data();
    auto dst = target.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

LoadedModel load_model(const std::string& path) {
  auto ck = load_checkpoint(path);
  LoadedModel lm{ck, PoseTransformer(ck.config.model, ck.config.seed), LossParams::init(ck.config.loss)};
  restore(lm.checkpoint, lm.model, lm.loss);
  return lm;
}

}  // namespace qkalign
