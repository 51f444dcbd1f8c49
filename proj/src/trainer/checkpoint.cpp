#include "afcv/trainer/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "afcv/core/error.hpp"

namespace afcv::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'F', 'C', 'K'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json header;
  header["config"] = ckpt.config;
  header["epochs_done"] = ckpt.epochs_done;
  header["iteration"] = ckpt.iteration;
  header["optimizer_steps"] = ckpt.optimizer_steps;
  json tensors = json::array();
  std::vector<const Tensor*> order;
  for (const auto* group : {&ckpt.parameters, &ckpt.optimizer_state}) {
    const std::string prefix = group == &ckpt.parameters ? "param/" : "optim/";
    for (const auto& [name, t] : *group) {
      tensors.push_back({{"name", prefix + name}, {"shape", t.shape()}});
      order.push_back(&t);
    }
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : order) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out.flush()) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(in, path);
  if (len > (1u << 30)) throw IoError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint " + path.string());
  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    ckpt.config = header.at("config").get<ConfigMap>();
    ckpt.epochs_done = header.at("epochs_done").get<int>();
    ckpt.iteration = header.at("iteration").get<long long>();
    ckpt.optimizer_steps = header.at("optimizer_steps").get<long long>();
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      Tensor t(entry.at("shape").get<Shape>());
      if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
        throw IoError("truncated checkpoint " + path.string());
      }
      if (name.rfind("param/", 0) == 0) ckpt.parameters[name.substr(6)] = std::move(t);
      else if (name.rfind("optim/", 0) == 0) ckpt.optimizer_state[name.substr(6)] = std::move(t);
      else throw IoError("unknown tensor group in checkpoint " + path.string());
    }
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  return ckpt;
}

Checkpoint snapshot(const segcore::AfcvModel& model) {
  Checkpoint ckpt;
  for (const auto& p : model.parameters()) ckpt.parameters[p.name] = p.var.value();
  return ckpt;
}

void restore_parameters(segcore::AfcvModel& model, const Checkpoint& ckpt) {
  if (ckpt.parameters.size() != model.parameters().size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " parameters, model has " +
                      std::to_string(model.parameters().size()));
  }
  for (auto& p : model.parameters()) {
    auto it = ckpt.parameters.find(p.name);
    if (it == ckpt.parameters.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.var.shape()) {
      throw ConfigError("parameter '" + p.name + "' is " + shape_str(it->second.shape()) + " in the checkpoint but " +
                        shape_str(p.var.shape()) + " in the model");
    }
    p.var.mutable_value() = it->second;
  }
}

}  // namespace afcv::trainer
