#include "lesion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lesion {
namespace {

constexpr char kMagic[8] = {'L', 'S', 'N', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

}  // namespace

const std::vector<double>* Checkpoint::find(const std::string& name) const {
  for (const auto& [k, v] : tensors)
    if (k == name) return &v;
  return nullptr;
}

void Checkpoint::put(std::string name, std::vector<double> values) {
  for (auto& [k, v] : tensors)
    if (k == name) {
      v = std::move(values);
      return;
    }
  tensors.emplace_back(std::move(name), std::move(values));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, values] : ckpt.tensors) index.push_back({{"name", name}, {"size", values.size()}});
  header["tensors"] = index;
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, values] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) throw Error("short write on checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path.string() + "'");
  char magic[sizeof kMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw Error("'" + path.string() + "' is not a checkpoint");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint header in '" + path.string() + "'");

  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(text);
  for (const auto& entry : ckpt.header.at("tensors")) {
    std::vector<double> values(entry.at("size").get<std::size_t>());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw Error("truncated tensor data in '" + path.string() + "'");
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(values));
  }
  ckpt.header.erase("tensors");
  return ckpt;
}

void store_registry(Checkpoint& ckpt, const nn::Registry& reg) {
  for (const auto& p : reg.params) ckpt.put("param:" + p.name, p.param->value);
  for (const auto& b : reg.buffers) ckpt.put("buffer:" + b.name, *b.buffer);
}

void restore_registry(const Checkpoint& ckpt, const nn::Registry& reg) {
  auto fetch = [&](const std::string& key, std::size_t size) -> const std::vector<double>& {
    const auto* v = ckpt.find(key);
    if (!v) throw Error("checkpoint is missing tensor '" + key + "'");
    if (v->size() != size) throw Error("checkpoint tensor '" + key + "' has the wrong size");
    return *v;
  };
  for (const auto& p : reg.params) p.param->value = fetch("param:" + p.name, p.param->size());
  for (const auto& b : reg.buffers) *b.buffer = fetch("buffer:" + b.name, b.buffer->size());
}

namespace {

void put_meta(Checkpoint& ckpt, const ModelMeta& meta) {
  ckpt.header["normalization"] = meta.normalization;
  ckpt.header["config_digest"] = meta.config_digest;
  if (!meta.class_names.empty()) ckpt.header["class_names"] = meta.class_names;
}

}  // namespace

Checkpoint make_checkpoint(SegModel& model, const ModelMeta& meta) {
  Checkpoint ckpt;
  ckpt.header["kind"] = "segmentation";
  ckpt.header["model_config"] = model.config();
  put_meta(ckpt, meta);
  store_registry(ckpt, model.registry());
  return ckpt;
}

Checkpoint make_checkpoint(ClsModel& model, const ModelMeta& meta) {
  Checkpoint ckpt;
  ckpt.header["kind"] = "classification";
  ckpt.header["model_config"] = model.config();
  put_meta(ckpt, meta);
  store_registry(ckpt, model.registry());
  return ckpt;
}

std::string checkpoint_kind(const Checkpoint& ckpt) { return ckpt.header.value("kind", ""); }

ModelMeta checkpoint_meta(const Checkpoint& ckpt) {
  ModelMeta meta;
  meta.normalization = ckpt.header.at("normalization").get<NormalizationPolicy>();
  meta.config_digest = ckpt.header.value("config_digest", "");
  if (ckpt.header.contains("class_names"))
    meta.class_names = ckpt.header.at("class_names").get<std::vector<std::string>>();
  return meta;
}

std::unique_ptr<SegModel> load_seg_model(const Checkpoint& ckpt) {
  require(checkpoint_kind(ckpt) == "segmentation", "checkpoint does not hold a segmentation model");
  auto model = std::make_unique<SegModel>(ckpt.header.at("model_config").get<SegModelConfig>());
  restore_registry(ckpt, model->registry());
  return model;
}

std::unique_ptr<ClsModel> load_cls_model(const Checkpoint& ckpt) {
  require(checkpoint_kind(ckpt) == "classification", "checkpoint does not hold a classification model");
  auto model = std::make_unique<ClsModel>(ckpt.header.at("model_config").get<ClsModelConfig>());
  restore_registry(ckpt, model->registry());
  return model;
}

namespace {

void put_list(Checkpoint& ckpt, const std::string& prefix, const std::vector<std::vector<double>>& list) {
  for (std::size_t i = 0; i < list.size(); ++i) ckpt.put(prefix + std::to_string(i), list[i]);
}

std::vector<std::vector<double>> get_list(const Checkpoint& ckpt, const std::string& prefix, std::size_t n) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* v = ckpt.find(prefix + std::to_string(i));
    if (!v) throw Error("checkpoint is missing tensor '" + prefix + std::to_string(i) + "'");
    out.push_back(*v);
  }
  return out;
}

}  // namespace

void store_train_state(Checkpoint& ckpt, const TrainState& state) {
  nlohmann::json h = train_state_header(state);
  h["n_moments"] = state.adam.m.size();
  h["n_best_params"] = state.best_params.size();
  h["n_best_buffers"] = state.best_buffers.size();
  ckpt.header["train_state"] = h;
  put_list(ckpt, "adam_m:", state.adam.m);
  put_list(ckpt, "adam_v:", state.adam.v);
  put_list(ckpt, "best_param:", state.best_params);
  put_list(ckpt, "best_buffer:", state.best_buffers);
}

bool has_train_state(const Checkpoint& ckpt) { return ckpt.header.contains("train_state"); }

TrainState restore_train_state(const Checkpoint& ckpt) {
  require(has_train_state(ckpt), "checkpoint has no trainer state");
  const auto& h = ckpt.header.at("train_state");
  TrainState s;
  s.epochs_done = h.at("epochs_done").get<int>();
  s.adam.step = h.at("adam_step").get<long long>();
  s.monitored = h.at("monitored").get<std::vector<double>>();
  s.best_loss = h.at("best_loss").get<double>();
  s.best_epoch = h.at("best_epoch").get<int>();
  s.stopped_early = h.at("stopped_early").get<bool>();
  for (const auto& r : h.at("records")) {
    EpochRecord rec;
    rec.epoch = r.at("epoch").get<int>();
    rec.loss_total = r.at("loss_total").get<double>();
    rec.loss_components = r.at("loss_components").get<std::map<std::string, double>>();
    if (r.contains("val_loss")) rec.val_loss = r.at("val_loss").get<double>();
    if (r.contains("metric_snapshot")) rec.metric_snapshot = r.at("metric_snapshot").get<MetricsReport>();
    rec.wall_time_s = r.value("wall_time_s", 0.0);
    s.records.push_back(std::move(rec));
  }
  const auto n_m = h.at("n_moments").get<std::size_t>();
  s.adam.m = get_list(ckpt, "adam_m:", n_m);
  s.adam.v = get_list(ckpt, "adam_v:", n_m);
  s.best_params = get_list(ckpt, "best_param:", h.at("n_best_params").get<std::size_t>());
  s.best_buffers = get_list(ckpt, "best_buffer:", h.at("n_best_buffers").get<std::size_t>());
  return s;
}

}  // namespace lesion
