#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lesion/clsmodel.hpp"
#include "lesion/dataio.hpp"
#include "lesion/layers.hpp"
#include "lesion/segmodel.hpp"
#include "lesion/trainer.hpp"

namespace lesion {

/// Single-file container: magic, u64 header length, JSON header, then each
/// named tensor as raw little-endian doubles in header order.
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<double>>> tensors;

  const std::vector<double>* find(const std::string& name) const;
  void put(std::string name, std::vector<double> values);
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Store every parameter ("param:<name>") and buffer ("buffer:<name>").
void store_registry(Checkpoint& ckpt, const nn::Registry& reg);
/// Restore; every registry entry must be present with a matching size.
void restore_registry(const Checkpoint& ckpt, const nn::Registry& reg);

/// Metadata embedded in model checkpoints.
struct ModelMeta {
  NormalizationPolicy normalization;
  std::string config_digest;
  std::vector<std::string> class_names;  // classification only
};

Checkpoint make_checkpoint(SegModel& model, const ModelMeta& meta);
Checkpoint make_checkpoint(ClsModel& model, const ModelMeta& meta);

std::string checkpoint_kind(const Checkpoint& ckpt);  // "segmentation" | "classification"
ModelMeta checkpoint_meta(const Checkpoint& ckpt);
std::unique_ptr<SegModel> load_seg_model(const Checkpoint& ckpt);
std::unique_ptr<ClsModel> load_cls_model(const Checkpoint& ckpt);

/// Trainer state (optimizer moments, history, best snapshot) for --resume.
void store_train_state(Checkpoint& ckpt, const TrainState& state);
bool has_train_state(const Checkpoint& ckpt);
TrainState restore_train_state(const Checkpoint& ckpt);

}  // namespace lesion
