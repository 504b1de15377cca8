#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesion/augment.hpp"
#include "lesion/clsmodel.hpp"
#include "lesion/dataio.hpp"
#include "lesion/layers.hpp"
#include "lesion/metrics.hpp"
#include "lesion/segmodel.hpp"

namespace lesion {

enum class Monitor { Auto, TrainLoss, ValLoss };
std::string_view to_string(Monitor m);
Monitor parse_monitor(std::string_view s);

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1e-3;
  int max_epochs = 15;
  int early_stop_patience = 5;
  double early_stop_min_delta = 1e-4;
  std::uint64_t seed = 0;
  Monitor monitor = Monitor::Auto;  // val loss when a validation set is given
  double dice_eps = 1.0;
  bool log_wall_time = false;       // wall time breaks byte-identical logs

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  double loss_total = 0.0;
  std::map<std::string, double> loss_components;
  std::optional<double> val_loss;
  std::optional<MetricsReport> metric_snapshot;
  double wall_time_s = 0.0;
};

/// One JSON line per epoch; wall time only when requested.
nlohmann::json epoch_record_json(const EpochRecord& r, bool include_wall_time);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for every parameter, in registry order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;
};

AdamState make_adam_state(const nn::Registry& reg);

/// One bias-corrected Adam update of every parameter from its grad.
/// Throws when any gradient is non-finite; parameters are left untouched then.
void adam_step(const nn::Registry& reg, AdamState& state, double learning_rate,
               const AdamHyper& hyper = {});

/// True when the last `patience` epochs brought no improvement greater than
/// min_delta over the best loss seen before them.
bool early_stop_check(std::span<const double> history, int patience, double min_delta);

struct SegDataset {
  Tensor images;  // (n, h, w, c)
  Tensor masks;   // (n, h, w, 1)
  std::vector<std::string> ids;
};

struct ClsDataset {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

SegDataset load_seg_dataset(const DatasetManifest& m, const NormalizationPolicy& policy);
ClsDataset load_cls_dataset(const DatasetManifest& m, const NormalizationPolicy& policy);

/// Everything needed to continue a run where it stopped.
struct TrainState {
  int epochs_done = 0;
  AdamState adam;
  std::vector<double> monitored;  // per-epoch monitored loss
  std::vector<EpochRecord> records;
  double best_loss = 0.0;
  int best_epoch = -1;
  std::vector<std::vector<double>> best_params;
  std::vector<std::vector<double>> best_buffers;
  bool stopped_early = false;
};

nlohmann::json train_state_header(const TrainState& s);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after every epoch with the current state (e.g. to checkpoint).
  std::function<void(const TrainState&)> on_state;
};

/// Trains with Adam, restores the best monitored snapshot at the end and
/// returns the final state. `resume` continues a previous run.
TrainState train_segmentation(SegModel& model, const SegDataset& train, const SegDataset* val,
                              const TrainConfig& config, const AugmentConfig* augment,
                              const TrainHooks& hooks = {}, const TrainState* resume = nullptr);

TrainState train_classification(ClsModel& model, const ClsDataset& train, const ClsDataset* val,
                                 const TrainConfig& config, const AugmentConfig* augment,
                                 const TrainHooks& hooks = {}, const TrainState* resume = nullptr);

/// Mean seg loss and Dice/mIoU (threshold 0.5) over a dataset, Infer pass.
std::pair<double, MetricsReport> evaluate_segmentation(SegModel& model, const SegDataset& data,
                                                       int batch_size, double dice_eps = 1.0);
/// Mean cross-entropy and accuracy over a dataset, Infer pass.
std::pair<double, MetricsReport> evaluate_classification(ClsModel& model, const ClsDataset& data,
                                                         int batch_size);

}  // namespace lesion
