#include "lesion/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "lesion/losses.hpp"
#include "lesion/seeding.hpp"

namespace lesion {

std::string_view to_string(Monitor m) {
  switch (m) {
    case Monitor::Auto: return "auto";
    case Monitor::TrainLoss: return "train_loss";
    case Monitor::ValLoss: return "val_loss";
  }
  return "auto";
}

Monitor parse_monitor(std::string_view s) {
  if (s == "auto") return Monitor::Auto;
  if (s == "train_loss") return Monitor::TrainLoss;
  if (s == "val_loss") return Monitor::ValLoss;
  throw Error("unknown monitor '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
  require(max_epochs >= 0, "max_epochs must be >= 0");
  require(early_stop_patience >= 1, "early_stop_patience must be >= 1");
  require(early_stop_min_delta >= 0.0, "early_stop_min_delta must be >= 0");
  require(dice_eps > 0.0, "dice_eps must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"max_epochs", c.max_epochs},
                     {"early_stop_patience", c.early_stop_patience},
                     {"early_stop_min_delta", c.early_stop_min_delta},
                     {"seed", c.seed},
                     {"monitor", to_string(c.monitor)},
                     {"dice_eps", c.dice_eps},
                     {"log_wall_time", c.log_wall_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "batch_size") c.batch_size = it->get<int>();
    else if (k == "learning_rate") c.learning_rate = it->get<double>();
    else if (k == "max_epochs") c.max_epochs = it->get<int>();
    else if (k == "early_stop_patience") c.early_stop_patience = it->get<int>();
    else if (k == "early_stop_min_delta") c.early_stop_min_delta = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else if (k == "monitor") c.monitor = parse_monitor(it->get<std::string>());
    else if (k == "dice_eps") c.dice_eps = it->get<double>();
    else if (k == "log_wall_time") c.log_wall_time = it->get<bool>();
    else throw Error("unknown key '" + k + "' in train config");
  }
  c.validate();
}

nlohmann::json epoch_record_json(const EpochRecord& r, bool include_wall_time) {
  nlohmann::json j{{"epoch", r.epoch}, {"loss_total", r.loss_total}, {"loss_components", r.loss_components}};
  if (r.val_loss) j["val_loss"] = *r.val_loss;
  if (r.metric_snapshot) j["metric_snapshot"] = *r.metric_snapshot;
  if (include_wall_time) j["wall_time_s"] = r.wall_time_s;
  return j;
}

AdamState make_adam_state(const nn::Registry& reg) {
  AdamState s;
  for (const auto& p : reg.params) {
    s.m.emplace_back(p.param->size(), 0.0);
    s.v.emplace_back(p.param->size(), 0.0);
  }
  return s;
}

void adam_step(const nn::Registry& reg, AdamState& state, double learning_rate, const AdamHyper& hyper) {
  require(state.m.size() == reg.params.size() && state.v.size() == reg.params.size(),
          "optimizer state does not match the model");
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    const auto& g = reg.params[i].param->grad;
    require(state.m[i].size() == g.size(), "optimizer state does not match parameter '" + reg.params[i].name + "'");
    for (double v : g)
      if (!std::isfinite(v)) throw Error("non-finite gradient in parameter '" + reg.params[i].name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    auto& p = *reg.params[i].param;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const std::size_t n = p.size();
#pragma omp parallel for schedule(static) if (n > 4096)
    for (std::size_t k = 0; k < n; ++k) {
      const double g = p.grad[k];
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
      p.value[k] -= learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper.eps);
    }
  }
}

bool early_stop_check(std::span<const double> history, int patience, double min_delta) {
  double best = std::numeric_limits<double>::infinity();
  int wait = 0;
  for (double l : history) {
    if (l < best - min_delta) {
      best = l;
      wait = 0;
    } else {
      ++wait;
    }
  }
  return wait >= patience;
}

SegDataset load_seg_dataset(const DatasetManifest& m, const NormalizationPolicy& policy) {
  require(m.kind == DatasetKind::Segmentation, "manifest is not a segmentation dataset");
  require(!m.samples.empty(), "manifest is empty");
  Batch b = load_batch(m.samples, policy);
  SegDataset d{std::move(b.images), std::move(b.masks), {}};
  for (const auto& s : m.samples) d.ids.push_back(s.stem);
  return d;
}

ClsDataset load_cls_dataset(const DatasetManifest& m, const NormalizationPolicy& policy) {
  require(m.kind == DatasetKind::Classification, "manifest is not a classification dataset");
  require(!m.samples.empty(), "manifest is empty");
  Batch b = load_batch(m.samples, policy);
  ClsDataset d{std::move(b.images), std::move(b.labels), {}};
  for (const auto& s : m.samples) d.ids.push_back(s.stem);
  return d;
}

nlohmann::json train_state_header(const TrainState& s) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : s.records) records.push_back(epoch_record_json(r, true));
  return {{"epochs_done", s.epochs_done},
          {"adam_step", s.adam.step},
          {"monitored", s.monitored},
          {"records", records},
          {"best_loss", s.best_loss},
          {"best_epoch", s.best_epoch},
          {"stopped_early", s.stopped_early}};
}

namespace {

Tensor gather(const Tensor& src, std::span<const int> idx) {
  Shape s = src.shape();
  s.n = static_cast<int>(idx.size());
  Tensor out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) out.set_sample(static_cast<int>(i), src.sample(idx[i]));
  return out;
}

std::vector<std::vector<double>> snapshot_params(const nn::Registry& reg) {
  std::vector<std::vector<double>> out;
  for (const auto& p : reg.params) out.push_back(p.param->value);
  return out;
}

std::vector<std::vector<double>> snapshot_buffers(const nn::Registry& reg) {
  std::vector<std::vector<double>> out;
  for (const auto& b : reg.buffers) out.push_back(*b.buffer);
  return out;
}

void restore_snapshot(const nn::Registry& reg, const TrainState& s) {
  if (s.best_params.empty()) return;
  for (std::size_t i = 0; i < reg.params.size(); ++i) reg.params[i].param->value = s.best_params[i];
  for (std::size_t i = 0; i < reg.buffers.size(); ++i) *reg.buffers[i].buffer = s.best_buffers[i];
}

std::string describe_batch(int epoch, int batch, std::span<const int> idx, const std::vector<std::string>& ids) {
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << ", batch " << batch << " (samples:";
  for (int i : idx) os << ' ' << (static_cast<std::size_t>(i) < ids.size() ? ids[i] : std::to_string(i));
  os << ")";
  return os.str();
}

// Task adapters: step() runs a Train forward/backward on one batch and
// returns the batch loss; validate() evaluates a held-out set.
struct SegTask {
  SegModel& model;
  const SegDataset& train;
  const SegDataset* val;
  const TrainConfig& config;
  const AugmentConfig* augment;
  std::uint64_t augment_seed;

  int size() const { return train.images.n(); }
  const std::vector<std::string>& ids() const { return train.ids; }

  LossValue step(std::span<const int> idx, int epoch) {
    Tensor x = gather(train.images, idx);
    Tensor y = gather(train.masks, idx);
    if (augment) {
      const int n = static_cast<int>(idx.size());
#pragma omp parallel for schedule(static)
      for (int i = 0; i < n; ++i) {
        const auto seed = augment_sample_seed(augment_seed, static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(idx[i]));
        auto [img, msk] = augment_pair(x.sample(i), y.sample(i), *augment, seed);
        x.set_sample(i, img);
        y.set_sample(i, msk);
      }
    }
    const Tensor probs = model.run(x, nn::Pass::Train).probs;
    BatchLoss loss = seg_batch_loss(probs, y, config.dice_eps);
    if (std::isfinite(loss.value.total)) model.backward(loss.grad);
    return loss.value;
  }

  std::pair<double, MetricsReport> validate() {
    return evaluate_segmentation(model, *val, config.batch_size, config.dice_eps);
  }
};

struct ClsTask {
  ClsModel& model;
  const ClsDataset& train;
  const ClsDataset* val;
  const TrainConfig& config;
  const AugmentConfig* augment;
  std::uint64_t augment_seed;

  int size() const { return train.images.n(); }
  const std::vector<std::string>& ids() const { return train.ids; }

  LossValue step(std::span<const int> idx, int epoch) {
    Tensor x = gather(train.images, idx);
    std::vector<int> labels;
    for (int i : idx) labels.push_back(train.labels[static_cast<std::size_t>(i)]);
    if (augment) {
      const int n = static_cast<int>(idx.size());
#pragma omp parallel for schedule(static)
      for (int i = 0; i < n; ++i) {
        const auto seed = augment_sample_seed(augment_seed, static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(idx[i]));
        x.set_sample(i, augment_image(x.sample(i), *augment, seed));
      }
    }
    const Tensor probs = model.forward(x, nn::Pass::Train);
    BatchLoss loss = cls_batch_loss(probs, labels);
    if (std::isfinite(loss.value.total)) model.backward(loss.grad);
    return loss.value;
  }

  std::pair<double, MetricsReport> validate() {
    return evaluate_classification(model, *val, config.batch_size);
  }
};

constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;

template <typename Task>
TrainState fit(Task& task, nn::Registry reg, const TrainConfig& config, bool has_val,
               const TrainHooks& hooks, const TrainState* resume) {
  config.validate();
  require(task.size() > 0, "training set is empty");
  require(config.monitor != Monitor::ValLoss || has_val, "monitor val_loss needs a validation set");
  const bool monitor_val = config.monitor == Monitor::ValLoss || (config.monitor == Monitor::Auto && has_val);

  TrainState state;
  if (resume) {
    state = *resume;
    require(state.adam.m.size() == reg.params.size(), "resume state does not match the model");
  } else {
    state.adam = make_adam_state(reg);
  }

  const int N = task.size();
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int epoch = state.epochs_done; epoch < config.max_epochs && !state.stopped_early; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(derive_seed({config.seed, static_cast<std::uint64_t>(epoch), kShuffleTag}));
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    std::map<std::string, double> components;
    for (int start = 0, batch = 0; start < N; start += config.batch_size, ++batch) {
      const int count = std::min(config.batch_size, N - start);
      const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(count));
      reg.zero_grad();
      const LossValue lv = task.step(idx, epoch);
      if (!std::isfinite(lv.total)) throw Error(describe_batch(epoch + 1, batch + 1, idx, task.ids()));
      adam_step(reg, state.adam, config.learning_rate);
      total += lv.total * count;
      for (const auto& [k, v] : lv.components) components[k] += v * count;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss_total = total / N;
    for (auto& [k, v] : components) rec.loss_components[k] = v / N;
    if (has_val) {
      auto [vl, report] = task.validate();
      rec.val_loss = vl;
      rec.metric_snapshot = std::move(report);
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double monitored = monitor_val ? *rec.val_loss : rec.loss_total;
    if (state.best_epoch < 0 || monitored < state.best_loss) {
      state.best_loss = monitored;
      state.best_epoch = rec.epoch;
      state.best_params = snapshot_params(reg);
      state.best_buffers = snapshot_buffers(reg);
    }
    state.monitored.push_back(monitored);
    state.records.push_back(rec);
    state.epochs_done = epoch + 1;
    state.stopped_early = early_stop_check(state.monitored, config.early_stop_patience, config.early_stop_min_delta);

    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (hooks.on_state) hooks.on_state(state);
  }
  restore_snapshot(reg, state);
  return state;
}

}  // namespace

TrainState train_segmentation(SegModel& model, const SegDataset& train, const SegDataset* val,
                              const TrainConfig& config, const AugmentConfig* augment,
                              const TrainHooks& hooks, const TrainState* resume) {
  require(train.images.n() == train.masks.n(), "image and mask counts differ");
  if (augment) augment->validate();
  SegTask task{model, train, val, config, augment, derive_seed({config.seed, augment ? augment->seed : 0})};
  return fit(task, model.registry(), config, val != nullptr && val->images.n() > 0, hooks, resume);
}

TrainState train_classification(ClsModel& model, const ClsDataset& train, const ClsDataset* val,
                                 const TrainConfig& config, const AugmentConfig* augment,
                                 const TrainHooks& hooks, const TrainState* resume) {
  require(static_cast<std::size_t>(train.images.n()) == train.labels.size(), "image and label counts differ");
  if (augment) augment->validate();
  ClsTask task{model, train, val, config, augment, derive_seed({config.seed, augment ? augment->seed : 0})};
  return fit(task, model.registry(), config, val != nullptr && val->images.n() > 0, hooks, resume);
}

std::pair<double, MetricsReport> evaluate_segmentation(SegModel& model, const SegDataset& data,
                                                       int batch_size, double dice_eps) {
  const int N = data.images.n();
  require(N > 0, "no samples");
  double total = 0.0;
  std::vector<MaskPair> pairs;
  std::vector<int> idx;
  for (int start = 0; start < N; start += batch_size) {
    const int count = std::min(batch_size, N - start);
    idx.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    const Tensor x = gather(data.images, idx);
    const Tensor y = gather(data.masks, idx);
    const Tensor probs = model.run(x, nn::Pass::Infer).probs;
    total += seg_batch_loss(probs, y, dice_eps).value.total * count;
    const Tensor pred = threshold_mask(probs);
    for (int i = 0; i < count; ++i) pairs.emplace_back(pred.sample(i), y.sample(i));
  }
  return {total / N, segmentation_report(pairs)};
}

std::pair<double, MetricsReport> evaluate_classification(ClsModel& model, const ClsDataset& data,
                                                         int batch_size) {
  const int N = data.images.n();
  require(N > 0, "no samples");
  const int K = model.config().num_classes;
  double total = 0.0;
  std::vector<int> preds, idx;
  for (int start = 0; start < N; start += batch_size) {
    const int count = std::min(batch_size, N - start);
    idx.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    const Tensor probs = model.forward(gather(data.images, idx), nn::Pass::Infer);
    const std::span<const int> labels(data.labels.data() + start, static_cast<std::size_t>(count));
    total += cls_batch_loss(probs, labels).value.total * count;
    for (int i = 0; i < count; ++i)
      preds.push_back(argmax_lowest(probs.values().subspan(static_cast<std::size_t>(i) * K, K)));
  }
  MetricsReport report = classification_report(preds, data.labels, K);
  for (int k = 0; k < K; ++k)
    report.class_names.push_back(k < kNumLesionClasses ? lesion_class_name(k) : std::to_string(k));
  return {total / N, report};
}

}  // namespace lesion
