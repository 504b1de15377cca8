#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "lesion/checkpoint.hpp"
#include "lesion/synthgen.hpp"
#include "lesion/trainer.hpp"
#include "test_util.hpp"

using namespace lesion;
using nn::Pass;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::TempDir;

namespace {

SegModelConfig small_seg() {
  BackboneScale scale;
  scale.stem_width = 4;
  scale.width_cap = 8;
  SegModelConfig c;
  c.backbone = default_backbone("efficientnet", 16, scale);
  c.decoder_widths = {8, 8, 4, 4};
  c.input_height = c.input_width = 32;
  return c;
}

ClsModelConfig small_cls(int classes = 2) {
  BackboneScale scale;
  scale.stem_width = 4;
  scale.width_cap = 8;
  ClsModelConfig c;
  c.backbone = default_backbone("resnet", 32, scale);
  c.num_classes = classes;
  c.input_height = c.input_width = 32;
  c.head_width = 8;
  return c;
}

SegDataset disks(int n, std::uint64_t seed) {
  SynthConfig s;
  s.n_samples = n;
  s.image_height = s.image_width = 32;
  s.seed = seed;
  SegDataset d{Tensor(Shape{n, 32, 32, 3}), Tensor(Shape{n, 32, 32, 1}), {}};
  NormalizationPolicy p;
  p.height = p.width = 32;
  for (int i = 0; i < n; ++i) {
    const SynthSample smp = render_seg_sample(s, i);
    d.images.set_sample(i, prepare_image(smp.image, p));
    d.masks.set_sample(i, smp.mask);
    d.ids.push_back(smp.lesion.stem);
  }
  return d;
}

ClsDataset two_class(int n) {
  ClsDataset d{Tensor(Shape{n, 32, 32, 3}), {}, {}};
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    Tensor img = random_tensor(Shape{1, 32, 32, 3}, 100 + i, 0.0, 0.2);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) img(0, y, x, label) += 0.7;
    d.images.set_sample(i, img);
    d.labels.push_back(label);
    d.ids.push_back("c" + std::to_string(i));
  }
  return d;
}

std::vector<double> flat_params(const nn::Registry& reg) {
  std::vector<double> out;
  for (const auto& p : reg.params) out.insert(out.end(), p.param->value.begin(), p.param->value.end());
  for (const auto& b : reg.buffers) out.insert(out.end(), b.buffer->begin(), b.buffer->end());
  return out;
}

std::vector<double> losses(const TrainState& s) {
  std::vector<double> out;
  for (const auto& r : s.records) out.push_back(r.loss_total);
  return out;
}

}  // namespace

TEST(EarlyStop, RuleTrace) {
  const std::vector<double> h{1.0, 0.9, 0.95, 0.96};
  for (std::size_t n = 1; n <= h.size(); ++n)
    EXPECT_EQ(early_stop_check(std::span(h.data(), n), 2, 0.0), n == 4) << "after epoch " << n;
}

TEST(EarlyStop, DecreasingNeverStops) {
  std::vector<double> h;
  for (int i = 0; i < 50; ++i) {
    h.push_back(1.0 / (i + 1));
    EXPECT_FALSE(early_stop_check(h, 3, 0.0));
  }
  EXPECT_FALSE(early_stop_check(std::vector<double>{1.0}, 2, 0.0));
  EXPECT_FALSE(early_stop_check(std::vector<double>{}, 2, 0.0));
}

TEST(EarlyStop, MinDeltaCountsSmallGainsAsStale) {
  const std::vector<double> h{1.0, 0.99995, 0.9999};
  EXPECT_TRUE(early_stop_check(h, 2, 1e-3));
  EXPECT_FALSE(early_stop_check(h, 2, 0.0));
}

// Property: never fires before `patience` epochs have passed since the best.
TEST(EarlyStopProperty, NotBeforePatienceAfterBest) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int patience = 1 + static_cast<int>(rng() % 5);
    std::vector<double> h(1 + rng() % 20);
    for (double& v : h) v = u(rng);
    const auto best = std::min_element(h.begin(), h.end()) - h.begin();
    const auto since = static_cast<long>(h.size()) - 1 - best;
    if (early_stop_check(h, patience, 0.0)) {
      EXPECT_GE(since, patience);
    }
  }
}

TEST(Adam, FirstStepIsLearningRate) {
  nn::Param p(1);
  p.value[0] = 2.0;
  p.grad[0] = 1.0;
  nn::Registry reg;
  reg.params.push_back({"w", &p});
  AdamState s = make_adam_state(reg);
  adam_step(reg, s, 0.01);
  EXPECT_NEAR(p.value[0], 2.0 - 0.01, 1e-9);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, ZeroGradsAndZeroRate) {
  nn::Param p(3);
  p.value = {1.0, -2.0, 3.0};
  nn::Registry reg;
  reg.params.push_back({"w", &p});
  AdamState s = make_adam_state(reg);
  adam_step(reg, s, 0.1);  // zero grads from a fresh state
  EXPECT_EQ(p.value, (std::vector<double>{1.0, -2.0, 3.0}));
  p.grad = {0.5, -1.0, 2.0};
  adam_step(reg, s, 0.0);
  EXPECT_EQ(p.value, (std::vector<double>{1.0, -2.0, 3.0}));
  // Moments decay under zero grads.
  const auto m1 = s.m[0], v1 = s.v[0];
  p.grad = {0.0, 0.0, 0.0};
  adam_step(reg, s, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(s.m[0][i], 0.9 * m1[i], 1e-15);
    EXPECT_NEAR(s.v[0][i], 0.999 * v1[i], 1e-15);
  }
}

TEST(Adam, SignFlipsKeepSecondMomentPositive) {
  nn::Param p(1);
  nn::Registry reg;
  reg.params.push_back({"w", &p});
  AdamState s = make_adam_state(reg);
  p.grad[0] = 1.0;
  adam_step(reg, s, 0.01);
  p.grad[0] = -1.0;
  adam_step(reg, s, 0.01);
  EXPECT_GT(s.v[0][0], 0.0);
}

TEST(Adam, NonFiniteGradientThrowsWithoutUpdate) {
  nn::Param a(2), b(2);
  a.value = {1.0, 1.0};
  b.value = {2.0, 2.0};
  a.grad = {0.1, 0.1};
  b.grad = {0.1, std::nan("")};
  nn::Registry reg;
  reg.params.push_back({"a", &a});
  reg.params.push_back({"b", &b});
  AdamState s = make_adam_state(reg);
  EXPECT_THROW(adam_step(reg, s, 0.1), Error);
  EXPECT_EQ(a.value, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(b.value, (std::vector<double>{2.0, 2.0}));
}

TEST(TrainConfig, DefaultsAndJson) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.max_epochs, 15);
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
  nlohmann::json bad = j;
  bad["lr_schedule"] = "cosine";
  EXPECT_THROW(bad.get<TrainConfig>(), Error);
}

TEST(Trainer, ZeroEpochsLeavesModel) {
  SegModel m(small_seg());
  nn::initialize(m.registry(), 1);
  const auto before = flat_params(m.registry());
  TrainConfig c;
  c.max_epochs = 0;
  const TrainState s = train_segmentation(m, disks(2, 1), nullptr, c, nullptr);
  EXPECT_TRUE(s.records.empty());
  EXPECT_EQ(flat_params(m.registry()), before);
}

TEST(Trainer, ZeroLearningRateLeavesParameters) {
  ClsModelConfig cfg = small_cls();
  cfg.backbone.normalization = false;  // running statistics are not parameters
  ClsModel m(cfg);
  nn::initialize(m.registry(), 2);
  const auto before = flat_params(m.registry());
  TrainConfig c;
  c.learning_rate = 0.0;
  c.max_epochs = 3;
  c.batch_size = 3;
  const TrainState s = train_classification(m, two_class(8), nullptr, c, nullptr);
  EXPECT_EQ(s.records.size(), 3u);
  EXPECT_EQ(flat_params(m.registry()), before);
}

TEST(Trainer, SameSeedSameRecords) {
  const SegDataset data = disks(5, 3);
  AugmentConfig aug;
  TrainConfig c;
  c.max_epochs = 3;
  c.batch_size = 2;
  c.seed = 11;
  std::vector<std::string> logs[2];
  for (int run = 0; run < 2; ++run) {
    SegModel m(small_seg());
    nn::initialize(m.registry(), 4);
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) { logs[run].push_back(epoch_record_json(r, false).dump()); };
    train_segmentation(m, data, &data, c, &aug, hooks);
  }
  EXPECT_EQ(logs[0], logs[1]);
  ASSERT_EQ(logs[0].size(), 3u);
  EXPECT_EQ(logs[0][0].find("wall_time"), std::string::npos);
}

TEST(Trainer, DifferentSeedsDiffer) {
  const ClsDataset data = two_class(6);
  TrainConfig c;
  c.max_epochs = 2;
  c.batch_size = 4;
  std::vector<double> runs[2];
  for (int run = 0; run < 2; ++run) {
    ClsModel m(small_cls());
    nn::initialize(m.registry(), 5);
    c.seed = 100 + run;
    runs[run] = losses(train_classification(m, data, nullptr, c, nullptr));
  }
  EXPECT_NE(runs[0], runs[1]);
}

TEST(Trainer, EarlyStopHaltsAndRestoresBest) {
  ClsModel m(small_cls());
  nn::initialize(m.registry(), 6);
  TrainConfig c;
  c.max_epochs = 50;
  c.batch_size = 8;
  c.learning_rate = 0.5;  // large enough to bounce around
  c.early_stop_patience = 2;
  c.early_stop_min_delta = 0.0;
  const ClsDataset data = two_class(8);
  const TrainState s = train_classification(m, data, &data, c, nullptr);
  ASSERT_FALSE(s.records.empty());
  if (s.stopped_early) {
    EXPECT_LT(static_cast<int>(s.records.size()), 50);
    EXPECT_GE(static_cast<int>(s.records.size()) - s.best_epoch, 2);  // epochs are 1-based
  }
  // The restored model reproduces the best monitored (validation) loss.
  const auto [val, report] = evaluate_classification(m, data, 8);
  EXPECT_NEAR(val, s.best_loss, 1e-9);
  (void)report;
}

TEST(Trainer, NonFiniteLossNamesBatch) {
  SegModel m(small_seg());
  nn::initialize(m.registry(), 7);
  SegDataset data = disks(3, 5);
  data.images[10] = std::nan("");
  TrainConfig c;
  c.max_epochs = 1;
  c.batch_size = 2;
  try {
    train_segmentation(m, data, nullptr, c, nullptr);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite loss"), std::string::npos) << msg;
    EXPECT_NE(msg.find(data.ids[0]), std::string::npos) << msg;
  }
}

TEST(Trainer, LossFallsOnSmallDiskSet) {
  SegModel m(small_seg());
  nn::initialize(m.registry(), 8);
  TrainConfig c;
  c.max_epochs = 12;
  c.learning_rate = 0.01;
  c.early_stop_patience = 100;
  const TrainState s = train_segmentation(m, disks(8, 9), nullptr, c, nullptr);
  const auto l = losses(s);
  ASSERT_EQ(l.size(), 12u);
  EXPECT_LT(l.back(), l.front());
}

TEST(Checkpoint, RoundTripGivesIdenticalForward) {
  TempDir d("ckpt");
  SegModel seg(small_seg());
  nn::initialize(seg.registry(), 10);
  // Move BN running statistics away from their initial values.
  seg.forward(random_tensor(Shape{2, 32, 32, 3}, 11, 0, 1), Pass::Train);
  ModelMeta meta;
  meta.normalization.height = meta.normalization.width = 32;
  meta.config_digest = "d1";
  save_checkpoint(d / "seg.ckpt", make_checkpoint(seg, meta));

  const Checkpoint loaded = load_checkpoint(d / "seg.ckpt");
  EXPECT_EQ(checkpoint_kind(loaded), "segmentation");
  EXPECT_EQ(checkpoint_meta(loaded).config_digest, "d1");
  EXPECT_EQ(checkpoint_meta(loaded).normalization, meta.normalization);
  auto seg2 = load_seg_model(loaded);
  const Tensor x = random_tensor(Shape{1, 32, 32, 3}, 12, 0, 1);
  EXPECT_EQ(max_abs_diff(seg.forward(x, Pass::Infer), seg2->forward(x, Pass::Infer)), 0.0);

  ClsModel cls(small_cls(7));
  nn::initialize(cls.registry(), 13);
  meta.class_names = {"AKIEC", "BCC", "BKL", "DF", "MEL", "NV", "VASC"};
  save_checkpoint(d / "cls.ckpt", make_checkpoint(cls, meta));
  const Checkpoint lc = load_checkpoint(d / "cls.ckpt");
  EXPECT_EQ(checkpoint_kind(lc), "classification");
  EXPECT_EQ(checkpoint_meta(lc).class_names, meta.class_names);
  EXPECT_EQ(max_abs_diff(cls.forward(x, Pass::Infer), load_cls_model(lc)->forward(x, Pass::Infer)), 0.0);
  EXPECT_THROW(load_seg_model(lc), Error);
}

TEST(Checkpoint, CorruptFilesRejected) {
  TempDir d("ckptbad");
  std::ofstream(d / "bad.ckpt") << "NOTACKPT and some bytes";
  EXPECT_THROW(load_checkpoint(d / "bad.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(d / "absent.ckpt"), Error);

  SegModel seg(small_seg());
  Checkpoint c = make_checkpoint(seg, {});
  c.tensors.pop_back();
  EXPECT_THROW(restore_registry(c, seg.registry()), Error);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  TempDir d("resume");
  const SegDataset data = disks(4, 21);
  AugmentConfig aug;
  TrainConfig c;
  c.max_epochs = 4;
  c.batch_size = 3;
  c.seed = 5;
  c.early_stop_patience = 100;

  SegModel full(small_seg());
  nn::initialize(full.registry(), 22);
  TrainHooks hooks;
  hooks.on_state = [&](const TrainState& s) {
    if (s.epochs_done != 2) return;
    Checkpoint ck = make_checkpoint(full, {});
    store_train_state(ck, s);
    save_checkpoint(d / "mid.ckpt", ck);
  };
  const TrainState a = train_segmentation(full, data, &data, c, &aug, hooks);

  const Checkpoint mid = load_checkpoint(d / "mid.ckpt");
  ASSERT_TRUE(has_train_state(mid));
  auto resumed = load_seg_model(mid);
  const TrainState state = restore_train_state(mid);
  EXPECT_EQ(state.epochs_done, 2);
  const TrainState b = train_segmentation(*resumed, data, &data, c, &aug, {}, &state);

  EXPECT_EQ(losses(a), losses(b));
  EXPECT_EQ(flat_params(full.registry()), flat_params(resumed->registry()));
}
