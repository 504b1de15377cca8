#include <gtest/gtest.h>

#include <cmath>

#include "lesion/losses.hpp"
#include "lesion/metrics.hpp"
#include "test_util.hpp"

using namespace lesion;
using testutil::random_mask;
using testutil::random_tensor;

namespace {

std::vector<double> vec(std::initializer_list<double> v) { return v; }

// Central-difference gradient of a scalar function of a vector.
template <typename F>
std::vector<double> numeric_grad(F f, std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x[i];
    x[i] = o + h;
    const double a = f(x);
    x[i] = o - h;
    const double b = f(x);
    x[i] = o;
    g[i] = (a - b) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(DiceLoss, Examples) {
  const auto g = vec({1, 1, 1, 1, 1, 1, 1, 1, 0, 0});
  EXPECT_NEAR(dice_loss(g, g, 1.0), 0.0, 1e-15);
  const auto z = vec({0, 0, 0, 0});
  EXPECT_NEAR(dice_loss(z, z, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(dice_loss(vec({1, 1, 0, 0}), vec({1, 0, 1, 0}), 0.0), 0.5, 1e-15);
  EXPECT_THROW(dice_loss(vec({1, 0}), vec({1, 0, 1}), 1.0), Error);
}

TEST(BinaryCrossEntropy, Examples) {
  EXPECT_NEAR(binary_cross_entropy(vec({0.5, 0.5, 0.5}), vec({1, 0, 1})), std::log(2.0), 1e-12);
  EXPECT_NEAR(binary_cross_entropy(vec({0.25}), vec({1})), 1.3862943611198906, 1e-12);
  const double perfect = binary_cross_entropy(vec({1.0, 0.0}), vec({1, 0}));
  EXPECT_GE(perfect, 0.0);
  EXPECT_NEAR(perfect, -std::log(1 - kProbClip), 1e-12);
}

TEST(SegLoss, ClosedForm) {
  const LossValue v = seg_loss(vec({0.5, 0.5, 0.5, 0.5}), vec({1, 1, 0, 0}), 0.0);
  EXPECT_NEAR(v.components.at("bce"), 0.6931471805599453, 1e-12);
  EXPECT_NEAR(v.components.at("dice"), 0.5, 1e-12);
  EXPECT_NEAR(v.total, 1.1931471805599454, 1e-12);
  EXPECT_NEAR(v.total, v.components.at("bce") + v.components.at("dice"), 1e-9);
  const LossValue perfect = seg_loss(vec({1, 0, 1}), vec({1, 0, 1}));
  EXPECT_NEAR(perfect.total, 0.0, 1e-6);
}

TEST(CategoricalCrossEntropy, Examples) {
  // Bounded by the clip: -ln(1 - 1e-7).
  EXPECT_NEAR(categorical_cross_entropy(vec({0, 0, 1, 0, 0, 0, 0}), 2, 7), 0.0, 2e-7);
  std::vector<double> u(7, 1.0 / 7);
  EXPECT_NEAR(categorical_cross_entropy(u, 4, 7), 1.9459101490553132, 1e-12);
  EXPECT_NEAR(categorical_cross_entropy(vec({0.5, 0.25, 0.25}), 0, 3), std::log(2.0), 1e-12);
  EXPECT_THROW(categorical_cross_entropy(vec({0.5, 0.5}), 0, 7), Error);
}

TEST(LossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> p(12), g(12);
    for (auto& v : p) v = u(rng);
    for (auto& v : g) v = rng() % 2;
    std::vector<double> dd(12, 0.0), db(12, 0.0);
    dice_loss_grad(p, g, 1.0, dd);
    binary_cross_entropy_grad(p, g, db);
    const auto nd = numeric_grad([&](const std::vector<double>& x) { return dice_loss(x, g, 1.0); }, p);
    const auto nb = numeric_grad([&](const std::vector<double>& x) { return binary_cross_entropy(x, g); }, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_LE(testutil::rel_error(dd[i], nd[i]), 1e-5);
      EXPECT_LE(testutil::rel_error(db[i], nb[i]), 1e-5);
    }

    std::vector<double> probs(7);
    double s = 0.0;
    for (auto& v : probs) s += (v = u(rng));
    for (auto& v : probs) v /= s;
    const int label = static_cast<int>(rng() % 7);
    std::vector<double> dc(7, 0.0);
    categorical_cross_entropy_grad(probs, label, dc);
    const auto nc = numeric_grad([&](const std::vector<double>& x) { return categorical_cross_entropy(x, label, 7); },
                                 probs);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_LE(testutil::rel_error(dc[i], nc[i]), 1e-5);
  }
}

TEST(LossProperties, RangesAndIdentity) {
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = random_tensor(Shape{1, 5, 5, 1}, trial, 0.0, 1.0);
    const Tensor g = random_mask(Shape{1, 5, 5, 1}, 100 + trial);
    const double d = dice_loss(p.values(), g.values(), 1.0);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_GE(binary_cross_entropy(p.values(), g.values()), 0.0);
    EXPECT_NEAR(dice_loss(g.values(), g.values(), 1.0), 0.0, 1e-15);
  }
}

TEST(BatchLoss, MeanOverImages) {
  const Tensor p = random_tensor(Shape{3, 4, 4, 1}, 7, 0.1, 0.9);
  const Tensor g = random_mask(Shape{3, 4, 4, 1}, 8);
  const BatchLoss b = seg_batch_loss(p, g);
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    const LossValue v = seg_loss(p.sample(i).values(), g.sample(i).values());
    EXPECT_NEAR(b.per_sample[static_cast<std::size_t>(i)], v.total, 1e-12);
    sum += v.total;
  }
  EXPECT_NEAR(b.value.total, sum / 3, 1e-12);
  EXPECT_NEAR(b.value.total, b.value.components.at("bce") + b.value.components.at("dice"), 1e-9);

  // The batch gradient is d(mean)/dP.
  Tensor q = p;
  const std::size_t i = 21;
  const double h = 1e-6;
  q[i] = p[i] + h;
  const double a = seg_batch_loss(q, g).value.total;
  q[i] = p[i] - h;
  const double c = seg_batch_loss(q, g).value.total;
  EXPECT_LE(testutil::rel_error(b.grad[i], (a - c) / (2 * h)), 1e-5);
}

TEST(Metrics, DiceExamples) {
  const auto a = vec({1, 1, 1, 1, 0, 0, 0, 0});
  EXPECT_EQ(dice_score(a, a), 1.0);
  EXPECT_EQ(dice_score(a, vec({0, 0, 0, 0, 1, 1, 1, 1})), 0.0);
  EXPECT_EQ(dice_score(a, vec({0, 0, 1, 1, 1, 1, 0, 0})), 0.5);
  EXPECT_EQ(dice_score(vec({0, 0}), vec({0, 0})), 1.0);
  EXPECT_THROW(dice_score(vec({0.5, 1}), vec({1, 1})), Error);
}

TEST(Metrics, IouExamples) {
  const auto a = vec({1, 1, 1, 1, 0, 0, 0, 0});
  EXPECT_EQ(iou(a, a), 1.0);
  // |P∩G| = 2, |P∪G| = 6
  EXPECT_DOUBLE_EQ(iou(a, vec({0, 0, 1, 1, 1, 1, 0, 0})), 2.0 / 6.0);
  EXPECT_EQ(iou(vec({0}), vec({0})), 1.0);
  EXPECT_THROW(iou(vec({2}), vec({1})), Error);
}

TEST(Metrics, MeanIou) {
  const Tensor a = random_mask(Shape{1, 4, 4, 1}, 1), b = random_mask(Shape{1, 4, 4, 1}, 2);
  EXPECT_EQ(mean_iou({{a, b}}), iou(a.values(), b.values()));
  Tensor ones(Shape{1, 2, 2, 1}, 1.0), zeros(Shape{1, 2, 2, 1}, 0.0);
  EXPECT_EQ(mean_iou({{ones, ones}, {ones, zeros}}), 0.5);
  // two-class: fg IoU 0, bg IoU 0 for the second pair; first pair fg 1, bg 1 (both empty bg)
  EXPECT_EQ(mean_iou({{ones, ones}, {ones, zeros}}, MiouConvention::PerImageTwoClass), 0.5);
  EXPECT_THROW(mean_iou({}), Error);
}

// Property: identity, symmetry, bounds and monotonicity over random pairs.
TEST(MetricsProperty, RandomPairs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor p = random_mask(Shape{1, 6, 6, 1}, rng(), 0.3 + 0.4 * (trial % 2));
    const Tensor g = random_mask(Shape{1, 6, 6, 1}, rng());
    const double d = dice_score(p.values(), g.values()), j = iou(p.values(), g.values());
    EXPECT_NEAR(j, d / (2 - d), 1e-12);
    EXPECT_EQ(d, dice_score(g.values(), p.values()));
    EXPECT_EQ(j, iou(g.values(), p.values()));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    // Swap one P-only pixel with one non-P pixel inside G: |P| fixed, |P∩G| grows.
    Tensor q = p;
    int from = -1, to = -1;
    for (int i = 0; i < 36; ++i) {
      if (from < 0 && p[i] == 1 && g[i] == 0) from = i;
      if (to < 0 && p[i] == 0 && g[i] == 1) to = i;
    }
    if (from >= 0 && to >= 0) {
      q[from] = 0, q[to] = 1;
      EXPECT_GE(dice_score(q.values(), g.values()), d);
      EXPECT_GE(iou(q.values(), g.values()), j);
    }
  }
}

TEST(Metrics, ClassificationReport) {
  const std::vector<int> truth{0, 1, 2, 3, 4, 5, 6};
  const auto all = classification_report(truth, truth, 7);
  EXPECT_EQ(all.accuracy, 1.0);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) EXPECT_EQ(all.confusion[i][j], i == j ? 1 : 0);

  const std::vector<int> pred{0, 1, 2, 3, 4, 0, 0};
  const auto r = classification_report(pred, truth, 7);
  EXPECT_DOUBLE_EQ(r.accuracy, 5.0 / 7.0);
  long long trace = 0;
  for (int i = 0; i < 7; ++i) {
    trace += r.confusion[i][i];
    long long row = 0;
    for (long long v : r.confusion[i]) row += v;
    EXPECT_EQ(row, 1);
  }
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(trace) / r.n_samples);
  EXPECT_THROW(classification_report(std::vector<int>{}, std::vector<int>{}, 7), Error);
}

TEST(Metrics, PercentFormatting) {
  EXPECT_EQ(percent(0.8956), "89.56");
  EXPECT_EQ(percent(1.0), "100.00");
  EXPECT_EQ(percent(0.0), "0.00");
  MetricsReport r;
  r.task = "segmentation";
  r.dice = 0.8956;
  r.miou = 0.8142;
  const std::string text = format_report(r);
  EXPECT_NE(text.find("Dice Score"), std::string::npos);
  EXPECT_NE(text.find("mIoU"), std::string::npos);
  EXPECT_NE(text.find("89.56"), std::string::npos);
  EXPECT_NE(text.find("81.42"), std::string::npos);
}

TEST(Metrics, ReportJsonRoundTrip) {
  const std::vector<int> truth{0, 1, 1}, pred{0, 1, 0};
  MetricsReport r = classification_report(pred, truth, 2);
  r.config_digest = "abc";
  r.variant = "with_roi";
  const nlohmann::json j = r;
  EXPECT_EQ(nlohmann::json(j.get<MetricsReport>()), j);
}
