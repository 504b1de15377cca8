#include "lesion/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace lesion {
namespace {

struct Counts {
  long long pred = 0;
  long long truth = 0;
  long long inter = 0;
};

Counts count(std::span<const double> pred, std::span<const double> truth) {
  require(pred.size() == truth.size(), "mask shape mismatch");
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], g = truth[i];
    require((p == 0.0 || p == 1.0) && (g == 0.0 || g == 1.0), "mask is not binary");
    const bool pi = p == 1.0, gi = g == 1.0;
    c.pred += pi;
    c.truth += gi;
    c.inter += pi && gi;
  }
  return c;
}

double iou_from(const Counts& c) {
  const long long uni = c.pred + c.truth - c.inter;
  return uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(uni);
}

}  // namespace

double dice_score(std::span<const double> pred, std::span<const double> truth) {
  const Counts c = count(pred, truth);
  const long long denom = c.pred + c.truth;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.inter) / static_cast<double>(denom);
}

double iou(std::span<const double> pred, std::span<const double> truth) {
  return iou_from(count(pred, truth));
}

double mean_iou(const std::vector<MaskPair>& pairs, MiouConvention convention) {
  require(!pairs.empty(), "no samples");
  double acc = 0.0;
  for (const auto& [p, g] : pairs) {
    const Counts fg = count(p.values(), g.values());
    double v = iou_from(fg);
    if (convention == MiouConvention::PerImageTwoClass) {
      const long long n = static_cast<long long>(p.size());
      Counts bg;
      bg.pred = n - fg.pred;
      bg.truth = n - fg.truth;
      bg.inter = n - (fg.pred + fg.truth - fg.inter);
      v = 0.5 * (v + iou_from(bg));
    }
    acc += v;
  }
  return acc / static_cast<double>(pairs.size());
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"task", r.task}, {"n_samples", r.n_samples}, {"config_digest", r.config_digest}};
  if (!r.variant.empty()) j["variant"] = r.variant;
  if (r.task == "segmentation") {
    j["dice"] = r.dice;
    j["miou"] = r.miou;
  } else {
    j["accuracy"] = r.accuracy;
    j["confusion"] = r.confusion;
    j["class_names"] = r.class_names;
  }
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.task = j.at("task").get<std::string>();
  r.n_samples = j.value("n_samples", 0);
  r.config_digest = j.value("config_digest", "");
  r.variant = j.value("variant", "");
  r.dice = j.value("dice", 0.0);
  r.miou = j.value("miou", 0.0);
  r.accuracy = j.value("accuracy", 0.0);
  if (j.contains("confusion")) r.confusion = j.at("confusion").get<std::vector<std::vector<long long>>>();
  if (j.contains("class_names")) r.class_names = j.at("class_names").get<std::vector<std::string>>();
}

MetricsReport segmentation_report(const std::vector<MaskPair>& pairs, MiouConvention convention) {
  require(!pairs.empty(), "no samples");
  MetricsReport r;
  r.task = "segmentation";
  double dice = 0.0;
  for (const auto& [p, g] : pairs) dice += dice_score(p.values(), g.values());
  r.dice = dice / static_cast<double>(pairs.size());
  r.miou = mean_iou(pairs, convention);
  r.n_samples = static_cast<int>(pairs.size());
  return r;
}

MetricsReport classification_report(std::span<const int> preds, std::span<const int> truths,
                                    int num_classes) {
  require(!truths.empty(), "no samples");
  require(preds.size() == truths.size(), "prediction and truth counts differ");
  MetricsReport r;
  r.task = "classification";
  r.confusion.assign(static_cast<std::size_t>(num_classes),
                     std::vector<long long>(static_cast<std::size_t>(num_classes), 0));
  long long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i] >= 0 && preds[i] < num_classes && truths[i] >= 0 && truths[i] < num_classes,
            "label out of range");
    ++r.confusion[static_cast<std::size_t>(truths[i])][static_cast<std::size_t>(preds[i])];
    correct += preds[i] == truths[i];
  }
  r.n_samples = static_cast<int>(preds.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_samples);
  return r;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  if (r.task == "segmentation") {
    os << "Dice Score  mIoU\n" << percent(r.dice) << "       " << percent(r.miou) << "\n";
  } else {
    os << "Accuracy" << (r.variant.empty() ? "" : " (" + r.variant + ")") << "\n"
       << percent(r.accuracy) << "\n";
    if (!r.confusion.empty()) {
      os << "confusion (rows = truth):\n";
      for (std::size_t i = 0; i < r.confusion.size(); ++i) {
        os << (i < r.class_names.size() ? r.class_names[i] : std::to_string(i));
        for (long long v : r.confusion[i]) os << ' ' << v;
        os << '\n';
      }
    }
  }
  os << "samples: " << r.n_samples << "\n";
  return os.str();
}

}  // namespace lesion
