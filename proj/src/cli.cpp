#include "lesion/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "lesion/cascade.hpp"
#include "lesion/checkpoint.hpp"
#include "lesion/config.hpp"
#include "lesion/image_io.hpp"
#include "lesion/overlay.hpp"
#include "lesion/seeding.hpp"
#include "lesion/synthgen.hpp"
#include "lesion/trainer.hpp"

namespace lesion {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kInitTag = 0x494e4954ULL;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

// Precedence: command-line flag, then LESION_SEED, then the config file.
std::optional<std::uint64_t> effective_seed(const Overrides& o) { return o.seed ? o.seed : env_seed(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

void write_report(const MetricsReport& report, const fs::path& json_path) {
  write_text(json_path, nlohmann::json(report).dump(2) + "\n");
  fs::path txt = json_path;
  txt.replace_extension(".txt");
  write_text(txt, format_report(report));
}

DatasetManifest source_manifest(const RunPaths& paths, DatasetKind kind) {
  if (!paths.manifest.empty()) {
    DatasetManifest m = load_manifest(paths.manifest);
    require(m.kind == kind, "manifest '" + paths.manifest.string() + "' holds the wrong dataset kind");
    return m;
  }
  require(!paths.data_root.empty(), "paths.data_root or paths.manifest is required");
  if (kind == DatasetKind::Segmentation) return load_seg_manifest(paths.data_root);
  const fs::path labels = paths.labels_csv.empty() ? paths.data_root / "labels.csv" : paths.labels_csv;
  return load_cls_manifest(paths.data_root, labels);
}

void check_policy(const DatasetManifest& m, const NormalizationPolicy& policy) {
  if (m.normalization && !(*m.normalization == policy))
    throw Error("manifest normalization " + nlohmann::json(*m.normalization).dump() +
                " differs from " + nlohmann::json(policy).dump());
}

DatasetManifest select_split(const DatasetManifest& m, const std::string& which) {
  if (which == "all") return m;
  return m.subset(parse_split(which));
}

void write_epoch_log(const fs::path& path, const TrainState& state, bool wall_time) {
  std::string text;
  for (const auto& r : state.records) text += epoch_record_json(r, wall_time).dump() + "\n";
  write_text(path, text);
}

void print_epoch(const EpochRecord& r) {
  char line[96];
  int n = std::snprintf(line, sizeof line, "epoch %d  loss %.6f", r.epoch, r.loss_total);
  if (r.val_loss) std::snprintf(line + n, sizeof line - static_cast<std::size_t>(n), "  val_loss %.6f", *r.val_loss);
  std::cout << line << std::endl;
}

template <typename Model, typename ModelConfig, typename Dataset, typename LoadData, typename Train, typename Eval>
int train_command(const fs::path& config_path, const Overrides& o, const std::optional<fs::path>& resume,
                  DatasetKind kind, LoadData load_data, Train train, Eval eval) {
  RunConfig cfg = load_run_config(config_path);
  if (auto s = effective_seed(o)) cfg.train.seed = *s;
  if (o.epochs) cfg.train.max_epochs = *o.epochs;
  cfg.train.validate();
  const std::string digest = config_digest(cfg);

  ModelConfig mc;
  try {
    mc = cfg.model.get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid 'model' section: ") + e.what());
  }
  require(mc.input_height == cfg.dataio.height && mc.input_width == cfg.dataio.width,
          "dataio.target_size must equal the model input size");

  DatasetManifest manifest = source_manifest(cfg.paths, kind);
  check_policy(manifest, cfg.dataio);
  if (cfg.paths.split_fraction > 0.0) manifest = split(manifest, cfg.paths.split_fraction, cfg.paths.split_seed);
  manifest.normalization = cfg.dataio;

  const fs::path out = cfg.paths.out_dir;
  fs::create_directories(out);
  save_manifest(manifest, out / "manifest.json");
  write_text(out / "config.json", cfg.to_json().dump(2) + "\n");

  const bool has_val = cfg.paths.split_fraction > 0.0 && !manifest.subset(Split::Test).samples.empty();
  const Dataset train_data = load_data(has_val ? manifest.subset(Split::Train) : manifest, cfg.dataio);
  std::optional<Dataset> val_data;
  if (has_val) val_data = load_data(manifest.subset(Split::Test), cfg.dataio);

  Model model(mc);
  nn::initialize(model.registry(), derive_seed({cfg.train.seed, kInitTag}));

  ModelMeta meta{cfg.dataio, digest, {}};
  if (kind == DatasetKind::Classification)
    for (const auto& n : kLesionClassNames) meta.class_names.emplace_back(n);

  std::optional<TrainState> resumed;
  if (resume) {
    const Checkpoint ckpt = load_checkpoint(*resume);
    require(ckpt.header.at("model_config") == nlohmann::json(mc), "resume checkpoint has a different model config");
    restore_registry(ckpt, model.registry());
    resumed = restore_train_state(ckpt);
  }

  TrainHooks hooks;
  hooks.on_epoch = print_epoch;
  hooks.on_state = [&](const TrainState& s) {
    Checkpoint ckpt = make_checkpoint(model, meta);
    store_train_state(ckpt, s);
    save_checkpoint(out / "last.ckpt", ckpt);
    write_epoch_log(out / "epochs.jsonl", s, cfg.train.log_wall_time);
  };

  const AugmentConfig* aug = cfg.augment ? &*cfg.augment : nullptr;
  const TrainState state = train(model, train_data, val_data ? &*val_data : nullptr, cfg.train, aug, hooks,
                                 resumed ? &*resumed : nullptr);
  write_epoch_log(out / "epochs.jsonl", state, cfg.train.log_wall_time);

  Checkpoint final_ckpt = make_checkpoint(model, meta);
  store_train_state(final_ckpt, state);
  save_checkpoint(out / "model.ckpt", final_ckpt);

  MetricsReport report = eval(model, val_data ? *val_data : train_data, cfg.train.batch_size).second;
  report.config_digest = digest;
  report.variant = val_data ? "validation" : "train";
  write_report(report, out / "report.json");
  std::cout << format_report(report);
  std::cout << "checkpoint: " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_train_seg(const fs::path& config, const Overrides& o, const std::optional<fs::path>& resume) {
  return train_command<SegModel, SegModelConfig, SegDataset>(
      config, o, resume, DatasetKind::Segmentation, load_seg_dataset,
      [](SegModel& m, const SegDataset& t, const SegDataset* v, const TrainConfig& c, const AugmentConfig* a,
         const TrainHooks& h, const TrainState* r) { return train_segmentation(m, t, v, c, a, h, r); },
      [](SegModel& m, const SegDataset& d, int bs) { return evaluate_segmentation(m, d, bs); });
}

int cmd_train_cls(const fs::path& config, const Overrides& o, const std::optional<fs::path>& resume) {
  return train_command<ClsModel, ClsModelConfig, ClsDataset>(
      config, o, resume, DatasetKind::Classification, load_cls_dataset,
      [](ClsModel& m, const ClsDataset& t, const ClsDataset* v, const TrainConfig& c, const AugmentConfig* a,
         const TrainHooks& h, const TrainState* r) { return train_classification(m, t, v, c, a, h, r); },
      [](ClsModel& m, const ClsDataset& d, int bs) { return evaluate_classification(m, d, bs); });
}

struct DataArgs {
  std::string manifest;
  std::string data_root;
  std::string labels;
  std::string split = "all";
};

DatasetManifest data_manifest(const DataArgs& a, DatasetKind kind) {
  RunPaths p;
  p.manifest = a.manifest;
  p.data_root = a.data_root;
  p.labels_csv = a.labels;
  return select_split(source_manifest(p, kind), a.split);
}

struct EvalArgs {
  std::string checkpoint;
  DataArgs data;
  bool with_roi = false;
  std::string seg_checkpoint;
  std::string masks;
  bool crop = false;
  std::string out;
  bool two_class_miou = false;
  int batch_size = 8;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const ModelMeta meta = checkpoint_meta(ckpt);
  MetricsReport report;

  if (checkpoint_kind(ckpt) == "segmentation") {
    require(!a.with_roi, "--with-roi applies to classification checkpoints");
    auto model = load_seg_model(ckpt);
    const DatasetManifest m = data_manifest(a.data, DatasetKind::Segmentation);
    check_policy(m, meta.normalization);
    const SegDataset data = load_seg_dataset(m, meta.normalization);
    std::vector<MaskPair> pairs;
    for (int i = 0; i < data.images.n(); ++i)
      pairs.emplace_back(predict_mask(*model, data.images.sample(i)), data.masks.sample(i));
    report = segmentation_report(pairs, a.two_class_miou ? MiouConvention::PerImageTwoClass
                                                         : MiouConvention::PerImageForeground);
  } else {
    auto model = load_cls_model(ckpt);
    const DatasetManifest m = data_manifest(a.data, DatasetKind::Classification);
    check_policy(m, meta.normalization);
    const int K = model->config().num_classes;
    if (!a.with_roi) {
      report = evaluate_classification(*model, load_cls_dataset(m, meta.normalization), a.batch_size).second;
      report.variant = "without_roi";
    } else {
      require(a.seg_checkpoint.empty() != a.masks.empty(), "--with-roi needs exactly one of --seg-checkpoint or --masks");
      std::unique_ptr<SegModel> seg;
      NormalizationPolicy seg_policy = meta.normalization;
      if (!a.seg_checkpoint.empty()) {
        const Checkpoint sc = load_checkpoint(a.seg_checkpoint);
        seg = load_seg_model(sc);
        seg_policy = checkpoint_meta(sc).normalization;
        require(seg_policy.mode == meta.normalization.mode, "segmenter and classifier use different normalization modes");
      }
      const int N = static_cast<int>(m.samples.size());
      require(N > 0, "no samples");
      std::vector<int> preds(static_cast<std::size_t>(N)), truths(static_cast<std::size_t>(N));
      std::vector<std::optional<std::string>> errors(static_cast<std::size_t>(N));
      RoiOptions opts;
      opts.crop_to_bbox = a.crop;
#pragma omp parallel for schedule(dynamic)
      for (int i = 0; i < N; ++i) {
        const Sample& s = m.samples[static_cast<std::size_t>(i)];
        try {
          const Tensor image = prepare_image(read_rgb(s.image_path), seg_policy);
          const Tensor mask = seg ? predict_mask(*seg, image)
                                  : prepare_mask(read_gray(fs::path(a.masks) / (s.stem + ".png")), seg_policy.height,
                                                 seg_policy.width);
          preds[static_cast<std::size_t>(i)] = classify_roi(*model, image, mask, opts).label;
          truths[static_cast<std::size_t>(i)] = s.label;
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(i)] = s.image_path.string() + ": " + e.what();
        }
      }
      for (const auto& e : errors)
        if (e) throw Error(*e);
      report = classification_report(preds, truths, K);
      for (int k = 0; k < K; ++k) report.class_names.push_back(lesion_class_name(k));
      report.variant = "with_roi";
    }
  }
  report.config_digest = meta.config_digest;
  if (!a.out.empty()) write_report(report, a.out);
  std::cout << format_report(report);
  return 0;
}

struct RoiArgs {
  std::string checkpoint;
  std::string masks;
  DataArgs data;
  std::string out;
  bool crop = false;
  std::vector<int> target_size{512, 512};
  std::string norm_mode = "unit_interval";
};

int cmd_extract_roi(const RoiArgs& a) {
  require(a.checkpoint.empty() != a.masks.empty(), "extract-roi needs exactly one of --checkpoint or --masks");
  const DatasetManifest m = data_manifest(a.data, DatasetKind::Classification);
  RoiOptions opts;
  opts.crop_to_bbox = a.crop;
  DatasetManifest out;
  if (!a.checkpoint.empty()) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    auto seg = load_seg_model(ckpt);
    const ModelMeta meta = checkpoint_meta(ckpt);
    out = batch_extract_roi(*seg, m, meta.normalization, a.out, opts, meta.config_digest);
  } else {
    require(a.target_size.size() == 2, "--target-size takes H W");
    NormalizationPolicy policy{parse_norm_mode(a.norm_mode), a.target_size[0], a.target_size[1]};
    out = batch_extract_roi_from_masks(m, a.masks, policy, a.out, opts);
  }
  std::cout << "wrote " << out.samples.size() << " ROI images to " << a.out << "\n";
  return 0;
}

struct PredictArgs {
  std::string seg_checkpoint;
  std::string cls_checkpoint;
  std::string image;
  std::string out_mask;
  bool crop = false;
};

int cmd_predict(const PredictArgs& a) {
  const Checkpoint sc = load_checkpoint(a.seg_checkpoint);
  auto seg = load_seg_model(sc);
  const NormalizationPolicy policy = checkpoint_meta(sc).normalization;
  const Tensor image = prepare_image(read_rgb(a.image), policy);
  nlohmann::json result{{"image", a.image}};
  Tensor mask;
  if (!a.cls_checkpoint.empty()) {
    auto cls = load_cls_model(load_checkpoint(a.cls_checkpoint));
    RoiOptions opts;
    opts.crop_to_bbox = a.crop;
    const CascadeResult r = cascade_infer(*seg, *cls, image, opts);
    mask = r.mask;
    result["label"] = r.label;
    result["class"] = lesion_class_name(r.label);
    result["probs"] = r.probs;
  } else {
    mask = predict_mask(*seg, image);
  }
  result["mask_pixels"] = static_cast<long long>(mask.sum());
  if (!a.out_mask.empty()) {
    Tensor m8 = mask;
    for (double& v : m8.values()) v *= 255.0;
    write_png(a.out_mask, m8);
    result["mask"] = a.out_mask;
  }
  std::cout << result.dump() << "\n";
  return 0;
}

Tensor load_binary_mask(const std::string& path) {
  Tensor m = read_gray(path);
  for (double& v : m.values()) v = v > 127.5 ? 1.0 : 0.0;
  return m;
}

int cmd_overlay(const std::string& image, const std::string& gt, const std::string& pred, const std::string& out) {
  write_png(out, render_overlay(read_rgb(image), load_binary_mask(gt), load_binary_mask(pred)));
  return 0;
}

int cmd_synth(const fs::path& config_path, const Overrides& o, const std::string& out_override) {
  const RunConfig cfg = load_run_config(config_path);
  require(cfg.synth.has_value(), "config has no 'synth' section");
  nlohmann::json section = *cfg.synth;
  require(section.contains("kind"), "synth.kind is required (segmentation or classification)");
  const std::string kind = section.at("kind").get<std::string>();
  section.erase("kind");
  SynthConfig sc;
  try {
    sc = section.get<SynthConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid 'synth' section: ") + e.what());
  }
  if (auto s = effective_seed(o)) sc.seed = *s;
  const fs::path out = out_override.empty() ? cfg.paths.out_dir : fs::path(out_override);
  std::vector<SynthLesion> lesions;
  if (kind == "segmentation") lesions = generate_seg_dataset(sc, out);
  else if (kind == "classification") lesions = generate_cls_dataset(sc, out);
  else throw Error("unknown synth kind '" + kind + "'");
  std::cout << "wrote " << lesions.size() << " " << kind << " samples to " << out.string() << "\n";
  return 0;
}

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--manifest", d.manifest, "Dataset manifest JSON");
  cmd->add_option("--data-root", d.data_root, "Dataset directory");
  cmd->add_option("--labels", d.labels, "Labels CSV (classification; default <data-root>/labels.csv)");
  cmd->add_option("--split", d.split, "Subset to use: all, train or test")->check(CLI::IsMember({"all", "train", "test"}));
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Two-stage skin lesion segmentation and classification"};
  app.require_subcommand(1);

  Overrides over;
  std::string config;
  std::string resume;
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "Run config JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", over.seed, "Override the config seed");
  };

  auto* train_seg = app.add_subcommand("train-seg", "Train the segmentation model");
  auto* train_cls = app.add_subcommand("train-cls", "Train the classification model");
  for (auto* cmd : {train_seg, train_cls}) {
    add_overrides(cmd);
    cmd->add_option("--epochs", over.epochs, "Override train.max_epochs");
    cmd->add_option("--resume", resume, "Continue from a last.ckpt written by an earlier run");
  }

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  add_data_options(eval_cmd, eval.data);
  auto* with_roi = eval_cmd->add_flag("--with-roi", eval.with_roi, "Classify ROI images cut by a mask");
  auto* without_roi = eval_cmd->add_flag("--without-roi", "Classify the full images (default)");
  with_roi->excludes(without_roi);
  eval_cmd->add_option("--seg-checkpoint", eval.seg_checkpoint, "Segmenter producing ROI masks");
  eval_cmd->add_option("--masks", eval.masks, "Directory of ground-truth masks used as ROI masks");
  eval_cmd->add_flag("--crop", eval.crop, "Crop ROI images to the mask bounding box");
  eval_cmd->add_option("--out", eval.out, "Write the JSON report here (and a .txt table next to it)");
  eval_cmd->add_flag("--two-class-miou", eval.two_class_miou, "Average foreground and background IoU");
  eval_cmd->add_option("--batch-size", eval.batch_size, "Inference batch size")->check(CLI::PositiveNumber);

  RoiArgs roi;
  auto* roi_cmd = app.add_subcommand("extract-roi", "Write masked ROI images for a classification dataset");
  roi_cmd->add_option("--checkpoint", roi.checkpoint, "Segmentation checkpoint");
  roi_cmd->add_option("--masks", roi.masks, "Use ground-truth masks from this directory instead");
  add_data_options(roi_cmd, roi.data);
  roi_cmd->add_option("--out", roi.out, "Output directory")->required();
  roi_cmd->add_flag("--crop", roi.crop, "Crop to the mask bounding box");
  roi_cmd->add_option("--target-size", roi.target_size, "H W used with --masks")->expected(2);
  roi_cmd->add_option("--norm-mode", roi.norm_mode, "Normalization used with --masks")
      ->check(CLI::IsMember({"unit_interval", "symmetric_unit"}));

  PredictArgs pred;
  auto* pred_cmd = app.add_subcommand("predict", "Segment (and optionally classify) one image");
  pred_cmd->add_option("--seg-checkpoint", pred.seg_checkpoint, "Segmentation checkpoint")->required();
  pred_cmd->add_option("--cls-checkpoint", pred.cls_checkpoint, "Classification checkpoint");
  pred_cmd->add_option("--image", pred.image, "Input image")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--out-mask", pred.out_mask, "Write the predicted mask PNG");
  pred_cmd->add_flag("--crop", pred.crop, "Crop the ROI to the mask bounding box");

  std::string ov_image, ov_gt, ov_pred, ov_out;
  auto* ov_cmd = app.add_subcommand("overlay", "Draw prediction (green) and ground-truth (blue) boundaries");
  ov_cmd->add_option("--image", ov_image, "Image")->required()->check(CLI::ExistingFile);
  ov_cmd->add_option("--gt", ov_gt, "Ground-truth mask")->required()->check(CLI::ExistingFile);
  ov_cmd->add_option("--pred", ov_pred, "Predicted mask")->required()->check(CLI::ExistingFile);
  ov_cmd->add_option("--out", ov_out, "Output PNG")->required();

  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_overrides(synth_cmd);
  synth_cmd->add_option("--out", synth_out, "Output directory (overrides paths.out_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const std::optional<fs::path> resume_path = resume.empty() ? std::nullopt : std::optional<fs::path>(resume);
    if (*train_seg) return cmd_train_seg(config, over, resume_path);
    if (*train_cls) return cmd_train_cls(config, over, resume_path);
    if (*eval_cmd) return cmd_eval(eval);
    if (*roi_cmd) return cmd_extract_roi(roi);
    if (*pred_cmd) return cmd_predict(pred);
    if (*ov_cmd) return cmd_overlay(ov_image, ov_gt, ov_pred, ov_out);
    if (*synth_cmd) return cmd_synth(config, over, synth_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lesion
