#include "lesion/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "lesion/classes.hpp"
#include "lesion/image_io.hpp"
#include "lesion/kernels.hpp"
#include "lesion/seeding.hpp"

namespace fs = std::filesystem;

namespace lesion {

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw Error("unknown split '" + std::string(s) + "'");
}

std::string_view to_string(NormMode m) {
  return m == NormMode::UnitInterval ? "unit_interval" : "symmetric_unit";
}

NormMode parse_norm_mode(std::string_view s) {
  if (s == "unit_interval") return NormMode::UnitInterval;
  if (s == "symmetric_unit") return NormMode::SymmetricUnit;
  throw Error("unknown normalization mode '" + std::string(s) + "'");
}

double NormalizationPolicy::normalize(double v8) const {
  return mode == NormMode::UnitInterval ? v8 / 255.0 : v8 / 127.5 - 1.0;
}

double NormalizationPolicy::denormalize(double v) const {
  return mode == NormMode::UnitInterval ? v * 255.0 : (v + 1.0) * 127.5;
}

void to_json(nlohmann::json& j, const NormalizationPolicy& p) {
  j = nlohmann::json{{"mode", std::string(to_string(p.mode))}, {"target_size", {p.height, p.width}}};
}

void from_json(const nlohmann::json& j, NormalizationPolicy& p) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "mode") p.mode = parse_norm_mode(it->get<std::string>());
    else if (it.key() == "target_size") {
      const auto v = it->get<std::vector<int>>();
      require(v.size() == 2, "target_size must be [height, width]");
      p.height = v[0];
      p.width = v[1];
    } else {
      throw Error("unknown key '" + it.key() + "' in normalization policy");
    }
  }
  require(p.height > 0 && p.width > 0, "target_size must be positive");
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, long long> recount(const DatasetManifest& m) {
  std::map<std::string, long long> counts;
  if (m.kind == DatasetKind::Segmentation) {
    counts["lesion"] = static_cast<long long>(m.samples.size());
    return counts;
  }
  for (auto name : kLesionClassNames) counts[std::string(name)] = 0;
  for (const auto& s : m.samples) ++counts[lesion_class_name(s.label)];
  return counts;
}

bool is_image_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> list_images(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_image_ext(e.path())) continue;
    const std::string stem = e.path().stem().string();
    require(!out.contains(stem), "duplicate stem '" + stem + "' in " + dir.string());
    out.emplace(stem, e.path());
  }
  return out;
}

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

// Sort key for seeded assignment: depends only on (seed, stem).
std::uint64_t split_key(std::uint64_t seed, const std::string& stem) {
  return derive_seed({seed, stable_hash(stem)});
}

std::size_t train_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

}  // namespace

DatasetManifest DatasetManifest::subset(Split s) const {
  DatasetManifest out = *this;
  out.samples.clear();
  for (const auto& smp : samples)
    if (smp.split == s) out.samples.push_back(smp);
  out.class_counts = recount(out);
  return out;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json e{{"stem", s.stem}, {"image_path", s.image_path.string()},
                     {"split", std::string(to_string(s.split))}};
    if (m.kind == DatasetKind::Segmentation) e["mask_path"] = s.mask_path.string();
    else e["class"] = lesion_class_name(s.label);
    samples.push_back(std::move(e));
  }
  j = nlohmann::json{{"kind", m.kind == DatasetKind::Segmentation ? "segmentation" : "classification"},
                     {"samples", samples},
                     {"class_counts", m.class_counts},
                     {"seed", m.seed},
                     {"split_fraction", m.split_fraction}};
  if (m.normalization) j["normalization"] = *m.normalization;
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  const std::string kind = j.at("kind").get<std::string>();
  require(kind == "segmentation" || kind == "classification", "unknown manifest kind '" + kind + "'");
  m.kind = kind == "segmentation" ? DatasetKind::Segmentation : DatasetKind::Classification;
  m.samples.clear();
  for (const auto& e : j.at("samples")) {
    Sample s;
    s.stem = e.at("stem").get<std::string>();
    s.image_path = e.at("image_path").get<std::string>();
    s.split = parse_split(e.value("split", "train"));
    if (m.kind == DatasetKind::Segmentation) s.mask_path = e.at("mask_path").get<std::string>();
    else s.label = parse_lesion_class(e.at("class").get<std::string>());
    m.samples.push_back(std::move(s));
  }
  m.seed = j.value("seed", std::uint64_t{0});
  m.split_fraction = j.value("split_fraction", 0.0);
  if (j.contains("normalization")) m.normalization = j.at("normalization").get<NormalizationPolicy>();
  m.class_counts = recount(m);
  if (j.contains("class_counts")) {
    const auto stored = j.at("class_counts").get<std::map<std::string, long long>>();
    for (const auto& [k, v] : stored)
      if (v != 0 || m.class_counts.contains(k))
        require(m.class_counts[k] == v, "manifest class_counts disagree with samples for '" + k + "'");
  }
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path.string() + "'");
  out << nlohmann::json(m).dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest '" + path.string() + "': " + e.what());
  }
}

DatasetManifest load_seg_manifest(const fs::path& root_dir) {
  const auto images = list_images(root_dir / "images");
  const auto masks = list_images(root_dir / "masks");
  if (images.empty() && masks.empty()) throw Error("no samples found in '" + root_dir.string() + "'");

  auto mask_for = [&](const std::string& stem) -> const fs::path* {
    if (auto it = masks.find(stem); it != masks.end()) return &it->second;
    if (auto it = masks.find(stem + "_segmentation"); it != masks.end()) return &it->second;
    return nullptr;
  };

  DatasetManifest m;
  m.kind = DatasetKind::Segmentation;
  std::set<std::string> used_masks;
  for (const auto& [stem, path] : images) {
    const fs::path* mask = mask_for(stem);
    if (!mask) throw Error("missing mask for stem '" + stem + "'");
    used_masks.insert(mask->stem().string());
    m.samples.push_back({stem, path, *mask, -1, Split::Train});
  }
  for (const auto& [stem, path] : masks)
    if (!used_masks.contains(stem)) throw Error("mask without image for stem '" + stem + "'");

  for (const auto& s : m.samples) {
    const Tensor img = read_rgb(s.image_path);
    const Tensor msk = read_gray(s.mask_path);
    require(img.h() == msk.h() && img.w() == msk.w(),
            "image and mask sizes differ for stem '" + s.stem + "'");
  }
  m.class_counts = recount(m);
  return m;
}

DatasetManifest load_cls_manifest(const fs::path& root_dir, const fs::path& labels_csv) {
  std::ifstream in(labels_csv);
  if (!in) throw Error("cannot read labels CSV '" + labels_csv.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("labels CSV '" + labels_csv.string() + "' is empty");
  const auto header = split_csv_line(line);
  int id_col = -1, class_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "image_id") id_col = static_cast<int>(i);
    if (header[i] == "class" || (header[i] == "dx" && class_col < 0)) class_col = static_cast<int>(i);
  }
  require(id_col >= 0 && class_col >= 0, "labels CSV header must contain image_id and class");

  const auto images = list_images(root_dir / "images");
  DatasetManifest m;
  m.kind = DatasetKind::Classification;
  std::set<std::string> seen;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    require(static_cast<int>(cells.size()) > std::max(id_col, class_col),
            "labels CSV row " + std::to_string(row) + " has too few columns");
    const std::string& id = cells[static_cast<std::size_t>(id_col)];
    const std::string cls = upper(cells[static_cast<std::size_t>(class_col)]);
    int label;
    try {
      label = parse_lesion_class(cls);
    } catch (const Error&) {
      throw Error("unknown class '" + cells[static_cast<std::size_t>(class_col)] + "' at labels CSV row " +
                  std::to_string(row));
    }
    require(seen.insert(id).second, "duplicate image_id '" + id + "' in labels CSV");
    const auto it = images.find(id);
    if (it == images.end()) throw Error("image '" + id + "' listed in labels CSV is missing on disk");
    m.samples.push_back({id, it->second, {}, label, Split::Train});
  }
  if (m.samples.empty()) throw Error("no samples found in '" + labels_csv.string() + "'");
  std::sort(m.samples.begin(), m.samples.end(),
            [](const Sample& a, const Sample& b) { return a.stem < b.stem; });
  m.class_counts = recount(m);
  return m;
}

DatasetManifest split(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie in (0, 1)");
  DatasetManifest out = manifest;
  out.seed = seed;
  out.split_fraction = train_fraction;
  const std::size_t n = out.samples.size();

  auto ranked = [&](std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ka = split_key(seed, out.samples[a].stem), kb = split_key(seed, out.samples[b].stem);
      return ka != kb ? ka < kb : out.samples[a].stem < out.samples[b].stem;
    });
    return idx;
  };

  for (auto& s : out.samples) s.split = Split::Test;
  const std::size_t total_train = train_count(n, train_fraction);

  if (out.kind == DatasetKind::Segmentation) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const auto order = ranked(all);
    for (std::size_t i = 0; i < total_train; ++i) out.samples[order[i]].split = Split::Train;
    return out;
  }

  // Stratified: floor per class, then largest remainders (lowest class first on ties).
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[out.samples[i].label].push_back(i);
  std::map<int, std::size_t> quota;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [label, idx] : by_class) {
    const double exact = static_cast<double>(idx.size()) * train_fraction;
    quota[label] = train_count(idx.size(), train_fraction);
    assigned += quota[label];
    remainders.emplace_back(exact - static_cast<double>(quota[label]), label);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total_train && r < remainders.size(); ++r, ++assigned)
    ++quota[remainders[r].second];

  for (const auto& [label, idx] : by_class) {
    const auto order = ranked(idx);
    for (std::size_t i = 0; i < quota[label]; ++i) out.samples[order[i]].split = Split::Train;
  }
  return out;
}

Tensor prepare_image(const Tensor& rgb8, const NormalizationPolicy& policy) {
  Tensor norm(rgb8.shape());
  for (std::size_t i = 0; i < rgb8.size(); ++i) norm[i] = policy.normalize(rgb8[i]);
  if (norm.h() == policy.height && norm.w() == policy.width) return norm;
  Tensor out = kernels::resize_bilinear(norm, policy.height, policy.width);
  for (double& v : out.values()) v = std::clamp(v, policy.lower(), policy.upper());
  return out;
}

Tensor prepare_mask(const Tensor& gray8, int height, int width) {
  Tensor bin(gray8.shape());
  for (std::size_t i = 0; i < gray8.size(); ++i) bin[i] = gray8[i] > 127.5 ? 1.0 : 0.0;
  if (bin.h() == height && bin.w() == width) return bin;
  return kernels::resize_nearest(bin, height, width);
}

Batch load_batch(const std::vector<Sample>& samples, const NormalizationPolicy& policy) {
  require(policy.height > 0 && policy.width > 0, "target_size must be positive");
  const int n = static_cast<int>(samples.size());
  const bool seg = n > 0 && !samples.front().mask_path.empty();
  Batch b;
  b.images = Tensor({n, policy.height, policy.width, 3});
  if (seg) b.masks = Tensor({n, policy.height, policy.width, 1});
  else b.labels.resize(static_cast<std::size_t>(n));

  std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    try {
      b.images.set_sample(i, prepare_image(read_rgb(s.image_path), policy));
      if (seg) b.masks.set_sample(i, prepare_mask(read_gray(s.mask_path), policy.height, policy.width));
      else b.labels[static_cast<std::size_t>(i)] = s.label;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);
  return b;
}

}  // namespace lesion
