#include "lesion/config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <memory>

namespace lesion {

void to_json(nlohmann::json& j, const RunPaths& p) {
  j = nlohmann::json{{"data_root", p.data_root.string()},
                     {"labels_csv", p.labels_csv.string()},
                     {"manifest", p.manifest.string()},
                     {"out_dir", p.out_dir.string()},
                     {"split_fraction", p.split_fraction},
                     {"split_seed", p.split_seed}};
}

void from_json(const nlohmann::json& j, RunPaths& p) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "data_root") p.data_root = it->get<std::string>();
    else if (k == "labels_csv") p.labels_csv = it->get<std::string>();
    else if (k == "manifest") p.manifest = it->get<std::string>();
    else if (k == "out_dir") p.out_dir = it->get<std::string>();
    else if (k == "split_fraction") p.split_fraction = it->get<double>();
    else if (k == "split_seed") p.split_seed = it->get<std::uint64_t>();
    else throw Error("unknown key '" + k + "' in paths");
  }
  require(p.split_fraction >= 0.0 && p.split_fraction < 1.0, "split_fraction must lie in [0, 1)");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"dataio", dataio}, {"model", model}, {"train", train}, {"paths", paths}};
  j["augment"] = augment ? nlohmann::json(*augment) : nlohmann::json(nullptr);
  if (synth) j["synth"] = *synth;
  return j;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  require(j.is_object(), "config must be a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "dataio") c.dataio = it->get<NormalizationPolicy>();
      else if (k == "augment") {
        if (!it->is_null()) c.augment = it->get<AugmentConfig>();
      } else if (k == "model") {
        require(it->is_object(), "model must be an object");
        c.model = *it;
      } else if (k == "train") c.train = it->get<TrainConfig>();
      else if (k == "paths") c.paths = it->get<RunPaths>();
      else if (k == "synth") c.synth = *it;
      else throw Error("unknown key '" + k + "' in config");
    } catch (const nlohmann::json::exception& e) {
      throw Error("invalid '" + k + "' section: " + e.what());
    }
  }
  if (c.augment) {
    c.augment->value_lower = c.dataio.lower();
    c.augment->value_upper = c.dataio.upper();
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

std::string sha256_hex(const std::string& data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string config_digest(const RunConfig& config) { return sha256_hex(config.to_json().dump()); }

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("LESION_SEED");
  if (!v || !*v) return std::nullopt;
  std::uint64_t seed = 0;
  const char* end = v + std::char_traits<char>::length(v);
  const auto [ptr, ec] = std::from_chars(v, end, seed);
  if (ec != std::errc() || ptr != end) throw Error(std::string("LESION_SEED is not an unsigned integer: ") + v);
  return seed;
}

}  // namespace lesion
