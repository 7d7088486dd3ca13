#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bigprior/degradations.hpp"
#include "bigprior/error.hpp"
#include "bigprior/phinet/phinet.hpp"
#include "bigprior/phinet/train.hpp"
#include "bigprior/priors/generator.hpp"
#include "bigprior/priors/generator_training.hpp"
#include "bigprior/priors/inversion.hpp"

namespace bigprior::experiments {

inline constexpr const char* kManifestSchema = "bigprior-manifest/1";

enum class TaskKind { colorization, inpainting_central, inpainting_random, awgn_blind };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::colorization: return "colorization";
    case TaskKind::inpainting_central: return "inpainting-central";
    case TaskKind::inpainting_random: return "inpainting-random";
    case TaskKind::awgn_blind: return "awgn-blind";
  }
  return "?";
}

inline TaskKind parse_task(const std::string& s) {
  for (auto t : {TaskKind::colorization, TaskKind::inpainting_central, TaskKind::inpainting_random,
                 TaskKind::awgn_blind}) {
    if (s == to_string(t)) return t;
  }
  throw DomainError("manifest: unknown task '" + s + "'");
}

struct DatasetSpec {
  std::string kind = "toy";  // toy | directory
  std::size_t count = 100;
  std::size_t size = 32;
  std::string path;  // directory mode
  double train_fraction = 0.8;
  double test_fraction = 0.2;
};

struct PriorSpec {
  std::string backend = "dictionary";  // gaussian | dictionary | generator
  std::size_t atoms = 16;              // dictionary size, also the pca generator's latent size
  std::string generator = "pca";       // pca | conv
  priors::ConvGeneratorConfig conv{};
  priors::GeneratorTrainConfig pretrain{};
  std::string inversion_preset = "denoising-desk";
  nlohmann::json inversion_overrides = nlohmann::json::object();
};

struct RunManifest {
  std::string name = "run";
  TaskKind task = TaskKind::awgn_blind;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  PriorSpec prior;
  std::size_t mask_patch = 0;  // central inpainting side; 0 = half the image size
  phinet::PhiNetConfig phinet;
  phinet::TrainConfig train;

  /// Resolved inversion settings: preset plus overrides, seeded per run.
  priors::InversionPreset inversion() const {
    auto p = priors::find_inversion_preset(prior.inversion_preset);
    const auto& o = prior.inversion_overrides;
    p.split_layer = o.value("split_layer", p.split_layer);
    p.config.num_codes = o.value("num_codes", p.config.num_codes);
    p.config.iterations = o.value("iterations", p.config.iterations);
    p.config.step_size = o.value("step_size", p.config.step_size);
    p.config.pixel_weight = o.value("pixel_weight", p.config.pixel_weight);
    p.config.gradient_weight = o.value("gradient_weight", p.config.gradient_weight);
    p.config.seed = seed;
    return p;
  }

  std::size_t central_patch() const { return mask_patch == 0 ? dataset.size / 2 : mask_patch; }
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json ds{{"kind", m.dataset.kind},
                    {"train_fraction", m.dataset.train_fraction},
                    {"test_fraction", m.dataset.test_fraction},
                    {"size", m.dataset.size}};
  if (m.dataset.kind == "toy") ds["count"] = m.dataset.count;
  else ds["path"] = m.dataset.path;
  nlohmann::json prior{{"backend", m.prior.backend}, {"atoms", m.prior.atoms}};
  if (m.prior.backend == "generator") {
    prior["generator"] = m.prior.generator;
    prior["inversion_preset"] = m.prior.inversion_preset;
    prior["inversion_overrides"] = m.prior.inversion_overrides;
    if (m.prior.generator == "conv") {
      prior["conv"] = priors::to_json(m.prior.conv);
      prior["pretrain"] = {{"epochs", m.prior.pretrain.epochs},
                           {"batch_size", m.prior.pretrain.batch_size},
                           {"lr", m.prior.pretrain.lr},
                           {"code_lr", m.prior.pretrain.code_lr}};
    }
  }
  auto train = phinet::to_json(m.train);
  train.erase("seed");
  nlohmann::json j{{"schema", kManifestSchema}, {"name", m.name},       {"task", to_string(m.task)},
                   {"seed", m.seed},            {"dataset", ds},        {"prior", prior},
                   {"phinet", phinet::to_json(m.phinet)}, {"train", train}};
  if (m.task == TaskKind::inpainting_central) j["mask"] = {{"patch", m.central_patch()}};
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema", std::string{}) != kManifestSchema) {
    throw DomainError(std::string("manifest: missing or unsupported schema (expected ") + kManifestSchema + ")");
  }
  RunManifest m;
  m.name = j.value("name", m.name);
  m.task = parse_task(j.at("task").get<std::string>());
  m.seed = j.value("seed", m.seed);
  const auto& ds = j.at("dataset");
  m.dataset.kind = ds.value("kind", m.dataset.kind);
  m.dataset.count = ds.value("count", m.dataset.count);
  m.dataset.size = ds.value("size", m.dataset.size);
  m.dataset.path = ds.value("path", m.dataset.path);
  m.dataset.train_fraction = ds.value("train_fraction", m.dataset.train_fraction);
  m.dataset.test_fraction = ds.value("test_fraction", m.dataset.test_fraction);
  if (m.dataset.kind != "toy" && m.dataset.kind != "directory") {
    throw DomainError("manifest: dataset.kind must be toy or directory");
  }
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    m.prior.backend = p.value("backend", m.prior.backend);
    m.prior.atoms = p.value("atoms", m.prior.atoms);
    m.prior.generator = p.value("generator", m.prior.generator);
    m.prior.inversion_preset = p.value("inversion_preset", m.prior.inversion_preset);
    if (p.contains("inversion_overrides")) m.prior.inversion_overrides = p.at("inversion_overrides");
    if (p.contains("conv")) m.prior.conv = priors::conv_generator_config_from_json(p.at("conv"));
    if (p.contains("pretrain")) {
      const auto& t = p.at("pretrain");
      m.prior.pretrain.epochs = t.value("epochs", m.prior.pretrain.epochs);
      m.prior.pretrain.batch_size = t.value("batch_size", m.prior.pretrain.batch_size);
      m.prior.pretrain.lr = t.value("lr", m.prior.pretrain.lr);
      m.prior.pretrain.code_lr = t.value("code_lr", m.prior.pretrain.code_lr);
    }
  }
  const auto& b = m.prior.backend;
  if (b != "gaussian" && b != "dictionary" && b != "generator") {
    throw DomainError("manifest: prior.backend must be gaussian, dictionary or generator");
  }
  if (b == "generator" && m.prior.generator != "pca" && m.prior.generator != "conv") {
    throw DomainError("manifest: prior.generator must be pca or conv");
  }
  if (j.contains("mask")) m.mask_patch = j.at("mask").value("patch", std::size_t{0});
  const bool color = m.task == TaskKind::colorization;
  m.phinet.in_channels = color ? 1 : 3;
  m.phinet.out_channels = color ? 2 : 3;
  if (j.contains("phinet")) {
    auto pj = j.at("phinet");
    pj["in_channels"] = m.phinet.in_channels;
    pj["out_channels"] = m.phinet.out_channels;
    m.phinet = phinet::phinet_config_from_json(pj);
  }
  if (j.contains("train")) m.train = phinet::train_config_from_json(j.at("train"));
  m.train.seed = m.seed;
  m.prior.pretrain.seed = m.seed;
  m.prior.conv.image_size = m.dataset.size;
  m.inversion();  // validates the preset name
  return m;
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("manifest: " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
  return manifest_from_json(j);
}

inline void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("manifest: cannot write " + path.string());
  out << to_json(m).dump(2) << '\n';
}

/// Named desk-scale configurations.
inline RunManifest preset_manifest(const std::string& name) {
  RunManifest m;
  m.name = name;
  m.seed = 1;
  m.phinet.kernel = 3;
  m.phinet.skip = true;
  if (name == "awgn-desk") {
    m.task = TaskKind::awgn_blind;
    m.dataset = {"toy", 400, 32, "", 0.75, 0.25};
    m.prior.backend = "dictionary";
    m.prior.atoms = 24;
    m.phinet.depth = 5;
    m.phinet.width = 16;
    m.train.epochs = 25;
  } else if (name == "inpainting-desk") {
    m.task = TaskKind::inpainting_central;
    m.dataset = {"toy", 600, 64, "", 500.0 / 600.0, 100.0 / 600.0};
    m.mask_patch = 32;
    m.prior.backend = "dictionary";
    m.prior.atoms = 48;
    m.phinet.depth = 6;
    m.phinet.width = 12;
    m.train.epochs = 12;
  } else if (name == "inpainting-random-desk") {
    m.task = TaskKind::inpainting_random;
    m.dataset = {"toy", 300, 64, "", 0.8, 0.2};
    m.prior.backend = "dictionary";
    m.prior.atoms = 48;
    m.phinet.depth = 6;
    m.phinet.width = 12;
    m.train.epochs = 10;
  } else if (name == "colorization-desk") {
    m.task = TaskKind::colorization;
    m.dataset = {"toy", 300, 32, "", 0.8, 0.2};
    m.prior.backend = "generator";
    m.prior.generator = "pca";
    m.prior.atoms = 24;
    m.prior.inversion_preset = "colorization-desk";
    m.prior.inversion_overrides = {{"num_codes", 1}, {"step_size", 0.01}, {"iterations", 300}};
    m.phinet.depth = 5;
    m.phinet.width = 16;
    m.train.epochs = 15;
  } else if (name == "generator-desk") {
    m.task = TaskKind::awgn_blind;
    m.dataset = {"toy", 200, 32, "", 0.75, 0.25};
    m.prior.backend = "generator";
    m.prior.generator = "conv";
    m.prior.conv = {16, 16, 4, 32, 3, 8, 0.2};
    m.prior.pretrain.epochs = 40;
    m.prior.inversion_preset = "denoising-desk";
    m.prior.inversion_overrides = {{"num_codes", 4}, {"iterations", 100}, {"step_size", 0.002}};
    m.phinet.depth = 4;
    m.phinet.width = 12;
    m.train.epochs = 10;
  } else if (name == "smoke") {
    m.task = TaskKind::awgn_blind;
    m.dataset = {"toy", 24, 16, "", 0.75, 0.25};
    m.prior.backend = "dictionary";
    m.prior.atoms = 6;
    m.phinet.depth = 3;
    m.phinet.width = 4;
    m.train.epochs = 3;
  } else {
    throw DomainError("unknown preset '" + name +
                      "' (available: awgn-desk, inpainting-desk, inpainting-random-desk, colorization-desk, "
                      "generator-desk, smoke)");
  }
  m.train.seed = m.seed;
  m.prior.pretrain.seed = m.seed;
  m.prior.conv.image_size = m.dataset.size;
  const bool color = m.task == TaskKind::colorization;
  m.phinet.in_channels = color ? 1 : 3;
  m.phinet.out_channels = color ? 2 : 3;
  return m;
}

inline std::vector<std::string> preset_names() {
  return {"awgn-desk", "inpainting-desk", "inpainting-random-desk", "colorization-desk", "generator-desk", "smoke"};
}

}  // namespace bigprior::experiments
