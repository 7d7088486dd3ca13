#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "bigprior/array_io.hpp"
#include "bigprior/color.hpp"
#include "bigprior/degradations.hpp"
#include "bigprior/error.hpp"
#include "bigprior/experiments/manifest.hpp"
#include "bigprior/experiments/plots.hpp"
#include "bigprior/experiments/toy_dataset.hpp"
#include "bigprior/fusion.hpp"
#include "bigprior/image.hpp"
#include "bigprior/metrics.hpp"
#include "bigprior/phinet/phinet.hpp"
#include "bigprior/phinet/train.hpp"
#include "bigprior/priors/dictionary.hpp"
#include "bigprior/priors/gaussian.hpp"
#include "bigprior/priors/generator.hpp"
#include "bigprior/priors/generator_training.hpp"
#include "bigprior/priors/inversion.hpp"
#include "bigprior/raster_io.hpp"

namespace bigprior::experiments {

namespace fs = std::filesystem;

/// Directory layout of one run.
struct RunDir {
  fs::path root;

  fs::path manifest() const { return root / "manifest.json"; }
  fs::path data(const std::string& split) const { return root / "data" / split; }
  fs::path priors(const std::string& split) const { return root / "priors" / split; }
  fs::path backend() const { return root / "priors" / "backend"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path eval() const { return root / "eval"; }
  fs::path plots() const { return root / "plots"; }
  fs::path report() const { return root / "report.md"; }
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> s{"train", "test"};
  return s;
}

/// One prepared example.
struct Item {
  std::string id;
  std::size_t source = 0;  // index in the source dataset
  double sigma = 0.0;      // awgn only, 8-bit units
};

inline std::string item_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return buf;
}

inline std::vector<Item> load_items(const RunDir& run, const std::string& split) {
  std::ifstream in(run.data(split) / "items.json");
  if (!in) throw IoError("dataset not prepared: missing " + (run.data(split) / "items.json").string());
  nlohmann::json j;
  in >> j;
  std::vector<Item> items;
  for (const auto& e : j.at("items")) {
    items.push_back({e.at("id").get<std::string>(), e.at("source").get<std::size_t>(), e.value("sigma", 0.0)});
  }
  return items;
}

// ---------------------------------------------------------------- prepare

inline std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline Image source_image(const RunManifest& m, const std::vector<fs::path>& files, std::size_t index) {
  if (m.dataset.kind == "toy") return toy_scene(m.dataset.size, m.seed, index);
  Image img = load_image(files[index]);
  if (img.channels() != 3 || img.height() != m.dataset.size || img.width() != m.dataset.size) {
    throw ShapeError("dataset image " + files[index].string() + " is " + to_string(img.shape()) + ", expected 3x" +
                     std::to_string(m.dataset.size) + "x" + std::to_string(m.dataset.size));
  }
  return img;
}

inline RandomMaskConfig random_mask_config(std::size_t size) {
  RandomMaskConfig c;
  c.side_mean = static_cast<double>(size) / 4.0;
  c.side_stddev = static_cast<double>(size) / 8.0;
  return c;
}

struct PrepareSummary {
  std::size_t train = 0;
  std::size_t test = 0;
};

/// Materializes clean images, observations and per-item degradation records.
inline PrepareSummary cmd_prepare(const RunManifest& m, const fs::path& root) {
  RunDir run{root};
  std::vector<fs::path> files;
  std::size_t count = m.dataset.count;
  if (m.dataset.kind == "directory") {
    files = list_pngs(m.dataset.path);
    count = files.size();
  }
  if (count == 0) throw DomainError("empty dataset");
  const Split split = split_indices(count, m.dataset.train_fraction, m.dataset.test_fraction, m.seed);
  fs::create_directories(root);
  save_manifest(run.manifest(), m);
  PrepareSummary summary{split.train.size(), split.test.size()};
  for (const auto& name : split_names()) {
    const auto& indices = name == "train" ? split.train : split.test;
    const fs::path dir = run.data(name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng rng(m.seed * 0x100000001b3ull + (name == "train" ? 11u : 13u));
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t source : indices) {
      const Image x = source_image(m, files, source);
      const std::string id = item_id(source);
      save_image(dir / (id + ".png"), x);
      nlohmann::json rec{{"id", id}, {"source", source}};
      Image y = x;
      switch (m.task) {
        case TaskKind::awgn_blind: {
          const double sigma = sample_blind_sigma(rng);
          y = add_awgn(x, sigma, rng);
          rec["sigma"] = sigma;
          break;
        }
        case TaskKind::inpainting_central:
        case TaskKind::inpainting_random: {
          const Mask mask = m.task == TaskKind::inpainting_central
                                ? central_mask(x.height(), x.width(), m.central_patch())
                                : sample_random_masks(x.height(), x.width(), rng, random_mask_config(x.width()));
          save_bitmap(dir / (id + ".mask.png"), mask.width(), mask.height(), mask.bits());
          y = apply_mask(x, mask);
          rec["masked_pixels"] = mask.masked_count();
          break;
        }
        case TaskKind::colorization:
          y = degrade_colorization(to_unit(x));
          break;
      }
      save_grid(dir / (id + ".obs.pfaf"), y.grid());
      items.push_back(rec);
    }
    std::ofstream out(dir / "items.json");
    out << nlohmann::json{{"split", name}, {"items", items}}.dump(2) << '\n';
  }
  return summary;
}

// ---------------------------------------------------------------- shared loading

inline Image load_clean(const RunDir& run, const std::string& split, const Item& it) {
  return load_image(run.data(split) / (it.id + ".png"));
}

inline Mask load_mask(const RunDir& run, const std::string& split, const Item& it) {
  const Image img = load_image(run.data(split) / (it.id + ".mask.png"));
  std::vector<std::uint8_t> bits(img.shape().plane());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = img.data()[i] > 127.5f ? 1 : 0;
  return Mask(img.height(), img.width(), std::move(bits));
}

inline Image load_observation(const RunManifest& m, const RunDir& run, const std::string& split, const Item& it) {
  Grid g = load_grid(run.data(split) / (it.id + ".obs.pfaf"));
  if (m.task == TaskKind::colorization) return Image(std::move(g), ValueRange::lab, ColorSpace::gray);
  return Image(std::move(g), ValueRange::raw255, ColorSpace::rgb);
}

inline DegradationSpec degradation_for(const RunManifest& m, const RunDir& run, const std::string& split,
                                       const Item& it) {
  switch (m.task) {
    case TaskKind::awgn_blind: return DegradationSpec::awgn(it.sigma);
    case TaskKind::inpainting_central:
    case TaskKind::inpainting_random: return DegradationSpec::inpainting(load_mask(run, split, it));
    case TaskKind::colorization: return DegradationSpec::colorization();
  }
  throw DomainError("unknown task");
}

// ---------------------------------------------------------------- invert

/// Fitted prior model of a run.
struct Backend {
  std::string kind;
  std::optional<priors::GaussianPixelPrior> gaussian;
  std::optional<priors::DictionaryPrior> dictionary;
  std::optional<priors::MultiCodeGenerator<float>> generator;
};

inline std::vector<Image> load_train_centered(const RunDir& run) {
  std::vector<Image> out;
  for (const auto& it : load_items(run, "train")) out.push_back(normalize(load_clean(run, "train", it)));
  return out;
}

inline Backend fit_or_load_backend(const RunManifest& m, const RunDir& run) {
  Backend b;
  b.kind = m.prior.backend;
  const fs::path dir = run.backend();
  const bool cached = fs::exists(dir / "backend.json");
  if (b.kind == "gaussian") {
    if (cached) {
      Grid mean = load_grid(dir / "gaussian_mean.pfaf");
      b.gaussian.emplace(Image(std::move(mean), ValueRange::centered, ColorSpace::rgb),
                         load_grid(dir / "gaussian_std.pfaf"));
    } else {
      const auto imgs = load_train_centered(run);
      b.gaussian.emplace(priors::fit_gaussian_prior(imgs));
      fs::create_directories(dir);
      save_grid(dir / "gaussian_mean.pfaf", b.gaussian->mean.grid());
      save_grid(dir / "gaussian_std.pfaf", b.gaussian->stddev);
    }
  } else if (b.kind == "dictionary" || m.prior.generator == "pca") {
    if (cached) {
      b.dictionary = priors::load_dictionary(dir);
    } else {
      const auto imgs = load_train_centered(run);
      b.dictionary = priors::fit_dictionary(imgs, m.prior.atoms);
      priors::save_dictionary(dir, *b.dictionary);
    }
    if (b.kind == "generator") b.generator = priors::make_pca_generator<float>(*b.dictionary);
  } else {
    if (cached) {
      b.generator = priors::load_generator<float>(dir);
    } else {
      const auto imgs = load_train_centered(run);
      std::vector<Grid> grids;
      for (const auto& i : imgs) grids.push_back(i.grid());
      const auto init = priors::make_conv_generator<float>(m.prior.conv, m.seed, 1);
      priors::GeneratorTrainResult res;
      b.generator = priors::pretrain_generator(init, grids, m.prior.pretrain, &res);
      priors::save_generator(dir, *b.generator, m.seed);
      std::ofstream h(dir / "pretrain_loss.tsv");
      for (std::size_t e = 0; e < res.loss_history.size(); ++e) {
        h << e << '\t' << detail::fmt("%.9f", res.loss_history[e]) << '\n';
      }
    }
  }
  if (!cached) {
    fs::create_directories(dir);
    std::ofstream out(dir / "backend.json");
    out << nlohmann::json{{"backend", b.kind}, {"generator", m.prior.generator}, {"atoms", m.prior.atoms}}.dump(2)
        << '\n';
  }
  return b;
}

struct Projection {
  Grid prior;  // centered RGB
  double loss = 0.0;
  double initial_loss = 0.0;
};

inline double observation_loss(const DegradationSpec& f, const Grid& x, const Grid& y) {
  const auto fx = f.forward<double>(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  double s = 0.0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    const double r = fx[i] - y.data()[i];
    s += r * r;
  }
  return s;
}

/// Least-squares dictionary fit to the observed pixels of y (all pixels
/// unless f is a mask).
inline Grid dictionary_fit(const priors::DictionaryPrior& d, const DegradationSpec& f, const Grid& y) {
  const Eigen::Index p = static_cast<Eigen::Index>(d.pixels());
  Eigen::VectorXd w = Eigen::VectorXd::Ones(p);
  if (f.task() == Task::inpainting) {
    const auto& bits = f.mask().bits();
    const std::size_t plane = bits.size();
    for (Eigen::Index i = 0; i < p; ++i) w[i] = bits[static_cast<std::size_t>(i) % plane] ? 0.0 : 1.0;
  }
  Eigen::VectorXd r(p);
  for (Eigen::Index i = 0; i < p; ++i) r[i] = y.data()[static_cast<std::size_t>(i)] - d.mean[i];
  Eigen::VectorXd v;
  if (d.atoms() > 0) {
    const Eigen::MatrixXd wd = w.asDiagonal() * d.basis;
    Eigen::MatrixXd a = d.basis.transpose() * wd;
    a.diagonal().array() += 1e-8;
    v = a.ldlt().solve(wd.transpose() * r);
  }
  const Eigen::VectorXd out = d.atoms() > 0 ? Eigen::VectorXd(d.basis * v + d.mean) : d.mean;
  Grid g(d.shape);
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = static_cast<float>(out[static_cast<Eigen::Index>(i)]);
  return g;
}

inline Projection project(const RunManifest& m, const Backend& b, const DegradationSpec& f, const Grid& y_model,
                          std::uint64_t item_seed) {
  Projection p;
  if (b.gaussian) {
    p.prior = b.gaussian->mean.grid();
    p.loss = p.initial_loss = observation_loss(f, p.prior, y_model);
  } else if (b.dictionary && !b.generator) {
    if (f.task() == Task::colorization) {
      throw DomainError("the dictionary backend needs a linear degradation; use backend generator/pca");
    }
    p.prior = dictionary_fit(*b.dictionary, f, y_model);
    Grid mean(b.dictionary->shape);
    for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] = static_cast<float>(b.dictionary->mean[static_cast<Eigen::Index>(i)]);
    p.loss = observation_loss(f, p.prior, y_model);
    p.initial_loss = observation_loss(f, mean, y_model);
    if (p.loss > p.initial_loss) {
      p.prior = mean;
      p.loss = p.initial_loss;
    }
  } else {
    const auto preset = m.inversion();
    auto cfg = preset.config;
    cfg.seed = item_seed;
    const std::size_t split = std::min(preset.split_layer, b.generator->block_count() - 1);
    const auto gen = b.generator->with_split(split);
    auto r = priors::invert(gen, y_model, f, cfg);
    p.prior = std::move(r.projection);
    p.loss = r.final_loss;
    p.initial_loss = r.initial_loss;
  }
  return p;
}

struct InvertSummary {
  std::size_t processed = 0;
  std::size_t skipped = 0;
};

/// Computes prior projections for every item of both splits, skipping items
/// whose completion marker exists. `limit` caps newly processed items.
inline InvertSummary cmd_invert(const RunManifest& m, const fs::path& root,
                                std::size_t limit = static_cast<std::size_t>(-1)) {
  RunDir run{root};
  const Backend backend = fit_or_load_backend(m, run);
  InvertSummary s;
  for (const auto& split : split_names()) {
    const auto items = load_items(run, split);
    const fs::path dir = run.priors(split);
    fs::create_directories(dir);
    for (const auto& it : items) {
      const fs::path marker = dir / (it.id + ".json");
      if (fs::exists(marker)) {
        ++s.skipped;
        continue;
      }
      if (s.processed >= limit) return s;
      const Image y = load_observation(m, run, split, it);
      const auto f = degradation_for(m, run, split, it);
      const Grid y_model = f.observation_to_model(y);
      const auto p = project(m, backend, f, y_model, m.seed * 1000003ull + it.source);
      save_grid(dir / (it.id + ".prior.pfaf"), p.prior);
      save_image(dir / (it.id + ".prior.png"),
                 Image(p.prior, ValueRange::centered, ColorSpace::rgb));
      std::ofstream out(marker);
      out << nlohmann::json{{"id", it.id}, {"loss", p.loss}, {"initial_loss", p.initial_loss}}.dump(2) << '\n';
      ++s.processed;
    }
  }
  return s;
}

inline Grid load_prior(const RunDir& run, const std::string& split, const Item& it) {
  if (!fs::exists(run.priors(split) / (it.id + ".json"))) {
    throw IoError("missing prior for " + split + " item " + it.id + " (run invert first)");
  }
  return load_grid(run.priors(split) / (it.id + ".prior.pfaf"));
}

// ---------------------------------------------------------------- train

/// Chroma of a centered RGB image as a (2, H, W) grid in Lab units.
inline Grid chroma(const Grid& centered_rgb) {
  Grid unit = centered_rgb;
  for (auto& v : unit.data()) v = std::clamp(v + 0.5f, 0.0f, 1.0f);
  const Image lab = rgb_to_lab(Image(std::move(unit), ValueRange::unit, ColorSpace::rgb));
  Grid ab({2, lab.height(), lab.width()});
  for (std::size_t c = 0; c < 2; ++c) {
    auto src = lab.grid().channel(c + 1);
    std::copy(src.begin(), src.end(), ab.channel(c).begin());
  }
  return ab;
}

inline Grid scaled(Grid g, float k) {
  for (auto& v : g.data()) v *= k;
  return g;
}

/// Network input and fusion-space operands of one item.
inline phinet::TrainSample make_sample(const RunManifest& m, const RunDir& run, const std::string& split,
                                       const Item& it) {
  const Image x = load_clean(run, split, it);
  const Image y = load_observation(m, run, split, it);
  const auto f = degradation_for(m, run, split, it);
  const Grid prior = load_prior(run, split, it);
  const Grid y_model = f.observation_to_model(y);
  if (m.task == TaskKind::colorization) {
    constexpr float k = 1.0f / 255.0f;
    return {y_model, Grid({2, x.height(), x.width()}, 0.0f), scaled(chroma(prior), k),
            scaled(chroma(normalize(x).grid()), k)};
  }
  return {y_model, y_model, prior, normalize(x).grid()};
}

struct TrainOptions {
  bool fresh = false;  // ignore an existing checkpoint
};

struct TrainSummary {
  std::size_t epochs_run = 0;
  std::vector<double> loss_history;
};

inline TrainSummary cmd_train(const RunManifest& m, const fs::path& root, const TrainOptions& opt = {}) {
  RunDir run{root};
  const auto items = load_items(run, "train");
  std::vector<phinet::TrainSample> data;
  for (const auto& it : items) data.push_back(make_sample(m, run, "train", it));

  const fs::path ck = run.checkpoints();
  phinet::PhiNet<float> net(m.phinet, m.seed);
  phinet::TrainState state;
  if (!opt.fresh && fs::exists(ck / "checkpoint.json")) {
    auto c = phinet::load_checkpoint(ck);
    if (phinet::to_json(c.train) != phinet::to_json(m.train) ||
        phinet::to_json(c.net.config()) != phinet::to_json(m.phinet)) {
      throw DomainError("existing checkpoint was trained with a different configuration (use --fresh)");
    }
    net = std::move(c.net);
    state = std::move(c.state);
  } else {
    fs::remove_all(ck);
  }
  const std::size_t start = state.epoch;
  state = phinet::train(net, data, m.train, std::move(state),
                        [&](const phinet::PhiNet<float>& n, const phinet::TrainState& s) {
                          phinet::save_checkpoint(ck, n, m.train, s);
                        });
  if (state.epoch == start) phinet::save_checkpoint(ck, net, m.train, state);
  std::ofstream h(ck / "loss_history.tsv");
  h << "epoch\tloss\n";
  for (std::size_t e = 0; e < state.loss_history.size(); ++e) {
    h << e << '\t' << detail::fmt("%.9f", state.loss_history[e]) << '\n';
  }
  std::ofstream lr(ck / "lr_trace.tsv");
  for (double v : state.lr_trace) lr << detail::fmt("%.17g", v) << '\n';
  return {state.epoch - start, state.loss_history};
}

// ---------------------------------------------------------------- evaluate

/// One row of a metric table.
struct MetricRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> auc;
  double mean_phi = 0.0;
  std::optional<double> sigma;
  double prior_psnr = 0.0;
};

inline const char* kTableHeader = "image_id\ttask\tpsnr\tssim\tauc\tmean_phi\tsigma_n\tprior_psnr";

inline std::string format_row(const MetricRow& r, const std::string& task) {
  using detail::fmt;
  return r.id + '\t' + task + '\t' + metrics::format_psnr(r.psnr) + '\t' + fmt("%.6f", r.ssim) + '\t' +
         (r.auc ? fmt("%.4f", *r.auc) : std::string("-")) + '\t' + fmt("%.6f", r.mean_phi) + '\t' +
         (r.sigma ? fmt("%.4f", *r.sigma) : std::string("-")) + '\t' + metrics::format_psnr(r.prior_psnr);
}

inline MetricRow mean_row(const std::vector<MetricRow>& rows) {
  MetricRow m;
  m.id = "mean";
  const double n = static_cast<double>(rows.size());
  double auc = 0, sigma = 0;
  for (const auto& r : rows) {
    m.psnr += r.psnr / n;
    m.ssim += r.ssim / n;
    m.mean_phi += r.mean_phi / n;
    m.prior_psnr += r.prior_psnr / n;
    if (r.auc) auc += *r.auc / n;
    if (r.sigma) sigma += *r.sigma / n;
  }
  if (!rows.empty() && rows.front().auc) m.auc = auc;
  if (!rows.empty() && rows.front().sigma) m.sigma = sigma;
  return m;
}

inline void write_table(const fs::path& path, const std::vector<MetricRow>& rows, const std::string& task) {
  std::string s = std::string(kTableHeader) + '\n';
  for (const auto& r : rows) s += format_row(r, task) + '\n';
  s += format_row(mean_row(rows), task) + '\n';
  detail::write_text(path, s);
}

/// Parsed metric table (rows without the mean line).
struct Table {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> mean;
};

inline Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing metric table " + path.string());
  Table t;
  std::string line;
  std::getline(in, line);
  if (line != kTableHeader) throw IoError("unexpected header in " + path.string());
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cells.push_back(c);
    if (cells.size() != 8) throw IoError("malformed row in " + path.string());
    if (cells[0] == "mean") t.mean = cells;
    else t.rows.push_back(cells);
  }
  return t;
}

inline double parse_metric(const std::string& s) {
  if (s == "inf") return metrics::kInfinitePsnr;
  return std::stod(s);
}

struct EvaluateSummary {
  MetricRow fused, prior, fidelity;
  std::size_t images = 0;
};

inline EvaluateSummary cmd_evaluate(const RunManifest& m, const fs::path& root) {
  RunDir run{root};
  if (!fs::exists(run.checkpoints() / "checkpoint.json")) {
    throw IoError("missing checkpoint in " + run.checkpoints().string() + " (run train first)");
  }
  const auto ck = phinet::load_checkpoint(run.checkpoints());
  const auto& net = ck.net;
  const auto items = load_items(run, "test");
  fs::create_directories(run.eval());
  fs::create_directories(run.plots());
  const std::string task = to_string(m.task);
  const bool color = m.task == TaskKind::colorization;

  std::vector<MetricRow> fused_rows, prior_rows, fid_rows;
  std::vector<const Grid*> phis;
  std::vector<Grid> phi_store;
  phi_store.reserve(items.size());
  for (const auto& it : items) {
    const Image x = load_clean(run, "test", it);
    const Image y = load_observation(m, run, "test", it);
    const auto f = degradation_for(m, run, "test", it);
    const Grid y_model = f.observation_to_model(y);
    const Grid prior = load_prior(run, "test", it);
    const PhiMap phi = phinet::predict_phi(net, y_model);
    phi_store.push_back(phi.grid());

    const Image x_unit = to_unit(x);
    const Image prior_img(prior, ValueRange::centered, ColorSpace::rgb);
    Image fused_unit, prior_unit, fid_unit;
    std::optional<double> auc_fused, auc_prior, auc_fid;
    if (color) {
      Grid prior_clipped = prior;
      for (auto& v : prior_clipped.data()) v = std::clamp(v + 0.5f, 0.0f, 1.0f);
      const Image prior_lab = rgb_to_lab(Image(std::move(prior_clipped), ValueRange::unit, ColorSpace::rgb));
      const Image fused_lab = fuse_colorization(y, phi, prior_lab);
      fused_unit = lab_to_rgb(fused_lab);
      prior_unit = lab_to_rgb(prior_lab);
      fid_unit = g_inverse_colorization(y);
      const Grid gt_ab = chroma(normalize(x).grid());
      auto ab = [](const Image& lab) {
        Grid g({2, lab.height(), lab.width()});
        for (std::size_t c = 0; c < 2; ++c) {
          auto s = lab.grid().channel(c + 1);
          std::copy(s.begin(), s.end(), g.channel(c).begin());
        }
        return g;
      };
      auc_fused = metrics::auc_colorization(ab(fused_lab), gt_ab).auc;
      auc_prior = metrics::auc_colorization(ab(prior_lab), gt_ab).auc;
      auc_fid = metrics::auc_colorization(Grid(gt_ab.shape(), 0.0f), gt_ab).auc;
    } else {
      const Image fid(y_model, ValueRange::centered, ColorSpace::rgb);
      fused_unit = to_unit(fuse(fid, phi, prior_img));
      prior_unit = to_unit(prior_img);
      fid_unit = to_unit(fid);
    }
    const double prior_psnr = metrics::psnr(prior_unit, x_unit, 1.0);
    std::optional<double> sigma;
    if (m.task == TaskKind::awgn_blind) sigma = it.sigma;
    fused_rows.push_back({it.id, metrics::psnr(fused_unit, x_unit, 1.0), metrics::ssim(fused_unit, x_unit), auc_fused,
                          phi.mean(), sigma, prior_psnr});
    prior_rows.push_back({it.id, prior_psnr, metrics::ssim(prior_unit, x_unit), auc_prior, 1.0, sigma, prior_psnr});
    fid_rows.push_back({it.id, metrics::psnr(fid_unit, x_unit, 1.0), metrics::ssim(fid_unit, x_unit), auc_fid, 0.0,
                        sigma, prior_psnr});

    Image fused_png = fused_unit;
    for (auto& v : fused_png.grid().data()) v = std::clamp(v, 0.0f, 1.0f);
    save_image(run.eval() / (it.id + ".fused.png"), fused_png);
    save_grid(run.eval() / (it.id + ".phi.pfaf"), phi.grid());
    save_heatmap(run.eval() / (it.id + ".phi.png"), phi);
    detail::write_text(run.eval() / (it.id + ".hallucination.txt"), to_text(hallucination_report(phi)));
  }
  write_table(run.eval() / "metrics_fused.tsv", fused_rows, task);
  write_table(run.eval() / "metrics_prior.tsv", prior_rows, task);
  write_table(run.eval() / "metrics_fidelity.tsv", fid_rows, task);

  // Aggregate fusion statistics over the whole test split.
  if (!phi_store.empty()) {
    const Shape3 s = phi_store.front().shape();
    Grid all({s.channels, s.height * phi_store.size(), s.width});
    for (std::size_t c = 0; c < s.channels; ++c) {
      auto dst = all.channel(c);
      for (std::size_t i = 0; i < phi_store.size(); ++i) {
        auto src = phi_store[i].channel(c);
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * s.plane()));
      }
    }
    const auto rep = hallucination_report(PhiMap(std::move(all)));
    detail::write_text(run.eval() / "hallucination_summary.txt", to_text(rep));
    write_histogram_svg(run.plots() / "phi_histogram.svg", rep.histogram, "phi histogram (test split)");
  }
  return {mean_row(fused_rows), mean_row(prior_rows), mean_row(fid_rows), items.size()};
}

// ---------------------------------------------------------------- analyze-phi

inline metrics::PhiAnalysis cmd_analyze_phi(const RunManifest& m, const fs::path& root) {
  if (m.task != TaskKind::awgn_blind) {
    throw DomainError(std::string("phi analysis needs the awgn-blind task, run is ") + to_string(m.task));
  }
  RunDir run{root};
  const Table t = read_table(run.eval() / "metrics_fused.tsv");
  std::vector<metrics::PhiRecord> recs;
  for (const auto& r : t.rows) recs.push_back({parse_metric(r[5]), parse_metric(r[6]), parse_metric(r[7])});
  const auto a = metrics::analyze_phi(recs);
  std::vector<double> phi, sigma, prior;
  for (const auto& r : recs) {
    phi.push_back(r.mean_phi);
    sigma.push_back(r.sigma_n);
    prior.push_back(r.prior_psnr);
  }
  fs::create_directories(run.plots());
  metrics::write_scatter(run.plots() / "phi_vs_sigma.tsv", "sigma_n", "mean_phi", sigma, phi);
  metrics::write_scatter(run.plots() / "phi_vs_prior_psnr.tsv", "prior_psnr", "mean_phi", prior, phi);
  write_scatter_svg(run.plots() / "phi_vs_sigma.svg", sigma, phi, "sigma_n", "mean phi", a.r_phi_sigma);
  write_scatter_svg(run.plots() / "phi_vs_prior_psnr.svg", prior, phi, "prior PSNR", "mean phi", a.r_phi_priorpsnr);
  detail::write_text(run.eval() / "phi_analysis.txt",
                     "records: " + std::to_string(recs.size()) + "\nr_phi_sigma: " +
                         detail::fmt("%.17g", a.r_phi_sigma) + "\nr_phi_prior_psnr: " +
                         detail::fmt("%.17g", a.r_phi_priorpsnr) + "\n");
  return a;
}

// ---------------------------------------------------------------- report

struct ReportResult {
  fs::path path;
  std::vector<std::string> missing_plots;
};

inline std::string markdown_table(const fs::path& path) {
  std::ifstream in(path);
  std::string line, s;
  bool header = true;
  while (std::getline(in, line)) {
    std::string row = "|";
    std::stringstream ss(line);
    std::string c;
    std::size_t n = 0;
    while (std::getline(ss, c, '\t')) {
      row += " " + c + " |";
      ++n;
    }
    s += row + "\n";
    if (header) {
      s += "|";
      for (std::size_t i = 0; i < n; ++i) s += "---|";
      s += "\n";
      header = false;
    }
  }
  return s;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes report.md from the artifacts in the run directory. Missing plots
/// are listed in the report and returned.
inline ReportResult cmd_report(const fs::path& root) {
  RunDir run{root};
  if (!fs::exists(run.manifest()) || !fs::exists(run.eval() / "metrics_fused.tsv")) {
    throw IoError("no evaluated run in " + root.string());
  }
  const RunManifest m = load_manifest(run.manifest());
  std::string s = "# Run report: " + m.name + "\n\n";
  s += "Task: " + std::string(to_string(m.task)) + ", prior backend: " + m.prior.backend + "\n\n";
  s += "## Manifest\n\n```json\n" + read_file(run.manifest()) + "```\n\n";
  const std::vector<std::pair<std::string, std::string>> tables = {
      {"Fused output", "metrics_fused.tsv"},
      {"Prior only", "metrics_prior.tsv"},
      {"Data fidelity only", "metrics_fidelity.tsv"}};
  for (const auto& [title, file] : tables) {
    s += "## Metrics: " + title + "\n\n";
    if (fs::exists(run.eval() / file)) s += markdown_table(run.eval() / file) + "\n";
    else s += "Missing table: eval/" + file + "\n\n";
  }
  if (fs::exists(run.checkpoints() / "loss_history.tsv")) {
    s += "## Training loss\n\n```\n" + read_file(run.checkpoints() / "loss_history.tsv") + "```\n\n";
  }
  if (fs::exists(run.eval() / "hallucination_summary.txt")) {
    s += "## Hallucination summary (test split)\n\n```\n" + read_file(run.eval() / "hallucination_summary.txt") +
         "```\n\n";
  }
  if (fs::exists(run.eval() / "phi_analysis.txt")) {
    s += "## Phi analysis\n\n```\n" + read_file(run.eval() / "phi_analysis.txt") + "```\n\n";
  }
  std::vector<std::string> plots{"phi_histogram.svg"};
  if (m.task == TaskKind::awgn_blind) {
    plots.push_back("phi_vs_sigma.svg");
    plots.push_back("phi_vs_prior_psnr.svg");
  }
  ReportResult r{run.report(), {}};
  s += "## Plots\n\n";
  for (const auto& p : plots) {
    if (fs::exists(run.plots() / p)) {
      s += "- ![" + p + "](plots/" + p + ")\n";
    } else {
      s += "- Missing plot: plots/" + p + "\n";
      r.missing_plots.push_back(p);
    }
  }
  detail::write_text(run.report(), s);
  return r;
}

}  // namespace bigprior::experiments
