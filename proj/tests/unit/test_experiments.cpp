#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "bigprior/experiments/stages.hpp"
#include "bigprior/metrics.hpp"
#include "test_util.hpp"

using namespace bigprior;
using namespace bigprior::experiments;
namespace fs = std::filesystem;

namespace {

RunManifest small_awgn(std::size_t count = 24) {
  RunManifest m = preset_manifest("smoke");
  m.dataset.count = count;
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path -> contents for every regular file under `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  nlohmann::json j;
  in >> j;
  return j;
}

void run_all(const RunManifest& m, const fs::path& root) {
  cmd_prepare(m, root);
  cmd_invert(m, root);
  cmd_train(m, root);
  cmd_evaluate(m, root);
}

}  // namespace

// ---------------------------------------------------------------- manifest

TEST(Manifest, JsonRoundTripPreservesEveryPreset) {
  for (const auto& name : preset_names()) {
    const RunManifest m = preset_manifest(name);
    const auto j = to_json(m);
    EXPECT_EQ(j.at("schema"), kManifestSchema) << name;
    EXPECT_EQ(to_json(manifest_from_json(j)), j) << name;
  }
}

TEST(Manifest, SaveLoadRoundTrip) {
  const auto dir = testutil::scratch_dir();
  RunManifest m = preset_manifest("inpainting-desk");
  m.seed = 42;
  save_manifest(dir / "m.json", m);
  EXPECT_EQ(to_json(load_manifest(dir / "m.json")), to_json(m));
}

TEST(Manifest, RejectsMissingSchemaAndUnknownTask) {
  auto j = to_json(small_awgn());
  auto bad = j;
  bad.erase("schema");
  EXPECT_THROW(manifest_from_json(bad), DomainError);
  bad = j;
  bad["schema"] = "bigprior-manifest/99";
  EXPECT_THROW(manifest_from_json(bad), DomainError);
  bad = j;
  bad["task"] = "deblur";
  EXPECT_THROW(manifest_from_json(bad), DomainError);
  EXPECT_THROW(preset_manifest("no-such-preset"), DomainError);
}

TEST(Manifest, CentralPatchDefaultsToHalfTheSize) {
  RunManifest m = preset_manifest("inpainting-desk");
  m.mask_patch = 0;
  EXPECT_EQ(m.central_patch(), m.dataset.size / 2);
}

// ---------------------------------------------------------------- toy dataset

TEST(ToyDataset, SplitIsDisjointAndDeterministic) {
  const auto a = split_indices(50, 0.8, 0.2, 3);
  const auto b = split_indices(50, 0.8, 0.2, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::vector<bool> seen(50, false);
  for (auto i : a.train) seen[i] = true;
  for (auto i : a.test) {
    EXPECT_FALSE(seen[i]);
    seen[i] = true;
  }
  EXPECT_NE(split_indices(50, 0.8, 0.2, 4).test, a.test);
}

TEST(ToyDataset, InvalidSplitsThrow) {
  EXPECT_THROW(split_indices(0, 0.8, 0.2, 0), DomainError);
  EXPECT_THROW(split_indices(10, 0.8, 0.3, 0), DomainError);
  EXPECT_THROW(split_indices(10, 0.0, 0.2, 0), DomainError);
  EXPECT_THROW(split_indices(2, 0.9, 0.1, 0), DomainError);
}

TEST(ToyDataset, ScenesAreDeterministicAndDistinct) {
  const Image a = toy_scene(32, 1, 0);
  EXPECT_EQ(a.shape(), (Shape3{3, 32, 32}));
  EXPECT_EQ(a.value_range(), ValueRange::raw255);
  EXPECT_EQ(a.grid(), toy_scene(32, 1, 0).grid());
  EXPECT_FALSE(a.grid() == toy_scene(32, 1, 1).grid());
  for (float v : a.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 255.0f);
  }
}

// ---------------------------------------------------------------- prepare

TEST(Prepare, SplitFractionsOnFiftyImages) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn(50);
  m.dataset.train_fraction = 0.8;
  m.dataset.test_fraction = 0.2;
  const auto s = cmd_prepare(m, root);
  EXPECT_EQ(s.train, 40u);
  EXPECT_EQ(s.test, 10u);
  RunDir run{root};
  EXPECT_EQ(load_items(run, "train").size(), 40u);
  EXPECT_EQ(load_items(run, "test").size(), 10u);
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(run.data("train"))) {
    const auto n = e.path().filename().string();
    if (n.size() > 4 && n.ends_with(".png")) ++pngs;
  }
  EXPECT_EQ(pngs, 40u);
}

TEST(Prepare, BlindSigmaRecordedInRange) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn(100);
  m.dataset.train_fraction = 0.5;
  m.dataset.test_fraction = 0.5;
  cmd_prepare(m, root);
  RunDir run{root};
  std::size_t n = 0;
  for (const auto& split : split_names()) {
    for (const auto& it : load_items(run, split)) {
      EXPECT_GE(it.sigma, 5.0);
      EXPECT_LE(it.sigma, 50.0);
      ++n;
    }
  }
  EXPECT_EQ(n, 100u);
}

TEST(Prepare, FixedSeedReproducesEveryFile) {
  const auto a = testutil::scratch_dir() / "a";
  const auto b = a.parent_path() / "b";
  const RunManifest m = small_awgn();
  cmd_prepare(m, a);
  cmd_prepare(m, b);
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST(Prepare, ObservationMatchesTaskModel) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.task = TaskKind::inpainting_central;
  m.mask_patch = 8;
  cmd_prepare(m, root);
  RunDir run{root};
  for (const auto& it : load_items(run, "test")) {
    const Image x = load_clean(run, "test", it);
    const Image y = load_observation(m, run, "test", it);
    const Mask mask = load_mask(run, "test", it);
    EXPECT_EQ(mask.masked_count(), 64u);
    EXPECT_EQ(y.grid(), apply_mask(x, mask).grid());
  }
}

TEST(Prepare, ColorizationObservationIsLightness) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.task = TaskKind::colorization;
  cmd_prepare(m, root);
  RunDir run{root};
  const auto it = load_items(run, "test").front();
  const Image y = load_observation(m, run, "test", it);
  EXPECT_EQ(y.channels(), 1u);
  const Image lab = rgb_to_lab(to_unit(load_clean(run, "test", it)));
  for (std::size_t i = 0; i < y.data().size(); ++i) EXPECT_NEAR(y.data()[i], lab.grid().channel(0)[i], 1e-3);
}

TEST(Prepare, EmptyDatasetThrows) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn(0);
  EXPECT_THROW(cmd_prepare(m, root), DomainError);
  m = small_awgn();
  m.dataset.kind = "directory";
  m.dataset.path = (root / "nothing").string();
  fs::create_directories(m.dataset.path);
  EXPECT_THROW(cmd_prepare(m, root / "run"), DomainError);
}

TEST(Prepare, InvalidSplitThrows) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.dataset.train_fraction = 0.9;
  m.dataset.test_fraction = 0.3;
  EXPECT_THROW(cmd_prepare(m, root), DomainError);
}

TEST(Prepare, DirectoryModeReadsPngs) {
  const auto root = testutil::scratch_dir();
  const auto src = root / "images";
  fs::create_directories(src);
  for (std::size_t i = 0; i < 10; ++i) save_image(src / ("img" + std::to_string(i) + ".png"), toy_scene(16, 9, i));
  RunManifest m = small_awgn();
  m.dataset.kind = "directory";
  m.dataset.path = src.string();
  m.dataset.train_fraction = 0.6;
  m.dataset.test_fraction = 0.4;
  const auto s = cmd_prepare(m, root / "run");
  EXPECT_EQ(s.train, 6u);
  EXPECT_EQ(s.test, 4u);
}

// ---------------------------------------------------------------- invert

TEST(Invert, GaussianBackendPriorIsTrainMean) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.prior.backend = "gaussian";
  cmd_prepare(m, root);
  cmd_invert(m, root);
  RunDir run{root};
  const auto train = load_items(run, "train");
  Grid mean(normalize(load_clean(run, "train", train.front())).shape());
  std::vector<double> acc(mean.size(), 0.0);
  for (const auto& it : train) {
    const Image x = normalize(load_clean(run, "train", it));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x.data()[i];
  }
  for (const auto& split : split_names()) {
    for (const auto& it : load_items(run, split)) {
      const Grid p = load_prior(run, split, it);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        ASSERT_NEAR(p.data()[i], acc[i] / static_cast<double>(train.size()), 1e-5);
      }
    }
  }
}

TEST(Invert, ResumeCompletesRemainingItemsOnly) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  const auto prep = cmd_prepare(m, root);
  const std::size_t total = prep.train + prep.test;
  const auto first = cmd_invert(m, root, 7);
  EXPECT_EQ(first.processed, 7u);
  RunDir run{root};
  const auto done = snapshot(run.priors("train"));
  const auto second = cmd_invert(m, root);
  EXPECT_EQ(second.skipped, 7u);
  EXPECT_EQ(second.processed, total - 7);
  // Completed items were not rewritten.
  const auto after = snapshot(run.priors("train"));
  for (const auto& [name, bytes] : done) EXPECT_EQ(after.at(name), bytes) << name;
  const auto third = cmd_invert(m, root);
  EXPECT_EQ(third.processed, 0u);
  EXPECT_EQ(third.skipped, total);
}

TEST(Invert, RecordedLossNeverExceedsInitialLoss) {
  const auto root = testutil::scratch_dir();
  for (const char* backend : {"gaussian", "dictionary", "generator"}) {
    RunManifest m = small_awgn();
    m.task = TaskKind::inpainting_random;
    m.prior.backend = backend;
    m.prior.generator = "pca";
    m.prior.inversion_overrides = {{"iterations", 30}};
    const auto dir = root / backend;
    cmd_prepare(m, dir);
    cmd_invert(m, dir);
    RunDir run{dir};
    for (const auto& split : split_names()) {
      for (const auto& it : load_items(run, split)) {
        const auto j = read_json(run.priors(split) / (it.id + ".json"));
        EXPECT_LE(j.at("loss").get<double>(), j.at("initial_loss").get<double>()) << backend << " " << it.id;
      }
    }
  }
}

TEST(Invert, UnpreparedRunThrows) {
  const auto root = testutil::scratch_dir();
  EXPECT_THROW(cmd_invert(small_awgn(), root), IoError);
}

TEST(Invert, DictionaryBackendRejectsColorization) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.task = TaskKind::colorization;
  m.prior.backend = "dictionary";
  cmd_prepare(m, root);
  EXPECT_THROW(cmd_invert(m, root), DomainError);
}

// ---------------------------------------------------------------- train

TEST(Train, HistoryLengthEqualsEpochs) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  cmd_prepare(m, root);
  cmd_invert(m, root);
  const auto s = cmd_train(m, root);
  EXPECT_EQ(s.epochs_run, m.train.epochs);
  EXPECT_EQ(s.loss_history.size(), m.train.epochs);
  RunDir run{root};
  std::ifstream in(run.checkpoints() / "loss_history.tsv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, m.train.epochs + 1);
}

TEST(Train, FinalLossBelowFirstEpoch) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn(48);
  m.train.epochs = 6;
  cmd_prepare(m, root);
  cmd_invert(m, root);
  const auto s = cmd_train(m, root);
  EXPECT_LT(s.loss_history.back(), s.loss_history.front());
}

TEST(Train, SameSeedGivesSameFinalLoss) {
  const auto base = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  std::vector<double> finals;
  for (const char* d : {"a", "b"}) {
    cmd_prepare(m, base / d);
    cmd_invert(m, base / d);
    finals.push_back(cmd_train(m, base / d).loss_history.back());
  }
  EXPECT_NEAR(finals[0], finals[1], 1e-6);
}

TEST(Train, RerunResumesFromCheckpoint) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  cmd_prepare(m, root);
  cmd_invert(m, root);
  cmd_train(m, root);
  const auto again = cmd_train(m, root);
  EXPECT_EQ(again.epochs_run, 0u);
  EXPECT_EQ(cmd_train(m, root, {true}).epochs_run, m.train.epochs);
  RunManifest other = m;
  other.train.rho *= 2;
  EXPECT_THROW(cmd_train(other, root), DomainError);
}

TEST(Train, MissingPriorsThrow) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  cmd_prepare(m, root);
  EXPECT_THROW(cmd_train(m, root), IoError);
}

// ---------------------------------------------------------------- evaluate

TEST(Evaluate, FidelityColumnIsNoisyPsnr) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  RunDir run{root};
  const Table t = read_table(run.eval() / "metrics_fidelity.tsv");
  const auto items = load_items(run, "test");
  ASSERT_EQ(t.rows.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Image x = load_clean(run, "test", items[i]);
    const Image y = load_observation(m, run, "test", items[i]);
    EXPECT_EQ(t.rows[i][0], items[i].id);
    EXPECT_EQ(t.rows[i][1], "awgn-blind");
    EXPECT_NEAR(parse_metric(t.rows[i][2]), metrics::psnr(y.data(), x.data(), 255.0), 1e-3);
  }
}

TEST(Evaluate, TablesHaveMeanRowAndOutputs) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  RunDir run{root};
  for (const char* f : {"metrics_fused.tsv", "metrics_prior.tsv", "metrics_fidelity.tsv"}) {
    const Table t = read_table(run.eval() / f);
    ASSERT_EQ(t.mean.size(), 8u);
    double s = 0.0;
    for (const auto& r : t.rows) s += parse_metric(r[2]);
    EXPECT_NEAR(parse_metric(t.mean[2]), s / static_cast<double>(t.rows.size()), 1e-3) << f;
  }
  for (const auto& it : load_items(run, "test")) {
    EXPECT_TRUE(fs::exists(run.eval() / (it.id + ".fused.png")));
    const Grid phi = load_grid(run.eval() / (it.id + ".phi.pfaf"));
    EXPECT_EQ(phi.shape(), (Shape3{3, 16, 16}));
    EXPECT_TRUE(fs::exists(run.eval() / (it.id + ".hallucination.txt")));
  }
  EXPECT_TRUE(fs::exists(run.plots() / "phi_histogram.svg"));
}

TEST(Evaluate, DeletingEvalOutputsReproducesThemBitIdentically) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  RunDir run{root};
  const auto before = snapshot(run.eval());
  const auto priors = snapshot(run.priors("test"));
  const auto ck = snapshot(run.checkpoints());
  fs::remove_all(run.eval());
  cmd_evaluate(m, root);
  EXPECT_EQ(snapshot(run.eval()), before);
  EXPECT_EQ(snapshot(run.priors("test")), priors);
  EXPECT_EQ(snapshot(run.checkpoints()), ck);
}

TEST(Evaluate, InpaintingKeepsObservationWhereFusionMapIsSmall) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.task = TaskKind::inpainting_central;
  m.mask_patch = 8;
  run_all(m, root);
  RunDir run{root};
  std::size_t checked = 0;
  for (const auto& it : load_items(run, "test")) {
    const Image y = load_observation(m, run, "test", it);
    const Mask mask = load_mask(run, "test", it);
    const Grid prior = load_prior(run, "test", it);
    const Grid phi = load_grid(run.eval() / (it.id + ".phi.pfaf"));
    const Image fused = load_image(run.eval() / (it.id + ".fused.png"));
    const std::size_t plane = y.shape().plane();
    for (std::size_t i = 0; i < y.data().size(); ++i) {
      if (mask.bits()[i % plane]) continue;
      const double yu = y.data()[i] / 255.0;
      const double pu = prior.data()[i] + 0.5;
      const double bound = phi.data()[i] * std::abs(pu - yu) + 0.5 / 255.0 + 1e-6;
      EXPECT_LE(std::abs(fused.data()[i] / 255.0 - yu), bound);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0u);
}

TEST(Evaluate, MissingCheckpointThrows) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  cmd_prepare(m, root);
  cmd_invert(m, root);
  EXPECT_THROW(cmd_evaluate(m, root), IoError);
}

TEST(Evaluate, ColorizationReportsAuc) {
  const auto root = testutil::scratch_dir();
  RunManifest m = small_awgn();
  m.task = TaskKind::colorization;
  m.prior.backend = "gaussian";
  m.phinet.in_channels = 1;
  m.phinet.out_channels = 2;
  run_all(m, root);
  RunDir run{root};
  for (const char* f : {"metrics_fused.tsv", "metrics_prior.tsv", "metrics_fidelity.tsv"}) {
    const Table t = read_table(run.eval() / f);
    for (const auto& r : t.rows) {
      const double auc = parse_metric(r[4]);
      EXPECT_GE(auc, 0.0);
      EXPECT_LE(auc, 100.0);
    }
  }
}

// ---------------------------------------------------------------- analyze-phi

TEST(AnalyzePhi, CorrelationMatchesPearsonRecomputation) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  const auto a = cmd_analyze_phi(m, root);
  RunDir run{root};
  const Table t = read_table(run.eval() / "metrics_fused.tsv");
  std::vector<double> phi, sigma, prior;
  for (const auto& r : t.rows) {
    phi.push_back(parse_metric(r[5]));
    sigma.push_back(parse_metric(r[6]));
    prior.push_back(parse_metric(r[7]));
  }
  EXPECT_EQ(a.r_phi_sigma, metrics::pearson(phi, sigma));
  EXPECT_EQ(a.r_phi_priorpsnr, metrics::pearson(phi, prior));
}

TEST(AnalyzePhi, ScatterRowsEqualTestSize) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  cmd_analyze_phi(m, root);
  RunDir run{root};
  const auto n = load_items(run, "test").size();
  for (const char* f : {"phi_vs_sigma.tsv", "phi_vs_prior_psnr.tsv"}) {
    std::ifstream in(run.plots() / f);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line[0], '#');
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, n) << f;
  }
  EXPECT_TRUE(fs::exists(run.plots() / "phi_vs_sigma.svg"));
  EXPECT_TRUE(fs::exists(run.eval() / "phi_analysis.txt"));
}

TEST(AnalyzePhi, WrongTaskThrows) {
  RunManifest m = small_awgn();
  m.task = TaskKind::inpainting_central;
  EXPECT_THROW(cmd_analyze_phi(m, testutil::scratch_dir()), DomainError);
}

// ---------------------------------------------------------------- report

TEST(Report, IdempotentAndContainsEveryRow) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  cmd_analyze_phi(m, root);
  const auto r1 = cmd_report(root);
  EXPECT_TRUE(r1.missing_plots.empty());
  const std::string first = slurp(r1.path);
  cmd_report(root);
  EXPECT_EQ(slurp(r1.path), first);
  RunDir run{root};
  for (const char* f : {"metrics_fused.tsv", "metrics_prior.tsv", "metrics_fidelity.tsv"}) {
    const Table t = read_table(run.eval() / f);
    for (const auto& r : t.rows) {
      std::string md = "|";
      for (const auto& c : r) md += " " + c + " |";
      EXPECT_NE(first.find(md), std::string::npos) << f << " " << r[0];
    }
  }
  EXPECT_NE(first.find(m.name), std::string::npos);
}

TEST(Report, MissingPlotIsNoted) {
  const auto root = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, root);
  const auto r = cmd_report(root);
  ASSERT_EQ(r.missing_plots.size(), 2u);
  const std::string s = slurp(r.path);
  EXPECT_NE(s.find("Missing plot: plots/phi_vs_sigma.svg"), std::string::npos);
}

TEST(Report, EmptyRunDirThrows) {
  EXPECT_THROW(cmd_report(testutil::scratch_dir()), IoError);
}

// ---------------------------------------------------------------- determinism

TEST(EndToEnd, SerializedRunsProduceIdenticalTables) {
  const auto base = testutil::scratch_dir();
  const RunManifest m = small_awgn();
  run_all(m, base / "a");
  run_all(m, base / "b");
  for (const char* f : {"metrics_fused.tsv", "metrics_prior.tsv", "metrics_fidelity.tsv"}) {
    EXPECT_EQ(slurp(base / "a" / "eval" / f), slurp(base / "b" / "eval" / f)) << f;
  }
}
