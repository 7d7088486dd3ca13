// Command-line driver for the experiment stages.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bigprior/experiments/manifest.hpp"
#include "bigprior/experiments/stages.hpp"

namespace ex = bigprior::experiments;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string manifest;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool need_manifest = true) {
  auto* m = cmd->add_option("--manifest", c.manifest, "run manifest (JSON)");
  if (need_manifest) m->required()->check(CLI::ExistingFile);
  cmd->add_option("--run-dir", c.run_dir, "run directory")->required();
  cmd->add_option("--seed", c.seed, "override the manifest seed");
}

ex::RunManifest resolve(const Common& c) {
  auto m = ex::load_manifest(c.manifest);
  if (c.seed) {
    m.seed = *c.seed;
    m.train.seed = *c.seed;
    m.prior.pretrain.seed = *c.seed;
  }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fusion-map estimation experiments: prepare, invert, train, evaluate, analyze-phi, report"};
  app.require_subcommand(1);

  Common prep, inv, tr, ev, an, rep;
  auto* c_init = app.add_subcommand("init", "write a preset manifest");
  std::string preset, out;
  c_init->add_option("--preset", preset, "preset name")->required();
  c_init->add_option("--manifest", out, "output manifest path")->required();

  auto* c_prepare = app.add_subcommand("prepare", "materialize dataset and observations");
  add_common(c_prepare, prep);

  auto* c_invert = app.add_subcommand("invert", "compute prior projections (resumable)");
  add_common(c_invert, inv);
  std::size_t limit = static_cast<std::size_t>(-1);
  c_invert->add_option("--limit", limit, "process at most this many new items");

  auto* c_train = app.add_subcommand("train", "train the fusion-map network");
  add_common(c_train, tr);
  std::optional<std::size_t> batch_size, epochs, restart_epochs;
  std::optional<double> lr0, rho;
  bool fresh = false;
  c_train->add_option("--batch-size", batch_size);
  c_train->add_option("--lr0", lr0);
  c_train->add_option("--rho", rho);
  c_train->add_option("--epochs", epochs);
  c_train->add_option("--restart-epochs", restart_epochs);
  c_train->add_flag("--fresh", fresh, "discard an existing checkpoint");

  auto* c_eval = app.add_subcommand("evaluate", "fuse, score and write metric tables");
  add_common(c_eval, ev);

  auto* c_an = app.add_subcommand("analyze-phi", "correlate mean phi with noise level and prior quality");
  add_common(c_an, an);

  auto* c_rep = app.add_subcommand("report", "write report.md for a run directory");
  add_common(c_rep, rep, false);

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (*c_init) {
      ex::save_manifest(out, ex::preset_manifest(preset));
      std::cout << "wrote " << out << "\n";
    } else if (*c_prepare) {
      const auto s = ex::cmd_prepare(resolve(prep), prep.run_dir);
      std::cout << "prepared " << s.train << " train / " << s.test << " test images\n";
    } else if (*c_invert) {
      const auto s = ex::cmd_invert(resolve(inv), inv.run_dir, limit);
      std::cout << "inverted " << s.processed << " items, " << s.skipped << " already done\n";
    } else if (*c_train) {
      auto m = resolve(tr);
      if (batch_size) m.train.batch_size = *batch_size;
      if (lr0) m.train.lr0 = *lr0;
      if (rho) m.train.rho = *rho;
      if (epochs) m.train.epochs = *epochs;
      if (restart_epochs) m.train.restart_epochs = *restart_epochs;
      m.train.validate();
      const auto s = ex::cmd_train(m, tr.run_dir, {fresh});
      std::cout << "trained " << s.epochs_run << " epochs";
      if (!s.loss_history.empty()) std::printf(", final loss %.6f", s.loss_history.back());
      std::cout << "\n";
    } else if (*c_eval) {
      const auto s = ex::cmd_evaluate(resolve(ev), ev.run_dir);
      std::cout << "evaluated " << s.images << " images: fused psnr " << bigprior::metrics::format_psnr(s.fused.psnr)
                << ", prior psnr " << bigprior::metrics::format_psnr(s.prior.psnr) << ", fidelity psnr "
                << bigprior::metrics::format_psnr(s.fidelity.psnr) << "\n";
    } else if (*c_an) {
      const auto a = ex::cmd_analyze_phi(resolve(an), an.run_dir);
      std::printf("r(phi, sigma) = %.4f, r(phi, prior psnr) = %.4f over %zu images\n", a.r_phi_sigma,
                  a.r_phi_priorpsnr, a.per_image.size());
    } else if (*c_rep) {
      const auto r = ex::cmd_report(rep.run_dir);
      if (!r.missing_plots.empty()) {
        std::cerr << "report: missing plots:";
        for (const auto& p : r.missing_plots) std::cerr << ' ' << p;
        std::cerr << " (report written to " << r.path.string() << ")\n";
        return 3;
      }
      std::cout << "wrote " << r.path.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << stage << ": error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
