#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bigprior/array_io.hpp"
#include "bigprior/error.hpp"
#include "bigprior/image.hpp"
#include "bigprior/nn/optim.hpp"
#include "bigprior/phinet/loss.hpp"
#include "bigprior/phinet/phinet.hpp"

namespace bigprior::phinet {

struct TrainConfig {
  std::size_t batch_size = 8;
  double lr0 = 0.01;
  double rho = 1e-5;
  std::size_t epochs = 25;
  std::size_t restart_epochs = 4;
  std::uint64_t seed = 0;
  double momentum = 0.9;

  void validate() const {
    if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be positive");
    if (!(lr0 > 0.0)) throw DomainError("TrainConfig: lr0 must be positive");
    if (!(rho >= 0.0)) throw DomainError("TrainConfig: rho must be nonnegative");
    if (restart_epochs < 1) throw DomainError("TrainConfig: restart_epochs must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"lr0", c.lr0},   {"rho", c.rho},          {"epochs", c.epochs},
          {"restart_epochs", c.restart_epochs}, {"seed", c.seed}, {"momentum", c.momentum}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr0 = j.value("lr0", c.lr0);
  c.rho = j.value("rho", c.rho);
  c.epochs = j.value("epochs", c.epochs);
  c.restart_epochs = j.value("restart_epochs", c.restart_epochs);
  c.seed = j.value("seed", c.seed);
  c.momentum = j.value("momentum", c.momentum);
  c.validate();
  return c;
}

/// Cosine annealing with warm restarts, evaluated per step:
/// lr0 * (1 + cos(pi * t / R)) / 2 with t the fractional epoch inside the
/// current period of R epochs.
inline double cosine_warm_restart_lr(double lr0, std::size_t epoch, std::size_t step, std::size_t steps_per_epoch,
                                     std::size_t restart_epochs) {
  const double t = static_cast<double>(epoch % restart_epochs) +
                   static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(restart_epochs)));
}

/// One training example. `input` feeds the network; the other three live in
/// the fusion space and share one shape.
struct TrainSample {
  Grid input;
  Grid fidelity;  // g^-1(y)
  Grid prior;     // generator projection, fixed
  Grid target;    // clean x
};

/// Everything needed to continue an interrupted run.
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::string rng;
  std::vector<double> loss_history;
  std::vector<double> lr_trace;
  std::vector<std::vector<float>> velocity;
};

inline void check_samples(std::span<const TrainSample> data, const PhiNetConfig& cfg) {
  if (data.empty()) throw DomainError("train: empty dataset");
  const Shape3 s = data.front().target.shape();
  for (const auto& d : data) {
    require_same_shape(d.fidelity.shape(), s, "train sample fidelity");
    require_same_shape(d.prior.shape(), s, "train sample prior");
    require_same_shape(d.target.shape(), s, "train sample target");
    if (d.input.channels() != cfg.in_channels || d.input.height() != s.height || d.input.width() != s.width) {
      throw ShapeError("train: network input " + to_string(d.input.shape()) + " incompatible with config");
    }
  }
  if (s.channels != cfg.out_channels) throw ShapeError("train: phi channels do not match fusion channels");
}

using EpochCallback = std::function<void(const PhiNet<float>&, const TrainState&)>;

/// SGD-momentum training with per-epoch shuffling and the warm-restart
/// schedule. Resumes from `state` when it has completed epochs.
inline TrainState train(PhiNet<float>& net, std::span<const TrainSample> data, const TrainConfig& cfg,
                        TrainState state = {}, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  check_samples(data, net.config());
  std::mt19937_64 rng(cfg.seed);
  if (!state.rng.empty()) {
    std::istringstream in(state.rng);
    in >> rng;
  }
  nn::SgdMomentum<float> opt(cfg.momentum);
  opt.velocity() = state.velocity;
  const std::size_t n = data.size();
  const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t b0 = step * cfg.batch_size, b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<const Grid*> in, fid, pri, tgt;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& s = data[order[k]];
        in.push_back(&s.input);
        fid.push_back(&s.fidelity);
        pri.push_back(&s.prior);
        tgt.push_back(&s.target);
      }
      const auto x = nn::stack<float>(in);
      PhiNet<float>::Caches caches;
      const auto phi = net.forward(x, &caches, true);
      nn::Tensor<float> grad_phi;
      const double loss = bigprior_loss(phi, nn::stack<float>(fid), nn::stack<float>(pri), nn::stack<float>(tgt),
                                        cfg.rho, &grad_phi);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step));
      }
      auto grads = net.zero_grads();
      net.backward(caches, grad_phi, &grads);
      net.update_buffers(caches);
      const double lr = cosine_warm_restart_lr(cfg.lr0, epoch, step, steps, cfg.restart_epochs);
      state.lr_trace.push_back(lr);
      opt.step(net.parameters(), PhiNet<float>::flatten_grads(grads), lr);
      epoch_loss += loss * static_cast<double>(b1 - b0);
    }
    state.loss_history.push_back(epoch_loss / static_cast<double>(n));
    state.epoch = epoch + 1;
    std::ostringstream rs;
    rs << rng;
    state.rng = rs.str();
    state.velocity = opt.velocity();
    if (on_epoch) on_epoch(net, state);
  }
  return state;
}

/// Writes network, configs, counters, rng state, loss history and momentum
/// buffers into `dir`.
inline void save_checkpoint(const std::filesystem::path& dir, const PhiNet<float>& net, const TrainConfig& cfg,
                            const TrainState& state) {
  std::filesystem::create_directories(dir);
  save_phinet(dir, net);
  for (std::size_t i = 0; i < state.velocity.size(); ++i) {
    save_array(dir / ("momentum." + std::to_string(i) + ".pfaf"),
               NdArray<float>{{state.velocity[i].size()}, state.velocity[i]});
  }
  nlohmann::json j{{"kind", "phinet-checkpoint"},
                   {"phinet", to_json(net.config())},
                   {"train", to_json(cfg)},
                   {"epoch", state.epoch},
                   {"rng", state.rng},
                   {"momentum_buffers", state.velocity.size()},
                   {"loss_history", state.loss_history},
                   {"lr_trace", state.lr_trace}};
  const auto tmp = dir / "checkpoint.json.tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("save_checkpoint: cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "checkpoint.json");
}

struct Checkpoint {
  PhiNet<float> net;
  TrainConfig train;
  TrainState state;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw IoError("load_checkpoint: missing " + (dir / "checkpoint.json").string());
  nlohmann::json j;
  in >> j;
  Checkpoint c{load_phinet(dir, phinet_config_from_json(j.at("phinet"))), train_config_from_json(j.at("train")), {}};
  c.state.epoch = j.at("epoch").get<std::size_t>();
  c.state.rng = j.at("rng").get<std::string>();
  c.state.loss_history = j.at("loss_history").get<std::vector<double>>();
  c.state.lr_trace = j.at("lr_trace").get<std::vector<double>>();
  const auto buffers = j.at("momentum_buffers").get<std::size_t>();
  for (std::size_t i = 0; i < buffers; ++i) {
    c.state.velocity.push_back(load_array<float>(dir / ("momentum." + std::to_string(i) + ".pfaf")).data);
  }
  return c;
}

}  // namespace bigprior::phinet
