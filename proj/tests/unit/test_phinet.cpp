#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "bigprior/degradations.hpp"
#include "bigprior/experiments/toy_dataset.hpp"
#include "bigprior/phinet/loss.hpp"
#include "bigprior/phinet/phinet.hpp"
#include "bigprior/phinet/train.hpp"
#include "test_util.hpp"

using namespace bigprior;
using namespace bigprior::phinet;

namespace {

PhiNetConfig small_config(std::size_t depth = 3, std::size_t width = 6, bool skip = true) {
  PhiNetConfig c;
  c.depth = depth;
  c.width = width;
  c.kernel = 3;
  c.skip = skip;
  return c;
}

double mean_phi(const PhiNet<float>& net, std::span<const TrainSample> data) {
  double m = 0;
  std::size_t n = 0;
  for (const auto& d : data) {
    const PhiMap phi = predict_phi(net, d.input);
    for (float v : phi.grid().data()) m += v, ++n;
  }
  return m / double(n);
}

Grid toy(std::size_t size, std::size_t i) { return to_centered(experiments::toy_scene(size, 5, i)).grid(); }

Grid add_noise(const Grid& x, double sd, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, float(sd));
  Grid out = x;
  for (auto& v : out.data()) v += n(rng);
  return out;
}

}  // namespace

// ------------------------------------------------------------------ network

TEST(PhiNetConfig, Validation) {
  auto c = small_config();
  c.depth = 1;
  EXPECT_THROW(PhiNet<float>(c, 0), DomainError);
  c = small_config();
  c.kernel = 2;
  EXPECT_THROW(PhiNet<float>(c, 0), DomainError);
  const auto j = to_json(small_config(4, 8));
  const auto back = phinet_config_from_json(j);
  EXPECT_EQ(back.depth, 4u);
  EXPECT_EQ(back.width, 8u);
}

TEST(PredictPhi, ZeroHeadGivesHalf) {
  PhiNet<float> net(small_config(), 3);
  net.zero_head();
  std::mt19937_64 rng(1);
  const PhiMap phi = predict_phi(net, Image(testutil::random_grid({3, 9, 7}, rng, -0.5f, 0.5f), ValueRange::centered,
                                            ColorSpace::rgb));
  EXPECT_EQ(phi.shape(), (Shape3{3, 9, 7}));
  for (float v : phi.grid().data()) EXPECT_EQ(v, 0.5f);
}

TEST(PredictPhi, OutputsStayInUnitIntervalAndAreDeterministic) {
  PhiNet<float> net(small_config(), 4);
  std::mt19937_64 rng(2);
  const Grid x = testutil::random_grid({3, 12, 12}, rng, -50.0f, 50.0f);
  const PhiMap a = predict_phi(net, x), b = predict_phi(net, x);
  EXPECT_EQ(a.grid(), b.grid());
  for (float v : a.grid().data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(PredictPhi, InputErrors) {
  PhiNet<float> net(small_config(), 4);
  EXPECT_THROW(predict_phi(net, Grid({1, 4, 4})), ShapeError);
  EXPECT_THROW(predict_phi(net, Image(Shape3{3, 4, 4}, ValueRange::raw255, ColorSpace::rgb)), DomainError);
}

TEST(PredictPhi, TranslationCovariance) {
  const auto cfg = small_config(3, 6);
  PhiNet<float> net(cfg, 5);
  std::mt19937_64 rng(3);
  const Grid big = testutil::random_grid({3, 24, 28}, rng, -0.5f, 0.5f);
  Grid a({3, 24, 24}), b({3, 24, 24});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 24; ++y) {
      for (std::size_t x = 0; x < 24; ++x) {
        a.at(c, y, x) = big.at(c, y, x);
        b.at(c, y, x) = big.at(c, y, x + 4);
      }
    }
  }
  const PhiMap pa = predict_phi(net, a), pb = predict_phi(net, b);
  const std::size_t r = cfg.depth * (cfg.kernel / 2);  // receptive radius
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = r; y + r < 24; ++y) {
      for (std::size_t x = r; x + 4 + r < 24; ++x) {
        EXPECT_NEAR(pa.grid().at(c, y, x + 4), pb.grid().at(c, y, x), 1e-5);
      }
    }
  }
}

TEST(PhiNet, SaveLoadPreservesPredictions) {
  const auto dir = testutil::scratch_dir();
  PhiNet<float> net(small_config(), 6);
  std::mt19937_64 rng(4);
  const Grid x = testutil::random_grid({3, 8, 8}, rng, -0.5f, 0.5f);
  save_phinet(dir, net);
  const auto back = load_phinet(dir, net.config());
  EXPECT_EQ(back.checksum(), net.checksum());
  EXPECT_EQ(predict_phi(back, x).grid(), predict_phi(net, x).grid());
}

// --------------------------------------------------------------------- loss

TEST(BigPriorLoss, PerfectFidelity) {
  std::mt19937_64 rng(1);
  const Image x(testutil::random_grid({3, 4, 4}, rng, 0.0f, 1.0f), ValueRange::unit, ColorSpace::rgb);
  const Image prior(testutil::random_grid({3, 4, 4}, rng, 0.0f, 1.0f), ValueRange::unit, ColorSpace::rgb);
  const PhiMap phi(Grid({3, 4, 4}, 0.0f));
  EXPECT_EQ(bigprior_loss(phi, x, prior, x, g_inverse_identity, 0.3), 0.0);
}

TEST(BigPriorLoss, PerfectPriorPaysOnlyL1) {
  std::mt19937_64 rng(2);
  const Image x(testutil::random_grid({3, 4, 4}, rng, 0.0f, 1.0f), ValueRange::unit, ColorSpace::rgb);
  const Image y(testutil::random_grid({3, 4, 4}, rng, 0.0f, 1.0f), ValueRange::unit, ColorSpace::rgb);
  const PhiMap phi(Grid({3, 4, 4}, 1.0f));
  EXPECT_EQ(bigprior_loss(phi, y, x, x, g_inverse_identity, 0.0), 0.0);
  EXPECT_NEAR(bigprior_loss(phi, y, x, x, g_inverse_identity, 1e-5), 1e-5 * 48, 1e-15);
}

TEST(BigPriorLoss, MatchesScalarRecomputation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Shape3 s{1, 2, 2};
  Grid phi(s), g(s), p(s), x(s);
  for (auto* grid : {&phi, &g, &p, &x}) {
    for (auto& v : grid->data()) v = float(u(rng));
  }
  const double rho = 0.01;
  double want = 0;
  for (int i = 0; i < 4; ++i) {
    const double f = phi.data()[i];
    const double r = (1 - f) * g.data()[i] + f * p.data()[i] - x.data()[i];
    want += r * r + rho * f;
  }
  const auto img = [](const Grid& v) { return Image(v, ValueRange::unit, ColorSpace::gray); };
  EXPECT_NEAR(bigprior_loss(PhiMap(phi), img(g), img(p), img(x), g_inverse_identity, rho), want, 1e-7);
}

TEST(BigPriorLoss, BatchMeanAndErrors) {
  nn::Tensor<double> phi(2, 1, 1, 2, 0.5), g(2, 1, 1, 2, 0.0), p(2, 1, 1, 2, 1.0), x(2, 1, 1, 2, 0.0);
  x.data = {0.5, 0.5, 0.0, 0.0};
  // Sample 0 residual 0, sample 1 residual 0.5 per pixel: (0 + 2 * 0.25) / 2.
  EXPECT_NEAR(bigprior_loss(phi, g, p, x, 0.0), 0.25, 1e-15);
  EXPECT_THROW(bigprior_loss(phi, g, p, nn::Tensor<double>(2, 1, 1, 3), 0.0), ShapeError);
  EXPECT_THROW(bigprior_loss(phi, g, p, x, -1.0), DomainError);
}

TEST(BigPriorLoss, DecomposesIntoFusedErrorPlusL1) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Shape3 s{3, 3, 3};
    const Grid phi = testutil::random_grid(s, rng, 0.0f, 1.0f);
    const Grid g = testutil::random_grid(s, rng), p = testutil::random_grid(s, rng), x = testutil::random_grid(s, rng);
    const double rho = 0.05;
    double l2 = 0, l1 = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double f = phi.data()[i];
      const double fused = (1 - f) * g.data()[i] + f * p.data()[i];
      l2 += (fused - x.data()[i]) * (fused - x.data()[i]);
      l1 += std::abs(f);
    }
    const double got = bigprior_loss(nn::from_grid<double>(phi), nn::from_grid<double>(g), nn::from_grid<double>(p),
                                     nn::from_grid<double>(x), rho);
    EXPECT_NEAR(got, l2 + rho * l1, 1e-9);
  }
}

TEST(BigPriorLoss, FlatDirectionWithoutL1) {
  std::mt19937_64 rng(5);
  const Shape3 s{3, 4, 4};
  const auto g = nn::from_grid<double>(testutil::random_grid(s, rng));
  const auto x = nn::from_grid<double>(testutil::random_grid(s, rng));
  const double base = bigprior_loss(nn::from_grid<double>(Grid(s, 0.0f)), g, g, x, 0.0);
  for (int t = 0; t < 10; ++t) {
    const auto phi = nn::from_grid<double>(testutil::random_grid(s, rng, 0.0f, 1.0f));
    EXPECT_NEAR(bigprior_loss(phi, g, g, x, 0.0), base, 1e-12);
  }
}

TEST(BigPriorLoss, GradientWithRespectToPhi) {
  std::mt19937_64 rng(6);
  const Shape3 s{2, 3, 3};
  auto phi = nn::from_grid<double>(testutil::random_grid(s, rng, 0.1f, 0.9f));
  const auto g = nn::from_grid<double>(testutil::random_grid(s, rng));
  const auto p = nn::from_grid<double>(testutil::random_grid(s, rng));
  const auto x = nn::from_grid<double>(testutil::random_grid(s, rng));
  nn::Tensor<double> grad;
  bigprior_loss(phi, g, p, x, 0.02, &grad);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    auto hi = phi, lo = phi;
    hi.data[i] += 1e-6;
    lo.data[i] -= 1e-6;
    const double fd = (bigprior_loss(hi, g, p, x, 0.02) - bigprior_loss(lo, g, p, x, 0.02)) / 2e-6;
    EXPECT_NEAR(grad.data[i], fd, 1e-7);
  }
}

// ----------------------------------------------- parameter gradient checks

namespace {

// Finite-difference check of dL/dtheta through PhiNet + bigprior_loss.
void check_parameter_gradients(PhiNet<double>& net, const nn::Tensor<double>& x, const nn::Tensor<double>& g,
                               const nn::Tensor<double>& p, const nn::Tensor<double>& t, double rho,
                               std::size_t* checked) {
  auto loss_at = [&] { return bigprior_loss(net.forward(x, nullptr, true), g, p, t, rho); };
  PhiNet<double>::Caches caches;
  nn::Tensor<double> grad_phi;
  bigprior_loss(net.forward(x, &caches, true), g, p, t, rho, &grad_phi);
  auto grads = net.zero_grads();
  net.backward(caches, grad_phi, &grads);
  const auto flat = PhiNet<double>::flatten_grads(grads);
  auto params = net.parameters();
  ASSERT_EQ(params.size(), flat.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      double& w = (*params[k])[i];
      const double w0 = w, h = 1e-6;
      w = w0 + h;
      const double lp = loss_at();
      w = w0 - h;
      const double lm = loss_at();
      w = w0;
      const double fd = (lp - lm) / (2 * h);
      EXPECT_NEAR(flat[k][i], fd, 1e-3 * std::max(std::abs(fd), 1e-6)) << "param " << k << "[" << i << "]";
      ++*checked;
    }
  }
}

}  // namespace

TEST(PhiNetGradient, FourParameterStub) {
  PhiNetConfig c;
  c.depth = 2;
  c.width = 1;
  c.kernel = 1;
  c.in_channels = 1;
  c.out_channels = 1;
  c.skip = false;
  PhiNet<double> net(c, 1);
  ASSERT_EQ(net.parameter_count(), 4u);
  // Keep the hidden unit active so the ReLU is differentiable at every sample.
  auto params = net.parameters();
  (*params[0])[0] = 0.8;
  (*params[1])[0] = 0.3;
  (*params[2])[0] = -1.2;
  (*params[3])[0] = 0.4;
  nn::Tensor<double> x(2, 1, 2, 2), g(2, 1, 2, 2), p(2, 1, 2, 2), t(2, 1, 2, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto* v : {&x, &g, &p, &t}) {
    for (auto& e : v->data) e = u(rng);
  }
  std::size_t checked = 0;
  check_parameter_gradients(net, x, g, p, t, 0.01, &checked);
  EXPECT_EQ(checked, 4u);
}

TEST(PhiNetGradient, BatchNormBodyWithSkip) {
  PhiNet<double> net(small_config(3, 3, true), 7);
  nn::Tensor<double> x(2, 3, 5, 5), g(2, 3, 5, 5), p(2, 3, 5, 5), t(2, 3, 5, 5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* v : {&x, &g, &p, &t}) {
    for (auto& e : v->data) e = u(rng);
  }
  // Larger head weights so the sigmoid is away from its linear regime.
  for (auto& w : *net.parameters()[net.parameters().size() - 2]) w *= 1.0;
  std::size_t checked = 0;
  check_parameter_gradients(net, x, g, p, t, 0.05, &checked);
  EXPECT_EQ(checked, net.parameter_count());
}

// ----------------------------------------------------------------- schedule

TEST(Schedule, CosineWarmRestarts) {
  const double lr0 = 0.01;
  const std::size_t steps = 10, r = 4;
  for (std::size_t epoch = 0; epoch < 25; ++epoch) {
    for (std::size_t s = 0; s < steps; ++s) {
      const double t = double(epoch % r) + double(s) / double(steps);
      EXPECT_NEAR(cosine_warm_restart_lr(lr0, epoch, s, steps, r), lr0 * 0.5 * (1 + std::cos(M_PI * t / r)), 1e-15);
    }
    if (epoch % r == 0) EXPECT_EQ(cosine_warm_restart_lr(lr0, epoch, 0, steps, r), lr0);
    if (epoch % r == r - 1) EXPECT_LT(cosine_warm_restart_lr(lr0, epoch, steps - 1, steps, r), 0.01 * lr0);
  }
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.lr0, 0.01);
  EXPECT_EQ(c.rho, 1e-5);
  EXPECT_EQ(c.epochs, 25u);
  EXPECT_EQ(c.restart_epochs, 4u);
  c.rho = -1;
  EXPECT_THROW(c.validate(), DomainError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), DomainError);
  c = TrainConfig{3, 0.02, 0.5, 7, 2, 9, 0.9};
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.batch_size, 3u);
  EXPECT_EQ(back.rho, 0.5);
  EXPECT_EQ(back.restart_epochs, 2u);
}

// ----------------------------------------------------------------- training

TEST(Train, LearningRateTraceFollowsSchedule) {
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 6; ++i) data.push_back({toy(8, i), toy(8, i), toy(8, i), toy(8, i)});
  PhiNet<float> net(small_config(2, 2), 1);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 9;
  const auto st = train(net, data, cfg);
  ASSERT_EQ(st.loss_history.size(), 9u);
  ASSERT_EQ(st.lr_trace.size(), 18u);
  for (std::size_t k = 0; k < st.lr_trace.size(); ++k) {
    EXPECT_EQ(st.lr_trace[k], cosine_warm_restart_lr(0.01, k / 2, k % 2, 2, 4));
  }
  EXPECT_EQ(st.lr_trace[0], 0.01);
  EXPECT_EQ(st.lr_trace[8], 0.01);
  EXPECT_EQ(st.lr_trace[16], 0.01);
}

TEST(Train, NoisyFidelityPushesPhiUp) {
  std::mt19937_64 rng(1);
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 24; ++i) {
    const Grid x = toy(16, i);
    const Grid y = add_noise(x, 0.15, rng);
    data.push_back({y, y, x, x});
  }
  PhiNet<float> net(small_config(3, 6), 2);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.lr0 = 0.05;
  train(net, data, cfg);
  EXPECT_GT(mean_phi(net, data), 0.8);
}

TEST(Train, FidelityBiasPullsPhiDown) {
  // Same network and data with and without the l1 term; rho is raised above
  // its default so the effect shows on tiny images in a few epochs.
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 16; ++i) {
    const Grid x = toy(32, i);
    data.push_back({x, x, x, x});
  }
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.rho = 1e-2;
  cfg.batch_size = 4;
  PhiNet<float> with_l1(small_config(3, 8), 3), without(small_config(3, 8), 3);
  train(with_l1, data, cfg);
  cfg.rho = 0.0;
  const auto st = train(without, data, cfg);
  EXPECT_LT(mean_phi(with_l1, data), 0.1);
  EXPECT_GT(mean_phi(without, data), 0.4);
  for (double l : st.loss_history) EXPECT_EQ(l, 0.0);
}

TEST(Train, DeterministicAndLeavesPriorsUntouched) {
  std::mt19937_64 rng(4);
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 10; ++i) {
    const Grid x = toy(12, i);
    data.push_back({add_noise(x, 0.1, rng), add_noise(x, 0.1, rng), add_noise(x, 0.05, rng), x});
  }
  const auto snapshot = data;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  PhiNet<float> a(small_config(), 9), b(small_config(), 9);
  const auto sa = train(a, data, cfg);
  const auto sb = train(b, data, cfg);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_EQ(sa.loss_history, sb.loss_history);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(data[i].prior, snapshot[i].prior);
    EXPECT_EQ(data[i].fidelity, snapshot[i].fidelity);
  }
}

TEST(Train, CheckpointResumeMatchesUninterruptedRun) {
  std::mt19937_64 rng(5);
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 10; ++i) {
    const Grid x = toy(12, i);
    data.push_back({add_noise(x, 0.1, rng), add_noise(x, 0.1, rng), add_noise(x, 0.05, rng), x});
  }
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  PhiNet<float> full(small_config(), 11);
  const auto sf = train(full, data, cfg);

  const auto dir = testutil::scratch_dir();
  PhiNet<float> part(small_config(), 11);
  TrainConfig first = cfg;
  first.epochs = 2;
  save_checkpoint(dir, part, cfg, train(part, data, first));
  auto ck = load_checkpoint(dir);
  EXPECT_EQ(ck.state.epoch, 2u);
  const auto sr = train(ck.net, data, ck.train, ck.state);
  EXPECT_EQ(ck.net.checksum(), full.checksum());
  EXPECT_EQ(sr.loss_history, sf.loss_history);
  EXPECT_EQ(sr.lr_trace, sf.lr_trace);
}

TEST(Train, Errors) {
  PhiNet<float> net(small_config(), 1);
  EXPECT_THROW(train(net, std::span<const TrainSample>{}, TrainConfig{}), DomainError);
  std::vector<TrainSample> bad{{Grid({3, 4, 4}), Grid({3, 4, 4}), Grid({3, 4, 5}), Grid({3, 4, 4})}};
  EXPECT_THROW(train(net, bad, TrainConfig{}), ShapeError);
  Grid x({3, 4, 4}, 0.1f);
  Grid nan = x;
  nan.data()[3] = std::numeric_limits<float>::quiet_NaN();
  std::vector<TrainSample> div{{x, x, x, nan}};
  try {
    train(net, div, TrainConfig{});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos);
    EXPECT_NE(msg.find("step 0"), std::string::npos);
  }
}

TEST(Train, CentralInpaintingPhiConcentratesInMask) {
  std::mt19937_64 rng(6);
  const Mask m = central_mask(16, 16, 8);
  const Grid mg = m.to_grid(3);
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 40; ++i) {
    const Grid x = toy(16, i);
    Grid y = x;
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (mg.data()[k] != 0.0f) y.data()[k] = 0.0f;
    }
    data.push_back({y, y, add_noise(x, 0.08, rng), x});
  }
  PhiNet<float> net(small_config(4, 8), 4);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.lr0 = 0.05;
  train(net, data, cfg);
  const Grid held_x = toy(16, 1000);
  Grid held_y = held_x;
  for (std::size_t k = 0; k < held_y.size(); ++k) {
    if (mg.data()[k] != 0.0f) held_y.data()[k] = 0.0f;
  }
  const PhiMap phi = predict_phi(net, held_y);
  double in = 0, out = 0, nin = 0, nout = 0;
  for (std::size_t k = 0; k < phi.grid().size(); ++k) {
    if (mg.data()[k] != 0.0f) in += phi.grid().data()[k], ++nin;
    else out += phi.grid().data()[k], ++nout;
  }
  EXPECT_GT(in / nin, out / nout);
}
