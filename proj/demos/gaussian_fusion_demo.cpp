// Fits a per-pixel Gaussian prior to toy scenes, denoises one noisy scene
// with the closed-form estimate and with the equivalent fusion, and prints
// the PSNR of each.

#include <cstdio>
#include <vector>

#include "bigprior/degradations.hpp"
#include "bigprior/experiments/toy_dataset.hpp"
#include "bigprior/fusion.hpp"
#include "bigprior/metrics.hpp"
#include "bigprior/priors/gaussian.hpp"

using namespace bigprior;

int main() {
  std::vector<Image> train;
  for (std::size_t i = 0; i < 200; ++i) train.push_back(to_unit(experiments::toy_scene(32, 7, i)));
  const auto prior = priors::fit_gaussian_prior(train);

  const Image x = to_unit(experiments::toy_scene(32, 7, 1000));
  Rng rng(3);
  const double sigma = 40.0;
  const Image y = add_awgn(x, sigma, rng);

  const double sigma_unit = sigma / 255.0;
  const Image map = priors::gaussian_map_estimate(y, prior, sigma_unit);
  const PhiMap phi = priors::gaussian_phi(prior, sigma_unit);
  const Image fused = fuse(y, phi, prior.mean);

  std::printf("noisy  psnr %.2f dB\n", metrics::psnr(y, x, 1.0));
  std::printf("prior  psnr %.2f dB\n", metrics::psnr(prior.mean, x, 1.0));
  std::printf("MAP    psnr %.2f dB\n", metrics::psnr(map, x, 1.0));
  std::printf("fused  psnr %.2f dB (mean phi %.3f)\n", metrics::psnr(fused, x, 1.0), phi.mean());
  return 0;
}
