// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>

#include "doctest.h"
#include "sr/numerics/tape.hpp"
#include "sr/toy/mlp_toy.hpp"

namespace {

sr::ToyConfig small() {
  sr::ToyConfig c;
  c.hidden = 16;
  c.points = 64;
  c.pretrain_steps = 600;
  c.finetune_steps = 600;
  return c;
}

}  // namespace

TEST_CASE("toy datasets sit on disjoint intervals and are reproducible") {
  const sr::ToyConfig c;
  const auto old_d = sr::make_toy_dataset(c, sr::ToyRegion::old_region);
  const auto new_d = sr::make_toy_dataset(c, sr::ToyRegion::new_region);
  REQUIRE(old_d.x.size() == 256);
  REQUIRE(new_d.x.size() == 256);
  CHECK(*std::max_element(old_d.x.begin(), old_d.x.end()) < *std::min_element(new_d.x.begin(), new_d.x.end()));
  for (double x : old_d.x) CHECK((x >= -2.0 && x <= -0.5));
  double resid = 0;
  for (std::size_t i = 0; i < old_d.x.size(); ++i) resid += std::pow(old_d.y[i] - sr::toy_target(old_d.x[i]), 2);
  CHECK(std::sqrt(resid / 256) == doctest::Approx(0.05).epsilon(0.15));
  CHECK(sr::make_toy_dataset(c, sr::ToyRegion::old_region).y == old_d.y);

  sr::ToyConfig overlap = c;
  overlap.new_lo = -1.0;
  CHECK_THROWS_AS(overlap.validate(), std::invalid_argument);
}

TEST_CASE("mlp gradient matches central differences") {
  const sr::MlpParams p = sr::init_mlp(6, 4);
  const std::vector<double> x = {-1.5, -0.3, 0.2, 1.1, 1.9};
  const std::vector<double> y = {0.3, -0.2, 0.9, 0.1, -0.7};
  std::vector<sr::Tensor<double>> g;
  sr::mlp_mse_grad(p, x, y, g);
  double worst = 0;
  for (std::size_t t = 0; t < p.tensors.size(); ++t)
    for (std::size_t i = 0; i < p.tensors[t].size(); ++i) {
      sr::MlpParams hi = p, lo = p;
      hi.tensors[t][i] += 1e-6;
      lo.tensors[t][i] -= 1e-6;
      const double fd = (sr::mse(hi.predict(x), y) - sr::mse(lo.predict(x), y)) / 2e-6;
      worst = std::max(worst, std::abs(fd - g[t][i]) / std::max(1e-6, std::abs(fd) + std::abs(g[t][i])));
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("finetune penalty starts at zero and lambda zero ignores the reference") {
  const sr::ToyConfig c = small();
  const auto pre = sr::toy_pretrain(c, 1);
  CHECK(pre.trace.back().old_mse < 0.05);
  const auto f = sr::toy_finetune(pre.params, c, 1.0);
  CHECK(f.trace.front().step == 0);
  CHECK(f.trace.front().drift == 0.0);

  const sr::MlpParams other = sr::init_mlp(c.hidden, 99);
  const auto a = sr::toy_finetune(pre.params, pre.params, c, 0.0);
  const auto b = sr::toy_finetune(pre.params, other, c, 0.0);
  for (std::size_t t = 0; t < a.params.tensors.size(); ++t)
    CHECK(std::ranges::equal(a.params.tensors[t].data(), b.params.tensors[t].data()));
  // with a penalty the reference matters
  const auto d = sr::toy_finetune(pre.params, other, c, 1.0);
  CHECK(!std::ranges::equal(a.params.tensors[2].data(), d.params.tensors[2].data()));
}

TEST_CASE("a dominant penalty pins the old-region predictions") {
  const sr::ToyConfig c = small();
  const auto pre = sr::toy_pretrain(c, 2);
  const auto free_run = sr::toy_finetune(pre.params, c, 0.0);
  const auto pinned = sr::toy_finetune(pre.params, c, 1e6);
  CHECK(free_run.trace.back().drift > 1e-2);
  CHECK(pinned.trace.back().drift < 1e-4);
}

TEST_CASE("divergence is reported") {
  sr::ToyConfig c = small();
  c.optimizer.peak_lr = 1e300;
  c.pretrain_steps = 20;
  CHECK_THROWS_AS(sr::toy_pretrain(c, 0), sr::NonFiniteError);
  CHECK_THROWS_AS(sr::toy_finetune(sr::init_mlp(8, 0), small(), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(sr::toy_finetune(sr::init_mlp(16, 0), small(), -1.0), std::invalid_argument);
}

TEST_CASE("percentiles agree with a sort oracle") {
  CHECK(sr::percentile({3, 1, 2, 4}, 0.5) == 2.5);
  CHECK(sr::percentile({3, 1, 2, 4}, 0.25) == 1.75);
  CHECK(sr::percentile({5}, 0.75) == 5);
  CHECK_THROWS(sr::percentile({}, 0.5));
  CHECK_THROWS(sr::percentile({1, 2}, 1.5));

  const std::vector<double> x = {0, 1, 2};
  std::vector<std::vector<double>> preds = {{5, 1, 0}, {2, 2, 0}, {9, 3, 0}, {4, 7, 0}, {1, 5, 0}};
  const auto band = sr::band_from_predictions(x, preds);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> col;
    for (const auto& p : preds) col.push_back(p[i]);
    std::sort(col.begin(), col.end());
    // five values: quartiles fall exactly on ranks 1, 2, 3
    CHECK(band.p25[i] == col[1]);
    CHECK(band.p50[i] == col[2]);
    CHECK(band.p75[i] == col[3]);
    CHECK((band.p25[i] <= band.p50[i] && band.p50[i] <= band.p75[i]));
  }
}

TEST_CASE("toy band over identical seeds has zero width") {
  sr::ToyConfig c = small();
  c.pretrain_steps = 100;
  c.finetune_steps = 100;
  c.grid_points = 21;
  const std::array<std::uint64_t, 4> same = {7, 7, 7, 7};
  const auto band = sr::toy_band(same, 1.0, c);
  REQUIRE(band.x.size() == 21);
  for (std::size_t i = 0; i < band.x.size(); ++i) {
    CHECK(band.p25[i] == band.p75[i]);
    CHECK(band.p50[i] == band.predictions[0][i]);
  }
  const std::array<std::uint64_t, 3> few = {1, 2, 3};
  CHECK_THROWS_AS(sr::toy_band(few, 1.0, c), std::invalid_argument);

  const std::array<std::uint64_t, 4> mixed = {1, 2, 3, 4};
  const auto spread = sr::toy_band(mixed, 1.0, c);
  double width = 0;
  for (std::size_t i = 0; i < spread.x.size(); ++i) width += spread.p75[i] - spread.p25[i];
  CHECK(width > 0);
}
