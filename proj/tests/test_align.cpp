#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mrhd/align.hpp"
#include "mrhd/error.hpp"
#include "oracles.hpp"

using namespace mrhd;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> g(0.0, spread);
  std::vector<double> v(r * c);
  for (double& x : v) x = g(rng);
  return Tensor::from({r, c}, std::move(v));
}

// Moves every parameter off zero so no ReLU sits on its kink.
NamedParams jittered(const AlignParams& p, std::mt19937_64& rng) {
  NamedParams named;
  p.collect("align", named);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& [name, t] : named)
    for (double& v : t.mutable_data()) v += u(rng);
  return named;
}

// Checks every parameter gradient of `loss` against central differences.
void check_param_grads(const std::function<Tensor()>& loss, const NamedParams& named, double tol) {
  for (const auto& [name, t] : named) t.node()->grad.clear();
  loss().backward();
  bool any_nonzero = false;
  for (const auto& [name, t] : named) {
    const auto analytic = t.grad();
    for (double g : analytic) any_nonzero = any_nonzero || g != 0.0;
    const auto numeric = oracle::finite_diff([&] { return loss().item(); }, t);
    INFO(name);
    CHECK(oracle::max_relative(analytic, numeric) < tol);
  }
  CHECK(any_nonzero);
}

double global_value(const std::vector<std::vector<double>>& gv, const std::vector<std::vector<double>>& gt) {
  const std::size_t B = gv.size(), d = gv[0].size();
  std::vector<double> flat_v, flat_t;
  for (std::size_t i = 0; i < B; ++i) {
    flat_v.insert(flat_v.end(), gv[i].begin(), gv[i].end());
    flat_t.insert(flat_t.end(), gt[i].begin(), gt[i].end());
  }
  return global_loss(Tensor::from({B, d}, flat_v), Tensor::from({B, d}, flat_t)).item();
}

}  // namespace

TEST_CASE("projection shapes and width errors") {
  Rng rng(1);
  const AlignParams p(6, 5, 4, rng);
  std::mt19937_64 data(2);
  const ProjectedFeatures out = project(random_matrix(7, 6, data), random_matrix(3, 5, data), p);
  CHECK(out.v_hat.shape() == Shape{7, 4});
  CHECK(out.t_hat.shape() == Shape{3, 4});
  CHECK_THROWS_AS(project(random_matrix(7, 5, data), random_matrix(3, 5, data), p), DimensionError);
  CHECK_THROWS_AS(project(random_matrix(7, 6, data), random_matrix(3, 6, data), p), DimensionError);
}

TEST_CASE("all-zero projection weights give zero features") {
  Rng rng(1);
  const AlignParams p(6, 5, 4, rng);
  NamedParams named;
  p.collect("align", named);
  for (auto& [name, t] : named)
    if (name.find(".norm.") == std::string::npos)
      for (double& v : t.mutable_data()) v = 0.0;
  std::mt19937_64 data(2);
  const ProjectedFeatures out = project(random_matrix(7, 6, data), random_matrix(3, 5, data), p);
  for (double v : out.v_hat.to_vector()) CHECK(v == 0.0);
  for (double v : out.t_hat.to_vector()) CHECK(v == 0.0);
}

TEST_CASE("projection gradients against central differences") {
  Rng rng(3);
  const AlignParams p(6, 5, 4, rng);
  std::mt19937_64 data(4);
  const NamedParams named = jittered(p, data);
  const Tensor visual = random_matrix(5, 6, data), text = random_matrix(3, 5, data);
  const Tensor wv = random_matrix(5, 4, data), wt = random_matrix(3, 4, data);
  check_param_grads(
      [&] {
        const ProjectedFeatures f = project(visual, text, p);
        return sum(f.v_hat * wv) + sum(f.t_hat * wt);
      },
      named, 1e-4);
}

TEST_CASE("local similarity examples") {
  const Tensor v = Tensor::matrix({{1, 2, 0}, {0, 0, 3}});
  const Tensor t = Tensor::matrix({{1, 2, 0}, {5, -2.5, 0}});
  const LocalSimilarity s = local_similarity({v, t});
  const double sig1 = static_cast<double>(1.0L / (1.0L + std::exp(-1.0L)));
  CHECK(std::abs(s.s_loc.at(0, 0) - sig1) < 1e-6);
  CHECK(std::abs(s.s_loc.at(0, 0) - 0.731059) < 1e-6);
  CHECK(s.s_loc.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.s_loc.at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.s_hat.at(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.s_hat.at(0) == doctest::Approx((s.s_loc.at(0, 0) + s.s_loc.at(0, 1)) / 2).epsilon(1e-14));
}

TEST_CASE("zero rows stay finite") {
  const LocalSimilarity s = local_similarity({Tensor::zeros({2, 3}), Tensor::matrix({{1, 0, 0}})});
  for (double v : s.s_loc.to_vector()) CHECK(v == 0.5);
}

TEST_CASE("similarities lie strictly in (0, 1)") {
  std::mt19937_64 data(6);
  for (int trial = 0; trial < 30; ++trial) {
    const LocalSimilarity s = local_similarity({random_matrix(6, 4, data, 5.0), random_matrix(3, 4, data, 5.0)});
    for (double v : s.s_loc.to_vector()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (double v : s.s_hat.to_vector()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("local loss examples") {
  const std::vector<int> c = {1, 0, 0, 1, 1};
  const Tensor near = Tensor::vector({1 - 1e-10, 1e-10, 1e-10, 1 - 1e-10, 1 - 1e-10});
  CHECK(local_loss(near, c).item() < 1e-8);
  CHECK(local_loss(Tensor::full({5}, 0.5), c).item() == doctest::Approx(5 * std::log(2.0)).epsilon(1e-14));
  CHECK(local_loss(Tensor::full({5}, 0.5), {0, 0, 0, 0, 0}).item() ==
        doctest::Approx(5 * std::log(2.0)).epsilon(1e-14));
  CHECK(std::abs(local_loss(Tensor::vector({0.75}), {1}).item() - 0.28768) < 1e-5);
  CHECK(local_loss(Tensor::vector({0.75}), {1}).item() == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
}

TEST_CASE("local loss is non-negative and permutation-equivariant") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(7);
    std::vector<int> c(7);
    for (std::size_t i = 0; i < 7; ++i) {
      s[i] = u(rng);
      c[i] = static_cast<int>(rng() % 2);
    }
    const double base = local_loss(Tensor::vector(s), c).item();
    CHECK(base >= 0.0);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps;
    std::vector<int> pc;
    for (std::size_t i : perm) {
      ps.push_back(s[i]);
      pc.push_back(c[i]);
    }
    CHECK(local_loss(Tensor::vector(ps), pc).item() == doctest::Approx(base).epsilon(1e-13));
  }
}

TEST_CASE("global loss examples") {
  CHECK(global_value({{0.3, -1.2}}, {{2.0, 0.7}}) == 0.0);
  const double two = global_value({{1, 0, 0, 0}, {0, 1, 0, 0}}, {{0, 0, 1, 0}, {0, 0, 0, 1}});
  CHECK(std::abs(two - std::log(4.0)) < 1e-12);
  CHECK(std::abs(two - 1.38629) < 1e-5);
}

TEST_CASE("global loss matches the printed double-sum formula") {
  std::mt19937_64 rng(10);
  const Tensor gv = random_matrix(4, 3, rng), gt = random_matrix(4, 3, rng);
  long double denom = 0, num = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      long double dot = 0;
      for (std::size_t k = 0; k < 3; ++k) dot += gv.at(i, k) * gt.at(j, k);
      denom += std::exp(dot);
      if (i == j) num += dot;
    }
  const double expect = static_cast<double>(std::log(denom) - num / 4);
  CHECK(global_loss(gv, gt).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("raising matched dot products lowers the global loss") {
  double previous = std::numeric_limits<double>::infinity();
  for (double a = -2.0; a <= 4.0; a += 0.25) {
    const double v = global_value({{a, 0}, {0, a}}, {{1, 0}, {0, 1}});
    CHECK(v < previous);
    previous = v;
  }
}

TEST_CASE("global loss ignores a common batch permutation") {
  std::mt19937_64 rng(12);
  const Tensor gv = random_matrix(5, 3, rng), gt = random_matrix(5, 3, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  CHECK(global_loss(gather(gv, perm), gather(gt, perm)).item() ==
        doctest::Approx(global_loss(gv, gt).item()).epsilon(1e-13));
}

TEST_CASE("global loss rejects mismatched inputs") {
  CHECK_THROWS_AS(global_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), DimensionError);
  CHECK_THROWS_AS(global_loss(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), 0.0), ConfigError);
}

TEST_CASE("alignment losses reach the projection parameters") {
  Rng rng(13);
  const AlignParams p(6, 5, 4, rng);
  std::mt19937_64 data(14);
  const NamedParams named = jittered(p, data);
  const Tensor v0 = random_matrix(5, 6, data), t0 = random_matrix(3, 5, data);
  const Tensor v1 = random_matrix(5, 6, data), t1 = random_matrix(2, 5, data);
  const std::vector<int> labels = {0, 1, 1, 0, 0};

  SUBCASE("local") {
    check_param_grads([&] { return local_loss(local_similarity(project(v0, t0, p)).s_hat, labels); }, named,
                      1e-4);
  }
  SUBCASE("global") {
    check_param_grads(
        [&] {
          const ProjectedFeatures a = project(v0, t0, p), b = project(v1, t1, p);
          const Tensor gv = concat({reshape(mean(a.v_hat, 0), {1, 4}), reshape(mean(b.v_hat, 0), {1, 4})}, 0);
          const Tensor gt = concat({reshape(mean(a.t_hat, 0), {1, 4}), reshape(mean(b.t_hat, 0), {1, 4})}, 0);
          return global_loss(gv, gt);
        },
        named, 1e-4);
  }
}
