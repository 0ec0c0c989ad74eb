#include "testing.hpp"

#include "filmedgan/errors.hpp"
#include "filmedgan/film.hpp"
#include "oracles.hpp"

using namespace filmedgan;

namespace {
const auto kDouble = torch::TensorOptions().dtype(torch::kDouble);
}

TEST_SUITE("film") {

TEST_CASE("zero embedding under identity weights gives unit gamma and zero beta") {
  const auto w = FilmGeneratorWeights::identity(300, 512);
  const auto p = film_params(torch::zeros({300}), w);
  CHECK(p.gamma.sizes() == torch::IntArrayRef{512});
  CHECK(p.beta.sizes() == torch::IntArrayRef{512});
  CHECK(torch::equal(p.gamma, torch::ones({512})));
  CHECK(torch::equal(p.beta, torch::zeros({512})));
}

TEST_CASE("film_params matches direct matrix evaluation") {
  FilmGeneratorWeights w{torch::tensor({{1.0, 0.0}, {0.0, 1.0}}), torch::tensor({0.0, 0.0}),
                         torch::tensor({{2.0, 0.0}, {0.0, 0.0}}), torch::tensor({1.0, 1.0})};
  const auto p = film_params(torch::tensor({1.0, 2.0}), w);
  CHECK((oracle::to_vec(p.gamma) == std::vector<double>{1.0, 2.0}));
  CHECK((oracle::to_vec(p.beta) == std::vector<double>{3.0, 1.0}));

  const auto batched = film_params(torch::tensor({{1.0, 2.0}, {0.0, 0.0}}), w);
  CHECK((batched.gamma.sizes() == torch::IntArrayRef{2, 2}));
  CHECK((oracle::to_vec(batched.beta) == std::vector<double>{3.0, 1.0, 1.0, 1.0}));
}

TEST_CASE("film_params rejects mismatched embedding width") {
  const auto w = FilmGeneratorWeights::identity(4, 3);
  CHECK_THROWS_AS(film_params(torch::zeros({5}), w), ShapeError);
  CHECK_THROWS_AS(film_params(torch::zeros({2, 5}), w), ShapeError);
}

TEST_CASE("film_modulate elementwise examples") {
  const auto z = torch::tensor({1.0, 2.0, 3.0, 4.0}).view({1, 2, 2});
  const auto out = film_modulate(z, {torch::tensor({2.0}), torch::tensor({1.0})});
  CHECK((oracle::to_vec(out) == std::vector<double>{3, 5, 7, 9}));

  torch::manual_seed(3);
  const auto zr = torch::randn({4, 5, 3});
  CHECK(torch::equal(film_modulate(zr, FilmParams::identity(4)), zr));

  const auto beta = torch::tensor({0.5f, -1.0f, 2.0f, 3.0f});
  const auto flat = film_modulate(zr, {torch::zeros({4}), beta});
  for (int64_t k = 0; k < 4; ++k) CHECK(torch::equal(flat[k], torch::full({5, 3}, beta[k].item<float>())));
}

TEST_CASE("film_modulate rejects channel and batch mismatches") {
  CHECK_THROWS_AS(film_modulate(torch::zeros({3, 2, 2}), FilmParams::identity(4)), ShapeError);
  CHECK_THROWS_AS(film_modulate(torch::zeros({2, 3, 2, 2}), {torch::ones({3, 3}), torch::zeros({3, 3})}), ShapeError);
}

TEST_CASE("identity modulation is exact on batches with per-sample parameters") {
  torch::manual_seed(5);
  const auto z = torch::randn({3, 4, 5, 3});
  const FilmParams p{torch::ones({3, 4}), torch::zeros({3, 4})};
  CHECK(torch::equal(film_modulate(z, p), z));
}

TEST_CASE("modulation without shift is linear in the feature map") {
  torch::manual_seed(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z1 = torch::randn({4, 5, 3}, kDouble);
    const auto z2 = torch::randn({4, 5, 3}, kDouble);
    const FilmParams scale_only{torch::randn({4}, kDouble), torch::zeros({4}, kDouble)};
    const double a = torch::randn({1}).item<double>(), b = torch::randn({1}).item<double>();
    const auto lhs = film_modulate(a * z1 + b * z2, scale_only);
    const auto rhs = a * film_modulate(z1, scale_only) + b * film_modulate(z2, scale_only);
    CHECK(torch::allclose(lhs, rhs, 1e-12, 1e-12));

    const FilmParams full{scale_only.gamma, torch::randn({4}, kDouble)};
    const auto beta_map = full.beta.view({4, 1, 1}).expand({4, 5, 3});
    const auto affine = a * film_modulate(z1, full) + b * film_modulate(z2, full) - (a + b - 1) * beta_map;
    CHECK(torch::allclose(film_modulate(a * z1 + b * z2, full), affine, 1e-12, 1e-12));
  }
}

TEST_CASE("tv_penalty examples") {
  CHECK(tv_penalty(torch::full({3, 4, 5}, 0.7)).item<double>() == 0.0);
  CHECK(tv_penalty(torch::tensor({0.0, 1.0}).view({1, 1, 2})).item<double>() == doctest::Approx(0.5).epsilon(1e-15));

  torch::manual_seed(2);
  const auto x = torch::randn({3, 6, 4}, kDouble);
  CHECK(tv_penalty(2.0 * x).item<double>() == doctest::Approx(4.0 * tv_penalty(x).item<double>()).epsilon(1e-12));
}

TEST_CASE("tv_penalty agrees with a brute-force sum and is non-negative") {
  torch::manual_seed(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int64_t c = 1 + trial % 3, h = 1 + trial % 5, w = 1 + (trial * 7) % 6;
    const auto x = torch::randn({c, h, w}, kDouble);
    const double got = tv_penalty(x).item<double>();
    CHECK(got == doctest::Approx(oracle::tv(oracle::to_vec(x), c, h, w)).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
  // Batched input averages over samples.
  const auto batch = torch::randn({3, 2, 4, 4}, kDouble);
  double mean = 0.0;
  for (int64_t i = 0; i < 3; ++i) mean += oracle::tv(oracle::to_vec(batch[i]), 2, 4, 4) / 3.0;
  CHECK(tv_penalty(batch).item<double>() == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("tv_penalty is zero exactly for per-channel constant images") {
  auto x = torch::ones({3, 4, 4}, kDouble);
  x[1] *= -2.0;
  x[2] *= 0.25;
  CHECK(tv_penalty(x).item<double>() == 0.0);
  x[1][2][3] = 0.0;
  CHECK(tv_penalty(x).item<double>() > 0.0);
}

TEST_CASE("gradients of film_params match finite differences") {
  torch::manual_seed(13);
  auto h = torch::randn({6}, kDouble).requires_grad_();
  FilmGeneratorWeights w{torch::randn({4, 6}, kDouble).requires_grad_(), torch::randn({4}, kDouble).requires_grad_(),
                         torch::randn({4, 6}, kDouble).requires_grad_(), torch::randn({4}, kDouble).requires_grad_()};
  const auto probe_g = torch::randn({4}, kDouble), probe_b = torch::randn({4}, kDouble);
  auto f = [&] {
    const auto p = film_params(h, w);
    return (p.gamma * probe_g).sum() + (p.beta * probe_b).sum();
  };
  const auto r = oracle::gradient_check(f, {h, w.w_gamma, w.b_gamma, w.w_beta, w.b_beta});
  CHECK(r.rel_err < 1e-4);
  CHECK(r.analytic_norm > 0.0);
}

TEST_CASE("gradients of film_modulate match finite differences") {
  torch::manual_seed(17);
  auto z = torch::randn({4, 5, 3}, kDouble).requires_grad_();
  auto gamma = torch::randn({4}, kDouble).requires_grad_();
  auto beta = torch::randn({4}, kDouble).requires_grad_();
  const auto probe = torch::randn({4, 5, 3}, kDouble);
  auto f = [&] { return (film_modulate(z, {gamma, beta}) * probe).sum(); };
  CHECK(oracle::gradient_check(f, {z, gamma, beta}).rel_err < 1e-4);
}

TEST_CASE("gradients of tv_penalty match finite differences") {
  torch::manual_seed(19);
  auto x = torch::randn({4, 5, 3}, kDouble).requires_grad_();
  auto f = [&] { return tv_penalty(x); };
  CHECK(oracle::gradient_check(f, {x}).rel_err < 1e-4);
}

TEST_CASE("FilmGenerator module starts at identity and can be reset") {
  FilmGenerator gen(8, 4);
  torch::manual_seed(23);
  const auto h = torch::randn({2, 8});
  auto p = gen->forward(h);
  CHECK(torch::equal(p.gamma, torch::ones({2, 4})));
  CHECK(torch::equal(p.beta, torch::zeros({2, 4})));
  {
    torch::NoGradGuard guard;
    for (auto& param : gen->parameters()) param.normal_();
  }
  CHECK_FALSE(torch::equal(gen->forward(h).gamma, torch::ones({2, 4})));
  gen->reset_identity();
  CHECK(torch::equal(gen->forward(h).gamma, torch::ones({2, 4})));
  CHECK(gen->parameters().size() == 4);
}

}
