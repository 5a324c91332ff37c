#include <doctest.h>

#include <cmath>

#include "kernatt/kernel.hpp"

using namespace kernatt;

namespace {

KernelSpec spec_of(KernelForm form, std::size_t d_model, std::size_t d_k, bool symmetric = false) {
  KernelSpec s;
  s.form = form;
  s.d_model = d_model;
  s.d_k = d_k;
  s.symmetric = symmetric;
  return s;
}

Tensor identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, v);
}

const KernelForm kAllForms[] = {KernelForm::Linear, KernelForm::Polynomial,
                                KernelForm::Exponential, KernelForm::RBF};

}  // namespace

TEST_CASE("kernel_scores worked examples") {
  SUBCASE("exponential with identity projections") {
    auto spec = spec_of(KernelForm::Exponential, 4, 4);
    KernelParams p{identity(4), identity(4)};
    auto f = Tensor::matrix({{1, 0, 0, 0}});
    CHECK(kernel_scores(spec, p, f, f).item() == doctest::Approx(std::exp(0.5)).epsilon(1e-14));
  }
  SUBCASE("rbf of coinciding projections is one") {
    Rng rng(1);
    auto spec = spec_of(KernelForm::RBF, 3, 2, true);
    auto p = KernelParams::init(spec, rng);
    auto f = Tensor::randn({1, 3}, rng);
    CHECK(kernel_scores(spec, p, f, f).item() == 1.0);
  }
  SUBCASE("linear can be negative") {
    auto spec = spec_of(KernelForm::Linear, 2, 2);
    KernelParams p{identity(2), identity(2)};
    auto s = kernel_scores(spec, p, Tensor::matrix({{1, 0}}), Tensor::matrix({{-1, 0}}));
    CHECK(s.item() == -1.0);
  }
  SUBCASE("shape mismatch") {
    Rng rng(2);
    auto spec = spec_of(KernelForm::Exponential, 4, 2);
    auto p = KernelParams::init(spec, rng);
    CHECK_THROWS_AS(kernel_scores(spec, p, Tensor::zeros({2, 3}), Tensor::zeros({2, 4})),
                    DimensionError);
  }
  SUBCASE("overflow is reported") {
    auto spec = spec_of(KernelForm::Exponential, 1, 1);
    KernelParams p{Tensor::matrix({{100}}), Tensor::matrix({{100}})};
    auto f = Tensor::matrix({{1}});
    CHECK_THROWS_AS(kernel_scores(spec, p, f, f), OverflowError);
  }
}

TEST_CASE("valid smoother kernels") {
  CHECK_FALSE(is_valid_smoother_kernel(spec_of(KernelForm::Linear, 2, 2)));
  CHECK(is_valid_smoother_kernel(spec_of(KernelForm::Exponential, 2, 2)));
  CHECK(is_valid_smoother_kernel(spec_of(KernelForm::Polynomial, 2, 2)));
  CHECK(is_valid_smoother_kernel(spec_of(KernelForm::RBF, 2, 2)));
}

TEST_CASE("polynomial degree is pinned to two") {
  auto spec = spec_of(KernelForm::Polynomial, 2, 2);
  spec.poly_degree = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("symmetric parameters alias one tensor") {
  Rng rng(3);
  auto p = KernelParams::init(spec_of(KernelForm::Exponential, 4, 2, true), rng);
  CHECK(p.shared());
  auto q = KernelParams::init(spec_of(KernelForm::Exponential, 4, 2, false), rng);
  CHECK_FALSE(q.shared());
}

TEST_CASE("positivity and symmetry properties") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    for (auto form : kAllForms) {
      auto spec = spec_of(form, 6, 4, true);
      auto p = KernelParams::init(spec, rng);
      auto f = Tensor::randn({5, 6}, rng);
      auto s = kernel_scores(spec, p, f, f);
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          CHECK(std::abs(s.at({i, j}) - s.at({j, i})) < 1e-10);
          if (form == KernelForm::Exponential || form == KernelForm::RBF) CHECK(s.at({i, j}) > 0.0);
          if (form == KernelForm::Polynomial) CHECK(s.at({i, j}) >= 0.0);
        }
    }
  }
}

TEST_CASE("linear kernel reaches negative scores almost always") {
  Rng rng(99);
  auto spec = spec_of(KernelForm::Linear, 8, 8);
  KernelParams p{identity(8), identity(8)};
  int with_negative = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto f = Tensor::randn({8, 8}, rng);
    auto s = kernel_scores(spec, p, f, f);
    bool neg = false;
    for (double v : s.data()) neg = neg || v < 0.0;
    with_negative += neg;
  }
  CHECK(with_negative > 990);
}

TEST_CASE("exponential kernel matches scalar evaluation") {
  Rng rng(21);
  auto spec = spec_of(KernelForm::Exponential, 5, 3);
  auto p = KernelParams::init(spec, rng);
  auto fq = Tensor::randn({4, 5}, rng), fk = Tensor::randn({3, 5}, rng);
  auto s = kernel_scores(spec, p, fq, fk);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double qc = 0.0, kc = 0.0;
        for (std::size_t m = 0; m < 5; ++m) {
          qc += fq.at({i, m}) * p.w_q.at({m, c});
          kc += fk.at({j, m}) * p.w_k.at({m, c});
        }
        dot += qc * kc;
      }
      CHECK(std::abs(s.at({i, j}) - std::exp(dot / std::sqrt(3.0))) < 1e-12);
    }
}

TEST_CASE("kernel form names round-trip") {
  for (auto form : kAllForms) CHECK(parse_kernel_form(to_string(form)) == form);
  CHECK_THROWS_AS(parse_kernel_form("cosine"), ConfigError);
}
