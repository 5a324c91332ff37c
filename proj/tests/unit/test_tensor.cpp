#include <doctest.h>

#include <cmath>
#include <limits>

#include "kernatt/gradcheck.hpp"
#include "kernatt/nn_ops.hpp"
#include "kernatt/tensor.hpp"

using namespace kernatt;

TEST_CASE("tensor construction checks data length against shape") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
  SUBCASE("identity leaves the operand unchanged") {
    auto a = Tensor::matrix({{1.5, -2}, {0.25, 7}});
    auto eye = Tensor::matrix({{1, 0}, {0, 1}});
    CHECK(matmul(eye, a).to_vector() == a.to_vector());
  }
  SUBCASE("2x2 times 2x1") {
    auto c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{0}, {1}}));
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.to_vector() == std::vector<double>{2, 4});
  }
  SUBCASE("inner dimension mismatch") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
  }
  SUBCASE("associativity on random triples") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      auto a = Tensor::randn({3, 4}, rng), b = Tensor::randn({4, 5}, rng),
           c = Tensor::randn({5, 2}, rng);
      auto left = matmul(matmul(a, b), c).to_vector();
      auto right = matmul(a, matmul(b, c)).to_vector();
      for (std::size_t i = 0; i < left.size(); ++i) CHECK(std::abs(left[i] - right[i]) < 1e-10);
    }
  }
}

TEST_CASE("elementwise") {
  CHECK(exp(Tensor::vector({0, 0})).to_vector() == std::vector<double>{1, 1});
  CHECK(add(Tensor::vector({1, 2}), Tensor::vector({3, 4})).to_vector() ==
        std::vector<double>{4, 6});
  CHECK_THROWS_AS(exp(Tensor::vector({800})), OverflowError);
  CHECK_THROWS_AS(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);

  SUBCASE("row and scalar broadcast") {
    auto m = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(add(m, Tensor::vector({10, 20})).to_vector() == std::vector<double>{11, 22, 13, 24});
    CHECK(mul(m, Tensor::scalar(2)).to_vector() == std::vector<double>{2, 4, 6, 8});
  }
  SUBCASE("dispatcher matches the named ops") {
    auto a = Tensor::vector({1, -2});
    CHECK(elementwise(ElementwiseOp::Scale, a, nullptr, 3.0).to_vector() ==
          std::vector<double>{3, -6});
    CHECK_THROWS_AS(elementwise(ElementwiseOp::Add, a), DimensionError);
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives all-ones") {
    Tape tape;
    auto a = tape.watch(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    backward(sum(a));
    for (double g : a.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares gives 2x") {
    Tape tape;
    auto a = tape.watch(Tensor::vector({1, 2}));
    backward(sum(mul(a, a)));
    CHECK(a.grad()[0] == doctest::Approx(2.0));
    CHECK(a.grad()[1] == doctest::Approx(4.0));
  }
  SUBCASE("non-scalar root") {
    Tape tape;
    auto a = tape.watch(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(backward(scale(a, 2.0)), TapeError);
  }
  SUBCASE("detached root") { CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), TapeError); }
  SUBCASE("tape is frozen afterwards") {
    Tape tape;
    auto a = tape.watch(Tensor::vector({1, 2}));
    auto s = sum(a);
    backward(s);
    CHECK(tape.frozen());
    CHECK_THROWS_AS(sum(a), TapeError);
    CHECK_THROWS_AS(backward(s), TapeError);
  }
  SUBCASE("inputs from two tapes") {
    Tape t1, t2;
    auto a = t1.watch(Tensor::vector({1}));
    auto b = t2.watch(Tensor::vector({2}));
    CHECK_THROWS_AS(add(a, b), TapeError);
  }
  SUBCASE("constants receive no gradient") {
    Tape tape;
    auto a = tape.watch(Tensor::vector({1, 2}));
    auto c = Tensor::vector({3, 4});
    backward(sum(mul(a, c)));
    CHECK_FALSE(c.has_grad());
    CHECK(a.grad()[1] == 4.0);
  }
}

TEST_CASE("finite_diff_grad") {
  Rng rng(3);
  auto x = Tensor::randn({2, 3}, rng);
  auto g = finite_diff_grad([](const Tensor& t) { return sum(t).item(); }, x, 1e-5);
  for (double v : g.data()) CHECK(std::abs(v - 1.0) < 1e-8);

  auto g2 = finite_diff_grad([](const Tensor& t) { return sum(mul(t, t)).item(); },
                             Tensor::vector({3}), 1e-5);
  CHECK(std::abs(g2.item() - 6.0) < 1e-6);

  auto nan_at_plus = [](const Tensor& t) {
    return t.data()[0] > 0.0 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  };
  CHECK_THROWS_AS(finite_diff_grad(nan_at_plus, Tensor::vector({0.0})), NonFiniteError);
}

TEST_CASE("primitive gradients agree with central differences") {
  Rng rng(2024);
  auto r = [&](Shape s) { return Tensor::randn(std::move(s), rng); };
  auto check = [](const kernatt::ScalarFn& f, const std::vector<Tensor>& in) {
    auto res = check_gradients(f, in);
    INFO("worst input " << res.worst_input);
    CHECK(res.max_rel_error < 1e-4);
  };

  for (int trial = 0; trial < 3; ++trial) {
    auto probe44 = r({4, 4});
    check([&](auto& v) { return weighted_sum(matmul(v[0], v[1]), probe44); },
          {r({4, 8}), r({8, 4})});
    auto probe3 = r({2, 3, 4});
    auto probe68 = r({6, 8});
    auto probe424 = r({4, 2, 4});
    auto probe43 = r({4, 3});
    check([&](auto& v) { return weighted_sum(matmul_nt(v[0], v[1]), probe3); },
          {r({2, 3, 5}), r({2, 4, 5})});
    auto probe48 = r({4, 8});
    check([&](auto& v) { return weighted_sum(exp(scale(mul(v[0], v[1]), 0.5)), probe48); },
          {r({4, 8}), r({4, 8})});
    check([&](auto& v) { return weighted_sum(sub(add(v[0], v[1]), v[2]), probe48); },
          {r({4, 8}), r({8}), r({1})});
    check([&](auto& v) { return weighted_sum(transpose(v[0]), transpose(probe48)); }, {r({4, 8})});
    check([&](auto& v) { return weighted_sum(layer_norm(v[0], v[1], v[2]), probe48); },
          {r({4, 8}), r({8}), r({8})});
    check([&](auto& v) { return weighted_sum(tile_rows(v[0], 2), probe48); }, {r({2, 8})});
    check([&](auto& v) { return weighted_sum(concat_prefix(v[0], v[1], 2), probe68); },
          {r({1, 8}), r({4, 8})});
    check([&](auto& v) { return weighted_sum(split_heads(v[0], 2, 2), probe424); },
          {r({4, 8})});
    check([&](auto& v) { return weighted_sum(merge_heads(v[0], 2, 2), probe48); },
          {r({4, 2, 4})});
    check([&](auto& v) { return weighted_sum(pairwise_sq_dist(v[0], v[1]), probe3); },
          {r({2, 3, 5}), r({2, 4, 5})});
    std::vector<std::size_t> idx{0, 1, 2, 3, 1, 2, 3, 4, 2, 3, 4, 0};
    check([&](auto& v) { return weighted_sum(relative_logits(v[0], v[1], 2, idx, 4), probe3); },
          {r({2, 3, 2}), r({5, 4})});
    std::vector<int> ids{1, 0, 3, 1};
    check([&](auto& v) { return weighted_sum(embedding(v[0], ids), probe43); }, {r({4, 3})});
    std::vector<int> targets{1, 0, 3, 2};
    std::vector<double> weights{1, 0, 2, 1};
    check([&](auto& v) { return cross_entropy(v[0], targets, weights); }, {r({4, 5})});
    VisibilityMask mask(3, 4, true);
    mask.set(0, 3, false);
    mask.set(1, 0, false);
    check(
        [&](auto& v) { return weighted_sum(masked_normalize(exp(v[0]), mask), probe3); },
        {r({2, 3, 4})});
  }
}

TEST_CASE("backward is bit-for-bit deterministic") {
  Rng rng(5);
  auto a = Tensor::randn({4, 8}, rng), b = Tensor::randn({8, 4}, rng);
  auto run = [&] {
    Tape tape;
    auto wa = tape.watch(a), wb = tape.watch(b);
    backward(sum(exp(scale(matmul(wa, wb), 0.1))));
    auto g = wa.to_vector();
    g.assign(wa.grad().begin(), wa.grad().end());
    g.insert(g.end(), wb.grad().begin(), wb.grad().end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("masked_normalize error paths") {
  VisibilityMask mask(1, 2, true);
  CHECK_THROWS_AS(masked_normalize(Tensor::matrix({{1.0, -0.5}}), mask), InvalidKernelError);
  CHECK_THROWS_AS(masked_normalize(Tensor::matrix({{0.0, 0.0}}), mask), DegenerateDenominatorError);
  mask.set(0, 1, false);
  // A negative score outside the visible set is irrelevant.
  auto w = masked_normalize(Tensor::matrix({{3.0, -0.5}}), mask);
  CHECK(w.to_vector() == std::vector<double>{1.0, 0.0});
}
