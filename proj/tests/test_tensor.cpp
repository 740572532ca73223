#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ffnlab/activations.hpp"
#include "ffnlab/rng.hpp"
#include "ffnlab/tensor.hpp"

using namespace ffnlab;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, double lo = -2.0,
                     double hi = 2.0, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

TEST_CASE("matmul basics") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).data() == std::vector<double>{1, 2, 3, 4});

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{1, 1});
  CHECK(c.item() == 11.0);

  Tensor z = Tensor::zeros({2, 3});
  Tensor any = random_tensor({3, 4}, 1);
  Tensor zprod = matmul(z, any);
  for (double v : zprod.data()) CHECK(v == 0.0);

  CHECK_THROWS_WITH_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                       doctest::Contains("(2,3)"), std::invalid_argument);
}

TEST_CASE("matmul batched and associativity") {
  Tensor a = random_tensor({2, 3, 4}, 2);
  Tensor b = random_tensor({4, 5}, 3);
  CHECK(matmul(a, b).shape() == Shape{2, 3, 5});

  Tensor x = random_tensor({4, 4}, 4);
  Tensor y = random_tensor({4, 4}, 5);
  Tensor z = random_tensor({4, 4}, 6);
  Tensor lhs = matmul(matmul(x, y), z);
  Tensor rhs = matmul(x, matmul(y, z));
  for (int64_t i = 0; i < lhs.size(); ++i) {
    CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-9));
  }
}

TEST_CASE("elementwise_mul") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = Tensor::from_data({2}, {3, 4});
  CHECK(mul(a, b).data() == std::vector<double>{3, 8});

  Tensor x = random_tensor({3, 3}, 7);
  Tensor ones = Tensor::full({3, 3}, 1.0);
  CHECK(mul(x, ones).data() == x.data());
  Tensor annihilated = mul(x, Tensor::zeros({3, 3}));
  for (double v : annihilated.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(mul(Tensor::zeros({2}), Tensor::zeros({3})),
                  std::invalid_argument);
}

TEST_CASE("softmax") {
  Tensor s = softmax(Tensor::from_data({3}, {0, 0, 0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big = softmax(Tensor::from_data({2}, {1000, 0}));
  CHECK(big.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
  check_finite(big, "softmax stability");

  // probability vector property on random rows
  Tensor x = random_tensor({8, 13}, 8, -5.0, 5.0);
  Tensor p = softmax(x);
  for (int64_t r = 0; r < 8; ++r) {
    double sum = 0.0;
    for (int64_t i = 0; i < 13; ++i) {
      double v = p.data()[r * 13 + i];
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("reduce_sum") {
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(reduce_sum(m).item() == 10.0);
}

TEST_CASE("backward populates leaf grads") {
  Tensor x = Tensor::from_data({3}, {5, -1, 2}, true);
  reduce_sum(x).backward();
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor y = Tensor::from_data({2}, {1, 2}, true);
  reduce_sum(mul(y, y)).backward();
  CHECK(y.grad()[0] == doctest::Approx(2).epsilon(1e-14));
  CHECK(y.grad()[1] == doctest::Approx(4).epsilon(1e-14));
}

TEST_CASE("backward edge cases") {
  // constant loss: no leaves, no-op
  Tensor c = Tensor::scalar(3.0);
  CHECK_NOTHROW(c.backward());

  CHECK_THROWS_AS(Tensor::from_data({2}, {1, 2}, true).backward(),
                  std::invalid_argument);  // non-scalar

  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor loss = reduce_sum(x);
  CHECK_THROWS_AS(loss.detach().backward(), std::runtime_error);

  loss.backward();
  CHECK_THROWS_WITH_AS(loss.backward(), doctest::Contains("consumed"),
                       std::runtime_error);
}

TEST_CASE("grad accumulation across reuse within one graph") {
  Tensor x = Tensor::from_data({2}, {3, 4}, true);
  // loss = sum(x) + sum(x * x) -> grad = 1 + 2x
  Tensor loss = add(reduce_sum(x), reduce_sum(mul(x, x)));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(7).epsilon(1e-14));
  CHECK(x.grad()[1] == doctest::Approx(9).epsilon(1e-14));
}

TEST_CASE("finite differences agree with the tape for every op") {
  double eps = 1e-5;

  auto check = [&](const std::function<Tensor(const Tensor&)>& f, Shape shape,
                   uint64_t seed) {
    Tensor x = random_tensor(std::move(shape), seed);
    CHECK(finite_difference_check(f, x, eps) < 1e-6);
  };

  Tensor w = random_tensor({4, 3}, 100);
  check([&](const Tensor& t) { return reduce_sum(matmul(t, w)); }, {2, 5, 4}, 101);
  check([&](const Tensor& t) { return reduce_sum(matmul(transpose(t), w)); },
        {4, 5}, 102);
  Tensor other = random_tensor({2, 3, 5}, 103);
  check([&](const Tensor& t) { return reduce_sum(bmm(t, other)); }, {2, 4, 3}, 104);
  Tensor same = random_tensor({3, 4}, 105);
  check([&](const Tensor& t) { return reduce_sum(mul(t, same)); }, {3, 4}, 106);
  Tensor bias = random_tensor({4}, 107);
  check([&](const Tensor& t) { return reduce_sum(add(t, bias)); }, {3, 4}, 108);
  check([&](const Tensor& t) { return reduce_sum(softmax(t)); }, {3, 6}, 109);
  check([&](const Tensor& t) {
    return reduce_sum(mul(log_softmax(t), same));
  }, {3, 4}, 110);
  Tensor gain = random_tensor({5}, 111, 0.5, 1.5);
  check([&](const Tensor& t) { return reduce_sum(rms_normalize(t, gain)); },
        {4, 5}, 112);
  check([&](const Tensor& t) {
    return reduce_sum(slice(permute(reshape(t, {2, 3, 4}), {1, 0, 2}), 2, 1, 2));
  }, {6, 4}, 113);
  check([&](const Tensor& t) {
    return reduce_sum(concat({t, scale(t, 2.0)}));
  }, {3, 4}, 114);
  check([&](const Tensor& t) { return reduce_sum(activation(t, ActivationKind::GELU)); },
        {3, 4}, 115);
  check([&](const Tensor& t) { return scale(nll_sum(log_softmax(t), {1, 0, 2}, 0), 0.5); },
        {3, 4}, 116);

  // linear f is exact
  Tensor x = random_tensor({6}, 117);
  CHECK(finite_difference_check(
            [](const Tensor& t) { return reduce_sum(t); }, x, eps) < 1e-10);
}

TEST_CASE("finite_difference_check argument validation") {
  Tensor x = random_tensor({2}, 118);
  CHECK_THROWS_AS(finite_difference_check(
                      [](const Tensor& t) { return reduce_sum(t); }, x, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(finite_difference_check(
                      [](const Tensor& t) { return scale(t, 2.0); }, x, 1e-5),
                  std::invalid_argument);  // non-scalar f
}

TEST_CASE("embedding lookup and scatter gradient") {
  Tensor table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21}, true);
  Tensor out = embedding_lookup(table, {2, 0, 2}, {3});
  CHECK(out.shape() == Shape{3, 2});
  CHECK(out.data() == std::vector<double>{20, 21, 0, 1, 20, 21});
  reduce_sum(out).backward();
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});

  CHECK_THROWS_AS(embedding_lookup(table, {3}, {1}), std::out_of_range);
}

TEST_CASE("nll_sum with pad masking") {
  // 3 rows over vocab 4; row 1 is pad and must not contribute
  Tensor lp = log_softmax(random_tensor({3, 4}, 119));
  Tensor loss = nll_sum(lp, {2, 0, 1}, 0);
  double expected = -lp.data()[0 * 4 + 2] - lp.data()[2 * 4 + 1];
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-15));
  CHECK(count_non_pad({2, 0, 1}, 0) == 2);
}

TEST_CASE("deterministic replay is bitwise") {
  auto run = [] {
    Tensor x = random_tensor({4, 6}, 120, -1, 1, true);
    Tensor w = random_tensor({6, 6}, 121);
    Tensor y = softmax(rms_normalize(matmul(x, w), Tensor::full({6}, 1.0)));
    return reduce_sum(mul(y, y));
  };
  CHECK(run().item() == run().item());
}

TEST_CASE("check_finite error path") {
  Tensor bad = Tensor::from_data({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(check_finite(bad, "test tensor"), std::runtime_error);
}

TEST_CASE("precision mode rounds op outputs through float") {
  set_precision(Precision::F32);
  Tensor a = Tensor::from_data({1}, {1.0});
  Tensor b = Tensor::from_data({1}, {1e-9});
  double got = add(a, b).item();
  set_precision(Precision::F64);
  CHECK(got == static_cast<double>(static_cast<float>(1.0 + 1e-9)));
  CHECK(add(a, b).item() == 1.0 + 1e-9);
}

TEST_CASE("shape validation errors name both shapes") {
  CHECK_THROWS_WITH_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})),
                       doctest::Contains("(4)"), std::invalid_argument);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {7}), std::invalid_argument);
  CHECK_THROWS_AS(slice(Tensor::zeros({2, 3}), 1, 2, 2), std::invalid_argument);
}
