#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "fd_oracle.hpp"
#include "logos/error.hpp"
#include "logos/tensor.hpp"

using namespace logos;

namespace {

Array random_array(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : a.data()) v = u(rng);
  return a;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces an op's output to a scalar through fixed random weights, then
// compares tape gradients with central differences for every input.
double op_fd_error(ParameterStore& store, const Builder& build, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  Array weights;
  auto forward = [&](Tape& t) {
    std::vector<Var> ins;
    for (std::size_t i = 0; i < store.size(); ++i) ins.push_back(t.param(store[i]));
    Var out = build(t, ins);
    if (weights.size() == 0) weights = random_array(rng, t.value(out).shape());
    return sum(t, mul(t, out, t.constant(weights)));
  };
  Tape tape;
  Var loss = forward(tape);
  tape.backward(loss);
  Gradients grads(store);
  tape.accumulate_into(grads);
  double worst = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    worst = std::max(worst, testing::max_fd_error(store[i].value, grads[i], [&] {
      Tape t(false);
      return t.value(forward(t))[0];
    }));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul: identity, hand arithmetic, naive oracle") {
  Tape t;
  Var eye = t.constant(Array::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Array a = Array::matrix(3, 2, {1.5, -2, 3, 4, 0.25, 9});
  Var av = t.constant(a);
  CHECK(t.value(matmul(t, eye, av)).data()[3] == 4.0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(t.value(matmul(t, eye, av))[i] == a[i]);

  Var x = t.constant(Array::matrix(2, 2, {1, 2, 3, 4}));
  Var y = t.constant(Array::matrix(2, 1, {5, 6}));
  const Array& r = t.value(matmul(t, x, y));
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r[0] == 17.0);
  CHECK(r[1] == 39.0);

  std::mt19937_64 rng(1);
  Array p = random_array(rng, {7, 5}), q = random_array(rng, {5, 3});
  const Array& pq = t.value(matmul(t, t.constant(p), t.constant(q)));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += p.at(i, k) * q.at(k, j);
      CHECK(std::abs(pq.at(i, j) - s) < 1e-12);
    }
}

TEST_CASE("matmul shape errors name both shapes") {
  Tape t;
  Var a = t.constant(Array({2, 3}));
  Var b = t.constant(Array({2, 3}));
  try {
    matmul(t, a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("and [2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax rows") {
  Tape t;
  const Array& half = t.value(softmax_rows(t, t.constant(Array::matrix(1, 2, {0, 0}))));
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);

  const Array& big = t.value(softmax_rows(t, t.constant(Array::matrix(1, 2, {1000, 0}))));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  std::mt19937_64 rng(9);
  for (double magnitude : {1.0, 100.0, 1e4}) {
    Array x = random_array(rng, {6, 11}, -magnitude, magnitude);
    const Array& s = t.value(softmax_rows(t, t.constant(x)));
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (double v : s.row_span(r)) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
      if (magnitude == 1.0) {
        double z = 0.0;
        for (double v : x.row_span(r)) z += std::exp(v);
        for (std::size_t c = 0; c < 11; ++c) CHECK(std::abs(s.at(r, c) - std::exp(x.at(r, c)) / z) < 1e-12);
      }
    }
  }
}

TEST_CASE("layer_norm, gelu, embedding_lookup basics") {
  Tape t;
  Var g = t.constant(Array({4}, 1.0));
  Var b = t.constant(Array({4}, 0.0));
  const Array& ln = t.value(layer_norm(t, t.constant(Array::matrix(1, 4, {3, 3, 3, 3})), g, b));
  for (double v : ln.data()) CHECK(v == 0.0);

  const Array& ge = t.value(gelu(t, t.constant(Array::matrix(1, 3, {0.0, 1.0, -1.0}))));
  CHECK(ge[0] == 0.0);
  CHECK(ge[1] == doctest::Approx(0.8413447460685429));
  CHECK(ge[2] == doctest::Approx(-0.15865525393145707));

  Array table = Array::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  std::vector<std::size_t> ids{2, 2};
  const Array& e = t.value(embedding_lookup(t, t.constant(table), ids));
  CHECK(e.row_span(0)[0] == e.row_span(1)[0]);
  CHECK(e.row_span(0)[1] == e.row_span(1)[1]);
  CHECK(e.at(0, 0) == 5.0);
}

TEST_CASE("backward: simple calculus and reachability") {
  ParameterStore store;
  Parameter& x = store.add("x", Array::scalar(3.0));
  Parameter& unused = store.add("unused", Array::matrix(1, 2, {1, 2}));
  Tape t;
  Var xv = t.param(x);
  t.param(unused);
  Var loss = mul(t, xv, xv);
  t.backward(loss);
  Gradients g(store);
  t.accumulate_into(g);
  CHECK(g[x.index][0] == 6.0);
  CHECK(g[unused.index][0] == 0.0);
  CHECK(g[unused.index][1] == 0.0);

  Tape t2;
  Var m = t2.param(unused);
  CHECK_THROWS_AS(t2.backward(m), ContractError);
}

TEST_CASE("finite-difference agreement for every differentiable op") {
  std::mt19937_64 rng(21);
  auto fresh = [&](std::vector<Shape> shapes) {
    auto store = std::make_unique<ParameterStore>();
    for (std::size_t i = 0; i < shapes.size(); ++i) store->add("p" + std::to_string(i), random_array(rng, shapes[i]));
    return store;
  };
  const double tol = 1e-4;

  SUBCASE("matmul / matmul_nt / linear") {
    auto s = fresh({{3, 4}, {4, 2}});
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return matmul(t, v[0], v[1]); }) < tol);
    auto s2 = fresh({{3, 4}, {5, 4}});
    CHECK(op_fd_error(*s2, [](Tape& t, auto& v) { return matmul_nt(t, v[0], v[1]); }) < tol);
    auto s3 = fresh({{3, 4}, {4, 2}, {2}});
    CHECK(op_fd_error(*s3, [](Tape& t, auto& v) { return linear(t, v[0], v[1], v[2]); }) < tol);
  }
  SUBCASE("elementwise") {
    auto s = fresh({{2, 3}, {2, 3}, {3}});
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return add(t, v[0], v[1]); }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return mul(t, v[0], v[1]); }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return add_row(t, v[0], v[2]); }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return scale(t, v[0], -2.5); }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return gelu(t, v[0]); }) < tol);
  }
  SUBCASE("normalization and softmax") {
    auto s = fresh({{3, 5}, {5}, {5}});
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return layer_norm(t, v[0], v[1], v[2]); }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return softmax_rows(t, v[0]); }) < tol);
    auto sq = fresh({{4, 4}});
    AttentionMask causal{4, {}};
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) causal.allowed.push_back(c <= r);
    CHECK(op_fd_error(*sq, [&](Tape& t, auto& v) { return masked_softmax_rows(t, v[0], causal); }) < tol);
  }
  SUBCASE("indexing") {
    auto s = fresh({{4, 3}, {2, 3}, {2, 2}});
    std::vector<std::size_t> ids{3, 0, 3};
    CHECK(op_fd_error(*s, [&](Tape& t, auto& v) { return embedding_lookup(t, v[0], ids); }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) {
            std::vector<Var> xs{v[1], v[2]};
            return concat_last(t, xs);
          }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) {
            std::vector<Var> xs{v[0], v[1]};
            return concat_rows(t, xs);
          }) < tol);
    CHECK(op_fd_error(*s, [](Tape& t, auto& v) { return slice_rows(t, v[0], 1, 3); }) < tol);
  }
  SUBCASE("attention") {
    auto s = fresh({{5, 8}, {5, 8}, {5, 8}});
    AttentionMask mask = AttentionMask::full(5);
    mask.allowed[0 * 5 + 4] = 0;
    mask.allowed[2 * 5 + 1] = 0;
    CHECK(op_fd_error(*s, [&](Tape& t, auto& v) { return multi_head_attention(t, v[0], v[1], v[2], mask, 2); }) < tol);
  }
  SUBCASE("soft cross-entropy") {
    auto s = fresh({{3, 6}});
    Array target({3, 6});
    target.at(0, 1) = 1.0;
    target.at(1, 2) = 0.5;
    target.at(1, 4) = 0.5;
    CHECK(op_fd_error(*s, [&](Tape& t, auto& v) { return soft_cross_entropy(t, v[0], target); }) < tol);
  }
}

TEST_CASE("attention rows are stochastic and masked entries are exactly zero") {
  std::mt19937_64 rng(4);
  Tape t;
  Var q = t.constant(random_array(rng, {6, 8}, -3, 3));
  Var k = t.constant(random_array(rng, {6, 8}, -3, 3));
  Var v = t.constant(random_array(rng, {6, 8}));
  AttentionMask mask{6, {}};
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) mask.allowed.push_back(c <= r);
  std::vector<Array> probs;
  multi_head_attention(t, q, k, v, mask, 4, &probs);
  REQUIRE(probs.size() == 4);
  for (const Array& p : probs)
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        if (c > r) CHECK(p.at(r, c) == 0.0);
        total += p.at(r, c);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("identical inputs give bit-identical outputs") {
  std::mt19937_64 rng(8);
  Array a = random_array(rng, {5, 7}), b = random_array(rng, {7, 3});
  auto run = [&] {
    Tape t;
    return t.value(gelu(t, matmul(t, t.constant(a), t.constant(b))));
  };
  Array x = run(), y = run();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == y[i]);
}
