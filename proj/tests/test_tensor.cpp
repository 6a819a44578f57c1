#include <cmath>
#include <vector>

#include "doctest.h"

#include "bacite/checkpoint.hpp"
#include "bacite/rng.hpp"
#include "bacite/tensor.hpp"

using namespace bacite;

TEST_CASE("matmul of 1x1 matrices multiplies scalars") {
  Tape t;
  Tensor a = t.leaf({1, 1}, {2.0});
  Tensor b = t.leaf({1, 1}, {3.0});
  CHECK(t.matmul(a, b).values()[0] == doctest::Approx(6.0));
}

TEST_CASE("matmul matches hand result and rejects bad shapes") {
  Tape t;
  Tensor a = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = t.leaf({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = t.matmul(a, b);
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(t.matmul(a, a), ShapeMismatch);
}

TEST_CASE("softmax over equal logits is uniform and sums to one") {
  Tape t;
  Tensor x = t.leaf({4}, {1.7, 1.7, 1.7, 1.7});
  Tensor s = t.softmax(x);
  for (double v : s.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(99);
  std::vector<double> raw(12);
  for (auto& v : raw) v = rng.uniform(-30, 30);
  Tensor m = t.softmax(t.leaf({3, 4}, raw));
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(m.values()[i * 4 + j] >= 0.0);
      row += m.values()[i * 4 + j];
    }
    CHECK(std::fabs(row - 1.0) < 1e-12);
  }
}

TEST_CASE("backward: d/dx x^2 at 3 is 6") {
  Tape t;
  Tensor x = t.leaf({1}, {3.0}, true);
  Gradients g = t.backward(t.square(x));
  CHECK(g.at(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: sum gives all-ones gradient") {
  Tape t;
  Tensor x = t.leaf({5}, {1, 2, 3, 4, 5}, true);
  Gradients g = t.backward(t.sum(x));
  for (double v : g.at(x)) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("backward: mean of squares gradient, hand-differentiated") {
  // d/dx_i mean(x^2) = 2 x_i / n
  Tape t;
  Tensor x = t.leaf({3}, {1, 2, 3}, true);
  Gradients g = t.backward(t.mean(t.square(x)));
  CHECK(g.at(x)[0] == doctest::Approx(2.0 / 3.0));
  CHECK(g.at(x)[1] == doctest::Approx(4.0 / 3.0));
  CHECK(g.at(x)[2] == doctest::Approx(2.0));
}

TEST_CASE("fan-out accumulates: y = x + x has gradient 2") {
  Tape t;
  Tensor x = t.leaf({1}, {1.5}, true);
  Gradients g = t.backward(t.add(x, x));
  CHECK(g.at(x)[0] == doctest::Approx(2.0));
}

TEST_CASE("non-grad tensors receive no gradient and non-scalar loss throws") {
  Tape t;
  Tensor x = t.leaf({2}, {1, 2}, true);
  Tensor c = t.leaf({2}, {5, 5}, false);
  Tensor y = t.mul(x, c);
  CHECK_THROWS_AS(t.backward(y), NonScalarLoss);
  Gradients g = t.backward(t.sum(y));
  CHECK(g.has(x));
  CHECK_FALSE(g.has(c));
}

TEST_CASE("non-finite results are trapped") {
  Tape t;
  Tensor x = t.leaf({1}, {800.0});
  CHECK_THROWS_AS(t.exp(x), NonFiniteValue);
}

TEST_CASE("finite difference: linear functions are exact") {
  auto f = [](Tape& t, const Tensor& x) { return t.sum(t.scale(x, 3.0)); };
  Rng rng(7);
  std::vector<double> x(6);
  for (auto& v : x) v = rng.uniform(-2, 2);
  CHECK(finite_difference_check(f, x, {6}) < 1e-10);
}

TEST_CASE("finite difference: every differentiable op under 1e-6") {
  Rng rng(1234);
  auto rand_vec = [&](std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
  };

  // co-tensors drawn once so every case is a fixed function of its leaf
  const std::vector<double> w43 = rand_vec(12, -1, 1);
  const std::vector<double> b3 = rand_vec(3, -1, 1);
  const std::vector<double> m24 = rand_vec(8, -1, 1);
  const std::vector<double> v5a = rand_vec(5, -1, 1);
  const std::vector<double> v5b = rand_vec(5, -1, 1);
  const std::vector<double> s3 = rand_vec(3, 0.5, 2);
  const std::vector<double> m34 = rand_vec(12, -1, 1);
  const std::vector<double> m23 = rand_vec(6, -1, 1);
  const std::vector<double> v3 = rand_vec(3, -1, 1);
  const std::vector<double> g4 = rand_vec(4, 0.5, 1.5);
  const std::vector<double> be4 = rand_vec(4, -0.5, 0.5);
  const std::vector<double> m24b = rand_vec(8, -1, 1);

  struct Case {
    const char* name;
    Shape shape;
    std::vector<double> at;
    std::function<Tensor(Tape&, const Tensor&)> f;
  };
  std::vector<Case> cases;
  cases.push_back({"matmul", {2, 4}, rand_vec(8, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.matmul(x, t.constant({4, 3}, w43)));
                   }});
  cases.push_back({"matmul_rhs", {4, 3}, rand_vec(12, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.matmul(t.constant({2, 4}, m24), x));
                   }});
  cases.push_back({"add_row_broadcast", {2, 3}, rand_vec(6, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.add(x, t.constant({3}, b3))));
                   }});
  cases.push_back({"sub", {5}, rand_vec(5, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.sub(x, t.constant({5}, v5a))));
                   }});
  cases.push_back({"mul", {5}, rand_vec(5, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.sum(t.mul(x, t.constant({5}, v5b)));
                   }});
  cases.push_back({"scale_rows", {3, 4}, rand_vec(12, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.scale_rows(x, t.constant({3}, s3))));
                   }});
  cases.push_back({"scale_rows_weights", {3}, rand_vec(3, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.scale_rows(t.constant({3, 4}, m34), x));
                   }});
  cases.push_back({"concat_cols", {2, 2}, rand_vec(4, -1, 1), [&](Tape& t, const Tensor& x) {
                     std::vector<Tensor> parts{x, t.constant({2, 3}, m23)};
                     return t.mean(t.square(t.concat(parts, 1)));
                   }});
  cases.push_back({"concat_rows", {2, 3}, rand_vec(6, -1, 1), [&](Tape& t, const Tensor& x) {
                     std::vector<Tensor> parts{t.constant({1, 3}, v3), x};
                     return t.mean(t.square(t.concat(parts, 0)));
                   }});
  cases.push_back({"slice_cols", {2, 5}, rand_vec(10, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.slice_cols(x, 1, 3)));
                   }});
  cases.push_back({"rows_select", {4, 3}, rand_vec(12, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.rows_select(x, {0, 2, 2, 3})));
                   }});
  cases.push_back({"relu", {6}, rand_vec(6, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.sum(t.relu(x));
                   }});
  cases.push_back({"hinge", {6}, rand_vec(6, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.sum(t.hinge(x));
                   }});
  cases.push_back({"gelu", {6}, rand_vec(6, -2, 2), [&](Tape& t, const Tensor& x) {
                     return t.sum(t.gelu(x));
                   }});
  cases.push_back({"softplus", {6}, rand_vec(6, -3, 3), [&](Tape& t, const Tensor& x) {
                     return t.sum(t.softplus(x));
                   }});
  cases.push_back({"exp", {5}, rand_vec(5, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.exp(x));
                   }});
  cases.push_back({"log1p", {5}, rand_vec(5, -0.5, 3), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.log1p(x));
                   }});
  cases.push_back({"square", {5}, rand_vec(5, -2, 2), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(x));
                   }});
  cases.push_back({"clamp", {6}, rand_vec(6, -2, 2), [&](Tape& t, const Tensor& x) {
                     return t.sum(t.clamp(x, -0.5, 0.5));
                   }});
  cases.push_back({"softmax", {2, 4}, rand_vec(8, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.softmax(x)));
                   }});
  cases.push_back({"layer_norm", {2, 4}, rand_vec(8, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(
                         t.layer_norm(x, t.constant({4}, g4), t.constant({4}, be4))));
                   }});
  cases.push_back({"layer_norm_gamma", {4}, rand_vec(4, 0.5, 1.5), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(
                         t.layer_norm(t.constant({2, 4}, m24b), x, t.constant({4}, be4))));
                   }});
  cases.push_back({"row_sum", {3, 4}, rand_vec(12, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.row_sum(x)));
                   }});
  const std::vector<std::size_t> seg{0, 1, 0, 2, 1, 0};
  cases.push_back({"segment_softmax", {6}, rand_vec(6, -1, 1), [&, seg](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.segment_softmax(x, seg, 3)));
                   }});
  cases.push_back({"segment_sum", {6, 2}, rand_vec(12, -1, 1), [&, seg](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.segment_sum(x, seg, 3)));
                   }});
  const std::vector<std::size_t> labels{1, 0, 1};
  cases.push_back({"softmax_cross_entropy", {3, 2}, rand_vec(6, -1, 1),
                   [&, labels](Tape& t, const Tensor& x) {
                     return t.mean(t.softmax_cross_entropy(x, labels));
                   }});
  cases.push_back({"mean", {7}, rand_vec(7, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(x);
                   }});
  cases.push_back({"reshape", {6}, rand_vec(6, -1, 1), [&](Tape& t, const Tensor& x) {
                     return t.mean(t.square(t.reshape(x, {2, 3})));
                   }});

  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(finite_difference_check(c.f, c.at, c.shape) < 1e-6);
  }
}

TEST_CASE("grad_reverse negates the gradient") {
  Tape t;
  Tensor x = t.leaf({3}, {1, 2, 3}, true);
  Gradients g = t.backward(t.sum(t.grad_reverse(x)));
  for (double v : g.at(x)) CHECK(v == doctest::Approx(-1.0));
}

TEST_CASE("dropout train mode scales survivors by 1/(1-p), eval is identity") {
  Rng rng(42);
  Tape t;
  std::vector<double> vals(2000, 1.0);
  Tensor x = t.leaf({2000}, vals);
  Tensor eval_out = t.dropout(x, 0.4, rng, false);
  CHECK(eval_out.values() == vals);

  Tensor train_out = t.dropout(x, 0.4, rng, true);
  std::size_t zeros = 0;
  for (double v : train_out.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(1.0 / 0.6));
    }
  }
  CHECK(zeros > 600);
  CHECK(zeros < 1000);

  // same seed, same mask
  Rng r1(5), r2(5);
  Tensor a = t.dropout(x, 0.4, r1, true);
  Tensor b = t.dropout(x, 0.4, r2, true);
  CHECK(a.values() == b.values());
}

TEST_CASE("dropout in eval mode matches no-dropout gradients exactly") {
  Rng rng(3);
  auto with_dropout = [&rng](Tape& t, const Tensor& x) {
    Rng local(17);
    return t.mean(t.square(t.dropout(x, 0.5, local, false)));
  };
  auto without = [](Tape& t, const Tensor& x) { return t.mean(t.square(x)); };
  std::vector<double> x(8);
  for (auto& v : x) v = rng.uniform(-1, 1);

  Tape ta, tb;
  Tensor la = ta.leaf({8}, x, true), lb = tb.leaf({8}, x, true);
  Gradients ga = ta.backward(with_dropout(ta, la));
  Gradients gb = tb.backward(without(tb, lb));
  CHECK(ga.at(la) == gb.at(lb));
}

TEST_CASE("random two-layer perceptron passes the gradient oracle") {
  Rng rng(2024);
  const std::size_t in = 5, hid = 7;
  std::vector<double> w1(in * hid), b1(hid), w2(hid), x0(2 * in);
  for (auto& v : w1) v = rng.uniform(-1, 1);
  for (auto& v : b1) v = rng.uniform(-1, 1);
  for (auto& v : w2) v = rng.uniform(-1, 1);
  for (auto& v : x0) v = rng.uniform(-1, 1);

  auto mlp_loss = [&](Tape& t, const Tensor& x) {
    Tensor h = t.gelu(t.add(t.matmul(x, t.constant({in, hid}, w1)), t.constant({hid}, b1)));
    Tensor out = t.matmul(h, t.constant({hid, 1}, w2));
    return t.mean(t.square(out));
  };
  CHECK(finite_difference_check(mlp_loss, x0, {2, in}) < 1e-6);

  // same check but through the weights
  auto loss_by_w1 = [&](Tape& t, const Tensor& w) {
    Tensor h = t.gelu(t.add(t.matmul(t.constant({2, in}, x0), w), t.constant({hid}, b1)));
    Tensor out = t.matmul(h, t.constant({hid, 1}, w2));
    return t.mean(t.square(out));
  };
  CHECK(finite_difference_check(loss_by_w1, w1, {in, hid}) < 1e-6);
}

TEST_CASE("segment ops ignore element order up to float noise") {
  Rng rng(11);
  std::vector<double> vals(10);
  for (auto& v : vals) v = rng.uniform(-2, 2);
  std::vector<std::size_t> seg{0, 1, 1, 0, 2, 2, 0, 1, 2, 0};

  Tape t;
  Tensor a = t.segment_softmax(t.leaf({10}, vals), seg, 3);

  std::vector<std::size_t> perm{9, 3, 5, 1, 0, 8, 7, 2, 6, 4};
  std::vector<double> pvals(10);
  std::vector<std::size_t> pseg(10);
  for (std::size_t i = 0; i < 10; ++i) {
    pvals[i] = vals[perm[i]];
    pseg[i] = seg[perm[i]];
  }
  Tensor b = t.segment_softmax(t.leaf({10}, pvals), pseg, 3);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(std::fabs(a.values()[perm[i]] - b.values()[i]) < 1e-12);
}

TEST_CASE("checkpoint containers round-trip byte-exactly") {
  Rng rng(77);
  ParamStore store;
  std::vector<double> a(12), b(5);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  b[0] = -0.0;  // sign bit must survive
  store.put("encoder/w", {3, 4}, a);
  store.put("stage_a/b", {5}, b);

  const std::string stem = "/tmp/bacite_ckpt_test";
  save_checkpoint(store, stem);
  ParamStore loaded = load_checkpoint(stem);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("encoder/w").shape == Shape{3, 4});
  CHECK(loaded.at("encoder/w").values == a);
  CHECK(loaded.at("stage_a/b").values == b);
  CHECK(std::signbit(loaded.at("stage_a/b").values[0]));

  // writing the loaded store again produces identical bytes
  save_checkpoint(loaded, stem + "2");
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(stem + ".payload") == slurp(stem + "2.payload"));
  CHECK(slurp(stem + ".manifest") == slurp(stem + "2.manifest"));
}
