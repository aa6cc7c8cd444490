#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ranker/graph.hpp"
#include "ranker/rng.hpp"

#include "test_support.hpp"

using ranker::Graph;
using ranker::StableRng;
using ranker::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, StableRng& rng,
                     double scale = 1.0) {
  Tensor t(r, c);
  for (double& x : t.v) x = rng.next_real(-scale, scale);
  return t;
}

// Reduce any (m,n) node to a scalar with fixed weights so every output
// coordinate contributes to the loss.
int weigh(Graph& g, int x) {
  const Tensor& X = g.value(x);
  Tensor w(X.cols, 1);
  for (std::size_t i = 0; i < w.size(); ++i)
    w.v[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  Tensor u(1, X.rows);
  for (std::size_t i = 0; i < u.size(); ++i)
    u.v[i] = 0.5 + 0.2 * static_cast<double>(i % 5);
  return g.matmul(g.matmul(g.leaf(u), x), g.leaf(w));
}

// Finite-difference check of a scalar-valued graph against the tape, over
// every coordinate of every leaf input.
void check_op(const std::function<int(Graph&, const std::vector<int>&)>& build,
              std::vector<Tensor> inputs, double step = 1e-5,
              double rel_tol = 1e-6, double abs_floor = 1e-9) {
  Graph g;
  std::vector<int> leaves;
  for (const Tensor& t : inputs) leaves.push_back(g.leaf(t, true));
  const int loss = build(g, leaves);
  REQUIRE(g.value(loss).size() == 1);
  g.backward(loss);

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> shifted = inputs;
        shifted[t].v[i] += delta;
        Graph g2;
        std::vector<int> l2;
        for (const Tensor& x : shifted) l2.push_back(g2.leaf(x, false));
        return g2.value(build(g2, l2)).v[0];
      };
      const double numeric = (eval(step) - eval(-step)) / (2.0 * step);
      const double analytic = g.grad(leaves[t]).v[i];
      const bool ok =
          test_support::grad_close(analytic, numeric, rel_tol, abs_floor);
      if (!ok) {
        CAPTURE(t);
        CAPTURE(i);
        CAPTURE(analytic);
        CAPTURE(numeric);
      }
      CHECK(ok);
    }
  }
}

}  // namespace

TEST_CASE("matmul gradients match finite differences") {
  StableRng rng(1);
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        return weigh(g, g.matmul(in[0], in[1]));
      },
      {random_tensor(3, 4, rng), random_tensor(4, 5, rng)});
}

TEST_CASE("matmul_nt gradients match finite differences") {
  StableRng rng(2);
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        return weigh(g, g.matmul_nt(in[0], in[1]));
      },
      {random_tensor(3, 4, rng), random_tensor(5, 4, rng)});
}

TEST_CASE("shape ops compose and backpropagate") {
  StableRng rng(3);
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        int a = g.add(in[0], in[1]);
        a = g.add_rowvec(a, in[2]);
        a = g.scale(a, 1.7);
        int b = g.concat_cols({a, g.relu(in[0])});
        b = g.slice_cols(b, 1, 5);
        b = g.slice_rows(b, 0, 3);
        const int stacked = g.stack_rows({g.mean_rows(b), g.mean_rows(g.relu(b))});
        return g.matmul_nt(weigh(g, stacked), weigh(g, g.column(b, 2)));
      },
      {random_tensor(4, 4, rng), random_tensor(4, 4, rng),
       random_tensor(1, 4, rng)});
}

TEST_CASE("prelu gradients, including the learned slope") {
  StableRng rng(4);
  Tensor slope(1, 1);
  slope.v[0] = 0.25;
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        return weigh(g, g.prelu(in[0], in[1]));
      },
      {random_tensor(4, 6, rng), slope});
}

TEST_CASE("softmax_rows gradients") {
  StableRng rng(5);
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        return weigh(g, g.softmax_rows(in[0]));
      },
      {random_tensor(3, 5, rng, 2.0)});
}

TEST_CASE("layer_norm gradients") {
  StableRng rng(6);
  Tensor gain = random_tensor(1, 6, rng);
  Tensor bias = random_tensor(1, 6, rng);
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        return weigh(g, g.layer_norm(in[0], in[1], in[2], 1e-5));
      },
      {random_tensor(4, 6, rng, 2.0), gain, bias}, 1e-5, 1e-5, 1e-8);
}

TEST_CASE("batch_norm_train gradients flow through batch statistics") {
  StableRng rng(7);
  Tensor gain = random_tensor(1, 5, rng);
  Tensor bias = random_tensor(1, 5, rng);
  check_op(
      [](Graph& g, const std::vector<int>& in) {
        return weigh(g, g.batch_norm_train(in[0], in[1], in[2], 1e-5, nullptr,
                                           nullptr));
      },
      {random_tensor(6, 5, rng, 2.0), gain, bias}, 1e-5, 1e-5, 1e-8);
}

TEST_CASE("batch_norm_eval is affine with frozen statistics") {
  StableRng rng(8);
  Tensor mean = random_tensor(1, 4, rng);
  Tensor var(1, 4);
  for (double& v : var.v) v = 0.5 + rng.next_real();
  Tensor gain = random_tensor(1, 4, rng);
  Tensor bias = random_tensor(1, 4, rng);

  check_op(
      [&](Graph& g, const std::vector<int>& in) {
        return weigh(g,
                     g.batch_norm_eval(in[0], in[1], in[2], mean, var, 1e-5));
      },
      {random_tensor(3, 4, rng), gain, bias});

  // Scaling a frozen-stat layer input by c scales the pre-shift output by
  // c * gain / sqrt(var + eps).
  Graph g;
  Tensor x = random_tensor(1, 4, rng);
  Tensor zero_shift(1, 4);
  const int gl = g.leaf(gain);
  const int sl = g.leaf(zero_shift);
  const int n1 = g.batch_norm_eval(g.leaf(x), gl, sl, Tensor(1, 4), var, 1e-5);
  Tensor x3 = x;
  for (double& e : x3.v) e *= 3.0;
  const int n2 = g.batch_norm_eval(g.leaf(x3), gl, sl, Tensor(1, 4), var, 1e-5);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(g.value(n2).v[j] ==
          doctest::Approx(3.0 * g.value(n1).v[j]).epsilon(1e-12));
}

TEST_CASE("embedding mean lookup gradients scatter into the table") {
  const std::size_t rows = 7, dim = 3;
  std::vector<float> table(rows * dim);
  StableRng rng(9);
  for (float& f : table) f = static_cast<float>(rng.next_real(-1.0, 1.0));
  const std::vector<std::uint32_t> ids{1, 4, 4, 6};

  Tensor grad(rows, dim);
  Graph g;
  const int z = g.embed_mean(table.data(), rows, dim, ids, &grad);
  g.backward(weigh(g, z));

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      const std::size_t idx = r * dim + j;
      const float old = table[idx];
      auto eval = [&](float delta) {
        table[idx] = old + delta;
        Graph g2;
        const int z2 = g2.embed_mean(table.data(), rows, dim, ids, nullptr);
        const double out = g2.value(weigh(g2, z2)).v[0];
        table[idx] = old;
        return out;
      };
      const double h = static_cast<double>(old + 1e-3f) -
                       static_cast<double>(old - 1e-3f);
      const double numeric = (eval(1e-3f) - eval(-1e-3f)) / h;
      CHECK(test_support::grad_close(grad.at(r, j), numeric, 1e-4, 1e-7));
    }
  }
}

TEST_CASE("hinge loss: values, flat region, active-region gradients") {
  // Scalar comparator f(x) = w * x with w = 0, x_i = 1, x_j = 0, E = +1,
  // margin 2: loss 2 and dL/dw = -1.
  Graph g;
  Tensor w(1, 1);
  const int wl = g.leaf(w, true);
  Tensor xi(1, 1), xj(1, 1);
  xi.v[0] = 1.0;
  xj.v[0] = 0.0;
  const int fi = g.matmul(g.leaf(xi), wl);
  const int fj = g.matmul(g.leaf(xj), wl);
  const int loss = g.hinge_loss_sum(fi, fj, {1}, 2.0);
  CHECK(g.value(loss).v[0] == 2.0);
  g.backward(loss);
  CHECK(g.grad(wl).v[0] == -1.0);

  // Satisfied margin: exactly zero gradient everywhere.
  Graph g2;
  Tensor f1(2, 1), f2(2, 1);
  f1.v = {5.0, -0.5};
  f2.v = {0.0, 4.5};
  const int l1 = g2.leaf(f1, true);
  const int l2 = g2.leaf(f2, true);
  const int loss2 = g2.hinge_loss_sum(l1, l2, {1, -1}, 2.0);
  CHECK(g2.value(loss2).v[0] == 0.0);
  g2.backward(loss2);
  for (double d : g2.grad(l1).v) CHECK(d == 0.0);
  for (double d : g2.grad(l2).v) CHECK(d == 0.0);
}

TEST_CASE("cross entropy matches a direct log-softmax oracle") {
  StableRng rng(11);
  Tensor logits = random_tensor(3, 4, rng, 2.0);
  const std::vector<int> classes{2, 0, 3};

  Graph g;
  const int l = g.leaf(logits, true);
  const int loss = g.cross_entropy_sum(l, classes);

  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sum += std::exp(logits.at(i, j));
    expected += std::log(sum) - logits.at(i, classes[i]);
  }
  CHECK(g.value(loss).v[0] == doctest::Approx(expected).epsilon(1e-12));

  g.backward(loss);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      auto eval = [&](double delta) {
        Tensor shifted = logits;
        shifted.at(i, j) += delta;
        Graph g2;
        return g2.value(g2.cross_entropy_sum(g2.leaf(shifted), classes)).v[0];
      };
      const double numeric = (eval(1e-6) - eval(-1e-6)) / 2e-6;
      CHECK(test_support::grad_close(g.grad(l).at(i, j), numeric, 1e-5, 1e-8));
    }
}

TEST_CASE("dropout keeps expectation and masks gradients") {
  StableRng rng(12);
  Tensor x = random_tensor(1, 1000, rng);
  StableRng mask_rng(99);
  Graph g;
  const int xl = g.leaf(x, true);
  const int d = g.dropout(xl, 0.2, mask_rng);
  const Tensor& y = g.value(d);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y.v[i] != 0.0) {
      ++kept;
      CHECK(y.v[i] == doctest::Approx(x.v[i] / 0.8));
    }
  }
  CHECK(kept > 700);
  CHECK(kept < 900);
  g.backward(weigh(g, d));
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y.v[i] == 0.0 && x.v[i] != 0.0) CHECK(g.grad(xl).v[i] == 0.0);
}
