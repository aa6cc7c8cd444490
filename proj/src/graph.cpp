#include "ranker/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace ranker {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

int Graph::push(Tensor value, bool needs_grad, std::function<void()> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

int Graph::matmul(int a, int b) {
  const Tensor& A = v(a);
  const Tensor& B = v(b);
  check(A.cols == B.rows, "matmul: inner dimensions differ");
  Tensor out(A.rows, B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    for (std::size_t k = 0; k < A.cols; ++k) {
      const double aik = A.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = B.row(k);
      double* orow = out.row(i);
      for (std::size_t j = 0; j < B.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  bool needs = wants(a) || wants(b);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, a, b, id] {
      const Tensor& G = g(id);
      const Tensor& A2 = v(a);
      const Tensor& B2 = v(b);
      if (wants(a)) {  // dA += G * B^T
        Tensor& dA = g(a);
        for (std::size_t i = 0; i < A2.rows; ++i)
          for (std::size_t k = 0; k < A2.cols; ++k) {
            double acc = 0.0;
            const double* grow = G.row(i);
            const double* brow = B2.row(k);
            for (std::size_t j = 0; j < B2.cols; ++j) acc += grow[j] * brow[j];
            dA.at(i, k) += acc;
          }
      }
      if (wants(b)) {  // dB += A^T * G
        Tensor& dB = g(b);
        for (std::size_t i = 0; i < A2.rows; ++i) {
          const double* grow = G.row(i);
          for (std::size_t k = 0; k < A2.cols; ++k) {
            const double aik = A2.at(i, k);
            if (aik == 0.0) continue;
            double* drow = dB.row(k);
            for (std::size_t j = 0; j < G.cols; ++j) drow[j] += aik * grow[j];
          }
        }
      }
    };
  }
  return id;
}

int Graph::matmul_nt(int a, int b) {
  const Tensor& A = v(a);
  const Tensor& B = v(b);
  check(A.cols == B.cols, "matmul_nt: inner dimensions differ");
  Tensor out(A.rows, B.rows);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < B.rows; ++j) {
      double acc = 0.0;
      const double* arow = A.row(i);
      const double* brow = B.row(j);
      for (std::size_t k = 0; k < A.cols; ++k) acc += arow[k] * brow[k];
      out.at(i, j) = acc;
    }
  bool needs = wants(a) || wants(b);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, a, b, id] {
      const Tensor& G = g(id);
      const Tensor& A2 = v(a);
      const Tensor& B2 = v(b);
      if (wants(a)) {  // dA += G * B
        Tensor& dA = g(a);
        for (std::size_t i = 0; i < A2.rows; ++i)
          for (std::size_t j = 0; j < B2.rows; ++j) {
            const double gij = G.at(i, j);
            if (gij == 0.0) continue;
            const double* brow = B2.row(j);
            double* drow = dA.row(i);
            for (std::size_t k = 0; k < A2.cols; ++k) drow[k] += gij * brow[k];
          }
      }
      if (wants(b)) {  // dB += G^T * A
        Tensor& dB = g(b);
        for (std::size_t i = 0; i < A2.rows; ++i)
          for (std::size_t j = 0; j < B2.rows; ++j) {
            const double gij = G.at(i, j);
            if (gij == 0.0) continue;
            const double* arow = A2.row(i);
            double* drow = dB.row(j);
            for (std::size_t k = 0; k < A2.cols; ++k) drow[k] += gij * arow[k];
          }
      }
    };
  }
  return id;
}

int Graph::add(int a, int b) {
  const Tensor& A = v(a);
  const Tensor& B = v(b);
  check(A.rows == B.rows && A.cols == B.cols, "add: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
  bool needs = wants(a) || wants(b);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, a, b, id] {
      const Tensor& G = g(id);
      if (wants(a)) {
        Tensor& dA = g(a);
        for (std::size_t i = 0; i < G.size(); ++i) dA.v[i] += G.v[i];
      }
      if (wants(b)) {
        Tensor& dB = g(b);
        for (std::size_t i = 0; i < G.size(); ++i) dB.v[i] += G.v[i];
      }
    };
  }
  return id;
}

int Graph::add_rowvec(int x, int b) {
  const Tensor& X = v(x);
  const Tensor& B = v(b);
  check(B.rows == 1 && B.cols == X.cols, "add_rowvec: bias shape mismatch");
  Tensor out = X;
  for (std::size_t i = 0; i < X.rows; ++i) {
    double* orow = out.row(i);
    for (std::size_t j = 0; j < X.cols; ++j) orow[j] += B.v[j];
  }
  bool needs = wants(x) || wants(b);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, b, id] {
      const Tensor& G = g(id);
      if (wants(x)) {
        Tensor& dX = g(x);
        for (std::size_t i = 0; i < G.size(); ++i) dX.v[i] += G.v[i];
      }
      if (wants(b)) {
        Tensor& dB = g(b);
        for (std::size_t i = 0; i < G.rows; ++i) {
          const double* grow = G.row(i);
          for (std::size_t j = 0; j < G.cols; ++j) dB.v[j] += grow[j];
        }
      }
    };
  }
  return id;
}

int Graph::scale(int x, double c) {
  Tensor out = v(x);
  for (double& e : out.v) e *= c;
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, c, id] {
      const Tensor& G = g(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < G.size(); ++i) dX.v[i] += c * G.v[i];
    };
  }
  return id;
}

int Graph::concat_cols(const std::vector<int>& xs) {
  check(!xs.empty(), "concat_cols: empty input");
  const std::size_t rows = v(xs[0]).rows;
  std::size_t total = 0;
  bool needs = false;
  for (int x : xs) {
    check(v(x).rows == rows, "concat_cols: row mismatch");
    total += v(x).cols;
    needs = needs || wants(x);
  }
  Tensor out(rows, total);
  std::size_t off = 0;
  for (int x : xs) {
    const Tensor& X = v(x);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < X.cols; ++j)
        out.at(i, off + j) = X.at(i, j);
    off += X.cols;
  }
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    std::vector<int> ins = xs;
    nodes_[id].backprop = [this, ins, id] {
      const Tensor& G = g(id);
      std::size_t off2 = 0;
      for (int x : ins) {
        const Tensor& X = v(x);
        if (wants(x)) {
          Tensor& dX = g(x);
          for (std::size_t i = 0; i < X.rows; ++i)
            for (std::size_t j = 0; j < X.cols; ++j)
              dX.at(i, j) += G.at(i, off2 + j);
        }
        off2 += X.cols;
      }
    };
  }
  return id;
}

int Graph::slice_cols(int x, std::size_t from, std::size_t width) {
  const Tensor& X = v(x);
  check(from + width <= X.cols, "slice_cols: out of range");
  Tensor out(X.rows, width);
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t j = 0; j < width; ++j) out.at(i, j) = X.at(i, from + j);
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, from, width, id] {
      const Tensor& G = g(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < width; ++j)
          dX.at(i, from + j) += G.at(i, j);
    };
  }
  return id;
}

int Graph::slice_rows(int x, std::size_t from, std::size_t count) {
  const Tensor& X = v(x);
  check(from + count <= X.rows, "slice_rows: out of range");
  Tensor out(count, X.cols);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < X.cols; ++j) out.at(i, j) = X.at(from + i, j);
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, from, count, id] {
      const Tensor& G = g(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < G.cols; ++j)
          dX.at(from + i, j) += G.at(i, j);
    };
  }
  return id;
}

int Graph::stack_rows(const std::vector<int>& rows) {
  check(!rows.empty(), "stack_rows: empty input");
  const std::size_t n = v(rows[0]).cols;
  bool needs = false;
  for (int r : rows) {
    check(v(r).rows == 1 && v(r).cols == n, "stack_rows: row shape mismatch");
    needs = needs || wants(r);
  }
  Tensor out(rows.size(), n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = v(rows[i]).at(0, j);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    std::vector<int> ins = rows;
    nodes_[id].backprop = [this, ins, id] {
      const Tensor& G = g(id);
      for (std::size_t i = 0; i < ins.size(); ++i) {
        if (!wants(ins[i])) continue;
        Tensor& dR = g(ins[i]);
        for (std::size_t j = 0; j < G.cols; ++j) dR.v[j] += G.at(i, j);
      }
    };
  }
  return id;
}

int Graph::column(int x, std::size_t j) {
  const Tensor& X = v(x);
  check(j < X.cols, "column: out of range");
  Tensor out(X.rows, 1);
  for (std::size_t i = 0; i < X.rows; ++i) out.v[i] = X.at(i, j);
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, j, id] {
      const Tensor& G = g(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < G.rows; ++i) dX.at(i, j) += G.v[i];
    };
  }
  return id;
}

int Graph::mean_rows(int x) {
  const Tensor& X = v(x);
  check(X.rows >= 1, "mean_rows: empty input");
  Tensor out(1, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t j = 0; j < X.cols; ++j) out.v[j] += X.at(i, j);
  const double inv = 1.0 / static_cast<double>(X.rows);
  for (double& e : out.v) e *= inv;
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, inv, id] {
      const Tensor& G = g(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < dX.rows; ++i)
        for (std::size_t j = 0; j < dX.cols; ++j) dX.at(i, j) += inv * G.v[j];
    };
  }
  return id;
}

int Graph::relu(int x) {
  const Tensor& X = v(x);
  Tensor out = X;
  for (double& e : out.v) e = e > 0.0 ? e : 0.0;
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, id] {
      const Tensor& G = g(id);
      const Tensor& X2 = v(x);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < G.size(); ++i)
        if (X2.v[i] > 0.0) dX.v[i] += G.v[i];
    };
  }
  return id;
}

int Graph::prelu(int x, int slope) {
  const Tensor& X = v(x);
  check(v(slope).size() == 1, "prelu: slope must be a scalar tensor");
  const double a = v(slope).v[0];
  Tensor out = X;
  for (double& e : out.v) e = e > 0.0 ? e : a * e;
  bool needs = wants(x) || wants(slope);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, slope, a, id] {
      const Tensor& G = g(id);
      const Tensor& X2 = v(x);
      if (wants(x)) {
        Tensor& dX = g(x);
        for (std::size_t i = 0; i < G.size(); ++i)
          dX.v[i] += G.v[i] * (X2.v[i] > 0.0 ? 1.0 : a);
      }
      if (wants(slope)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < G.size(); ++i)
          if (X2.v[i] <= 0.0) acc += G.v[i] * X2.v[i];
        g(slope).v[0] += acc;
      }
    };
  }
  return id;
}

int Graph::dropout(int x, double rate, StableRng& rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  const Tensor& X = v(x);
  if (rate == 0.0) return x;  // no-op, keep the tape small
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  std::vector<std::uint8_t> mask(X.size());
  for (auto& m : mask) m = rng.next_real() >= rate ? 1 : 0;
  Tensor out = X;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = mask[i] ? out.v[i] * inv_keep : 0.0;
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, mask = std::move(mask), inv_keep, id] {
      const Tensor& G = g(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < G.size(); ++i)
        if (mask[i]) dX.v[i] += G.v[i] * inv_keep;
    };
  }
  return id;
}

int Graph::softmax_rows(int x) {
  const Tensor& X = v(x);
  Tensor out(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const double* xr = X.row(i);
    double* orow = out.row(i);
    double mx = xr[0];
    for (std::size_t j = 1; j < X.cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < X.cols; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < X.cols; ++j) orow[j] *= inv;
  }
  bool needs = wants(x);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, id] {
      const Tensor& G = g(id);
      const Tensor& Y = v(id);
      Tensor& dX = g(x);
      for (std::size_t i = 0; i < Y.rows; ++i) {
        const double* yr = Y.row(i);
        const double* gr = G.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < Y.cols; ++j) dot += gr[j] * yr[j];
        double* dr = dX.row(i);
        for (std::size_t j = 0; j < Y.cols; ++j)
          dr[j] += yr[j] * (gr[j] - dot);
      }
    };
  }
  return id;
}

int Graph::layer_norm(int x, int gain, int bias, double eps) {
  const Tensor& X = v(x);
  const Tensor& Ga = v(gain);
  const Tensor& Be = v(bias);
  check(Ga.rows == 1 && Ga.cols == X.cols, "layer_norm: gain shape");
  check(Be.rows == 1 && Be.cols == X.cols, "layer_norm: bias shape");
  const std::size_t n = X.cols;
  Tensor out(X.rows, n);
  Tensor xhat(X.rows, n);
  std::vector<double> inv_std(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const double* xr = X.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xr[j] - mean) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = Ga.v[j] * xh + Be.v[j];
    }
  }
  bool needs = wants(x) || wants(gain) || wants(bias);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, gain, bias, xhat = std::move(xhat),
                           inv_std = std::move(inv_std), id] {
      const Tensor& G = g(id);
      const Tensor& Ga2 = v(gain);
      const std::size_t n2 = G.cols;
      if (wants(gain)) {
        Tensor& dG = g(gain);
        for (std::size_t i = 0; i < G.rows; ++i)
          for (std::size_t j = 0; j < n2; ++j)
            dG.v[j] += G.at(i, j) * xhat.at(i, j);
      }
      if (wants(bias)) {
        Tensor& dB = g(bias);
        for (std::size_t i = 0; i < G.rows; ++i)
          for (std::size_t j = 0; j < n2; ++j) dB.v[j] += G.at(i, j);
      }
      if (wants(x)) {
        Tensor& dX = g(x);
        const double invn = 1.0 / static_cast<double>(n2);
        for (std::size_t i = 0; i < G.rows; ++i) {
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t j = 0; j < n2; ++j) {
            const double dxh = G.at(i, j) * Ga2.v[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat.at(i, j);
          }
          for (std::size_t j = 0; j < n2; ++j) {
            const double dxh = G.at(i, j) * Ga2.v[j];
            dX.at(i, j) += inv_std[i] * (dxh - invn * sum_dxh -
                                         invn * xhat.at(i, j) * sum_dxh_xh);
          }
        }
      }
    };
  }
  return id;
}

int Graph::batch_norm_train(int x, int gain, int bias, double eps,
                            Tensor* saved_mean, Tensor* saved_var) {
  const Tensor& X = v(x);
  const Tensor& Ga = v(gain);
  const Tensor& Be = v(bias);
  check(Ga.rows == 1 && Ga.cols == X.cols, "batch_norm: gain shape");
  check(Be.rows == 1 && Be.cols == X.cols, "batch_norm: bias shape");
  check(X.rows >= 1, "batch_norm: empty batch");
  const std::size_t m = X.rows, n = X.cols;
  Tensor mean(1, n), var(1, n);
  for (std::size_t j = 0; j < n; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += X.at(i, j);
    mu /= static_cast<double>(m);
    double vv = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = X.at(i, j) - mu;
      vv += d * d;
    }
    vv /= static_cast<double>(m);
    mean.v[j] = mu;
    var.v[j] = vv;
  }
  Tensor xhat(m, n);
  Tensor out(m, n);
  std::vector<double> inv_std(n);
  for (std::size_t j = 0; j < n; ++j)
    inv_std[j] = 1.0 / std::sqrt(var.v[j] + eps);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (X.at(i, j) - mean.v[j]) * inv_std[j];
      xhat.at(i, j) = xh;
      out.at(i, j) = Ga.v[j] * xh + Be.v[j];
    }
  if (saved_mean) *saved_mean = mean;
  if (saved_var) *saved_var = var;
  bool needs = wants(x) || wants(gain) || wants(bias);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, gain, bias, xhat = std::move(xhat),
                           inv_std = std::move(inv_std), id] {
      const Tensor& G = g(id);
      const Tensor& Ga2 = v(gain);
      const std::size_t m2 = G.rows, n2 = G.cols;
      if (wants(gain)) {
        Tensor& dG = g(gain);
        for (std::size_t i = 0; i < m2; ++i)
          for (std::size_t j = 0; j < n2; ++j)
            dG.v[j] += G.at(i, j) * xhat.at(i, j);
      }
      if (wants(bias)) {
        Tensor& dB = g(bias);
        for (std::size_t i = 0; i < m2; ++i)
          for (std::size_t j = 0; j < n2; ++j) dB.v[j] += G.at(i, j);
      }
      if (wants(x)) {
        Tensor& dX = g(x);
        const double invm = 1.0 / static_cast<double>(m2);
        for (std::size_t j = 0; j < n2; ++j) {
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t i = 0; i < m2; ++i) {
            const double dxh = G.at(i, j) * Ga2.v[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat.at(i, j);
          }
          for (std::size_t i = 0; i < m2; ++i) {
            const double dxh = G.at(i, j) * Ga2.v[j];
            dX.at(i, j) += inv_std[j] * (dxh - invm * sum_dxh -
                                         invm * xhat.at(i, j) * sum_dxh_xh);
          }
        }
      }
    };
  }
  return id;
}

int Graph::batch_norm_eval(int x, int gain, int bias,
                           const Tensor& running_mean,
                           const Tensor& running_var, double eps) {
  const Tensor& X = v(x);
  const Tensor& Ga = v(gain);
  const Tensor& Be = v(bias);
  check(running_mean.size() == X.cols && running_var.size() == X.cols,
        "batch_norm_eval: running stats shape");
  const std::size_t m = X.rows, n = X.cols;
  std::vector<double> inv_std(n);
  for (std::size_t j = 0; j < n; ++j)
    inv_std[j] = 1.0 / std::sqrt(running_var.v[j] + eps);
  Tensor out(m, n);
  Tensor xhat(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (X.at(i, j) - running_mean.v[j]) * inv_std[j];
      xhat.at(i, j) = xh;
      out.at(i, j) = Ga.v[j] * xh + Be.v[j];
    }
  bool needs = wants(x) || wants(gain) || wants(bias);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, x, gain, bias, xhat = std::move(xhat),
                           inv_std = std::move(inv_std), id] {
      const Tensor& G = g(id);
      const Tensor& Ga2 = v(gain);
      if (wants(gain)) {
        Tensor& dG = g(gain);
        for (std::size_t i = 0; i < G.rows; ++i)
          for (std::size_t j = 0; j < G.cols; ++j)
            dG.v[j] += G.at(i, j) * xhat.at(i, j);
      }
      if (wants(bias)) {
        Tensor& dB = g(bias);
        for (std::size_t i = 0; i < G.rows; ++i)
          for (std::size_t j = 0; j < G.cols; ++j) dB.v[j] += G.at(i, j);
      }
      if (wants(x)) {
        Tensor& dX = g(x);
        for (std::size_t i = 0; i < G.rows; ++i)
          for (std::size_t j = 0; j < G.cols; ++j)
            dX.at(i, j) += G.at(i, j) * Ga2.v[j] * inv_std[j];
      }
    };
  }
  return id;
}

int Graph::embed_mean(const float* table, std::size_t table_rows,
                      std::size_t dim, const std::vector<std::uint32_t>& ids,
                      Tensor* table_grad) {
  check(!ids.empty(), "embed_mean: empty token sequence");
  Tensor out(1, dim);
  for (std::uint32_t t : ids) {
    check(t < table_rows, "embed_mean: token id out of range");
    const float* row = table + static_cast<std::size_t>(t) * dim;
    for (std::size_t j = 0; j < dim; ++j)
      out.v[j] += static_cast<double>(row[j]);
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& e : out.v) e *= inv;
  bool needs = table_grad != nullptr;
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, table_grad, ids, inv, dim, id] {
      const Tensor& G = g(id);
      for (std::uint32_t t : ids) {
        double* row = table_grad->row(t);
        for (std::size_t j = 0; j < dim; ++j) row[j] += inv * G.v[j];
      }
    };
  }
  return id;
}

int Graph::embed_rows(const float* table, std::size_t table_rows,
                      std::size_t dim, const std::vector<std::uint32_t>& ids,
                      Tensor* table_grad) {
  check(!ids.empty(), "embed_rows: empty token sequence");
  Tensor out(ids.size(), dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] < table_rows, "embed_rows: token id out of range");
    const float* row = table + static_cast<std::size_t>(ids[i]) * dim;
    for (std::size_t j = 0; j < dim; ++j)
      out.at(i, j) = static_cast<double>(row[j]);
  }
  bool needs = table_grad != nullptr;
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, table_grad, ids, dim, id] {
      const Tensor& G = g(id);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* row = table_grad->row(ids[i]);
        for (std::size_t j = 0; j < dim; ++j) row[j] += G.at(i, j);
      }
    };
  }
  return id;
}

int Graph::hinge_loss_sum(int f_first, int f_second, std::vector<int> labels,
                          double margin) {
  const Tensor& F1 = v(f_first);
  const Tensor& F2 = v(f_second);
  check(F1.cols == 1 && F2.cols == 1, "hinge_loss_sum: inputs must be (m,1)");
  check(F1.rows == F2.rows && F1.rows == labels.size(),
        "hinge_loss_sum: batch size mismatch");
  Tensor out(1, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double t =
        -static_cast<double>(labels[i]) * (F1.v[i] - F2.v[i]) + margin;
    if (t > 0.0) acc += t;
  }
  out.v[0] = acc;
  bool needs = wants(f_first) || wants(f_second);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, f_first, f_second, labels = std::move(labels),
                           margin, id] {
      const double go = g(id).v[0];
      const Tensor& F1b = v(f_first);
      const Tensor& F2b = v(f_second);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const double e = static_cast<double>(labels[i]);
        const double t = -e * (F1b.v[i] - F2b.v[i]) + margin;
        if (t > 0.0) {
          if (wants(f_first)) g(f_first).v[i] += -e * go;
          if (wants(f_second)) g(f_second).v[i] += e * go;
        }
      }
    };
  }
  return id;
}

int Graph::cross_entropy_sum(int logits, std::vector<int> classes) {
  const Tensor& L = v(logits);
  check(L.rows == classes.size(), "cross_entropy_sum: batch size mismatch");
  Tensor probs(L.rows, L.cols);
  double acc = 0.0;
  for (std::size_t i = 0; i < L.rows; ++i) {
    const double* lr = L.row(i);
    check(classes[i] >= 0 && static_cast<std::size_t>(classes[i]) < L.cols,
          "cross_entropy_sum: class out of range");
    double mx = lr[0];
    for (std::size_t j = 1; j < L.cols; ++j) mx = std::max(mx, lr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < L.cols; ++j) {
      probs.at(i, j) = std::exp(lr[j] - mx);
      sum += probs.at(i, j);
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < L.cols; ++j) probs.at(i, j) *= inv;
    acc += std::log(sum) + mx - lr[classes[i]];
  }
  Tensor out(1, 1);
  out.v[0] = acc;
  bool needs = wants(logits);
  int id = push(std::move(out), needs, nullptr);
  if (needs) {
    nodes_[id].backprop = [this, logits, probs = std::move(probs),
                           classes = std::move(classes), id] {
      const double go = g(id).v[0];
      Tensor& dL = g(logits);
      for (std::size_t i = 0; i < dL.rows; ++i)
        for (std::size_t j = 0; j < dL.cols; ++j) {
          double d = probs.at(i, j);
          if (j == static_cast<std::size_t>(classes[i])) d -= 1.0;
          dL.at(i, j) += go * d;
        }
    };
  }
  return id;
}

void Graph::backward(int loss_node) {
  check(v(loss_node).size() == 1, "backward: loss must be scalar");
  check(wants(loss_node), "backward: loss does not depend on any parameter");
  for (Node& n : nodes_) {
    if (n.needs_grad) {
      n.grad = Tensor(n.value.rows, n.value.cols);
    }
  }
  nodes_[loss_node].grad.v[0] = 1.0;
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    Node& n = nodes_[k];
    if (n.needs_grad && n.backprop) n.backprop();
  }
}

}  // namespace ranker
