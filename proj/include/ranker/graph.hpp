#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ranker/rng.hpp"
#include "ranker/tensor.hpp"

namespace ranker {

// Reverse-mode tape over 2-D tensors. Ops append nodes in forward order and
// store a closure that scatters the output gradient back to the inputs;
// backward() replays the closures in reverse. Node handles are plain ints
// owned by the tape. All arithmetic is double; parameters enter as leaves.
//
// The tape is rebuilt per batch, so closures may capture saved activations
// by value. Not copyable or movable: closures capture `this`.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int leaf(Tensor value, bool needs_grad = false);

  int matmul(int a, int b);     // (m,k)x(k,n) -> (m,n)
  int matmul_nt(int a, int b);  // (m,k)x(n,k)^T -> (m,n)
  int add(int a, int b);        // same shape
  int add_rowvec(int x, int b); // (m,n) + (1,n)
  int scale(int x, double c);
  int concat_cols(const std::vector<int>& xs);
  int slice_cols(int x, std::size_t from, std::size_t width);
  int slice_rows(int x, std::size_t from, std::size_t count);
  int stack_rows(const std::vector<int>& rows);  // k x (1,n) -> (k,n)
  int column(int x, std::size_t j);              // (m,n) -> (m,1)
  int mean_rows(int x);                          // (m,n) -> (1,n)
  int relu(int x);
  int prelu(int x, int slope);  // slope is (1,1), shared over elements
  int dropout(int x, double rate, StableRng& rng);  // inverted dropout
  int softmax_rows(int x);
  int layer_norm(int x, int gain, int bias, double eps);  // per row

  // Batch normalization over the batch (row) dimension, one statistic per
  // column. Train variant normalizes by biased batch variance and reports
  // the batch statistics through saved_mean/saved_var for the caller's
  // running-average update. Eval variant is affine in x given frozen stats.
  int batch_norm_train(int x, int gain, int bias, double eps,
                       Tensor* saved_mean, Tensor* saved_var);
  int batch_norm_eval(int x, int gain, int bias, const Tensor& running_mean,
                      const Tensor& running_var, double eps);

  // Token-embedding lookups read the float32 table directly instead of
  // promoting it to a leaf; gradients are scattered (+=) into table_grad
  // when it is non-null.
  int embed_mean(const float* table, std::size_t table_rows, std::size_t dim,
                 const std::vector<std::uint32_t>& ids, Tensor* table_grad);
  int embed_rows(const float* table, std::size_t table_rows, std::size_t dim,
                 const std::vector<std::uint32_t>& ids, Tensor* table_grad);

  // sum_b max(0, -E_b * (f_first_b - f_second_b) + margin), inputs (m,1).
  int hinge_loss_sum(int f_first, int f_second, std::vector<int> labels,
                     double margin);
  // sum_b [logsumexp(logits_b) - logits_b[class_b]], logits (m,C),
  // classes 0-based.
  int cross_entropy_sum(int logits, std::vector<int> classes);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const { return nodes_[id].grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // loss_node must be (1,1). Accumulates into leaf gradients.
  void backward(int loss_node);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> backprop;  // null for leaves
    bool needs_grad = false;
  };

  int push(Tensor value, bool needs_grad, std::function<void()> backprop);
  bool wants(int id) const { return nodes_[id].needs_grad; }
  Tensor& g(int id) { return nodes_[id].grad; }
  const Tensor& v(int id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
};

}  // namespace ranker
