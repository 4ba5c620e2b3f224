// tape.hpp
//
// Small reverse-mode differentiation tape over Eigen matrices. Values are
// dense (rows, cols) matrices; pixel fields use their (H*W, C) layout, so
// convolution, attention and the losses reduce to the op set below.
//
// Usage: build the graph forward through Tape ops, call backward() on a
// scalar node, then read leaf gradients through Var::grad(). A Tape is
// single-use per optimisation step; clear() or a fresh tape resets it.

#pragma once

#include "vseg/types.hpp"

#include <functional>
#include <vector>

namespace vseg::ad {

using Mat = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Tape {
 public:
  // Leaf creation. Constants never accumulate gradients.
  Var constant(Mat value);
  Var leaf(Mat value);

  // Elementwise and scalar arithmetic.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // componentwise
  Var div(Var a, Var b);  // componentwise
  Var scale(Var a, double s);
  Var add_const(Var a, double c);

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // Broadcasting helpers: v is (n, 1), s is (1, 1).
  Var row_broadcast_mul(Var a, Var v);
  Var scalar_div(Var a, Var s);

  // Reductions.
  Var sum(Var a);          // (1, 1)
  Var rowwise_sum(Var a);  // (n, 1)
  Var max_all(Var a);      // (1, 1); subgradient to the first maximum

  // Nonlinearities.
  Var tanh(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);

  // Structural ops.
  Var gather_rows(Var a, std::vector<int> rows);
  Var gather_entries(Var a, std::vector<int> rows, std::vector<int> cols);  // (m, 1)
  // Per-row choice: rows with take_a true copy from a, others from b.
  Var select_rows(std::vector<uint8_t> take_a, Var a, Var b);

  // Pixel-field ops; x is an (h*w, c) field with explicit spatial dims.
  // weight is (k*k*in_c, out_c) with entry ((dy*k + dx)*in_c + ci, co);
  // bias is (1, out_c).
  Var conv2d(Var x, Var weight, Var bias, int h, int w, int in_c, int k, int stride, int pad);
  Var upsample_bilinear(Var x, int h, int w, int factor);
  Var downsample_area(Var x, int h, int w, int factor);

  void backward(Var root);
  void clear();
  size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Mat value;
    Mat grad;  // empty until touched during backward
    bool requires_grad = false;
    std::function<void(Tape&, int self)> backprop;  // nullptr for leaves/constants
  };

  int push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backprop);
  bool needs_grad(Var v) const { return nodes_[v.index_].requires_grad; }
  Mat& grad_slot(int index);
  void accumulate(int index, const Mat& g);

  std::vector<Node> nodes_;
};

// Softmax output dims == logits dims; numerically stabilised per row.
Mat softmax_rows_value(const Mat& logits);
Mat log_softmax_rows_value(const Mat& logits);

}  // namespace vseg::ad
