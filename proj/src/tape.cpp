#include "vseg/tape.hpp"

#include <cmath>
#include <utility>

namespace vseg::ad {

const Mat& Var::value() const { return tape_->nodes_[index_].value; }

const Mat& Var::grad() const {
  const Mat& g = tape_->nodes_[index_].grad;
  if (g.size() == 0) {
    static thread_local Mat zero;
    zero = Mat::Zero(value().rows(), value().cols());
    return zero;
  }
  return g;
}

int Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backprop) {
  nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backprop)});
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_slot(int index) {
  Node& n = nodes_[index];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int index, const Mat& g) {
  if (!nodes_[index].requires_grad) return;
  grad_slot(index) += g;
}

Var Tape::constant(Mat value) { return Var(this, push(std::move(value), false, nullptr)); }

Var Tape::leaf(Mat value) { return Var(this, push(std::move(value), true, nullptr)); }

void Tape::clear() { nodes_.clear(); }

void Tape::backward(Var root) {
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be scalar");
  grad_slot(root.index_).setOnes();
  for (int i = root.index_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, i);
  }
}

// ---------------------------------------------------------------------------
// elementwise / scalar
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  const int ia = a.index_, ib = b.index_;
  const bool rg = needs_grad(a) || needs_grad(b);
  int idx = push(a.value() + b.value(), rg, [ia, ib](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
  return Var(this, idx);
}

Var Tape::sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  const int ia = a.index_, ib = b.index_;
  const bool rg = needs_grad(a) || needs_grad(b);
  int idx = push(a.value() - b.value(), rg, [ia, ib](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
  return Var(this, idx);
}

Var Tape::mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  const int ia = a.index_, ib = b.index_;
  const bool rg = needs_grad(a) || needs_grad(b);
  int idx = push(a.value().cwiseProduct(b.value()), rg, [ia, ib](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.accumulate(ia, g.cwiseProduct(t.nodes_[ib].value));
    t.accumulate(ib, g.cwiseProduct(t.nodes_[ia].value));
  });
  return Var(this, idx);
}

Var Tape::div(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "div: shape mismatch");
  const int ia = a.index_, ib = b.index_;
  const bool rg = needs_grad(a) || needs_grad(b);
  int idx = push(a.value().cwiseQuotient(b.value()), rg, [ia, ib](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& bv = t.nodes_[ib].value;
    t.accumulate(ia, g.cwiseQuotient(bv));
    t.accumulate(ib, -g.cwiseProduct(t.nodes_[self].value).cwiseQuotient(bv));
  });
  return Var(this, idx);
}

Var Tape::scale(Var a, double s) {
  const int ia = a.index_;
  int idx = push(a.value() * s, needs_grad(a), [ia, s](Tape& t, int self) {
    t.accumulate(ia, t.nodes_[self].grad * s);
  });
  return Var(this, idx);
}

Var Tape::add_const(Var a, double c) {
  const int ia = a.index_;
  int idx = push((a.value().array() + c).matrix(), needs_grad(a), [ia](Tape& t, int self) {
    t.accumulate(ia, t.nodes_[self].grad);
  });
  return Var(this, idx);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const int ia = a.index_, ib = b.index_;
  const bool rg = needs_grad(a) || needs_grad(b);
  int idx = push(a.value() * b.value(), rg, [ia, ib](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.accumulate(ia, g * t.nodes_[ib].value.transpose());
    t.accumulate(ib, t.nodes_[ia].value.transpose() * g);
  });
  return Var(this, idx);
}

Var Tape::transpose(Var a) {
  const int ia = a.index_;
  int idx = push(a.value().transpose(), needs_grad(a), [ia](Tape& t, int self) {
    t.accumulate(ia, t.nodes_[self].grad.transpose());
  });
  return Var(this, idx);
}

Var Tape::row_broadcast_mul(Var a, Var v) {
  require(v.cols() == 1 && v.rows() == a.rows(), "row_broadcast_mul: v must be (rows, 1)");
  const int ia = a.index_, iv = v.index_;
  const bool rg = needs_grad(a) || needs_grad(v);
  Mat out = (a.value().array().colwise() * v.value().col(0).array()).matrix();
  int idx = push(std::move(out), rg, [ia, iv](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    const Mat& av = t.nodes_[ia].value;
    const Mat& vv = t.nodes_[iv].value;
    t.accumulate(ia, (g.array().colwise() * vv.col(0).array()).matrix());
    t.accumulate(iv, g.cwiseProduct(av).rowwise().sum());
  });
  return Var(this, idx);
}

Var Tape::scalar_div(Var a, Var s) {
  require(s.rows() == 1 && s.cols() == 1, "scalar_div: s must be (1, 1)");
  const int ia = a.index_, is = s.index_;
  const bool rg = needs_grad(a) || needs_grad(s);
  const double sv = s.value()(0, 0);
  int idx = push(a.value() / sv, rg, [ia, is, sv](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    t.accumulate(ia, g / sv);
    Mat gs(1, 1);
    gs(0, 0) = -g.cwiseProduct(t.nodes_[self].value).sum() / sv;
    t.accumulate(is, gs);
  });
  return Var(this, idx);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var Tape::sum(Var a) {
  const int ia = a.index_;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  int idx = push(std::move(out), needs_grad(a), [ia](Tape& t, int self) {
    const double g = t.nodes_[self].grad(0, 0);
    t.accumulate(ia, Mat::Constant(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols(), g));
  });
  return Var(this, idx);
}

Var Tape::rowwise_sum(Var a) {
  const int ia = a.index_;
  Mat out = a.value().rowwise().sum();
  int idx = push(std::move(out), needs_grad(a), [ia](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;  // (n, 1)
    t.accumulate(ia, g.col(0).replicate(1, t.nodes_[ia].value.cols()));
  });
  return Var(this, idx);
}

Var Tape::max_all(Var a) {
  const int ia = a.index_;
  Eigen::Index r = 0, c = 0;
  // Scan in row-major pixel order so the subgradient target is deterministic.
  double best = a.value()(0, 0);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a.value()(i, j) > best) {
        best = a.value()(i, j);
        r = i;
        c = j;
      }
  Mat out(1, 1);
  out(0, 0) = best;
  int idx = push(std::move(out), needs_grad(a), [ia, r, c](Tape& t, int self) {
    Mat g = Mat::Zero(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols());
    g(r, c) = t.nodes_[self].grad(0, 0);
    t.accumulate(ia, g);
  });
  return Var(this, idx);
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Var Tape::tanh(Var a) {
  const int ia = a.index_;
  Mat out = a.value().array().tanh().matrix();
  int idx = push(std::move(out), needs_grad(a), [ia](Tape& t, int self) {
    const Mat& y = t.nodes_[self].value;
    const Mat& g = t.nodes_[self].grad;
    t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
  return Var(this, idx);
}

Mat softmax_rows_value(const Mat& logits) {
  Mat shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Mat e = shifted.array().exp().matrix();
  return (e.array().colwise() / e.rowwise().sum().array()).matrix();
}

Mat log_softmax_rows_value(const Mat& logits) {
  Mat shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

Var Tape::softmax_rows(Var a) {
  const int ia = a.index_;
  int idx = push(softmax_rows_value(a.value()), needs_grad(a), [ia](Tape& t, int self) {
    const Mat& p = t.nodes_[self].value;
    const Mat& g = t.nodes_[self].grad;
    Eigen::VectorXd dot = g.cwiseProduct(p).rowwise().sum();
    Mat centered = g.colwise() - dot;
    t.accumulate(ia, p.cwiseProduct(centered));
  });
  return Var(this, idx);
}

Var Tape::log_softmax_rows(Var a) {
  const int ia = a.index_;
  Mat lsm = log_softmax_rows_value(a.value());
  int idx = push(std::move(lsm), needs_grad(a), [ia](Tape& t, int self) {
    const Mat& y = t.nodes_[self].value;
    const Mat& g = t.nodes_[self].grad;
    Eigen::VectorXd rowsum = g.rowwise().sum();
    Mat p = y.array().exp().matrix();
    t.accumulate(ia, g - (p.array().colwise() * rowsum.array()).matrix());
  });
  return Var(this, idx);
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const int ia = a.index_;
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  int idx = push(std::move(out), needs_grad(a), [ia, rows = std::move(rows)](Tape& t, int self) {
    if (!t.nodes_[ia].requires_grad) return;
    const Mat& g = t.nodes_[self].grad;
    Mat& ga = t.grad_slot(ia);
    for (size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
  return Var(this, idx);
}

Var Tape::gather_entries(Var a, std::vector<int> rows, std::vector<int> cols) {
  require(rows.size() == cols.size(), "gather_entries: index lists differ in length");
  const int ia = a.index_;
  Mat out(static_cast<Eigen::Index>(rows.size()), 1);
  for (size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = a.value()(rows[i], cols[i]);
  int idx = push(std::move(out), needs_grad(a),
                 [ia, rows = std::move(rows), cols = std::move(cols)](Tape& t, int self) {
                   if (!t.nodes_[ia].requires_grad) return;
                   const Mat& g = t.nodes_[self].grad;
                   Mat& ga = t.grad_slot(ia);
                   for (size_t i = 0; i < rows.size(); ++i)
                     ga(rows[i], cols[i]) += g(static_cast<Eigen::Index>(i), 0);
                 });
  return Var(this, idx);
}

Var Tape::select_rows(std::vector<uint8_t> take_a, Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "select_rows: shape mismatch");
  require(static_cast<Eigen::Index>(take_a.size()) == a.rows(), "select_rows: mask length mismatch");
  const int ia = a.index_, ib = b.index_;
  const bool rg = needs_grad(a) || needs_grad(b);
  Mat out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) out.row(i) = take_a[i] ? a.value().row(i) : b.value().row(i);
  int idx = push(std::move(out), rg, [ia, ib, take_a = std::move(take_a)](Tape& t, int self) {
    const Mat& g = t.nodes_[self].grad;
    if (t.nodes_[ia].requires_grad) {
      Mat& ga = t.grad_slot(ia);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        if (take_a[i]) ga.row(i) += g.row(i);
    }
    if (t.nodes_[ib].requires_grad) {
      Mat& gb = t.grad_slot(ib);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        if (!take_a[i]) gb.row(i) += g.row(i);
    }
  });
  return Var(this, idx);
}

// ---------------------------------------------------------------------------
// pixel-field ops
// ---------------------------------------------------------------------------

namespace {

// im2col patch matrix: row per output pixel, column ((dy*k + dx)*in_c + ci).
Mat im2col(const Mat& x, int h, int w, int in_c, int k, int stride, int pad, int oh, int ow) {
  Mat col = Mat::Zero(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(k) * k * in_c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int dy = 0; dy < k; ++dy) {
        const int sy = oy * stride - pad + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int sx = ox * stride - pad + dx;
          if (sx < 0 || sx >= w) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(sy) * w + sx;
          for (int ci = 0; ci < in_c; ++ci)
            col(row, static_cast<Eigen::Index>(dy * k + dx) * in_c + ci) = x(src, ci);
        }
      }
    }
  }
  return col;
}

void col2im_add(Mat& gx, const Mat& gcol, int h, int w, int in_c, int k, int stride, int pad,
                int oh, int ow) {
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int dy = 0; dy < k; ++dy) {
        const int sy = oy * stride - pad + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int sx = ox * stride - pad + dx;
          if (sx < 0 || sx >= w) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(sy) * w + sx;
          for (int ci = 0; ci < in_c; ++ci)
            gx(src, ci) += gcol(row, static_cast<Eigen::Index>(dy * k + dx) * in_c + ci);
        }
      }
    }
  }
}

struct BilinearTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;  // weight on hi
};

// align_corners = false sampling grid, clamped at the borders.
BilinearTaps bilinear_taps(int out_n, int src_n, int factor) {
  BilinearTaps taps;
  taps.lo.resize(out_n);
  taps.hi.resize(out_n);
  taps.frac.resize(out_n);
  for (int i = 0; i < out_n; ++i) {
    double src = (i + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    if (src > src_n - 1) src = src_n - 1;
    int lo = static_cast<int>(std::floor(src));
    if (lo > src_n - 2) lo = src_n - 2;
    if (lo < 0) lo = 0;
    taps.lo[i] = lo;
    taps.hi[i] = std::min(lo + 1, src_n - 1);
    taps.frac[i] = src - lo;
  }
  return taps;
}

}  // namespace

Var Tape::conv2d(Var x, Var weight, Var bias, int h, int w, int in_c, int k, int stride, int pad) {
  require(x.rows() == static_cast<Eigen::Index>(h) * w, "conv2d: field size mismatch");
  require(x.cols() == in_c, "conv2d: channel mismatch");
  require(weight.rows() == static_cast<Eigen::Index>(k) * k * in_c, "conv2d: weight shape mismatch");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  const int ix = x.index_, iw = weight.index_, ib = bias.index_;
  const bool rg = needs_grad(x) || needs_grad(weight) || needs_grad(bias);

  Mat col = im2col(x.value(), h, w, in_c, k, stride, pad, oh, ow);
  Mat out = col * weight.value();
  out.rowwise() += bias.value().row(0);

  int idx = push(std::move(out), rg,
                 [ix, iw, ib, col = std::move(col), h, w, in_c, k, stride, pad, oh, ow](Tape& t, int self) {
                   const Mat& g = t.nodes_[self].grad;
                   if (t.nodes_[iw].requires_grad) t.accumulate(iw, col.transpose() * g);
                   if (t.nodes_[ib].requires_grad) t.accumulate(ib, g.colwise().sum());
                   if (t.nodes_[ix].requires_grad) {
                     Mat gcol = g * t.nodes_[iw].value.transpose();
                     Mat& gx = t.grad_slot(ix);
                     col2im_add(gx, gcol, h, w, in_c, k, stride, pad, oh, ow);
                   }
                 });
  return Var(this, idx);
}

Var Tape::upsample_bilinear(Var x, int h, int w, int factor) {
  require(x.rows() == static_cast<Eigen::Index>(h) * w, "upsample_bilinear: field size mismatch");
  const int oh = h * factor, ow = w * factor;
  const int ix = x.index_;
  const int channels = static_cast<int>(x.cols());
  BilinearTaps ty = bilinear_taps(oh, h, factor);
  BilinearTaps tx = bilinear_taps(ow, w, factor);

  Mat out(static_cast<Eigen::Index>(oh) * ow, channels);
  const Mat& src = x.value();
  for (int y = 0; y < oh; ++y) {
    const double fy = ty.frac[y];
    for (int xo = 0; xo < ow; ++xo) {
      const double fx = tx.frac[xo];
      const Eigen::Index p00 = static_cast<Eigen::Index>(ty.lo[y]) * w + tx.lo[xo];
      const Eigen::Index p01 = static_cast<Eigen::Index>(ty.lo[y]) * w + tx.hi[xo];
      const Eigen::Index p10 = static_cast<Eigen::Index>(ty.hi[y]) * w + tx.lo[xo];
      const Eigen::Index p11 = static_cast<Eigen::Index>(ty.hi[y]) * w + tx.hi[xo];
      out.row(static_cast<Eigen::Index>(y) * ow + xo) =
          (1 - fy) * (1 - fx) * src.row(p00) + (1 - fy) * fx * src.row(p01) +
          fy * (1 - fx) * src.row(p10) + fy * fx * src.row(p11);
    }
  }

  int idx = push(std::move(out), needs_grad(x),
                 [ix, ty = std::move(ty), tx = std::move(tx), w, ow, oh](Tape& t, int self) {
                   if (!t.nodes_[ix].requires_grad) return;
                   const Mat& g = t.nodes_[self].grad;
                   Mat& gx = t.grad_slot(ix);
                   for (int y = 0; y < oh; ++y) {
                     const double fy = ty.frac[y];
                     for (int xo = 0; xo < ow; ++xo) {
                       const double fx = tx.frac[xo];
                       const auto grow = g.row(static_cast<Eigen::Index>(y) * ow + xo);
                       gx.row(static_cast<Eigen::Index>(ty.lo[y]) * w + tx.lo[xo]) += (1 - fy) * (1 - fx) * grow;
                       gx.row(static_cast<Eigen::Index>(ty.lo[y]) * w + tx.hi[xo]) += (1 - fy) * fx * grow;
                       gx.row(static_cast<Eigen::Index>(ty.hi[y]) * w + tx.lo[xo]) += fy * (1 - fx) * grow;
                       gx.row(static_cast<Eigen::Index>(ty.hi[y]) * w + tx.hi[xo]) += fy * fx * grow;
                     }
                   }
                 });
  return Var(this, idx);
}

Var Tape::downsample_area(Var x, int h, int w, int factor) {
  require(x.rows() == static_cast<Eigen::Index>(h) * w, "downsample_area: field size mismatch");
  require(h % factor == 0 && w % factor == 0, "downsample_area: size not divisible by factor");
  const int oh = h / factor, ow = w / factor;
  const int ix = x.index_;
  const double inv = 1.0 / (factor * factor);

  Mat out = Mat::Zero(static_cast<Eigen::Index>(oh) * ow, x.cols());
  const Mat& src = x.value();
  for (int y = 0; y < oh; ++y)
    for (int xo = 0; xo < ow; ++xo) {
      auto orow = out.row(static_cast<Eigen::Index>(y) * ow + xo);
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          orow += src.row(static_cast<Eigen::Index>(y * factor + dy) * w + (xo * factor + dx));
      orow *= inv;
    }

  int idx = push(std::move(out), needs_grad(x), [ix, w, ow, oh, factor, inv](Tape& t, int self) {
    if (!t.nodes_[ix].requires_grad) return;
    const Mat& g = t.nodes_[self].grad;
    Mat& gx = t.grad_slot(ix);
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo) {
        const auto grow = g.row(static_cast<Eigen::Index>(y) * ow + xo) * inv;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            gx.row(static_cast<Eigen::Index>(y * factor + dy) * w + (xo * factor + dx)) += grow;
      }
  });
  return Var(this, idx);
}

}  // namespace vseg::ad
