#pragma once

// Reverse-mode autodiff on Eigen matrices. Backward passes are built out of
// the same differentiable primitives, so gradients are themselves graph
// expressions and grad-of-grad (needed for the WGAN gradient penalty) works
// without special cases.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "secretgen/core.hpp"

namespace secretgen::ag {

using Mat = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat val;
  std::vector<Var> parents;
  // Given this node and the upstream gradient, emit gradient expressions
  // aligned with `parents`. A null entry means "no gradient flows there".
  std::function<std::vector<Var>(const Var& self, const Var& grad)> backward;
  bool requires_grad = false;
};

inline Var constant(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  return n;
}

inline Var constant(double v) { return constant(Mat::Constant(1, 1, v)); }

inline Var leaf(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  n->requires_grad = true;
  return n;
}

namespace detail {

inline Var make(Mat val, std::vector<Var> parents,
                std::function<std::vector<Var>(const Var&, const Var&)> bwd) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(bwd);
  return n;
}

}  // namespace detail

// ---- elementwise arithmetic ----

inline Var add(const Var& a, const Var& b) {
  return detail::make(a->val + b->val, {a, b},
                      [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

inline Var sub(const Var& a, const Var& b);
inline Var neg(const Var& a);
inline Var cmul(const Var& a, const Var& b);
inline Var cdiv(const Var& a, const Var& b);
inline Var scale(const Var& a, double s);

inline Var neg(const Var& a) {
  return detail::make(-a->val, {a},
                      [](const Var&, const Var& g) { return std::vector<Var>{neg(g)}; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::make(a->val - b->val, {a, b}, [](const Var&, const Var& g) {
    return std::vector<Var>{g, neg(g)};
  });
}

inline Var cmul(const Var& a, const Var& b) {
  return detail::make(a->val.cwiseProduct(b->val), {a, b},
                      [](const Var& self, const Var& g) {
                        return std::vector<Var>{cmul(g, self->parents[1]),
                                                cmul(g, self->parents[0])};
                      });
}

inline Var cdiv(const Var& a, const Var& b) {
  return detail::make(a->val.cwiseQuotient(b->val), {a, b},
                      [](const Var& self, const Var& g) {
                        const Var& bb = self->parents[1];
                        return std::vector<Var>{cdiv(g, bb),
                                                neg(cdiv(cmul(g, self), bb))};
                      });
}

inline Var scale(const Var& a, double s) {
  return detail::make(a->val * s, {a}, [s](const Var&, const Var& g) {
    return std::vector<Var>{scale(g, s)};
  });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::make(a->val.array() + s, {a},
                      [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

// ---- elementwise nonlinearities ----

inline Var tanh_(const Var& a) {
  return detail::make(a->val.array().tanh(), {a}, [](const Var& self, const Var& g) {
    // d tanh = 1 - tanh^2
    Var one = constant(Mat::Ones(self->val.rows(), self->val.cols()));
    return std::vector<Var>{cmul(g, sub(one, cmul(self, self)))};
  });
}

inline Var lrelu(const Var& a, double slope = 0.2) {
  Mat mask = (a->val.array() > 0.0).select(Mat::Ones(a->val.rows(), a->val.cols()),
                                           Mat::Constant(a->val.rows(), a->val.cols(), slope));
  Mat out = a->val.cwiseProduct(mask);
  Var maskv = constant(mask);
  return detail::make(std::move(out), {a}, [maskv](const Var&, const Var& g) {
    return std::vector<Var>{cmul(g, maskv)};
  });
}

inline Var clamp_min(const Var& a, double floor) {
  Mat mask = (a->val.array() > floor)
                 .select(Mat::Ones(a->val.rows(), a->val.cols()),
                         Mat::Zero(a->val.rows(), a->val.cols()));
  Var maskv = constant(mask);
  return detail::make(a->val.cwiseMax(floor), {a}, [maskv](const Var&, const Var& g) {
    return std::vector<Var>{cmul(g, maskv)};
  });
}

inline Var exp_(const Var& a) {
  return detail::make(a->val.array().exp(), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{cmul(g, self)};
  });
}

inline Var log_(const Var& a) {
  return detail::make(a->val.array().log(), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{cdiv(g, self->parents[0])};
  });
}

inline Var square(const Var& a) {
  return detail::make(a->val.array().square(), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{cmul(g, scale(self->parents[0], 2.0))};
  });
}

inline Var sqrt_(const Var& a) {
  return detail::make(a->val.array().sqrt(), {a}, [](const Var& self, const Var& g) {
    return std::vector<Var>{cdiv(g, scale(self, 2.0))};
  });
}

// ---- linear maps with explicit adjoints ----
//
// A linear op is its own derivative; backward applies the adjoint map to the
// upstream gradient, which keeps the second-order chain intact for free.

using LinFn = std::function<Mat(const Mat&)>;

inline Var linear_map(const Var& a, LinFn fwd, LinFn adj) {
  Mat out = fwd(a->val);
  return detail::make(std::move(out), {a}, [fwd, adj](const Var& self, const Var& g) {
    return std::vector<Var>{linear_map(g, adj, fwd)};
  });
}

inline Var transpose(const Var& a) {
  return linear_map(
      a, [](const Mat& m) { return Mat(m.transpose()); },
      [](const Mat& m) { return Mat(m.transpose()); });
}

inline Var sum_all(const Var& a) {
  const Eigen::Index r = a->val.rows(), c = a->val.cols();
  return linear_map(
      a, [](const Mat& m) { return Mat(Mat::Constant(1, 1, m.sum())); },
      [r, c](const Mat& g) { return Mat(Mat::Constant(r, c, g(0, 0))); });
}

inline Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / double(a->val.size()));
}

// Sum over rows -> 1 x cols (per-column reduction).
inline Var col_sum(const Var& a) {
  const Eigen::Index r = a->val.rows();
  return linear_map(
      a, [](const Mat& m) { return Mat(m.colwise().sum()); },
      [r](const Mat& g) { return Mat(g.replicate(r, 1)); });
}

// Sum over cols -> rows x 1 (per-row reduction).
inline Var row_sum(const Var& a) {
  const Eigen::Index c = a->val.cols();
  return linear_map(
      a, [](const Mat& m) { return Mat(m.rowwise().sum()); },
      [c](const Mat& g) { return Mat(g.replicate(1, c)); });
}

// Broadcast a rows x 1 column across `cols` columns.
inline Var broadcast_cols(const Var& a, Eigen::Index cols) {
  return linear_map(
      a, [cols](const Mat& m) { return Mat(m.replicate(1, cols)); },
      [](const Mat& g) { return Mat(g.rowwise().sum()); });
}

// Broadcast a 1 x 1 scalar to rows x cols.
inline Var broadcast_scalar(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  return linear_map(
      a, [rows, cols](const Mat& m) { return Mat(Mat::Constant(rows, cols, m(0, 0))); },
      [](const Mat& g) { return Mat(Mat::Constant(1, 1, g.sum())); });
}

inline Var rows_block(const Var& a, Eigen::Index start, Eigen::Index count) {
  const Eigen::Index r = a->val.rows();
  return linear_map(
      a,
      [start, count](const Mat& m) { return Mat(m.middleRows(start, count)); },
      [r, start, count](const Mat& g) {
        Mat out = Mat::Zero(r, g.cols());
        out.middleRows(start, count) = g;
        return out;
      });
}

inline Var concat_rows(const Var& a, const Var& b) {
  Mat out(a->val.rows() + b->val.rows(), a->val.cols());
  out.topRows(a->val.rows()) = a->val;
  out.bottomRows(b->val.rows()) = b->val;
  const Eigen::Index ra = a->val.rows(), rb = b->val.rows();
  return detail::make(std::move(out), {a, b}, [ra, rb](const Var&, const Var& g) {
    return std::vector<Var>{rows_block(g, 0, ra), rows_block(g, ra, rb)};
  });
}

// ---- matmul ----

inline Var matmul(const Var& a, const Var& b) {
  return detail::make(a->val * b->val, {a, b}, [](const Var& self, const Var& g) {
    return std::vector<Var>{matmul(g, transpose(self->parents[1])),
                            matmul(transpose(self->parents[0]), g)};
  });
}

// Add a rows x 1 bias to every column.
inline Var add_bias(const Var& a, const Var& bias) {
  return add(a, broadcast_cols(bias, a->val.cols()));
}

// ---- gradient computation ----

inline void topo_visit(const Var& v, std::unordered_set<Node*>& seen,
                       std::vector<Var>& order) {
  if (!v->requires_grad || seen.count(v.get())) return;
  seen.insert(v.get());
  for (auto& p : v->parents) topo_visit(p, seen, order);
  order.push_back(v);
}

// Gradients of a scalar output w.r.t. each of `wrt`. Returned gradients are
// graph expressions, so they can be differentiated again.
inline std::vector<Var> gradients(const Var& output, const std::vector<Var>& wrt) {
  if (output->val.size() != 1)
    throw std::invalid_argument("gradients: output must be scalar");
  std::unordered_set<Node*> seen;
  std::vector<Var> order;
  topo_visit(output, seen, order);

  std::unordered_map<Node*, Var> grad;
  grad[output.get()] = constant(Mat::Ones(1, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var& v = *it;
    auto gi = grad.find(v.get());
    if (gi == grad.end() || !v->backward) continue;
    std::vector<Var> pg = v->backward(v, gi->second);
    for (std::size_t i = 0; i < v->parents.size(); ++i) {
      const Var& p = v->parents[i];
      if (!p->requires_grad || !pg[i]) continue;
      auto pit = grad.find(p.get());
      if (pit == grad.end())
        grad[p.get()] = pg[i];
      else
        pit->second = add(pit->second, pg[i]);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (auto& w : wrt) {
    auto it = grad.find(w.get());
    if (it != grad.end())
      out.push_back(it->second);
    else
      out.push_back(constant(Mat::Zero(w->val.rows(), w->val.cols())));
  }
  return out;
}

// ---- image-shaped linear ops (CHW layout flattened per column) ----
//
// A batch of images is a (C*H*W) x B matrix; within a column the index of
// pixel (c, y, x) is c*H*W + y*W + x.

struct ConvShape {
  int cin, h, w, k, stride, pad;
  int out_h() const { return (h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (w + 2 * pad - k) / stride + 1; }
  int patches() const { return out_h() * out_w(); }
};

// (Cin*H*W) x B -> (Cin*k*k) x (B*P); output column index b*P + p.
inline Mat im2col_mat(const Mat& x, const ConvShape& s) {
  const int P = s.patches(), ow = s.out_w();
  const Eigen::Index B = x.cols();
  Mat out = Mat::Zero(Eigen::Index(s.cin) * s.k * s.k, B * P);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int p = 0; p < P; ++p) {
      const int oy = p / ow, ox = p % ow;
      const int y0 = oy * s.stride - s.pad, x0 = ox * s.stride - s.pad;
      Eigen::Index col = b * P + p;
      for (int c = 0; c < s.cin; ++c)
        for (int ky = 0; ky < s.k; ++ky) {
          const int y = y0 + ky;
          if (y < 0 || y >= s.h) continue;
          for (int kx = 0; kx < s.k; ++kx) {
            const int xx = x0 + kx;
            if (xx < 0 || xx >= s.w) continue;
            out((Eigen::Index(c) * s.k + ky) * s.k + kx, col) =
                x(Eigen::Index(c) * s.h * s.w + Eigen::Index(y) * s.w + xx, b);
          }
        }
    }
  }
  return out;
}

inline Mat col2im_mat(const Mat& g, const ConvShape& s) {
  const int P = s.patches(), ow = s.out_w();
  const Eigen::Index B = g.cols() / P;
  Mat out = Mat::Zero(Eigen::Index(s.cin) * s.h * s.w, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int p = 0; p < P; ++p) {
      const int oy = p / ow, ox = p % ow;
      const int y0 = oy * s.stride - s.pad, x0 = ox * s.stride - s.pad;
      Eigen::Index col = b * P + p;
      for (int c = 0; c < s.cin; ++c)
        for (int ky = 0; ky < s.k; ++ky) {
          const int y = y0 + ky;
          if (y < 0 || y >= s.h) continue;
          for (int kx = 0; kx < s.k; ++kx) {
            const int xx = x0 + kx;
            if (xx < 0 || xx >= s.w) continue;
            out(Eigen::Index(c) * s.h * s.w + Eigen::Index(y) * s.w + xx, b) +=
                g((Eigen::Index(c) * s.k + ky) * s.k + kx, col);
          }
        }
    }
  }
  return out;
}

inline Var im2col(const Var& x, const ConvShape& s) {
  return linear_map(
      x, [s](const Mat& m) { return im2col_mat(m, s); },
      [s](const Mat& m) { return col2im_mat(m, s); });
}

// Cout x (B*P)  ->  (Cout*P) x B, CHW-consistent.
inline Var patches_to_chw(const Var& y, int P) {
  const Eigen::Index cout = y->val.rows();
  const Eigen::Index B = y->val.cols() / P;
  auto fwd = [cout, P, B](const Mat& m) {
    Mat out(cout * P, B);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index c = 0; c < cout; ++c)
        for (int p = 0; p < P; ++p) out(c * P + p, b) = m(c, b * P + p);
    return out;
  };
  auto adj = [cout, P, B](const Mat& m) {
    Mat out(cout, B * P);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index c = 0; c < cout; ++c)
        for (int p = 0; p < P; ++p) out(c, b * P + p) = m(c * P + p, b);
    return out;
  };
  return linear_map(y, fwd, adj);
}

// 2x2 average pooling on (C*H*W) x B.
inline Var avgpool2(const Var& x, int c, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  auto fwd = [c, h, w, oh, ow](const Mat& m) {
    Mat out = Mat::Zero(Eigen::Index(c) * oh * ow, m.cols());
    for (Eigen::Index b = 0; b < m.cols(); ++b)
      for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < oh; ++y)
          for (int x2 = 0; x2 < ow; ++x2) {
            double s = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                s += m(Eigen::Index(cc) * h * w + Eigen::Index(2 * y + dy) * w + 2 * x2 + dx, b);
            out(Eigen::Index(cc) * oh * ow + Eigen::Index(y) * ow + x2, b) = s / 4.0;
          }
    return out;
  };
  auto adj = [c, h, w, oh, ow](const Mat& m) {
    Mat out = Mat::Zero(Eigen::Index(c) * h * w, m.cols());
    for (Eigen::Index b = 0; b < m.cols(); ++b)
      for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < oh; ++y)
          for (int x2 = 0; x2 < ow; ++x2) {
            double g = m(Eigen::Index(cc) * oh * ow + Eigen::Index(y) * ow + x2, b) / 4.0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                out(Eigen::Index(cc) * h * w + Eigen::Index(2 * y + dy) * w + 2 * x2 + dx, b) += g;
          }
    return out;
  };
  return linear_map(x, fwd, adj);
}

// 2x nearest-neighbour upsampling on (C*H*W) x B.
inline Var upsample2(const Var& x, int c, int h, int w) {
  const int oh = h * 2, ow = w * 2;
  auto fwd = [c, h, w, oh, ow](const Mat& m) {
    Mat out(Eigen::Index(c) * oh * ow, m.cols());
    for (Eigen::Index b = 0; b < m.cols(); ++b)
      for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < oh; ++y)
          for (int x2 = 0; x2 < ow; ++x2)
            out(Eigen::Index(cc) * oh * ow + Eigen::Index(y) * ow + x2, b) =
                m(Eigen::Index(cc) * h * w + Eigen::Index(y / 2) * w + x2 / 2, b);
    return out;
  };
  auto adj = [c, h, w, oh, ow](const Mat& m) {
    Mat out = Mat::Zero(Eigen::Index(c) * h * w, m.cols());
    for (Eigen::Index b = 0; b < m.cols(); ++b)
      for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < oh; ++y)
          for (int x2 = 0; x2 < ow; ++x2)
            out(Eigen::Index(cc) * h * w + Eigen::Index(y / 2) * w + x2 / 2, b) +=
                m(Eigen::Index(cc) * oh * ow + Eigen::Index(y) * ow + x2, b);
    return out;
  };
  return linear_map(x, fwd, adj);
}

}  // namespace secretgen::ag
