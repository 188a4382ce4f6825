#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "secretgen/autograd.hpp"
#include "secretgen/core.hpp"

namespace secretgen::nn {

using ag::Mat;
using ag::Var;

struct ParamStore {
  std::vector<std::pair<std::string, Var>> params;

  Var add(const std::string& name, Mat init) {
    params.emplace_back(name, ag::leaf(std::move(init)));
    return params.back().second;
  }

  std::vector<Var> vars() const {
    std::vector<Var> out;
    for (auto& [n, v] : params) out.push_back(v);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto& [name, v] : params) n += std::size_t(v->val.size());
    return n;
  }

  void save(std::ostream& os) const {
    const char magic[4] = {'S', 'G', 'W', '1'};
    os.write(magic, 4);
    std::uint32_t n = std::uint32_t(params.size());
    os.write(reinterpret_cast<const char*>(&n), 4);
    for (auto& [name, v] : params) {
      std::uint32_t len = std::uint32_t(name.size());
      os.write(reinterpret_cast<const char*>(&len), 4);
      os.write(name.data(), len);
      std::uint32_t r = std::uint32_t(v->val.rows()), c = std::uint32_t(v->val.cols());
      os.write(reinterpret_cast<const char*>(&r), 4);
      os.write(reinterpret_cast<const char*>(&c), 4);
      os.write(reinterpret_cast<const char*>(v->val.data()),
               std::streamsize(sizeof(double)) * v->val.size());
    }
  }

  void load(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || magic[0] != 'S' || magic[1] != 'G' || magic[2] != 'W' || magic[3] != '1')
      throw integrity_error("weight blob: bad magic");
    std::uint32_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 4);
    if (n != params.size()) throw integrity_error("weight blob: parameter count mismatch");
    for (auto& [name, v] : params) {
      std::uint32_t len = 0;
      is.read(reinterpret_cast<char*>(&len), 4);
      std::string got(len, '\0');
      is.read(got.data(), len);
      if (got != name) throw integrity_error("weight blob: parameter name mismatch: " + got);
      std::uint32_t r = 0, c = 0;
      is.read(reinterpret_cast<char*>(&r), 4);
      is.read(reinterpret_cast<char*>(&c), 4);
      if (r != v->val.rows() || c != v->val.cols())
        throw integrity_error("weight blob: shape mismatch for " + name);
      is.read(reinterpret_cast<char*>(v->val.data()),
              std::streamsize(sizeof(double)) * v->val.size());
      if (!is) throw integrity_error("weight blob: truncated");
    }
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    save(os);
  }

  void load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw integrity_error("cannot read " + path);
    load(is);
  }

  std::uint64_t digest() const {
    std::uint64_t h = 14695981039346656037ull;
    for (auto& [name, v] : params) {
      h = fnv1a(name, h);
      h = fnv1a(v->val.data(), sizeof(double) * std::size_t(v->val.size()), h);
    }
    return h;
  }
};

inline Mat randn(Eigen::Index r, Eigen::Index c, Rng& rng, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = d(rng);
  return m;
}

// ---- layers ----

struct Conv {
  ag::ConvShape shape;
  int cout = 0;
  Var W, b;

  Conv() = default;
  Conv(ParamStore& ps, const std::string& name, int cin, int cout_, int h, int w, int k,
       int stride, int pad, Rng& rng)
      : shape{cin, h, w, k, stride, pad}, cout(cout_) {
    double std = std::sqrt(2.0 / double(cin * k * k));
    W = ps.add(name + ".W", randn(cout, Eigen::Index(cin) * k * k, rng, std));
    b = ps.add(name + ".b", Mat::Zero(cout, 1));
  }

  Var forward(const Var& x) const {
    Var cols = ag::im2col(x, shape);
    Var y = ag::add_bias(ag::matmul(W, cols), b);
    return ag::patches_to_chw(y, shape.patches());
  }
  int out_h() const { return shape.out_h(); }
  int out_w() const { return shape.out_w(); }
};

struct Dense {
  Var W, b;
  Dense() = default;
  Dense(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    double std = std::sqrt(1.0 / double(in));
    W = ps.add(name + ".W", randn(out, in, rng, std));
    b = ps.add(name + ".b", Mat::Zero(out, 1));
  }
  Var forward(const Var& x) const { return ag::add_bias(ag::matmul(W, x), b); }
};

// Broadcast a 1 x B row across `rows` rows.
inline Var broadcast_rows(const Var& a, Eigen::Index rows) {
  return ag::transpose(ag::broadcast_cols(ag::transpose(a), rows));
}

// Mean cross-entropy of logits (C x B) against integer labels, stable shift.
inline Var softmax_xent(const Var& logits, const std::vector<int>& labels) {
  const Eigen::Index C = logits->val.rows(), B = logits->val.cols();
  Mat shift_v = logits->val.colwise().maxCoeff();
  Var shifted = ag::sub(logits, broadcast_rows(ag::constant(shift_v), C));
  Var lse = ag::log_(ag::col_sum(ag::exp_(shifted)));
  Mat sel = Mat::Zero(C, B);
  for (Eigen::Index b = 0; b < B; ++b) sel(labels[std::size_t(b)], b) = 1.0;
  Var picked = ag::col_sum(ag::cmul(shifted, ag::constant(sel)));
  return ag::scale(ag::sum_all(ag::sub(lse, picked)), 1.0 / double(B));
}

inline Mat softmax_cols(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    Eigen::VectorXd v = logits.col(b);
    double m = v.maxCoeff();
    Eigen::VectorXd e = (v.array() - m).exp();
    out.col(b) = e / e.sum();
  }
  return out;
}

// ---- optimizers ----

struct SgdMomentum {
  double lr, momentum, weight_decay;
  std::vector<Mat> vel;

  SgdMomentum(double lr_, double momentum_ = 0.9, double wd = 0.0)
      : lr(lr_), momentum(momentum_), weight_decay(wd) {}

  void step(const std::vector<Var>& params, const std::vector<Var>& grads) {
    if (vel.empty())
      for (auto& p : params) vel.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat g = grads[i]->val;
      if (weight_decay > 0) g += weight_decay * params[i]->val;
      vel[i] = momentum * vel[i] + g;
      params[i]->val -= lr * vel[i];
    }
  }
};

struct Adam {
  double lr, b1, b2, eps;
  long t = 0;
  std::vector<Mat> m, v;

  Adam(double lr_, double b1_ = 0.9, double b2_ = 0.999, double eps_ = 1e-8)
      : lr(lr_), b1(b1_), b2(b2_), eps(eps_) {}

  void step(const std::vector<Var>& params, const std::vector<Var>& grads) {
    if (m.empty())
      for (auto& p : params) {
        m.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
        v.push_back(Mat::Zero(p->val.rows(), p->val.cols()));
      }
    ++t;
    const double c1 = 1.0 - std::pow(b1, double(t));
    const double c2 = 1.0 - std::pow(b2, double(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = grads[i]->val;
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g.cwiseProduct(g);
      params[i]->val -=
          (lr * (m[i] / c1).array() / ((v[i] / c2).array().sqrt() + eps)).matrix();
    }
  }
};

}  // namespace secretgen::nn
