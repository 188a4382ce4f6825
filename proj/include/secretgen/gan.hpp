#pragma once

#include "secretgen/mask.hpp"
#include "secretgen/models.hpp"
#include "secretgen/nn.hpp"

namespace secretgen {

struct BackboneConfig {
  int side = 32;
  int d_z = 100;
  int gen_ch = 16;    // encoder width; decoder mirrors it
  int z_ch = 8;       // channels the latent is projected onto at the bottleneck
  int critic_ch = 16;
  double lr = 4e-3;   // Adam
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch = 64;
  int steps = 1500;
  int n_critic = 5;
  double lambda_div = 0.5;
  double gp_coeff = 10.0;
  double div_eps = 1e-8;
  std::uint64_t seed = 0;
};

inline Mat sample_latent(int n, int d_z, std::uint64_t seed) {
  if (n < 1) throw validation_error("sample_latent: n must be >= 1");
  Rng rng(seed);
  return nn::randn(d_z, n, rng, 1.0);
}

// Encoder-decoder generator conditioned on (zero-filled corrupted image,
// mask channel); the latent is projected and concatenated at the bottleneck.
struct Generator {
  BackboneConfig cfg;
  nn::ParamStore ps;
  nn::Conv e1, e2, d1, d2, out;
  nn::Dense zproj;

  Generator() = default;
  explicit Generator(const BackboneConfig& c, std::uint64_t seed) : cfg(c) {
    Rng rng(seed);
    const int s = c.side, gc = c.gen_ch;
    e1 = nn::Conv(ps, "e1", 4, gc, s, s, 4, 2, 1, rng);
    e2 = nn::Conv(ps, "e2", gc, 2 * gc, s / 2, s / 2, 4, 2, 1, rng);
    zproj = nn::Dense(ps, "zproj", c.d_z, c.z_ch * (s / 4) * (s / 4), rng);
    d1 = nn::Conv(ps, "d1", 2 * gc + c.z_ch, 2 * gc, s / 4, s / 4, 3, 1, 1, rng);
    d2 = nn::Conv(ps, "d2", 2 * gc, gc, s / 2, s / 2, 3, 1, 1, rng);
    out = nn::Conv(ps, "out", gc, 3, s, s, 3, 1, 1, rng);
  }

  // z: d_z x B, cond: (4*side*side) x B (corrupted image + mask channel).
  Var forward_var(const Var& z, const Var& cond) const {
    if (z->val.rows() != cfg.d_z) throw validation_error("generator: latent dimension mismatch");
    const int s = cfg.side, gc = cfg.gen_ch;
    Var h = ag::tanh_(e1.forward(cond));
    h = ag::tanh_(e2.forward(h));
    Var zf = ag::tanh_(zproj.forward(z));
    h = ag::concat_rows(h, zf);
    h = ag::tanh_(d1.forward(h));
    h = ag::upsample2(h, 2 * gc, s / 4, s / 4);
    h = ag::tanh_(d2.forward(h));
    h = ag::upsample2(h, gc, s / 2, s / 2);
    return ag::tanh_(out.forward(h));
  }
};

// WGAN critic; tanh activations keep the gradient penalty twice
// differentiable.
struct Critic {
  BackboneConfig cfg;
  nn::ParamStore ps;
  nn::Conv c1, c2;
  nn::Dense head;

  Critic() = default;
  explicit Critic(const BackboneConfig& c, std::uint64_t seed) : cfg(c) {
    Rng rng(seed);
    const int s = c.side, cc = c.critic_ch;
    c1 = nn::Conv(ps, "c1", 3, cc, s, s, 4, 2, 1, rng);
    c2 = nn::Conv(ps, "c2", cc, 2 * cc, s / 2, s / 2, 4, 2, 1, rng);
    head = nn::Dense(ps, "head", 2 * cc * (s / 4) * (s / 4), 1, rng);
  }

  // x: (3*side*side) x B -> 1 x B realism scores.
  Var score_var(const Var& x) const {
    Var h = ag::tanh_(c1.forward(x));
    h = ag::tanh_(c2.forward(h));
    return head.forward(h);
  }
};

// ---- conditioning helpers ----

inline Mat cond_column(const ImageTensor& x_ns, const CorruptionMask& mask) {
  const Eigen::Index px = Eigen::Index(mask.height) * mask.width;
  Mat cond(x_ns.values.size() + px, 1);
  cond.topRows(x_ns.values.size()) = x_ns.values;
  for (Eigen::Index i = 0; i < px; ++i) cond(x_ns.values.size() + i, 0) = mask.grid[std::size_t(i)];
  return cond;
}

// Per-pixel retain/crop weights over the 3 channels, as flat columns.
inline void mask_weights(const CorruptionMask& mask, Eigen::VectorXd& keep,
                         Eigen::VectorXd& fillin) {
  const Eigen::Index px = Eigen::Index(mask.height) * mask.width;
  keep.resize(3 * px);
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index i = 0; i < px; ++i)
      keep[Eigen::Index(c) * px + i] = mask.grid[std::size_t(i)];
  fillin = Eigen::VectorXd::Ones(3 * px) - keep;
}

// Graph-level generate with retained pixels composited from x_ns.
inline Var generate_var(const Generator& G, const Var& z, const ImageTensor& x_ns,
                        const CorruptionMask& mask) {
  if (mask.height != x_ns.height || mask.width != x_ns.width)
    throw validation_error("generate: mask/image shape mismatch");
  const Eigen::Index B = z->val.cols();
  Var cond = ag::constant(Mat(cond_column(x_ns, mask).replicate(1, B)));
  Var raw = G.forward_var(z, cond);
  Eigen::VectorXd keep, fillin;
  mask_weights(mask, keep, fillin);
  Var keep_part = ag::constant(Mat((x_ns.values.cwiseProduct(keep)).replicate(1, B)));
  return ag::add(ag::cmul(raw, ag::broadcast_cols(ag::constant(Mat(fillin)), B)), keep_part);
}

inline ImageTensor generate(const Generator& G, const Eigen::VectorXd& z,
                            const ImageTensor& x_ns, const CorruptionMask& mask) {
  Var zv = ag::constant(Mat(z));
  Var out = generate_var(G, zv, x_ns, mask);
  ImageTensor img(x_ns.height, x_ns.width, 3);
  img.values = out->val.col(0);
  return img;
}

inline Mat generate_batch(const Generator& G, const Mat& z, const ImageTensor& x_ns,
                          const CorruptionMask& mask) {
  return generate_var(G, ag::constant(z), x_ns, mask)->val;
}

// ---- losses ----

// 1 x B realism scores for a (pixels x B) batch.
using ScoreFn = std::function<Var(const Var&)>;

inline ScoreFn score_fn(const Critic& D) {
  return [&D](const Var& x) { return D.score_var(x); };
}

// critic objective E[D(real)] - E[D(fake)] (maximized by the critic) and the
// generator's adversarial term -E[D(fake)].
inline std::pair<Var, Var> wgan_losses(const ScoreFn& D, const Var& real, const Var& fake) {
  Var sr = ag::mean_all(D(real));
  Var sf = ag::mean_all(D(fake));
  return {ag::sub(sr, sf), ag::neg(sf)};
}

// coeff * E[(||grad_x D(x_interp)|| - 1)^2] over random interpolates.
inline Var gradient_penalty(const ScoreFn& D, const Mat& real, const Mat& fake, double coeff,
                            Rng& rng) {
  if (real.cols() != fake.cols()) throw validation_error("gradient_penalty: batch size mismatch");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Mat interp(real.rows(), real.cols());
  for (Eigen::Index b = 0; b < real.cols(); ++b) {
    double a = uni(rng);
    interp.col(b) = a * real.col(b) + (1.0 - a) * fake.col(b);
  }
  Var x = ag::leaf(interp);
  Var s = ag::sum_all(D(x));
  if (!std::isfinite(s->val(0, 0))) throw std::runtime_error("gradient_penalty: non-finite critic");
  Var gx = ag::gradients(s, {x})[0];
  Var norms = ag::sqrt_(ag::col_sum(ag::square(gx)));
  return ag::scale(ag::mean_all(ag::square(ag::add_scalar(norms, -1.0))), coeff);
}

using FeatureFn = std::function<Var(const Var&)>;

// -E[ ||f(G(z1)) - f(G(z2))|| / (||z1 - z2|| + eps) ]; pairs with nearly
// identical latents are skipped.
inline Var diversity_loss(const FeatureFn& f, const Var& rec1, const Var& rec2, const Mat& z1,
                          const Mat& z2, double eps = 1e-8) {
  Var f1 = f(rec1), f2 = f(rec2);
  Var dist = ag::sqrt_(ag::col_sum(ag::square(ag::sub(f1, f2))));  // 1 x B
  Eigen::RowVectorXd zdist(z1.cols());
  for (Eigen::Index b = 0; b < z1.cols(); ++b) zdist(b) = (z1.col(b) - z2.col(b)).norm();

  std::vector<Eigen::Index> kept;
  for (Eigen::Index b = 0; b < z1.cols(); ++b)
    if (zdist(b) >= eps) kept.push_back(b);
  if (kept.empty()) return ag::constant(0.0);

  Eigen::RowVectorXd weight = Eigen::RowVectorXd::Zero(z1.cols());
  for (auto b : kept) weight(b) = 1.0 / ((zdist(b) + eps) * double(kept.size()));
  Var ratio_sum = ag::sum_all(ag::cmul(dist, ag::constant(Mat(weight))));
  return ag::neg(ratio_sum);
}

// ---- backbone training ----

struct Backbone {
  std::shared_ptr<Generator> gen;
  std::shared_ptr<Critic> critic;
};

struct CurvePoint {
  int step;
  double critic_loss, gen_loss, div_loss;
};

inline Backbone train_backbone(const Mat& pub_images, const CorruptionMask& mask,
                               const FeatureFn& feature_fn, const BackboneConfig& cfg,
                               std::vector<CurvePoint>* curves = nullptr) {
  if (pub_images.cols() == 0) throw validation_error("train_backbone: empty public data");
  Backbone bb;
  bb.gen = std::make_shared<Generator>(cfg, cfg.seed);
  bb.critic = std::make_shared<Critic>(cfg, cfg.seed ^ 0xabcdefull);
  auto gen_params = bb.gen->ps.vars();
  auto critic_params = bb.critic->ps.vars();
  nn::Adam gen_opt(cfg.lr, cfg.beta1, cfg.beta2);
  nn::Adam critic_opt(cfg.lr, cfg.beta1, cfg.beta2);

  Eigen::VectorXd keep, fillin;
  mask_weights(mask, keep, fillin);
  const Eigen::Index px = Eigen::Index(mask.height) * mask.width;
  Eigen::VectorXd mask_col(px);
  for (Eigen::Index i = 0; i < px; ++i) mask_col[i] = mask.grid[std::size_t(i)];

  Rng rng(cfg.seed ^ 0x5eedull);
  std::uniform_int_distribution<Eigen::Index> pick(0, pub_images.cols() - 1);

  auto sample_real = [&](int B, Mat& real, Mat& cond) {
    real.resize(pub_images.rows(), B);
    cond.resize(pub_images.rows() + px, B);
    for (int b = 0; b < B; ++b) {
      real.col(b) = pub_images.col(pick(rng));
      cond.col(b).topRows(pub_images.rows()) = real.col(b).cwiseProduct(keep);
      cond.col(b).bottomRows(px) = mask_col;
    }
  };

  auto composite = [&](const Var& raw, const Mat& cond, int B) {
    Mat keep_part(pub_images.rows(), B);
    for (int b = 0; b < B; ++b)
      keep_part.col(b) = cond.col(b).topRows(pub_images.rows());
    return ag::add(ag::cmul(raw, ag::broadcast_cols(ag::constant(Mat(fillin)), B)),
                   ag::constant(keep_part));
  };

  const int B = cfg.batch;
  for (int step = 1; step <= cfg.steps; ++step) {
    double last_critic = 0.0;
    for (int k = 0; k < cfg.n_critic; ++k) {
      Mat real, cond;
      sample_real(B, real, cond);
      Mat z = nn::randn(cfg.d_z, B, rng, 1.0);
      Var fake = composite(bb.gen->forward_var(ag::constant(z), ag::constant(cond)), cond, B);
      Mat fake_detached = fake->val;
      auto [critic_obj, gen_adv] =
          wgan_losses(score_fn(*bb.critic), ag::constant(real), ag::constant(fake_detached));
      Var gp = gradient_penalty(score_fn(*bb.critic), real, fake_detached, cfg.gp_coeff, rng);
      Var critic_loss = ag::add(ag::neg(critic_obj), gp);
      if (!std::isfinite(critic_loss->val(0, 0)))
        throw std::runtime_error("train_backbone: critic divergence");
      critic_opt.step(critic_params, ag::gradients(critic_loss, critic_params));
      last_critic = critic_loss->val(0, 0);
    }

    Mat real, cond;
    sample_real(B, real, cond);
    Mat z1 = nn::randn(cfg.d_z, B, rng, 1.0);
    Mat z2 = nn::randn(cfg.d_z, B, rng, 1.0);
    Var rec1 = composite(bb.gen->forward_var(ag::constant(z1), ag::constant(cond)), cond, B);
    Var rec2 = composite(bb.gen->forward_var(ag::constant(z2), ag::constant(cond)), cond, B);
    Var adv = ag::neg(ag::mean_all(bb.critic->score_var(rec1)));
    Var div = cfg.lambda_div != 0.0
                  ? diversity_loss(feature_fn, rec1, rec2, z1, z2, cfg.div_eps)
                  : ag::constant(0.0);
    Var gen_loss = ag::add(adv, ag::scale(div, cfg.lambda_div));
    if (!std::isfinite(gen_loss->val(0, 0)))
      throw std::runtime_error("train_backbone: generator divergence");
    gen_opt.step(gen_params, ag::gradients(gen_loss, gen_params));

    if (curves && (step % 10 == 0 || step == 1))
      curves->push_back({step, last_critic, gen_loss->val(0, 0), div->val(0, 0)});
  }
  return bb;
}

}  // namespace secretgen
