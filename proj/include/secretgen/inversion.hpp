#pragma once

#include "secretgen/gan.hpp"
#include "secretgen/transforms.hpp"

namespace secretgen {

// n latent vectors with cached recoveries and prediction vectors; shared
// substrate of the pseudo label predictor and the latent vector selector.
struct LatentBank {
  Mat latents;                   // d_z x n
  Mat recoveries;                // (3*side*side) x n, composited
  std::vector<Mat> preds;        // per entry: C x (m+1); column 0 = untransformed
  int n = 0;
  int m = 0;
  std::uint64_t seed = 0;
};

inline LatentBank build_bank(const Generator& G, const ModelHandle& F, const ImageTensor& x_ns,
                             const CorruptionMask& mask, const TransformList& transforms, int n,
                             std::uint64_t seed) {
  if (n < 1) throw validation_error("build_bank: n must be >= 1");
  LatentBank bank;
  bank.n = n;
  bank.m = int(transforms.size());
  bank.seed = seed;
  bank.latents = sample_latent(n, G.cfg.d_z, seed);
  bank.recoveries = generate_batch(G, bank.latents, x_ns, mask);

  const int side = x_ns.height;
  for (int i = 0; i < n; ++i) {
    ImageTensor rec(side, side, 3);
    rec.values = bank.recoveries.col(i);
    Mat queries(rec.values.size(), bank.m + 1);
    queries.col(0) = rec.values;
    for (int j = 0; j < bank.m; ++j) queries.col(j + 1) = transforms.transforms[std::size_t(j)](rec).values;
    bank.preds.push_back(F.predict_batch(queries));
  }
  return bank;
}

// Mean confidence of class c over all n(m+1) cached predictions.
// c is 1-based: class labels live in [1, C] across the attack surface.
inline double discrimination_metric(const LatentBank& bank, int c) {
  if (bank.preds.empty()) throw validation_error("discrimination_metric: empty bank");
  const int C = int(bank.preds[0].rows());
  if (c < 1 || c > C) throw validation_error("discrimination_metric: class out of range");
  double sum = 0.0;
  for (const auto& p : bank.preds) sum += p.row(c - 1).sum();
  return sum / (double(bank.n) * double(bank.m + 1));
}

// Simplified variant: untransformed recoveries only.
inline double simplified_metric(const LatentBank& bank, int c) {
  if (bank.preds.empty()) throw validation_error("simplified_metric: empty bank");
  const int C = int(bank.preds[0].rows());
  if (c < 1 || c > C) throw validation_error("simplified_metric: class out of range");
  double sum = 0.0;
  for (const auto& p : bank.preds) sum += p(c - 1, 0);
  return sum / double(bank.n);
}

// argmax_c M(c); ties broken toward the lowest class index.
inline int predict_pseudo_label(const LatentBank& bank, bool use_transforms = true) {
  const int C = int(bank.preds.at(0).rows());
  int best = 1;
  double best_score = -1.0;
  for (int c = 1; c <= C; ++c) {
    double s = use_transforms ? discrimination_metric(bank, c) : simplified_metric(bank, c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

// Among entries whose untransformed recovery is classified as y,
// return the latent with the highest confidence F_y; otherwise fall back to
// a fresh draw from the caller's seeded stream.
inline Eigen::VectorXd select_latent(const LatentBank& bank, int y, Rng& fallback_rng) {
  const int C = int(bank.preds.at(0).rows());
  if (y < 1 || y > C) throw validation_error("select_latent: label out of range");
  int best = -1;
  double best_conf = -1.0;
  for (int i = 0; i < bank.n; ++i) {
    const auto col = bank.preds[std::size_t(i)].col(0);
    Eigen::Index arg;
    col.maxCoeff(&arg);
    // tie-break toward the lowest class index
    for (Eigen::Index c = 0; c < arg; ++c)
      if (col(c) == col(arg)) { arg = c; break; }
    if (int(arg) != y - 1) continue;
    if (col(y - 1) > best_conf) {
      best_conf = col(y - 1);
      best = i;
    }
  }
  if (best >= 0) return bank.latents.col(best);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(bank.latents.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(fallback_rng);
  return z;
}

// ---- losses (Eqs. 6-7) ----

// -log F_c(G(z, x_ns)) with the confidence floored at 1e-12.
inline Var identity_loss(const ModelHandle& F, const Generator& G, const Var& z,
                         const ImageTensor& x_ns, const CorruptionMask& mask, int c) {
  Var rec = generate_var(G, z, x_ns, mask);
  Var logits = F.logits_var(rec);  // capability-checked
  const Eigen::Index C = logits->val.rows();
  Mat shift = logits->val.colwise().maxCoeff();
  Var shifted = ag::sub(logits, nn::broadcast_rows(ag::constant(shift), C));
  Var p = ag::cdiv(ag::exp_(shifted),
                   nn::broadcast_rows(ag::col_sum(ag::exp_(shifted)), C));
  Var pc = ag::rows_block(p, c - 1, 1);
  return ag::neg(ag::log_(ag::clamp_min(ag::mean_all(pc), 1e-12)));
}

// -D(G(z, x_ns)); shared verbatim with the backbone's critic regularizer.
inline Var disc_loss(const ScoreFn& D, const Generator& G, const Var& z, const ImageTensor& x_ns,
                     const CorruptionMask& mask) {
  return ag::neg(ag::mean_all(D(generate_var(G, z, x_ns, mask))));
}

inline Var disc_loss(const Critic& D, const Generator& G, const Var& z, const ImageTensor& x_ns,
                     const CorruptionMask& mask) {
  return disc_loss(score_fn(D), G, z, x_ns, mask);
}

// ---- latent optimization (Eqs. 8-9) ----

struct OptimizeConfig {
  double lambda_id = 100.0;
  int iterations = 1500;
  double step = 0.02;
  double momentum = 0.9;
};

namespace detail {

template <typename LossFn>
Eigen::VectorXd momentum_descent(const Eigen::VectorXd& z0, const OptimizeConfig& cfg,
                                 LossFn&& loss_fn) {
  Eigen::VectorXd z = z0;
  Eigen::VectorXd vel = Eigen::VectorXd::Zero(z.size());
  Eigen::VectorXd best = z;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.iterations; ++it) {
    Var zv = ag::leaf(Mat(z));
    Var loss = loss_fn(zv);
    double lv = loss->val(0, 0);
    if (!std::isfinite(lv)) return best_loss < std::numeric_limits<double>::infinity() ? best : z0;
    if (lv < best_loss) {
      best_loss = lv;
      best = z;
    }
    Var g = ag::gradients(loss, {zv})[0];
    vel = cfg.momentum * vel - cfg.step * g->val.col(0);
    z += vel;
  }
  return z;
}

}  // namespace detail

// argmin_z L_disc + lambda_id * L_id, initialized from the selector.
inline Eigen::VectorXd optimize_whitebox(const Eigen::VectorXd& z_hat, const ImageTensor& x_ns,
                                         const CorruptionMask& mask, int c, const ModelHandle& F,
                                         const Generator& G, const Critic& D,
                                         const OptimizeConfig& cfg) {
  if (F.mode() != AccessMode::whitebox)
    throw capability_error("optimize_whitebox requires a whitebox target handle");
  return detail::momentum_descent(z_hat, cfg, [&](const Var& zv) {
    return ag::add(disc_loss(D, G, zv, x_ns, mask),
                   ag::scale(identity_loss(F, G, zv, x_ns, mask, c), cfg.lambda_id));
  });
}

// argmin_z L_disc; never touches the target model.
inline Eigen::VectorXd optimize_blackbox(const Eigen::VectorXd& z_hat, const ImageTensor& x_ns,
                                         const CorruptionMask& mask, const Generator& G,
                                         const Critic& D, const OptimizeConfig& cfg) {
  return detail::momentum_descent(z_hat, cfg, [&](const Var& zv) {
    return disc_loss(D, G, zv, x_ns, mask);
  });
}

// ---- full pipeline ----

struct RecoveredRecord {
  Eigen::VectorXd z_star;
  ImageTensor x_rec;
  int label_used = 0;             // 1-based class index
  std::string label_source;       // pseudo | ground_truth
  std::string setting;            // whitebox | blackbox
  double confidence = 0.0;        // F_{label_used}(x_rec) at creation
  std::uint64_t queries = 0;      // target-model queries issued by this recovery
};

struct RecoverOptions {
  std::string setting = "whitebox";       // whitebox | blackbox
  std::string label_source = "pseudo";    // pseudo | ground_truth
  int gt_label = 0;                       // 1-based; required iff ground_truth
  int n = 200;
  std::uint64_t seed = 0;
  OptimizeConfig opt;
  bool reuse_bank = true;  // share one bank between predictor and selector
};

inline RecoveredRecord recover(const Generator& G, const Critic& D, const ModelHandle& F,
                               const ImageTensor& x_ns, const CorruptionMask& mask,
                               const TransformList& transforms, const RecoverOptions& opts) {
  const bool gt = opts.label_source == "ground_truth";
  if (gt && opts.gt_label < 1)
    throw validation_error("recover: ground_truth label source requires gt_label");
  if (!gt && opts.gt_label != 0)
    throw validation_error("recover: gt_label given but label_source is pseudo");

  std::uint64_t q0 = F.query_count();
  Rng rng(opts.seed);
  LatentBank bank = build_bank(G, F, x_ns, mask, transforms, opts.n,
                               derive_seed(opts.seed, "bank"));
  int y = gt ? opts.gt_label : predict_pseudo_label(bank);

  if (!opts.reuse_bank)
    bank = build_bank(G, F, x_ns, mask, transforms, opts.n, derive_seed(opts.seed, "bank2"));
  Eigen::VectorXd z_hat = select_latent(bank, y, rng);

  RecoveredRecord rec;
  rec.label_used = y;
  rec.label_source = gt ? "ground_truth" : "pseudo";
  rec.setting = opts.setting;
  if (opts.setting == "whitebox")
    rec.z_star = optimize_whitebox(z_hat, x_ns, mask, y, F, G, D, opts.opt);
  else if (opts.setting == "blackbox")
    rec.z_star = optimize_blackbox(z_hat, x_ns, mask, G, D, opts.opt);
  else
    throw validation_error("recover: unknown setting " + opts.setting);

  rec.x_rec = generate(G, rec.z_star, x_ns, mask);
  rec.confidence = F.predict(rec.x_rec)(y - 1);
  rec.queries = F.query_count() - q0;
  return rec;
}

}  // namespace secretgen
