#pragma once

#include "secretgen/inversion.hpp"

namespace secretgen {

// PII: random latent, discriminator loss only, no label signal. The label
// recorded for Protocol 2 is the target model's post-hoc prediction.
inline RecoveredRecord pii_recover(const Generator& G, const Critic& D, const ModelHandle& F,
                                   const ImageTensor& x_ns, const CorruptionMask& mask,
                                   const OptimizeConfig& opt, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd z0(G.cfg.d_z);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < z0.size(); ++i) z0[i] = gauss(rng);

  RecoveredRecord rec;
  rec.setting = "blackbox";
  rec.label_source = "pseudo";
  rec.z_star = optimize_blackbox(z0, x_ns, mask, G, D, opt);
  rec.x_rec = generate(G, rec.z_star, x_ns, mask);
  PredictionVector p = F.predict(rec.x_rec);
  Eigen::Index arg;
  p.maxCoeff(&arg);
  rec.label_used = int(arg) + 1;
  rec.confidence = p(arg);
  rec.queries = 1;  // the single post-hoc labeling query
  return rec;
}

// GMI: random latent (the defining delta from SecretGen-with-GT), whitebox
// descent on L_disc + lambda_id * L_id with the known ground-truth label.
inline RecoveredRecord gmi_recover(const Generator& G, const Critic& D, const ModelHandle& F,
                                   const ImageTensor& x_ns, const CorruptionMask& mask,
                                   int gt_label, const OptimizeConfig& opt, std::uint64_t seed,
                                   int restarts = 1) {
  if (F.mode() != AccessMode::whitebox)
    throw capability_error("gmi_recover requires whitebox access");
  if (gt_label < 1) throw validation_error("gmi_recover: ground truth label required");

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  RecoveredRecord rec;
  rec.setting = "whitebox";
  rec.label_source = "ground_truth";
  rec.label_used = gt_label;

  double best_loss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Eigen::VectorXd z0(G.cfg.d_z);
    for (Eigen::Index i = 0; i < z0.size(); ++i) z0[i] = gauss(rng);
    Eigen::VectorXd z = optimize_whitebox(z0, x_ns, mask, gt_label, F, G, D, opt);
    double id_loss =
        identity_loss(F, G, ag::constant(Mat(z)), x_ns, mask, gt_label)->val(0, 0);
    if (id_loss < best_loss) {
      best_loss = id_loss;
      rec.z_star = z;
    }
  }
  rec.x_rec = generate(G, rec.z_star, x_ns, mask);
  rec.confidence = F.predict(rec.x_rec)(gt_label - 1);
  rec.queries = 1;  // the confidence probe; gradients are whitebox access, not queries
  return rec;
}

}  // namespace secretgen
