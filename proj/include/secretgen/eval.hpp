#pragma once

#include <chrono>
#include <json.hpp>

#include "secretgen/inversion.hpp"

namespace secretgen {

// Peak signal-to-noise ratio in dB, computed in [0,255] space over the full
// image; identical images return the 100 dB cap.
constexpr double kPsnrCap = 100.0;

inline double psnr(const ImageTensor& x, const ImageTensor& x_rec) {
  if (!x.same_shape(x_rec)) throw validation_error("psnr: shape mismatch");
  const double scale = 255.0 / 2.0;  // [-1,1] -> [0,255]
  double mse = (scale * (x.values - x_rec.values)).squaredNorm() / double(x.values.size());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline double label_prediction_accuracy(const std::vector<int>& predicted,
                                        const std::vector<int>& ground_truth) {
  if (predicted.size() != ground_truth.size())
    throw validation_error("label_prediction_accuracy: length mismatch");
  if (predicted.empty()) throw validation_error("label_prediction_accuracy: empty lists");
  int hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += (predicted[i] == ground_truth[i]);
  return double(hits) / double(predicted.size());
}

// ---- Protocol 1: eval model trained on private data, tested on recoveries ----

// Class labels are 1-based throughout the attack surface; the eval model's
// internal class indices are 0-based, so subtract one when comparing.
inline double protocol1(const Classifier& eval_model, const Mat& recovered_images,
                        const std::vector<int>& true_classes) {
  if (recovered_images.cols() == 0) throw validation_error("protocol1: no recovered images");
  if (std::size_t(recovered_images.cols()) != true_classes.size())
    throw validation_error("protocol1: image/label count mismatch");
  for (int c : true_classes)
    if (c < 1 || c > eval_model.spec.num_classes)
      throw validation_error("protocol1: class label out of range");
  Mat probs = eval_model.predict_probs(recovered_images);
  int hits = 0;
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    Eigen::Index arg;
    probs.col(i).maxCoeff(&arg);
    hits += (int(arg) + 1 == true_classes[std::size_t(i)]);
  }
  return double(hits) / double(probs.cols());
}

// ---- Protocol 2: fresh model trained on recoveries, tested on private data ----

struct Protocol2Result {
  double test_accuracy = 0.0;    // on real D_pri_test against true identities
  double valid_accuracy = 0.0;   // on the held-out fifth of the recoveries
  std::vector<int> missing_classes;  // classes absent from the recovered train split
};

inline Protocol2Result protocol2(const Mat& recovered_images,
                                 const std::vector<int>& labels_used,
                                 const Mat& pri_test_images,
                                 const std::vector<int>& pri_test_classes,
                                 const ClassifierSpec& spec, const TrainConfig& train_cfg) {
  if (std::size_t(recovered_images.cols()) != labels_used.size())
    throw validation_error("protocol2: image/label count mismatch");
  for (int c : labels_used)
    if (c < 1 || c > spec.num_classes)
      throw validation_error("protocol2: class label out of range");
  const Eigen::Index N = recovered_images.cols();
  if (N < 5) throw validation_error("protocol2: need at least 5 recoveries for the 4:1 split");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(N), 0);
  for (Eigen::Index i = 0; i < N; ++i) order[std::size_t(i)] = i;
  Rng rng(train_cfg.seed ^ 0x70c01ull);
  std::shuffle(order.begin(), order.end(), rng);
  const Eigen::Index n_valid = N / 5;

  LabeledBatchSource train, valid;
  train.images.resize(recovered_images.rows(), N - n_valid);
  valid.images.resize(recovered_images.rows(), n_valid);
  for (Eigen::Index i = 0; i < N; ++i) {
    Eigen::Index src = order[std::size_t(i)];
    if (i < n_valid) {
      valid.images.col(i) = recovered_images.col(src);
      valid.labels.push_back(labels_used[std::size_t(src)] - 1);
    } else {
      train.images.col(i - n_valid) = recovered_images.col(src);
      train.labels.push_back(labels_used[std::size_t(src)] - 1);
    }
  }

  Protocol2Result res;
  std::set<int> present(train.labels.begin(), train.labels.end());
  for (int c = 0; c < spec.num_classes; ++c)
    if (!present.count(c)) res.missing_classes.push_back(c + 1);

  TrainResult tr = train_classifier(train, spec, train_cfg);
  if (n_valid > 0) res.valid_accuracy = accuracy_on(*tr.model, valid);

  LabeledBatchSource test;
  test.images = pri_test_images;
  for (int c : pri_test_classes) {
    if (c < 1 || c > spec.num_classes)
      throw validation_error("protocol2: test class label out of range");
    test.labels.push_back(c - 1);
  }
  res.test_accuracy = accuracy_on(*tr.model, test);
  return res;
}

// ---- metrics report ----

struct MetricsReport {
  std::string method;        // pii | gmi | secretgen
  std::string setting;       // whitebox | blackbox
  std::string label_source;  // pseudo | ground_truth
  std::string mask_type;     // center | face_t
  double protocol1_acc = -1.0;  // -1 sentinel = not computed
  double protocol2_acc = -1.0;
  double protocol2_valid_acc = -1.0;
  double mean_psnr = -1.0;
  double label_pred_acc = -1.0;
  int n = 0;
  int m = 0;
  std::uint64_t seed = 0;
  double attack_seconds = -1.0;
  std::string backbone_digest, target_digest, config_digest;

  nlohmann::ordered_json to_json() const {
    return {{"schema_version", 1},
            {"method", method},
            {"setting", setting},
            {"label_source", label_source},
            {"mask_type", mask_type},
            {"protocol1_acc", protocol1_acc},
            {"protocol2_acc", protocol2_acc},
            {"protocol2_valid_acc", protocol2_valid_acc},
            {"mean_psnr", mean_psnr},
            {"label_pred_acc", label_pred_acc},
            {"n", n},
            {"m", m},
            {"seed", seed},
            {"attack_seconds", attack_seconds},
            {"backbone_digest", backbone_digest},
            {"target_digest", target_digest},
            {"config_digest", config_digest}};
  }
};

// ---- ablation & overfitting harnesses ----

// One attack target: what the adversary sees plus the hidden truth used only
// for scoring.
struct AttackTarget {
  std::string image_id;
  ImageTensor original;
  ImageTensor x_ns;
  int true_class = 0;  // 1-based
};

struct AblationRow {
  std::string family;
  int m = 0;
  int n = 0;
  bool transformed_metric = true;  // M vs M'
  double label_pred_acc = 0.0;
  double predictor_seconds_per_image = 0.0;
};

struct AblationConfig {
  std::vector<std::string> families{"cutout", "none", "hflip", "grayscale", "color_jitter"};
  std::vector<int> m_values{4, 9, 16, 25, 36};  // cutout sweep
  std::vector<int> n_values{10, 50, 200};
  int n_default = 200;
  std::uint64_t seed = 0;
};

inline TransformList family_transforms(const std::string& family, int side, int m) {
  if (family == "cutout") {
    int per_row = int(std::lround(std::sqrt(double(m))));
    if (per_row * per_row != m || side % per_row != 0)
      throw validation_error("cutout family: m incompatible with image side");
    return sequential_cutout(side, side / per_row);
  }
  return ablation_family(family);
}

inline std::vector<AblationRow> ablation_suite(const Generator& G, const ModelHandle& F,
                                               const CorruptionMask& mask,
                                               const std::vector<AttackTarget>& targets,
                                               const AblationConfig& cfg) {
  if (targets.empty()) throw validation_error("ablation_suite: no targets");
  const int side = targets[0].x_ns.height;
  std::vector<AblationRow> rows;

  auto run = [&](const TransformList& list, const std::string& family, int n,
                 bool transformed) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int> pred, gt;
    for (const auto& t : targets) {
      LatentBank bank = build_bank(G, F, t.x_ns, mask, list, n,
                                   derive_seed(cfg.seed, t.image_id));
      pred.push_back(predict_pseudo_label(bank, transformed));
      gt.push_back(t.true_class);
    }
    auto t1 = std::chrono::steady_clock::now();
    AblationRow row;
    row.family = family;
    row.m = int(list.size());
    row.n = n;
    row.transformed_metric = transformed;
    row.label_pred_acc = label_prediction_accuracy(pred, gt);
    row.predictor_seconds_per_image =
        std::chrono::duration<double>(t1 - t0).count() / double(targets.size());
    rows.push_back(row);
  };

  // metric families at the default n; cutout also as the simplified metric M'
  for (const auto& family : cfg.families) {
    if (family == "cutout") {
      for (int m : cfg.m_values) {
        int per_row = int(std::lround(std::sqrt(double(m))));
        if (per_row * per_row != m || side % per_row != 0) continue;  // logged by caller
        run(family_transforms(family, side, m), family, cfg.n_default, true);
      }
    } else {
      run(family_transforms(family, side, 0), family, cfg.n_default, true);
    }
  }
  // simplified metric: same default cutout bank, scored on untransformed
  // recoveries only
  const int default_patch = side % 4 == 0 ? side / 4 : side;
  run(sequential_cutout(side, default_patch), "simplified", cfg.n_default, false);
  // n sweep with the default cutout family
  for (int n : cfg.n_values)
    run(sequential_cutout(side, default_patch), "cutout_n_sweep", n, true);
  return rows;
}

// Pseudo-label accuracy per saved target-model checkpoint.
inline std::vector<std::pair<int, double>> overfitting_sweep(
    const std::map<int, std::vector<Mat>>& checkpoints, const ClassifierSpec& spec,
    const Generator& G, const CorruptionMask& mask, const std::vector<AttackTarget>& targets,
    const TransformList& transforms, int n, std::uint64_t seed) {
  if (checkpoints.empty()) throw validation_error("overfitting_sweep: no checkpoints");
  std::vector<std::pair<int, double>> curve;
  for (const auto& [epoch, snap] : checkpoints) {
    auto model = std::make_shared<Classifier>(spec, 0);
    restore_params(model->ps, snap);
    ModelHandle F(model, AccessMode::blackbox);
    std::vector<int> pred, gt;
    for (const auto& t : targets) {
      LatentBank bank =
          build_bank(G, F, t.x_ns, mask, transforms, n, derive_seed(seed, t.image_id));
      pred.push_back(predict_pseudo_label(bank));
      gt.push_back(t.true_class);
    }
    curve.emplace_back(epoch, label_prediction_accuracy(pred, gt));
  }
  return curve;
}

}  // namespace secretgen
