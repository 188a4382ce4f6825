#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>

#include "secretgen/data.hpp"
#include "secretgen/nn.hpp"

namespace secretgen {

using ag::Mat;
using ag::Var;

// C-class probability vector; entries nonnegative, sum 1.
using PredictionVector = Eigen::VectorXd;

struct ClassifierSpec {
  std::string arch = "cnn_a";  // cnn_a | cnn_b
  int side = 32;
  int num_classes = 10;
};

// Small tanh CNN with an explicit feature layer. Presets cnn_a (2 conv
// blocks) and cnn_b (3 conv blocks) stand in for production-scale backbones.
struct Classifier {
  ClassifierSpec spec;
  nn::ParamStore ps;
  std::vector<nn::Conv> convs;
  std::vector<std::array<int, 3>> conv_dims;  // (c, h, w) entering each pool
  nn::Dense feat, head;
  int feat_dim = 0;

  Classifier() = default;

  explicit Classifier(const ClassifierSpec& s, std::uint64_t seed) : spec(s) {
    Rng rng(seed);
    std::vector<int> channels;
    if (s.arch == "cnn_a")
      channels = {8, 16};
    else if (s.arch == "cnn_b")
      channels = {8, 16, 32};
    else
      throw validation_error("unknown classifier arch: " + s.arch);
    feat_dim = (s.arch == "cnn_a") ? 32 : 48;

    int c = 3, side = s.side;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      convs.emplace_back(ps, "conv" + std::to_string(i), c, channels[i], side, side, 3, 1, 1,
                         rng);
      conv_dims.push_back({channels[i], side, side});
      c = channels[i];
      side /= 2;
    }
    feat = nn::Dense(ps, "feat", c * side * side, feat_dim, rng);
    head = nn::Dense(ps, "head", feat_dim, s.num_classes, rng);
  }

  // x: (3*side*side) x B
  Var features_var(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      h = ag::tanh_(convs[i].forward(h));
      auto [c, hh, ww] = conv_dims[i];
      h = ag::avgpool2(h, c, hh, ww);
    }
    return ag::tanh_(feat.forward(h));
  }

  Var logits_var(const Var& x) const { return head.forward(features_var(x)); }

  Mat predict_probs(const Mat& x) const {
    return nn::softmax_cols(logits_var(ag::constant(x))->val);
  }
};

// Post-processor hook over prediction vectors (defense insertion point).
using PredictionHook = std::function<PredictionVector(const PredictionVector&)>;

enum class AccessMode { whitebox, blackbox };

// Uniform classifier access. Blackbox handles expose predict only; feature
// and gradient paths are rejected with a capability error.
class ModelHandle {
 public:
  ModelHandle() = default;
  ModelHandle(std::shared_ptr<Classifier> model, AccessMode mode)
      : model_(std::move(model)), mode_(mode) {}

  int num_classes() const { return model_->spec.num_classes; }
  int side() const { return model_->spec.side; }
  AccessMode mode() const { return mode_; }
  const Classifier& internals_unsafe() const { return *model_; }

  void set_hook(PredictionHook h) { hook_ = std::move(h); }

  PredictionVector predict(const ImageTensor& x) const {
    check_shape(x);
    queries_->fetch_add(1);
    Mat probs = model_->predict_probs(x.values);
    PredictionVector p = probs.col(0);
    return hook_ ? hook_(p) : p;
  }

  // One query is counted per column.
  Mat predict_batch(const Mat& x) const {
    queries_->fetch_add(std::uint64_t(x.cols()));
    Mat probs = model_->predict_probs(x);
    if (hook_)
      for (Eigen::Index i = 0; i < probs.cols(); ++i) {
        PredictionVector p = probs.col(i);
        probs.col(i) = hook_(p);
      }
    return probs;
  }

  PredictionVector features(const ImageTensor& x) const {
    require_whitebox("features");
    check_shape(x);
    return model_->features_var(ag::constant(Mat(x.values)))->val.col(0);
  }

  // Whitebox graph access for loss construction / backprop.
  Var logits_var(const Var& x) const {
    require_whitebox("gradients");
    return model_->logits_var(x);
  }
  Var features_var(const Var& x) const {
    require_whitebox("features");
    return model_->features_var(x);
  }

  std::uint64_t query_count() const { return queries_->load(); }
  void reset_queries() { queries_->store(0); }

 private:
  void check_shape(const ImageTensor& x) const {
    if (x.height != model_->spec.side || x.width != model_->spec.side || x.channels != 3)
      throw validation_error("predict: input shape mismatch");
  }
  void require_whitebox(const char* what) const {
    if (mode_ != AccessMode::whitebox)
      throw capability_error(std::string(what) + " unavailable through a blackbox handle");
  }

  std::shared_ptr<Classifier> model_;
  AccessMode mode_ = AccessMode::whitebox;
  PredictionHook hook_;
  std::shared_ptr<std::atomic<std::uint64_t>> queries_ =
      std::make_shared<std::atomic<std::uint64_t>>(0);
};

// ---- training ----

struct TrainConfig {
  double lr = 1e-2;  // plain SGD
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch = 64;
  int epochs = 30;
  std::vector<int> checkpoint_epochs;  // optional snapshots for the overfitting sweep
  std::uint64_t seed = 0;
};

struct LabeledBatchSource {
  Mat images;               // (3*side*side) x N
  std::vector<int> labels;  // class indices [0, C)
  std::vector<int> class_of_label;  // original identity per class index
};

// Maps original identity labels of a record list onto contiguous classes and
// loads all pixels into memory.
inline LabeledBatchSource load_records(const std::vector<ManifestRecord>& recs, int side) {
  if (recs.empty()) throw validation_error("empty record list");
  std::vector<int> ids;
  for (const auto& r : recs) ids.push_back(r.identity_label);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::map<int, int> to_class;
  for (std::size_t i = 0; i < ids.size(); ++i) to_class[ids[i]] = int(i);

  LabeledBatchSource out;
  out.class_of_label = ids;
  out.images.resize(Eigen::Index(3) * side * side, Eigen::Index(recs.size()));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    out.images.col(Eigen::Index(i)) = load_image(recs[i].image_path, side).values;
    out.labels.push_back(to_class[recs[i].identity_label]);
  }
  return out;
}

inline double accuracy_on(const Classifier& model, const LabeledBatchSource& data) {
  Mat probs = model.predict_probs(data.images);
  int hits = 0;
  for (Eigen::Index i = 0; i < probs.cols(); ++i) {
    Eigen::Index arg;
    probs.col(i).maxCoeff(&arg);
    hits += (int(arg) == data.labels[std::size_t(i)]);
  }
  return double(hits) / double(probs.cols());
}

struct TrainResult {
  std::shared_ptr<Classifier> model;
  double train_accuracy = 0.0;
  std::vector<double> epoch_losses;
  // epoch -> weight snapshot (flat copy of every parameter)
  std::map<int, std::vector<Mat>> checkpoints;
};

inline void snapshot_params(const nn::ParamStore& ps, std::vector<Mat>& out) {
  out.clear();
  for (auto& [n, v] : ps.params) out.push_back(v->val);
}

inline void restore_params(nn::ParamStore& ps, const std::vector<Mat>& snap) {
  for (std::size_t i = 0; i < ps.params.size(); ++i) ps.params[i].second->val = snap[i];
}

inline TrainResult train_classifier(const LabeledBatchSource& data, const ClassifierSpec& spec,
                                    const TrainConfig& cfg) {
  TrainResult res;
  res.model = std::make_shared<Classifier>(spec, cfg.seed);
  auto& model = *res.model;
  nn::SgdMomentum opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  auto params = model.ps.vars();

  const Eigen::Index N = data.images.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N), 0);
  for (Eigen::Index i = 0; i < N; ++i) order[std::size_t(i)] = i;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  std::set<int> cps(cfg.checkpoint_epochs.begin(), cfg.checkpoint_epochs.end());
  if (cps.count(0)) snapshot_params(model.ps, res.checkpoints[0]);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < N; start += cfg.batch) {
      Eigen::Index bs = std::min<Eigen::Index>(cfg.batch, N - start);
      Mat xb(data.images.rows(), bs);
      std::vector<int> yb(static_cast<std::size_t>(bs), 0);
      for (Eigen::Index i = 0; i < bs; ++i) {
        xb.col(i) = data.images.col(order[std::size_t(start + i)]);
        yb[std::size_t(i)] = data.labels[std::size_t(order[std::size_t(start + i)])];
      }
      Var loss = nn::softmax_xent(model.logits_var(ag::constant(xb)), yb);
      if (!std::isfinite(loss->val(0, 0)))
        throw std::runtime_error("train_classifier: non-finite loss (divergence)");
      auto grads = ag::gradients(loss, params);
      opt.step(params, grads);
      epoch_loss += loss->val(0, 0);
      ++batches;
    }
    res.epoch_losses.push_back(epoch_loss / std::max(1, batches));
    if (cps.count(epoch)) snapshot_params(model.ps, res.checkpoints[epoch]);
  }
  res.train_accuracy = accuracy_on(model, data);
  return res;
}

// ---- checkpoint files (weight blob + json sidecar handled in pipeline) ----

inline std::string weights_digest_hex(const nn::ParamStore& ps) { return hex64(ps.digest()); }

}  // namespace secretgen
