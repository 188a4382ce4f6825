#pragma once

#include <cstdlib>
#include <json.hpp>

#include "secretgen/data.hpp"
#include "secretgen/gan.hpp"
#include "secretgen/inversion.hpp"

namespace secretgen {

using json = nlohmann::ordered_json;

// Full experiment description. Defaults follow the reference training recipe:
// lambda_div 0.5, n = 200, 16x16 cutout patches (m = 16 at side 64),
// lambda_id 100, 1500 optimization iterations, step 0.02, momentum 0.9.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output_root = "out";

  // data
  std::string data_source = "synthetic";  // synthetic | manifest
  std::string pool_manifest;              // used when data_source == manifest
  int side = 64;
  SyntheticSpec synthetic;  // side/seed fields are overridden from this config
  SplitConfig splits;

  // mask
  std::string mask_type = "center";  // center | face_t
  double center_fraction = 0.5;
  FaceTGeometry face_t;

  // backbone (side/seed overridden from this config)
  BackboneConfig backbone;

  // classifiers (num_classes filled from the split at train time)
  std::string target_arch = "cnn_a";
  TrainConfig target_train = make_target_train();
  std::string eval_arch = "cnn_b";
  TrainConfig eval_train = make_eval_train();

  // attack
  int n = 200;
  int patch = 16;
  std::string setting = "whitebox";     // whitebox | blackbox
  std::string label_source = "pseudo";  // pseudo | ground_truth
  OptimizeConfig optimize;
  bool reuse_bank = true;
  int max_images = 0;  // 0 = attack every pri_train image

  // sweeps
  std::vector<int> ablation_m{4, 9, 16, 25, 36};
  std::vector<int> ablation_n{10, 50, 200};

  static TrainConfig make_target_train() {
    TrainConfig t;
    t.epochs = 200;
    t.checkpoint_epochs = {50, 100, 200};
    return t;
  }
  static TrainConfig make_eval_train() {
    TrainConfig t;
    t.epochs = 50;
    return t;
  }

  void validate() const {
    if (side <= 0) throw validation_error("config: side must be positive");
    if (patch <= 0 || side % patch != 0)
      throw validation_error("config: image side must be divisible by the cutout patch");
    if (n < 1) throw validation_error("config: n must be >= 1");
    if (workers < 1) throw validation_error("config: workers must be >= 1");
    if (setting != "whitebox" && setting != "blackbox")
      throw validation_error("config: unknown setting " + setting);
    if (label_source != "pseudo" && label_source != "ground_truth")
      throw validation_error("config: unknown label_source " + label_source);
    if (mask_type != "center" && mask_type != "face_t")
      throw validation_error("config: unknown mask_type " + mask_type);
    if (data_source != "synthetic" && data_source != "manifest")
      throw validation_error("config: unknown data_source " + data_source);
    if (data_source == "manifest" && pool_manifest.empty())
      throw validation_error("config: manifest data_source requires pool_manifest");
    if (target_arch != "cnn_a" && target_arch != "cnn_b")
      throw validation_error("config: unknown target_arch " + target_arch);
    if (eval_arch != "cnn_a" && eval_arch != "cnn_b")
      throw validation_error("config: unknown eval_arch " + eval_arch);
    if (center_fraction <= 0.0 || center_fraction >= 1.0)
      throw validation_error("config: center_fraction must be in (0,1)");
  }

  int m() const { return (side / patch) * (side / patch); }

  BackboneConfig backbone_for_run() const {
    BackboneConfig b = backbone;
    b.side = side;
    b.seed = derive_seed(seed, "backbone");
    return b;
  }
  SyntheticSpec synthetic_for_run() const {
    SyntheticSpec s = synthetic;
    s.side = side;
    s.seed = derive_seed(seed, "corpus");
    return s;
  }
  CorruptionMask make_mask() const {
    if (mask_type == "face_t") return make_face_t_mask(side, side, face_t);
    return make_center_mask(side, side, center_fraction);
  }
  TransformList make_transforms() const { return sequential_cutout(side, patch); }

  json to_json() const {
    json train_a = {{"lr", target_train.lr},
                    {"momentum", target_train.momentum},
                    {"weight_decay", target_train.weight_decay},
                    {"batch", target_train.batch},
                    {"epochs", target_train.epochs},
                    {"checkpoint_epochs", target_train.checkpoint_epochs}};
    json train_b = {{"lr", eval_train.lr},
                    {"momentum", eval_train.momentum},
                    {"weight_decay", eval_train.weight_decay},
                    {"batch", eval_train.batch},
                    {"epochs", eval_train.epochs},
                    {"checkpoint_epochs", eval_train.checkpoint_epochs}};
    return {{"schema_version", 1},
            {"seed", seed},
            {"workers", workers},
            {"output_root", output_root},
            {"data",
             {{"source", data_source},
              {"pool_manifest", pool_manifest},
              {"side", side},
              {"total_identities", synthetic.total_identities},
              {"images_per_identity", synthetic.images_per_identity},
              {"tint_groups", synthetic.tint_groups},
              {"border_cue", synthetic.border_cue},
              {"id_cue", synthetic.id_cue},
              {"mark_cue", synthetic.mark_cue},
              {"noise_sigma", synthetic.noise_sigma},
              {"num_pub_identities", splits.num_pub_identities},
              {"num_pri_identities", splits.num_pri_identities},
              {"pri_test_per_identity", splits.pri_test_per_identity}}},
            {"mask",
             {{"type", mask_type},
              {"center_fraction", center_fraction},
              {"face_t",
               {{"band_top", face_t.band_top},
                {"band_bottom", face_t.band_bottom},
                {"band_left", face_t.band_left},
                {"band_right", face_t.band_right},
                {"stem_top", face_t.stem_top},
                {"stem_bottom", face_t.stem_bottom},
                {"stem_left", face_t.stem_left},
                {"stem_right", face_t.stem_right}}}}},
            {"backbone",
             {{"d_z", backbone.d_z},
              {"gen_ch", backbone.gen_ch},
              {"z_ch", backbone.z_ch},
              {"critic_ch", backbone.critic_ch},
              {"lr", backbone.lr},
              {"beta1", backbone.beta1},
              {"beta2", backbone.beta2},
              {"batch", backbone.batch},
              {"steps", backbone.steps},
              {"n_critic", backbone.n_critic},
              {"lambda_div", backbone.lambda_div},
              {"gp_coeff", backbone.gp_coeff}}},
            {"target", {{"arch", target_arch}, {"train", train_a}}},
            {"eval_model", {{"arch", eval_arch}, {"train", train_b}}},
            {"attack",
             {{"n", n},
              {"patch", patch},
              {"setting", setting},
              {"label_source", label_source},
              {"lambda_id", optimize.lambda_id},
              {"iterations", optimize.iterations},
              {"step", optimize.step},
              {"momentum", optimize.momentum},
              {"reuse_bank", reuse_bank},
              {"max_images", max_images}}},
            {"ablation", {{"m_values", ablation_m}, {"n_values", ablation_n}}}};
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;  // start from defaults; absent keys keep them
    auto get = [](const json& obj, const char* key, auto& out) {
      if (obj.contains(key)) out = obj.at(key).template get<std::decay_t<decltype(out)>>();
    };
    get(j, "seed", c.seed);
    get(j, "workers", c.workers);
    get(j, "output_root", c.output_root);
    if (j.contains("data")) {
      const json& d = j.at("data");
      get(d, "source", c.data_source);
      get(d, "pool_manifest", c.pool_manifest);
      get(d, "side", c.side);
      get(d, "total_identities", c.synthetic.total_identities);
      get(d, "images_per_identity", c.synthetic.images_per_identity);
      get(d, "tint_groups", c.synthetic.tint_groups);
      get(d, "border_cue", c.synthetic.border_cue);
      get(d, "id_cue", c.synthetic.id_cue);
      get(d, "mark_cue", c.synthetic.mark_cue);
      get(d, "noise_sigma", c.synthetic.noise_sigma);
      get(d, "num_pub_identities", c.splits.num_pub_identities);
      get(d, "num_pri_identities", c.splits.num_pri_identities);
      get(d, "pri_test_per_identity", c.splits.pri_test_per_identity);
    }
    if (j.contains("mask")) {
      const json& m = j.at("mask");
      get(m, "type", c.mask_type);
      get(m, "center_fraction", c.center_fraction);
      if (m.contains("face_t")) {
        const json& t = m.at("face_t");
        get(t, "band_top", c.face_t.band_top);
        get(t, "band_bottom", c.face_t.band_bottom);
        get(t, "band_left", c.face_t.band_left);
        get(t, "band_right", c.face_t.band_right);
        get(t, "stem_top", c.face_t.stem_top);
        get(t, "stem_bottom", c.face_t.stem_bottom);
        get(t, "stem_left", c.face_t.stem_left);
        get(t, "stem_right", c.face_t.stem_right);
      }
    }
    if (j.contains("backbone")) {
      const json& b = j.at("backbone");
      get(b, "d_z", c.backbone.d_z);
      get(b, "gen_ch", c.backbone.gen_ch);
      get(b, "z_ch", c.backbone.z_ch);
      get(b, "critic_ch", c.backbone.critic_ch);
      get(b, "lr", c.backbone.lr);
      get(b, "beta1", c.backbone.beta1);
      get(b, "beta2", c.backbone.beta2);
      get(b, "batch", c.backbone.batch);
      get(b, "steps", c.backbone.steps);
      get(b, "n_critic", c.backbone.n_critic);
      get(b, "lambda_div", c.backbone.lambda_div);
      get(b, "gp_coeff", c.backbone.gp_coeff);
    }
    auto read_train = [&](const json& sec, std::string& arch, TrainConfig& t) {
      get(sec, "arch", arch);
      if (sec.contains("train")) {
        const json& tr = sec.at("train");
        get(tr, "lr", t.lr);
        get(tr, "momentum", t.momentum);
        get(tr, "weight_decay", t.weight_decay);
        get(tr, "batch", t.batch);
        get(tr, "epochs", t.epochs);
        get(tr, "checkpoint_epochs", t.checkpoint_epochs);
      }
    };
    if (j.contains("target")) read_train(j.at("target"), c.target_arch, c.target_train);
    if (j.contains("eval_model")) read_train(j.at("eval_model"), c.eval_arch, c.eval_train);
    if (j.contains("attack")) {
      const json& a = j.at("attack");
      get(a, "n", c.n);
      get(a, "patch", c.patch);
      get(a, "setting", c.setting);
      get(a, "label_source", c.label_source);
      get(a, "lambda_id", c.optimize.lambda_id);
      get(a, "iterations", c.optimize.iterations);
      get(a, "step", c.optimize.step);
      get(a, "momentum", c.optimize.momentum);
      get(a, "reuse_bank", c.reuse_bank);
      get(a, "max_images", c.max_images);
    }
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      get(a, "m_values", c.ablation_m);
      get(a, "n_values", c.ablation_n);
    }
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw validation_error("cannot read config: " + path);
    json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(std::string("malformed config: ") + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write config: " + path);
    os << to_json().dump(2) << "\n";
  }

  // Stable content hash over the canonicalized (key-sorted) config tree.
  std::string digest() const {
    nlohmann::json canonical = nlohmann::json::parse(to_json().dump());  // sorts keys
    return hex64(fnv1a(canonical.dump()));
  }
};

// Environment overrides: SECRETGEN_<SECTION>_<KEY> (single underscore per
// nesting level, keys upper-cased) replaces a scalar leaf; values are parsed
// as JSON when possible, else taken as strings. Example:
//   SECRETGEN_SEED=7  SECRETGEN_ATTACK_N=50  SECRETGEN_MASK_TYPE=face_t
inline void apply_env_overrides(ExperimentConfig& cfg, const char* const* envp = nullptr) {
  json j = cfg.to_json();

  // enumerate every leaf as (ENV_NAME -> json pointer path)
  std::map<std::string, std::string> leaves;
  std::function<void(const json&, const std::string&, const std::string&)> walk =
      [&](const json& node, const std::string& env_prefix, const std::string& ptr) {
        for (auto it = node.begin(); it != node.end(); ++it) {
          std::string name = env_prefix + "_";
          for (char ch : it.key()) name += char(std::toupper(static_cast<unsigned char>(ch)));
          if (it->is_object())
            walk(*it, name, ptr + "/" + it.key());
          else
            leaves[name] = ptr + "/" + it.key();
        }
      };
  walk(j, "SECRETGEN", "");

  std::vector<std::pair<std::string, std::string>> entries;
  if (envp) {
    for (const char* const* e = envp; *e; ++e) {
      std::string kv(*e);
      auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      std::string name = kv.substr(0, eq);
      if (name.rfind("SECRETGEN_", 0) != 0) continue;
      if (!leaves.count(name)) throw validation_error("unknown config override: " + name);
      entries.emplace_back(name, kv.substr(eq + 1));
    }
  } else {
    for (const auto& [name, ptr] : leaves)
      if (const char* v = std::getenv(name.c_str())) entries.emplace_back(name, v);
  }

  for (const auto& [name, value] : entries) {
    json& node = j[json::json_pointer(leaves.at(name))];
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const nlohmann::json::exception&) {
      parsed = value;  // plain string leaf
    }
    if (node.is_string() && !parsed.is_string()) parsed = value;
    node = parsed;
  }
  cfg = ExperimentConfig::from_json(j);
}

}  // namespace secretgen
