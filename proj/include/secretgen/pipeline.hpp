#pragma once

#include <iomanip>
#include <thread>

#include "secretgen/baselines.hpp"
#include "secretgen/config.hpp"
#include "secretgen/eval.hpp"

namespace secretgen {

namespace fs = std::filesystem;

// ---------- artifact plumbing ----------

inline std::string file_digest(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw integrity_error("missing artifact: " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

inline void write_json_file(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write: " + p.string());
  os << j.dump(2) << "\n";
}

inline json read_json_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw integrity_error("missing sidecar: " + p.string());
  try {
    json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("corrupt sidecar " + p.string() + ": " + e.what());
  }
}

inline std::string mask_digest(const CorruptionMask& m) {
  std::uint64_t h = fnv1a(&m.height, sizeof(m.height));
  h = fnv1a(&m.width, sizeof(m.width), h);
  h = fnv1a(m.grid.data(), m.grid.size(), h);
  return hex64(h);
}

// True when the stage's sidecar matches this config and every recorded
// artifact still hashes to its recorded digest. A present-but-tampered
// artifact is an integrity error: the stage must not silently retrain on top
// of corrupt state.
inline bool stage_current(const fs::path& sidecar_path, const std::string& config_digest) {
  if (!fs::exists(sidecar_path)) return false;
  json sc = read_json_file(sidecar_path);
  if (sc.value("config_digest", std::string()) != config_digest) return false;
  if (sc.contains("artifacts"))
    for (auto& [file, digest] : sc.at("artifacts").items()) {
      fs::path p = sidecar_path.parent_path() / file;
      if (!fs::exists(p)) return false;
      if (file_digest(p) != digest.get<std::string>())
        throw integrity_error("artifact digest mismatch, refusing to resume: " + p.string());
    }
  return true;
}

// Digest over only the config subtree a stage's outputs depend on, so that
// e.g. changing the attack setting does not invalidate the trained target
// model, and bench rows share backbones and classifiers.
inline std::string stage_digest(const ExperimentConfig& cfg, const std::string& stage) {
  json full = cfg.to_json();
  json j = {{"seed", full.at("seed")}, {"data", full.at("data")}};
  if (stage == "train-backbone" || stage == "attack") {
    j["mask"] = full.at("mask");
    j["backbone"] = full.at("backbone");
    j["pubfeat"] = full.at("eval_model");  // backs the diversity-loss features
  }
  if (stage == "train-target" || stage == "attack") j["target"] = full.at("target");
  if (stage == "train-eval") j["eval_model"] = full.at("eval_model");
  if (stage == "attack") j["attack"] = full.at("attack");
  nlohmann::json canonical = nlohmann::json::parse(j.dump());
  return hex64(fnv1a(canonical.dump()));
}

inline void write_stage_sidecar(const fs::path& sidecar_path, const std::string& stage,
                                const std::string& config_digest, std::uint64_t seed,
                                json extra, const std::vector<fs::path>& artifacts) {
  json art = json::object();
  for (const auto& p : artifacts) art[p.filename().string()] = file_digest(p);
  json sc = {{"schema_version", 1},
             {"stage", stage},
             {"config_digest", config_digest},
             {"seed", seed},
             {"artifacts", art}};
  sc.update(extra);
  write_json_file(sidecar_path, sc);
}

struct RunLayout {
  fs::path root;
  explicit RunLayout(const std::string& r) : root(r) {}

  fs::path data_dir() const { return root / "data"; }
  fs::path corpus_dir() const { return data_dir() / "corpus"; }
  fs::path pool_manifest() const { return data_dir() / "pool.manifest"; }
  fs::path splits_manifest() const { return data_dir() / "splits.manifest"; }
  fs::path ingest_sidecar() const { return data_dir() / "ingest.json"; }

  fs::path backbone_dir(const std::string& mask) const { return root / ("backbone_" + mask); }
  fs::path model_dir(const std::string& role) const { return root / role; }

  fs::path attack_dir(const std::string& tag) const { return root / "attack" / tag; }
  fs::path reports_dir() const { return root / "reports"; }
};

inline void run_parallel(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1, std::min(workers, int(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------- ingest ----------

inline std::string image_id_of(const std::string& path) {
  return fs::path(path).stem().string();
}

inline DatasetManifest stage_ingest(const ExperimentConfig& cfg, const RunLayout& out) {
  cfg.validate();
  const std::string digest = stage_digest(cfg, "ingest");
  if (stage_current(out.ingest_sidecar(), digest))
    return DatasetManifest::load(out.splits_manifest().string());

  fs::create_directories(out.data_dir());
  DatasetManifest pool;
  if (cfg.data_source == "synthetic")
    pool = generate_synthetic_corpus(out.corpus_dir().string(), cfg.synthetic_for_run());
  else
    pool = DatasetManifest::load(cfg.pool_manifest);
  pool.save(out.pool_manifest().string());

  SplitConfig sp = cfg.splits;
  sp.seed = derive_seed(cfg.seed, "splits");
  DatasetManifest splits = build_splits(pool, sp);
  splits.save(out.splits_manifest().string());

  write_stage_sidecar(out.ingest_sidecar(), "ingest", digest, cfg.seed,
                      {{"num_classes", splits.num_classes}},
                      {out.pool_manifest(), out.splits_manifest()});
  return splits;
}

// Sorted private identities; class c (1-based) is identity mapping[c-1].
// Matches the contiguous mapping the classifier trainer derives.
inline std::vector<int> pri_identity_mapping(const DatasetManifest& splits) {
  std::set<int> ids;
  for (const auto& r : splits.records)
    if (r.split_tag.rfind("pri", 0) == 0) ids.insert(r.identity_label);
  return {ids.begin(), ids.end()};
}

inline int class_of_identity(const std::vector<int>& mapping, int identity) {
  auto it = std::lower_bound(mapping.begin(), mapping.end(), identity);
  if (it == mapping.end() || *it != identity)
    throw validation_error("identity " + std::to_string(identity) + " is not a private class");
  return int(it - mapping.begin()) + 1;
}

// ---------- backbone ----------

struct BackboneArtifacts {
  std::shared_ptr<Generator> G;
  std::shared_ptr<Critic> D;
  std::string digest;  // combined content hash of both weight blobs
};

inline void save_store(const nn::ParamStore& ps, const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write weights: " + p.string());
  ps.save(os);
}

inline void load_store(nn::ParamStore& ps, const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw integrity_error("missing weights: " + p.string());
  ps.load(is);
}

inline void write_curve_file(const fs::path& p, const std::vector<std::pair<int, double>>& xy,
                             std::uint64_t seed) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << std::setprecision(12);
  for (const auto& [x, y] : xy) os << x << ", " << y << ", " << seed << "\n";
}

inline BackboneArtifacts stage_train_backbone(const ExperimentConfig& cfg,
                                              const RunLayout& out) {
  cfg.validate();
  const fs::path dir = out.backbone_dir(cfg.mask_type);
  const fs::path sidecar = dir / "backbone.json";
  const fs::path gen_path = dir / "generator.weights";
  const fs::path critic_path = dir / "critic.weights";
  const fs::path pubfeat_path = dir / "pubfeat.weights";

  BackboneConfig bcfg = cfg.backbone_for_run();
  auto assemble = [&] {
    BackboneArtifacts art;
    art.G = std::make_shared<Generator>(bcfg, bcfg.seed);
    art.D = std::make_shared<Critic>(bcfg, bcfg.seed ^ 0xabcdefull);
    load_store(art.G->ps, gen_path);
    load_store(art.D->ps, critic_path);
    art.digest = hex64(fnv1a(file_digest(gen_path) + file_digest(critic_path)));
    return art;
  };
  const std::string digest = stage_digest(cfg, "train-backbone");
  if (stage_current(sidecar, digest)) return assemble();

  DatasetManifest splits = stage_ingest(cfg, out);
  LabeledBatchSource pub = load_records(splits.with_tag("pub"), cfg.side);
  CorruptionMask mask = cfg.make_mask();

  // public feature extractor backing the diversity loss
  ClassifierSpec pub_spec{cfg.eval_arch, cfg.side, int(pub.class_of_label.size())};
  TrainConfig pub_cfg = cfg.eval_train;
  pub_cfg.seed = derive_seed(cfg.seed, "pubfeat");
  TrainResult pub_tr = train_classifier(pub, pub_spec, pub_cfg);
  auto fe = pub_tr.model;
  FeatureFn feature_fn = [fe](const Var& x) { return fe->features_var(x); };

  std::vector<CurvePoint> curves;
  Backbone bb = train_backbone(pub.images, mask, feature_fn, bcfg, &curves);

  save_store(bb.gen->ps, gen_path);
  save_store(bb.critic->ps, critic_path);
  save_store(fe->ps, pubfeat_path);
  std::vector<std::pair<int, double>> c1, c2, c3;
  for (const auto& p : curves) {
    c1.emplace_back(p.step, p.critic_loss);
    c2.emplace_back(p.step, p.gen_loss);
    c3.emplace_back(p.step, p.div_loss);
  }
  write_curve_file(dir / "curve_critic.txt", c1, cfg.seed);
  write_curve_file(dir / "curve_generator.txt", c2, cfg.seed);
  write_curve_file(dir / "curve_diversity.txt", c3, cfg.seed);

  json backbone_section = cfg.to_json().at("backbone");
  write_stage_sidecar(
      sidecar, "train-backbone", digest, cfg.seed,
      {{"d_z", bcfg.d_z},
       {"side", bcfg.side},
       {"mask_type", cfg.mask_type},
       {"mask_digest", mask_digest(mask)},
       {"train_config_digest", hex64(fnv1a(backbone_section.dump()))},
       {"pubfeat_train_accuracy", pub_tr.train_accuracy}},
      {gen_path, critic_path, pubfeat_path});
  return assemble();
}

// ---------- classifier stages (target / eval model) ----------

struct ClassifierArtifacts {
  std::shared_ptr<Classifier> model;
  std::vector<int> class_of_label;  // identity per 1-based class
  std::string digest;
  std::map<int, fs::path> checkpoint_files;  // target role only
  double train_accuracy = 0.0;
};

inline ClassifierArtifacts stage_train_classifier(const ExperimentConfig& cfg,
                                                  const RunLayout& out,
                                                  const std::string& role) {
  cfg.validate();
  if (role != "target" && role != "eval")
    throw validation_error("unknown classifier role: " + role);
  const bool is_target = role == "target";
  const fs::path dir = out.model_dir(role);
  const fs::path sidecar = dir / (role + ".json");
  const fs::path weights = dir / (role + ".weights");

  const std::string arch = is_target ? cfg.target_arch : cfg.eval_arch;
  TrainConfig tcfg = is_target ? cfg.target_train : cfg.eval_train;
  tcfg.seed = derive_seed(cfg.seed, role);
  if (!is_target) tcfg.checkpoint_epochs.clear();

  auto assemble = [&] {
    json sc = read_json_file(sidecar);
    ClassifierArtifacts art;
    ClassifierSpec spec{arch, cfg.side, sc.at("num_classes").get<int>()};
    art.model = std::make_shared<Classifier>(spec, 0);
    load_store(art.model->ps, weights);
    art.class_of_label = sc.at("class_of_label").get<std::vector<int>>();
    art.digest = file_digest(weights);
    art.train_accuracy = sc.at("train_accuracy").get<double>();
    if (sc.contains("checkpoints"))
      for (auto& [epoch, file] : sc.at("checkpoints").items())
        art.checkpoint_files[std::stoi(epoch)] = dir / file.get<std::string>();
    return art;
  };
  const std::string digest = stage_digest(cfg, "train-" + role);
  if (stage_current(sidecar, digest)) return assemble();

  DatasetManifest splits = stage_ingest(cfg, out);
  LabeledBatchSource train = load_records(splits.with_tag("pri_train"), cfg.side);
  ClassifierSpec spec{arch, cfg.side, int(train.class_of_label.size())};
  TrainResult tr = train_classifier(train, spec, tcfg);

  save_store(tr.model->ps, weights);
  std::vector<fs::path> artifacts{weights};
  json checkpoints = json::object();
  for (const auto& [epoch, snap] : tr.checkpoints) {
    Classifier frozen(spec, 0);
    restore_params(frozen.ps, snap);
    fs::path p = dir / ("checkpoint_" + std::to_string(epoch) + ".weights");
    save_store(frozen.ps, p);
    checkpoints[std::to_string(epoch)] = p.filename().string();
    artifacts.push_back(p);
  }

  write_stage_sidecar(sidecar, "train-" + role, digest, cfg.seed,
                      {{"arch", arch},
                       {"num_classes", spec.num_classes},
                       {"class_of_label", train.class_of_label},
                       {"epochs", tcfg.epochs},
                       {"train_accuracy", tr.train_accuracy},
                       {"checkpoints", checkpoints}},
                      artifacts);
  return assemble();
}

// ---------- attack ----------

struct RecoveredLine {
  std::string image_id;
  int label_used = 0;
  std::string label_source, setting;
  double confidence = 0.0;
  std::string z_digest;
  std::string output_path;
};

inline void save_recovered_manifest(const fs::path& p, const std::vector<RecoveredLine>& lines) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << std::setprecision(12);
  for (const auto& l : lines)
    os << l.image_id << ", " << l.label_used << ", " << l.label_source << ", " << l.setting
       << ", " << l.confidence << ", " << l.z_digest << ", " << l.output_path << "\n";
}

inline std::vector<RecoveredLine> load_recovered_manifest(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw validation_error("cannot read recovered manifest: " + p.string());
  std::vector<RecoveredLine> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    RecoveredLine l;
    std::string field;
    auto next = [&](std::string& dst) {
      if (!std::getline(ss, field, ','))
        throw validation_error("malformed recovered manifest line: " + line);
      auto b = field.find_first_not_of(" \t");
      auto e = field.find_last_not_of(" \t");
      dst = (b == std::string::npos) ? "" : field.substr(b, e - b + 1);
    };
    std::string label, conf;
    next(l.image_id);
    next(label);
    next(l.label_source);
    next(l.setting);
    next(conf);
    next(l.z_digest);
    next(l.output_path);
    l.label_used = std::stoi(label);
    l.confidence = std::stod(conf);
    out.push_back(std::move(l));
  }
  return out;
}

inline std::string attack_tag(const ExperimentConfig& cfg, const std::string& method) {
  std::string m = method;
  if (method == "secretgen" && cfg.label_source == "ground_truth") m += "_gt";
  return cfg.mask_type + "_" + cfg.setting + "_" + m;
}

struct AttackResult {
  std::string tag;
  fs::path manifest;
  std::vector<RecoveredLine> lines;
};

inline AttackResult stage_attack(const ExperimentConfig& cfg, const RunLayout& out,
                                 const std::string& method, bool resume = false) {
  cfg.validate();
  if (method != "secretgen" && method != "gmi" && method != "pii")
    throw validation_error("unknown attack method: " + method);
  if (method == "gmi" && cfg.setting != "whitebox")
    throw validation_error("gmi does not support the blackbox setting");

  AttackResult res;
  res.tag = attack_tag(cfg, method);
  const fs::path dir = out.attack_dir(res.tag);
  const fs::path sidecar = dir / "attack.json";
  res.manifest = dir / "recovered.manifest";
  const std::string digest = stage_digest(cfg, "attack");
  if (stage_current(sidecar, digest)) {
    res.lines = load_recovered_manifest(res.manifest);
    return res;
  }

  DatasetManifest splits = stage_ingest(cfg, out);
  std::vector<ManifestRecord> records = splits.with_tag("pri_train");
  if (cfg.max_images > 0 && int(records.size()) > cfg.max_images)
    records.resize(std::size_t(cfg.max_images));
  std::vector<int> mapping = pri_identity_mapping(splits);

  const bool needs_gt = method == "gmi" ||
                        (method == "secretgen" && cfg.label_source == "ground_truth");
  if (needs_gt)  // reject before any training or loading happens
    for (const auto& r : records)
      if (r.identity_label < 1 ||
          !std::binary_search(mapping.begin(), mapping.end(), r.identity_label))
        throw validation_error("ground-truth attack requires labeled private records");

  BackboneArtifacts bb = stage_train_backbone(cfg, out);
  ClassifierArtifacts target = stage_train_classifier(cfg, out, "target");
  AccessMode mode =
      cfg.setting == "whitebox" ? AccessMode::whitebox : AccessMode::blackbox;
  if (method == "gmi") mode = AccessMode::whitebox;
  auto target_model = target.model;
  ModelHandle F(target_model, mode);

  CorruptionMask mask = cfg.make_mask();
  TransformList transforms = cfg.make_transforms();
  fs::create_directories(dir / "images");

  std::set<std::string> done;
  std::map<std::string, RecoveredLine> previous;
  if (resume && fs::exists(res.manifest))
    for (auto& l : load_recovered_manifest(res.manifest)) {
      done.insert(l.image_id);
      previous[l.image_id] = l;
    }

  std::vector<RecoveredLine> lines(records.size());
  std::atomic<std::uint64_t> total_queries{0};
  auto attack_one = [&](std::size_t i) {
    const ManifestRecord& r = records[i];
    const std::string id = image_id_of(r.image_path);
    if (done.count(id)) {
      lines[i] = previous.at(id);
      return;
    }
    ImageTensor x = load_image(r.image_path, cfg.side);
    ImageTensor x_ns = apply_corruption(x, mask);
    std::uint64_t seed_i = derive_seed(cfg.seed, id);

    RecoveredRecord rec;
    if (method == "secretgen") {
      RecoverOptions o;
      o.setting = cfg.setting;
      o.label_source = cfg.label_source;
      o.gt_label = cfg.label_source == "ground_truth"
                       ? class_of_identity(mapping, r.identity_label)
                       : 0;
      o.n = cfg.n;
      o.seed = seed_i;
      o.opt = cfg.optimize;
      o.reuse_bank = cfg.reuse_bank;
      rec = recover(*bb.G, *bb.D, F, x_ns, mask, transforms, o);
    } else if (method == "gmi") {
      rec = gmi_recover(*bb.G, *bb.D, F, x_ns, mask,
                        class_of_identity(mapping, r.identity_label), cfg.optimize, seed_i);
    } else {
      rec = pii_recover(*bb.G, *bb.D, F, x_ns, mask, cfg.optimize, seed_i);
    }
    total_queries.fetch_add(rec.queries);

    fs::path img_path = dir / "images" / (id + ".png");
    save_image(rec.x_rec, img_path.string());
    RecoveredLine l;
    l.image_id = id;
    l.label_used = rec.label_used;
    l.label_source = rec.label_source;
    l.setting = rec.setting;
    l.confidence = rec.confidence;
    l.z_digest = hex64(
        fnv1a(rec.z_star.data(), sizeof(double) * std::size_t(rec.z_star.size())));
    l.output_path = img_path.string();
    lines[i] = std::move(l);
  };
  auto t0 = std::chrono::steady_clock::now();
  run_parallel(records.size(), cfg.workers, attack_one);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_recovered_manifest(res.manifest, lines);
  write_stage_sidecar(sidecar, "attack", digest, cfg.seed,
                      {{"method", method},
                       {"setting", cfg.setting},
                       {"label_source", cfg.label_source},
                       {"mask_type", cfg.mask_type},
                       {"images", lines.size()},
                       {"backbone_digest", bb.digest},
                       {"target_digest", target.digest},
                       {"queries_this_run", total_queries.load()},
                       {"wall_seconds", wall}},
                      {res.manifest});
  res.lines = std::move(lines);
  return res;
}

// ---------- evaluate ----------

inline MetricsReport stage_evaluate(const ExperimentConfig& cfg, const RunLayout& out,
                                    const std::string& method) {
  cfg.validate();
  const std::string tag = attack_tag(cfg, method);
  const fs::path dir = out.attack_dir(tag);
  const fs::path attack_sidecar = dir / "attack.json";
  if (!fs::exists(attack_sidecar))
    throw validation_error("evaluate: attack stage has not run for " + tag);
  json asc = read_json_file(attack_sidecar);
  std::vector<RecoveredLine> lines = load_recovered_manifest(dir / "recovered.manifest");
  if (lines.empty()) throw validation_error("evaluate: empty recovered manifest");

  DatasetManifest splits = stage_ingest(cfg, out);
  std::vector<int> mapping = pri_identity_mapping(splits);
  std::map<std::string, const ManifestRecord*> pri_train;
  for (const auto& r : splits.records)
    if (r.split_tag == "pri_train") pri_train[image_id_of(r.image_path)] = &r;

  ClassifierArtifacts target = stage_train_classifier(cfg, out, "target");
  ClassifierArtifacts eval_model = stage_train_classifier(cfg, out, "eval");

  const Eigen::Index px = Eigen::Index(3) * cfg.side * cfg.side;
  Mat recovered(px, Eigen::Index(lines.size()));
  std::vector<int> true_classes, labels_used;
  double psnr_sum = 0.0;
  int label_hits = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    auto it = pri_train.find(l.image_id);
    if (it == pri_train.end())
      throw validation_error("evaluate: recovered image_id not in pri_train: " + l.image_id);
    ImageTensor rec = load_image(l.output_path, cfg.side);
    ImageTensor orig = load_image(it->second->image_path, cfg.side);
    recovered.col(Eigen::Index(i)) = rec.values;
    int truth = class_of_identity(mapping, it->second->identity_label);
    true_classes.push_back(truth);
    labels_used.push_back(l.label_used);
    label_hits += (l.label_used == truth);
    psnr_sum += psnr(orig, rec);
  }

  MetricsReport report;
  report.method = asc.value("method", method);
  report.setting = asc.value("setting", cfg.setting);
  report.label_source = asc.value("label_source", cfg.label_source);
  report.mask_type = cfg.mask_type;
  report.n = cfg.n;
  report.m = cfg.m();
  report.seed = cfg.seed;
  report.backbone_digest = asc.value("backbone_digest", std::string());
  report.target_digest = asc.value("target_digest", std::string());
  report.config_digest = cfg.digest();
  report.protocol1_acc = protocol1(*eval_model.model, recovered, true_classes);
  report.mean_psnr = psnr_sum / double(lines.size());
  report.label_pred_acc = double(label_hits) / double(lines.size());

  std::vector<std::string> warnings;
  if (lines.size() < pri_train.size()) {
    warnings.push_back("protocol 2 skipped: attack did not cover the full private train set");
  } else if (lines.size() < 5) {
    warnings.push_back("protocol 2 skipped: fewer than 5 recoveries");
  } else {
    LabeledBatchSource test = load_records(splits.with_tag("pri_test"), cfg.side);
    std::vector<int> test_classes;
    for (int y : test.labels) test_classes.push_back(y + 1);
    ClassifierSpec p2_spec{cfg.target_arch, cfg.side, int(mapping.size())};
    TrainConfig p2_cfg = cfg.target_train;
    p2_cfg.checkpoint_epochs.clear();
    p2_cfg.seed = derive_seed(cfg.seed, "protocol2");
    Protocol2Result p2 =
        protocol2(recovered, labels_used, test.images, test_classes, p2_spec, p2_cfg);
    report.protocol2_acc = p2.test_accuracy;
    report.protocol2_valid_acc = p2.valid_accuracy;
    if (!p2.missing_classes.empty())
      warnings.push_back("protocol 2: " + std::to_string(p2.missing_classes.size()) +
                         " classes absent from the recovered train split");
  }

  json rj = report.to_json();
  rj["warnings"] = warnings;
  write_json_file(out.reports_dir() / ("evaluate_" + tag + ".json"), rj);
  return report;
}

// ---------- bench ----------

inline json stage_bench(const ExperimentConfig& base, const RunLayout& out,
                        bool resume = false) {
  base.validate();
  json table = {{"schema_version", 1}, {"config_digest", base.digest()}, {"table", json::object()}};
  struct Row {
    const char* label;
    const char* method;
    const char* label_source;
  };
  const std::vector<Row> whitebox_rows = {{"PII", "pii", "pseudo"},
                                          {"GMI", "gmi", "ground_truth"},
                                          {"SecretGen", "secretgen", "pseudo"},
                                          {"SecretGen (GT)", "secretgen", "ground_truth"}};
  const std::vector<Row> blackbox_rows = {{"PII", "pii", "pseudo"},
                                          {"SecretGen", "secretgen", "pseudo"},
                                          {"SecretGen (GT)", "secretgen", "ground_truth"}};

  for (const std::string mask : {"center", "face_t"}) {
    for (const std::string setting : {"whitebox", "blackbox"}) {
      // GMI is whitebox-only: it needs gradients of the target model
      const auto& rows = setting == "whitebox" ? whitebox_rows : blackbox_rows;
      for (const Row& row : rows) {
        ExperimentConfig cfg = base;
        cfg.mask_type = mask;
        cfg.setting = setting;
        cfg.label_source = row.label_source;
        stage_attack(cfg, out, row.method, resume);
        MetricsReport rep = stage_evaluate(cfg, out, row.method);
        table["table"][mask][setting][row.label] = rep.to_json();
      }
    }
  }
  write_json_file(out.reports_dir() / "bench.json", table);
  return table;
}

// ---------- sweeps ----------

inline std::vector<AttackTarget> load_attack_targets(const ExperimentConfig& cfg,
                                                     const DatasetManifest& splits,
                                                     const CorruptionMask& mask) {
  std::vector<ManifestRecord> records = splits.with_tag("pri_train");
  if (cfg.max_images > 0 && int(records.size()) > cfg.max_images)
    records.resize(std::size_t(cfg.max_images));
  std::vector<int> mapping = pri_identity_mapping(splits);
  std::vector<AttackTarget> targets;
  for (const auto& r : records) {
    AttackTarget t;
    t.image_id = image_id_of(r.image_path);
    t.original = load_image(r.image_path, cfg.side);
    t.x_ns = apply_corruption(t.original, mask);
    t.true_class = class_of_identity(mapping, r.identity_label);
    targets.push_back(std::move(t));
  }
  return targets;
}

inline std::vector<AblationRow> stage_ablate(const ExperimentConfig& cfg, const RunLayout& out) {
  cfg.validate();
  DatasetManifest splits = stage_ingest(cfg, out);
  BackboneArtifacts bb = stage_train_backbone(cfg, out);
  ClassifierArtifacts target = stage_train_classifier(cfg, out, "target");
  CorruptionMask mask = cfg.make_mask();
  std::vector<AttackTarget> targets = load_attack_targets(cfg, splits, mask);
  ModelHandle F(target.model, AccessMode::blackbox);

  AblationConfig acfg;
  acfg.m_values = cfg.ablation_m;
  acfg.n_values = cfg.ablation_n;
  acfg.n_default = cfg.n;
  acfg.seed = derive_seed(cfg.seed, "ablate");
  std::vector<AblationRow> rows = ablation_suite(*bb.G, F, mask, targets, acfg);

  json jrows = json::array();
  for (const auto& r : rows)
    jrows.push_back({{"family", r.family},
                     {"m", r.m},
                     {"n", r.n},
                     {"metric", r.transformed_metric ? "M" : "M_simplified"},
                     {"label_pred_acc", r.label_pred_acc},
                     {"predictor_seconds_per_image", r.predictor_seconds_per_image}});
  write_json_file(out.reports_dir() / "ablation.json",
                  {{"schema_version", 1},
                   {"config_digest", cfg.digest()},
                   {"backbone_digest", bb.digest},
                   {"target_digest", target.digest},
                   {"rows", jrows}});
  return rows;
}

inline std::vector<std::pair<int, double>> stage_overfit_sweep(const ExperimentConfig& cfg,
                                                               const RunLayout& out) {
  cfg.validate();
  DatasetManifest splits = stage_ingest(cfg, out);
  BackboneArtifacts bb = stage_train_backbone(cfg, out);
  ClassifierArtifacts target = stage_train_classifier(cfg, out, "target");
  if (target.checkpoint_files.empty())
    throw validation_error("overfit sweep: target was trained without checkpoint epochs");

  ClassifierSpec spec{cfg.target_arch, cfg.side, int(target.class_of_label.size())};
  std::map<int, std::vector<Mat>> checkpoints;
  for (const auto& [epoch, path] : target.checkpoint_files) {
    Classifier snap(spec, 0);
    load_store(snap.ps, path);
    snapshot_params(snap.ps, checkpoints[epoch]);
  }

  CorruptionMask mask = cfg.make_mask();
  std::vector<AttackTarget> targets = load_attack_targets(cfg, splits, mask);
  auto curve = overfitting_sweep(checkpoints, spec, *bb.G, mask, targets,
                                 cfg.make_transforms(), cfg.n,
                                 derive_seed(cfg.seed, "overfit"));
  write_curve_file(out.reports_dir() / "overfit_curve.txt", curve, cfg.seed);
  return curve;
}

}  // namespace secretgen
