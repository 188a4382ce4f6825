// secretgen: model-inversion attack experiment runner.
//
// Subcommands cover the full experiment lifecycle: data ingestion, backbone
// and classifier training, attacks (secretgen / gmi / pii), evaluation, the
// full benchmark table, and the ablation / overfitting sweeps.
//
// Exit statuses: 0 success, 1 validation error, 2 runtime failure,
// 3 artifact integrity error.

#include <CLI11.hpp>
#include <iostream>

#include "secretgen/pipeline.hpp"

using namespace secretgen;

int main(int argc, char** argv) {
  CLI::App app{"secretgen: model inversion attack experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::string method = "secretgen";
  std::uint64_t seed = 0;
  int workers = 0;
  bool resume = false;
  bool seed_given = false, workers_given = false, output_given = false;

  app.add_option("--config", config_path, "experiment config file (JSON)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the global seed")
      ->each([&](const std::string&) { seed_given = true; });
  app.add_option("--workers", workers, "override the worker-pool size")
      ->each([&](const std::string&) { workers_given = true; });
  app.add_option("--output", output_dir, "override the output root directory")
      ->each([&](const std::string&) { output_given = true; });
  app.add_flag("--resume", resume, "skip work whose artifacts already exist");

  auto* ingest = app.add_subcommand("ingest", "generate/load the corpus and build splits");
  auto* train_backbone =
      app.add_subcommand("train-backbone", "train the conditional inpainting backbone");
  auto* train_target = app.add_subcommand("train-target", "train the target classifier");
  auto* train_eval = app.add_subcommand("train-eval", "train the evaluation classifier");
  auto* attack = app.add_subcommand("attack", "recover sensitive regions of private images");
  auto* evaluate = app.add_subcommand("evaluate", "score a finished attack");
  auto* bench = app.add_subcommand("bench", "full method x setting x mask comparison table");
  auto* ablate = app.add_subcommand("ablate", "transformation / metric / n ablations");
  auto* overfit = app.add_subcommand("overfit-sweep",
                                     "pseudo-label accuracy across target checkpoints");
  for (auto* sub : {attack, evaluate})
    sub->add_option("--method", method, "secretgen | gmi | pii")->capture_default_str();
  // let global flags (--config, --seed, ...) appear after the subcommand name
  for (auto* sub : {ingest, train_backbone, train_target, train_eval, attack, evaluate, bench,
                    ablate, overfit})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = ExperimentConfig::load(config_path);
    apply_env_overrides(cfg);
    if (seed_given) cfg.seed = seed;
    if (workers_given) cfg.workers = workers;
    if (output_given) cfg.output_root = output_dir;
    cfg.validate();
    RunLayout out(cfg.output_root);

    if (ingest->parsed()) {
      DatasetManifest splits = stage_ingest(cfg, out);
      std::cout << "splits: " << splits.records.size() << " records, "
                << splits.num_classes << " private classes -> "
                << out.splits_manifest().string() << "\n";
    } else if (train_backbone->parsed()) {
      BackboneArtifacts bb = stage_train_backbone(cfg, out);
      std::cout << "backbone ready, digest " << bb.digest << "\n";
    } else if (train_target->parsed()) {
      ClassifierArtifacts t = stage_train_classifier(cfg, out, "target");
      std::cout << "target ready, digest " << t.digest << ", train accuracy "
                << t.train_accuracy << "\n";
    } else if (train_eval->parsed()) {
      ClassifierArtifacts e = stage_train_classifier(cfg, out, "eval");
      std::cout << "eval model ready, digest " << e.digest << ", train accuracy "
                << e.train_accuracy << "\n";
    } else if (attack->parsed()) {
      AttackResult r = stage_attack(cfg, out, method, resume);
      std::cout << "attacked " << r.lines.size() << " images -> " << r.manifest.string()
                << "\n";
    } else if (evaluate->parsed()) {
      MetricsReport rep = stage_evaluate(cfg, out, method);
      std::cout << rep.to_json().dump(2) << "\n";
    } else if (bench->parsed()) {
      json table = stage_bench(cfg, out, resume);
      std::cout << table.dump(2) << "\n";
    } else if (ablate->parsed()) {
      auto rows = stage_ablate(cfg, out);
      for (const auto& r : rows)
        std::cout << r.family << ", m=" << r.m << ", n=" << r.n << ", "
                  << (r.transformed_metric ? "M" : "M'") << ": acc " << r.label_pred_acc
                  << "\n";
    } else if (overfit->parsed()) {
      auto curve = stage_overfit_sweep(cfg, out);
      for (const auto& [epoch, acc] : curve)
        std::cout << "epoch " << epoch << ": pseudo-label accuracy " << acc << "\n";
    }
  } catch (const integrity_error& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const validation_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const capability_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
