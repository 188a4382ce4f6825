#include <catch2/catch_amalgamated.hpp>

#include "secretgen/baselines.hpp"

using namespace secretgen;
using ag::Mat;

namespace {
struct TinyWorld {
  BackboneConfig cfg;
  Generator G;
  Critic D;
  ImageTensor x_ns;
  CorruptionMask mask;

  TinyWorld()
      : cfg(make_cfg()), G(cfg, 3), D(cfg, 4), x_ns(8, 8, 3), mask(make_center_mask(8, 8, 0.5)) {
    Rng rng(9);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (Eigen::Index i = 0; i < x_ns.values.size(); ++i) x_ns.values[i] = uni(rng);
    x_ns = apply_corruption(x_ns, mask);
  }
  static BackboneConfig make_cfg() {
    BackboneConfig c;
    c.side = 8;
    c.d_z = 4;
    c.gen_ch = 2;
    c.z_ch = 2;
    c.critic_ch = 2;
    return c;
  }
};

ModelHandle tiny_model(int C, std::uint64_t seed, AccessMode mode) {
  return ModelHandle(std::make_shared<Classifier>(ClassifierSpec{"cnn_a", 8, C}, seed), mode);
}
}  // namespace

TEST_CASE("pii recovery") {
  TinyWorld w;
  ModelHandle F = tiny_model(3, 7, AccessMode::blackbox);

  SECTION("only the post-hoc label query touches the target model") {
    F.reset_queries();
    OptimizeConfig opt;
    opt.iterations = 10;
    RecoveredRecord rec = pii_recover(w.G, w.D, F, w.x_ns, w.mask, opt, 5);
    CHECK(F.query_count() == 1);
    CHECK(rec.label_used >= 1);
    CHECK(rec.confidence > 0.0);
  }
  SECTION("zero iterations returns the composited initial generation") {
    OptimizeConfig opt;
    opt.iterations = 0;
    RecoveredRecord rec = pii_recover(w.G, w.D, F, w.x_ns, w.mask, opt, 5);
    Rng rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z0(4);
    for (int i = 0; i < 4; ++i) z0[i] = gauss(rng);
    CHECK(rec.x_rec.values == generate(w.G, z0, w.x_ns, w.mask).values);
  }
}

TEST_CASE("gmi recovery") {
  TinyWorld w;
  ModelHandle F = tiny_model(3, 7, AccessMode::whitebox);

  SECTION("requires whitebox access and a label") {
    ModelHandle bb = tiny_model(3, 7, AccessMode::blackbox);
    OptimizeConfig opt;
    CHECK_THROWS_AS(gmi_recover(w.G, w.D, bb, w.x_ns, w.mask, 1, opt, 5), capability_error);
    CHECK_THROWS_AS(gmi_recover(w.G, w.D, F, w.x_ns, w.mask, 0, opt, 5), validation_error);
  }
  SECTION("lambda_id = 0 reduces GMI to PII up to the label field") {
    OptimizeConfig opt;
    opt.iterations = 8;
    opt.lambda_id = 0.0;
    RecoveredRecord gmi = gmi_recover(w.G, w.D, F, w.x_ns, w.mask, 2, opt, 11);
    RecoveredRecord pii = pii_recover(w.G, w.D, F, w.x_ns, w.mask, opt, 11);
    CHECK(gmi.z_star == pii.z_star);
    CHECK(gmi.x_rec.values == pii.x_rec.values);
    CHECK(gmi.label_used == 2);
    CHECK(gmi.label_source == "ground_truth");
  }
  SECTION("zero iterations equals PII-with-zero-iterations up to the label") {
    OptimizeConfig opt;
    opt.iterations = 0;
    RecoveredRecord gmi = gmi_recover(w.G, w.D, F, w.x_ns, w.mask, 1, opt, 13);
    RecoveredRecord pii = pii_recover(w.G, w.D, F, w.x_ns, w.mask, opt, 13);
    CHECK(gmi.x_rec.values == pii.x_rec.values);
  }
  SECTION("identical trajectory to SecretGen optimization from the same init") {
    OptimizeConfig opt;
    opt.iterations = 6;
    Rng rng(21);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z0(4);
    for (int i = 0; i < 4; ++i) z0[i] = gauss(rng);
    RecoveredRecord gmi = gmi_recover(w.G, w.D, F, w.x_ns, w.mask, 2, opt, 21);
    Eigen::VectorXd direct = optimize_whitebox(z0, w.x_ns, w.mask, 2, F, w.G, w.D, opt);
    CHECK(gmi.z_star == direct);
  }
}
