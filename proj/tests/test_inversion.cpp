#include <catch2/catch_amalgamated.hpp>

#include "secretgen/inversion.hpp"

using namespace secretgen;
using ag::Mat;
using ag::Var;

namespace {

// Random bank with valid simplex predictions; the independent oracle below
// recomputes the metrics by brute force.
LatentBank random_bank(int n, int m, int C, int d_z, Rng& rng) {
  LatentBank bank;
  bank.n = n;
  bank.m = m;
  bank.latents = nn::randn(d_z, n, rng, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Mat p(C, m + 1);
    for (int j = 0; j <= m; ++j) {
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        p(c, j) = -std::log(uni(rng) + 1e-12);
        sum += p(c, j);
      }
      p.col(j) /= sum;
    }
    bank.preds.push_back(p);
  }
  return bank;
}

double brute_force_metric(const LatentBank& bank, int c) {
  double sum = 0.0;
  long count = 0;
  for (const auto& p : bank.preds)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      sum += p(c - 1, j);
      ++count;
    }
  return sum / double(count);
}

double brute_force_simplified(const LatentBank& bank, int c) {
  double sum = 0.0;
  for (const auto& p : bank.preds) sum += p(c - 1, 0);
  return sum / double(bank.n);
}

// Exhaustive filter-then-argmax reference for the selector.
Eigen::VectorXd brute_force_select(const LatentBank& bank, int y, Rng& fallback_rng) {
  std::vector<int> qualifying;
  for (int i = 0; i < bank.n; ++i) {
    const auto col = bank.preds[std::size_t(i)].col(0);
    int arg = 0;
    for (Eigen::Index c = 1; c < col.size(); ++c)
      if (col(c) > col(arg)) arg = int(c);
    if (arg == y - 1) qualifying.push_back(i);
  }
  if (qualifying.empty()) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd z(bank.latents.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(fallback_rng);
    return z;
  }
  int best = qualifying[0];
  for (int i : qualifying)
    if (bank.preds[std::size_t(i)](y - 1, 0) > bank.preds[std::size_t(best)](y - 1, 0)) best = i;
  return bank.latents.col(best);
}

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

ModelHandle tiny_model(int side, int C, std::uint64_t seed, AccessMode mode) {
  return ModelHandle(std::make_shared<Classifier>(ClassifierSpec{"cnn_a", side, C}, seed), mode);
}

}  // namespace

TEST_CASE("discrimination metric equals brute force on random banks") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> nd(1, 8), md(0, 5), cd(1, 6);
    LatentBank bank = random_bank(nd(rng), md(rng), cd(rng), 4, rng);
    const int C = int(bank.preds[0].rows());
    double total = 0.0, total_s = 0.0;
    for (int c = 1; c <= C; ++c) {
      REQUIRE(std::abs(discrimination_metric(bank, c) - brute_force_metric(bank, c)) < 1e-6);
      REQUIRE(std::abs(simplified_metric(bank, c) - brute_force_simplified(bank, c)) < 1e-6);
      total += discrimination_metric(bank, c);
      total_s += simplified_metric(bank, c);
    }
    REQUIRE(std::abs(total - 1.0) < 1e-5);    // mean of simplexes is a simplex
    REQUIRE(std::abs(total_s - 1.0) < 1e-5);
  }
}

TEST_CASE("metric hand examples") {
  LatentBank bank;
  bank.n = 1;
  bank.m = 1;
  bank.latents = Mat::Zero(4, 1);
  Mat p(2, 2);
  p << 0.6, 0.2, 0.4, 0.8;
  bank.preds.push_back(p);
  CHECK(discrimination_metric(bank, 1) == Catch::Approx(0.4));
  CHECK(discrimination_metric(bank, 2) == Catch::Approx(0.6));
  CHECK_THROWS_AS(discrimination_metric(bank, 0), validation_error);
  CHECK_THROWS_AS(discrimination_metric(bank, 3), validation_error);

  LatentBank b2;
  b2.n = 2;
  b2.m = 0;
  b2.latents = Mat::Zero(4, 2);
  Mat q1(2, 1), q2(2, 1);
  q1 << 0.9, 0.1;
  q2 << 0.5, 0.5;
  b2.preds = {q1, q2};
  CHECK(simplified_metric(b2, 1) == Catch::Approx(0.7));

  // m = 0 makes both metrics coincide
  CHECK(discrimination_metric(b2, 1) == Catch::Approx(simplified_metric(b2, 1)));
}

TEST_CASE("pseudo label prediction") {
  SECTION("argmax of the mean prediction") {
    LatentBank bank;
    bank.n = 1;
    bank.m = 0;
    bank.latents = Mat::Zero(2, 1);
    Mat p(3, 1);
    p << 0.1, 0.7, 0.2;
    bank.preds.push_back(p);
    CHECK(predict_pseudo_label(bank) == 2);
  }
  SECTION("exact tie breaks toward the lowest class") {
    LatentBank bank;
    bank.n = 1;
    bank.m = 0;
    bank.latents = Mat::Zero(2, 1);
    Mat p(2, 1);
    p << 0.5, 0.5;
    bank.preds.push_back(p);
    CHECK(predict_pseudo_label(bank) == 1);
  }
  SECTION("single class degenerate case") {
    LatentBank bank;
    bank.n = 1;
    bank.m = 0;
    bank.latents = Mat::Zero(2, 1);
    bank.preds.push_back(Mat::Ones(1, 1));
    CHECK(predict_pseudo_label(bank) == 1);
  }
  SECTION("invariant under uniform positive rescaling of confidences") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      LatentBank bank = random_bank(5, 3, 4, 4, rng);
      int before = predict_pseudo_label(bank);
      std::uniform_real_distribution<double> sd(0.1, 10.0);
      double s = sd(rng);
      for (auto& p : bank.preds) p *= s;
      CHECK(predict_pseudo_label(bank) == before);
    }
  }
}

TEST_CASE("selector matches exhaustive scan on 1000 random banks") {
  Rng rng(3);
  int fallbacks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> nd(1, 10), md(0, 2), cd(2, 5);
    int C = cd(rng);
    LatentBank bank = random_bank(nd(rng), md(rng), C, 4, rng);
    std::uniform_int_distribution<int> yd(1, C);
    int y = yd(rng);
    Rng r1{std::uint64_t(trial)};
    Rng r2{std::uint64_t(trial)};
    Eigen::VectorXd got = select_latent(bank, y, r1);
    Eigen::VectorXd want = brute_force_select(bank, y, r2);
    REQUIRE(got == want);
    bool in_bank = false;
    for (int i = 0; i < bank.n; ++i)
      if (got == bank.latents.col(i)) in_bank = true;
    if (!in_bank) ++fallbacks;
  }
  CHECK(fallbacks > 0);  // fallback path exercised
}

TEST_CASE("selector fallback is deterministic per seed stream") {
  LatentBank bank;
  bank.n = 1;
  bank.m = 0;
  bank.latents = Mat::Zero(4, 1);
  Mat p(2, 1);
  p << 0.9, 0.1;  // entry predicted as class 1
  bank.preds.push_back(p);
  Rng a(42), b(42);
  CHECK(select_latent(bank, 2, a) == select_latent(bank, 2, b));
  Rng c(42);
  CHECK(select_latent(bank, 1, c) == bank.latents.col(0));  // singleton filter
}

TEST_CASE("bank building: counts, determinism, minimal case") {
  TinyWorld w;
  ModelHandle F = tiny_model(8, 3, 7, AccessMode::blackbox);
  TransformList cutouts = sequential_cutout(8, 4);  // m = 4

  F.reset_queries();
  LatentBank bank = build_bank(w.G, F, w.x_ns, w.mask, cutouts, 6, 99);
  CHECK(F.query_count() == 6 * 5);  // n (m + 1)
  CHECK(bank.preds.size() == 6);
  CHECK(bank.preds[0].cols() == 5);
  for (auto& p : bank.preds)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      REQUIRE(p.col(j).sum() == Catch::Approx(1.0).margin(1e-5));

  LatentBank again = build_bank(w.G, F, w.x_ns, w.mask, cutouts, 6, 99);
  CHECK(bank.latents == again.latents);
  CHECK(bank.recoveries == again.recoveries);

  TransformList none = ablation_family("none");
  LatentBank minimal = build_bank(w.G, F, w.x_ns, w.mask, none, 1, 1);
  CHECK(minimal.preds.size() == 1);
  CHECK(minimal.preds[0].cols() == 1);
  CHECK_THROWS_AS(build_bank(w.G, F, w.x_ns, w.mask, none, 0, 1), validation_error);
}

TEST_CASE("identity loss closed forms") {
  TinyWorld w;
  auto model = std::make_shared<Classifier>(ClassifierSpec{"cnn_a", 8, 2}, 1);
  model->head.W->val.setZero();
  ModelHandle F(model, AccessMode::whitebox);
  Var z = ag::constant(Mat(Mat::Zero(4, 1)));

  SECTION("F_c = 1 gives zero loss") {
    model->head.b->val << 60.0, -60.0;  // softmax saturates to (1, 0)
    double loss = identity_loss(F, w.G, z, w.x_ns, w.mask, 1)->val(0, 0);
    CHECK(loss == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("F_c = 0.1 gives -ln 0.1") {
    model->head.b->val << std::log(0.1), std::log(0.9);
    double loss = identity_loss(F, w.G, z, w.x_ns, w.mask, 1)->val(0, 0);
    CHECK(loss == Catch::Approx(-std::log(0.1)).epsilon(1e-9));
    CHECK(loss == Catch::Approx(2.302585).epsilon(1e-5));
  }
  SECTION("F_c = 0 is floored at 1e-12") {
    model->head.b->val << -800.0, 800.0;  // exp(-1600) underflows to exactly 0
    double loss = identity_loss(F, w.G, z, w.x_ns, w.mask, 1)->val(0, 0);
    CHECK(loss == Catch::Approx(-std::log(1e-12)).epsilon(1e-9));
  }
  SECTION("blackbox handle rejected") {
    ModelHandle bb(model, AccessMode::blackbox);
    CHECK_THROWS_AS(identity_loss(bb, w.G, z, w.x_ns, w.mask, 1), capability_error);
  }
}

TEST_CASE("disc loss stubs and arithmetic") {
  TinyWorld w;
  Var z = ag::constant(Mat(Mat::Zero(4, 1)));

  ScoreFn const5 = [](const Var& x) {
    return ag::constant(Mat(Mat::Constant(1, x->val.cols(), 5.0)));
  };
  CHECK(disc_loss(const5, w.G, z, w.x_ns, w.mask)->val(0, 0) == Catch::Approx(-5.0));

  ScoreFn const0 = [](const Var& x) {
    return ag::constant(Mat(Mat::Zero(1, x->val.cols())));
  };
  CHECK(disc_loss(const0, w.G, z, w.x_ns, w.mask)->val(0, 0) == Catch::Approx(0.0));

  ScoreFn meanfn = [](const Var& x) { return ag::scale(ag::col_sum(x), 1.0 / double(x->val.rows())); };
  ImageTensor rec = generate(w.G, Eigen::VectorXd::Zero(4), w.x_ns, w.mask);
  CHECK(disc_loss(meanfn, w.G, z, w.x_ns, w.mask)->val(0, 0) ==
        Catch::Approx(-rec.values.mean()).epsilon(1e-12));
}

TEST_CASE("whitebox objective gradient matches finite differences") {
  TinyWorld w;
  ModelHandle F = tiny_model(8, 3, 11, AccessMode::whitebox);
  OptimizeConfig cfg;
  cfg.lambda_id = 100.0;

  auto objective = [&](const Var& zv) {
    return ag::add(disc_loss(w.D, w.G, zv, w.x_ns, w.mask),
                   ag::scale(identity_loss(F, w.G, zv, w.x_ns, w.mask, 2), cfg.lambda_id));
  };
  Rng rng(13);
  for (int pt = 0; pt < 5; ++pt) {
    Eigen::VectorXd z = nn::randn(4, 1, rng, 1.0).col(0);
    Var zv = ag::leaf(Mat(z));
    Eigen::VectorXd grad = ag::gradients(objective(zv), {zv})[0]->val.col(0);
    Eigen::VectorXd fd(4);
    const double h = 1e-5;
    for (int i = 0; i < 4; ++i) {
      Eigen::VectorXd zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      fd[i] = (objective(ag::constant(Mat(zp)))->val(0, 0) -
               objective(ag::constant(Mat(zm)))->val(0, 0)) /
              (2 * h);
    }
    REQUIRE((grad - fd).norm() / std::max(1e-12, fd.norm()) < 1e-3);
  }
}

TEST_CASE("latent optimization") {
  TinyWorld w;
  ModelHandle F = tiny_model(8, 3, 5, AccessMode::whitebox);
  Eigen::VectorXd z0 = sample_latent(1, 4, 12).col(0);

  SECTION("zero iterations are a no-op") {
    OptimizeConfig cfg;
    cfg.iterations = 0;
    CHECK(optimize_whitebox(z0, w.x_ns, w.mask, 1, F, w.G, w.D, cfg) == z0);
    CHECK(optimize_blackbox(z0, w.x_ns, w.mask, w.G, w.D, cfg) == z0);
  }
  SECTION("whitebox descent reduces the combined loss (5 seeds)") {
    OptimizeConfig cfg;
    cfg.iterations = 50;
    cfg.step = 0.01;
    int improved = 0;
    for (int seed = 0; seed < 5; ++seed) {
      Eigen::VectorXd z = sample_latent(1, 4, std::uint64_t(100 + seed)).col(0);
      auto loss_at = [&](const Eigen::VectorXd& zz) {
        Var zv = ag::constant(Mat(zz));
        return ag::add(disc_loss(w.D, w.G, zv, w.x_ns, w.mask),
                       ag::scale(identity_loss(F, w.G, zv, w.x_ns, w.mask, 1), cfg.lambda_id))
            ->val(0, 0);
      };
      Eigen::VectorXd zs = optimize_whitebox(z, w.x_ns, w.mask, 1, F, w.G, w.D, cfg);
      improved += (loss_at(zs) <= loss_at(z));
    }
    CHECK(improved >= 3);
  }
  SECTION("blackbox optimization issues zero target queries") {
    ModelHandle bb = tiny_model(8, 3, 5, AccessMode::blackbox);
    bb.reset_queries();
    OptimizeConfig cfg;
    cfg.iterations = 20;
    optimize_blackbox(z0, w.x_ns, w.mask, w.G, w.D, cfg);
    CHECK(bb.query_count() == 0);
  }
  SECTION("whitebox requires a whitebox handle") {
    ModelHandle bb = tiny_model(8, 3, 5, AccessMode::blackbox);
    OptimizeConfig cfg;
    CHECK_THROWS_AS(optimize_whitebox(z0, w.x_ns, w.mask, 1, bb, w.G, w.D, cfg),
                    capability_error);
  }
}

TEST_CASE("recover pipeline") {
  TinyWorld w;
  TransformList cutouts = sequential_cutout(8, 4);  // m = 4

  SECTION("pseudo blackbox path issues exactly n(m+1)+1 queries") {
    ModelHandle F = tiny_model(8, 3, 21, AccessMode::blackbox);
    RecoverOptions opts;
    opts.setting = "blackbox";
    opts.n = 5;
    opts.seed = 31;
    opts.opt.iterations = 5;
    RecoveredRecord rec = recover(w.G, w.D, F, w.x_ns, w.mask, cutouts, opts);
    CHECK(rec.queries == 5 * 5 + 1);
    CHECK(rec.label_source == "pseudo");
    CHECK(rec.label_used >= 1);
    CHECK(rec.label_used <= 3);
  }
  SECTION("ground-truth option consistency is validated") {
    ModelHandle F = tiny_model(8, 3, 21, AccessMode::whitebox);
    RecoverOptions opts;
    opts.label_source = "ground_truth";
    CHECK_THROWS_AS(recover(w.G, w.D, F, w.x_ns, w.mask, cutouts, opts), validation_error);
    RecoverOptions opts2;
    opts2.gt_label = 2;  // pseudo source with a stray label
    CHECK_THROWS_AS(recover(w.G, w.D, F, w.x_ns, w.mask, cutouts, opts2), validation_error);
  }
  SECTION("same seed reproduces the record exactly") {
    ModelHandle F = tiny_model(8, 3, 21, AccessMode::whitebox);
    RecoverOptions opts;
    opts.n = 4;
    opts.seed = 77;
    opts.opt.iterations = 3;
    RecoveredRecord a = recover(w.G, w.D, F, w.x_ns, w.mask, cutouts, opts);
    RecoveredRecord b = recover(w.G, w.D, F, w.x_ns, w.mask, cutouts, opts);
    CHECK(a.z_star == b.z_star);
    CHECK(a.x_rec.values == b.x_rec.values);
    CHECK(a.label_used == b.label_used);
    CHECK(a.confidence == b.confidence);
  }
  SECTION("confidence field matches a fresh prediction of the recovery") {
    ModelHandle F = tiny_model(8, 3, 21, AccessMode::whitebox);
    RecoverOptions opts;
    opts.n = 4;
    opts.seed = 70;
    opts.opt.iterations = 2;
    RecoveredRecord rec = recover(w.G, w.D, F, w.x_ns, w.mask, cutouts, opts);
    CHECK(rec.confidence ==
          Catch::Approx(F.predict(rec.x_rec)(rec.label_used - 1)).margin(1e-12));
  }
}
