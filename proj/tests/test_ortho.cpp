#include <gtest/gtest.h>

#include <Eigen/QR>

#include "gcorn/ortho.hpp"
#include "oracles.hpp"

using namespace gcorn;

namespace {

// U diag(s) V^T with singular values drawn from [lo, hi].
DenseMatrix with_singular_values(std::size_t rows, std::size_t cols, double lo, double hi,
                                 std::mt19937_64& rng) {
  const auto k = static_cast<Eigen::Index>(std::min(rows, cols));
  Eigen::HouseholderQR<Eigen::MatrixXd> qu(oracle::to_eigen(oracle::random_matrix(rows, rows, rng)));
  Eigen::HouseholderQR<Eigen::MatrixXd> qv(oracle::to_eigen(oracle::random_matrix(cols, cols, rng)));
  Eigen::MatrixXd u = qu.householderQ() * Eigen::MatrixXd::Identity(rows, k);
  Eigen::MatrixXd v = qv.householderQ() * Eigen::MatrixXd::Identity(cols, k);
  std::uniform_real_distribution<double> sd(lo, hi);
  Eigen::VectorXd s(k);
  for (Eigen::Index i = 0; i < k; ++i) s(i) = sd(rng);
  return oracle::from_eigen(u * s.asDiagonal() * v.transpose());
}

double frob_diff(const DenseMatrix& a, const DenseMatrix& b) { return frobenius_norm(a - b); }

}  // namespace

TEST(SpectralNorm, KnownValues) {
  EXPECT_NEAR(spectral_norm(DenseMatrix::identity(3)), 1.0, 1e-15);
  EXPECT_NEAR(spectral_norm(DenseMatrix{{3, 0}, {0, 1}}), 3.0, 1e-6);
  EXPECT_EQ(spectral_norm(DenseMatrix(3, 2)), 0.0);
}

TEST(SpectralNorm, MatchesSvdOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto w = oracle::random_matrix(5, 4, rng);
    EXPECT_NEAR(spectral_norm(w, 1000, 1e-12), oracle::svd_spectral_norm(w), 1e-6);
  }
}

TEST(SpectralNorm, StartVectorOrthogonalToRowSpace) {
  // All-ones start lies in the kernel; the fallback start must recover sigma = 2.
  const DenseMatrix w{{2, -2}, {0, 0}};
  EXPECT_NEAR(spectral_norm(w, 200, 1e-12), std::sqrt(8.0), 1e-9);
}

TEST(OrthoDefect, Values) {
  EXPECT_EQ(ortho_defect(DenseMatrix::identity(4)), 0.0);
  EXPECT_NEAR(ortho_defect(DenseMatrix::identity(2) * 2.0), 3.0 * std::sqrt(2.0), 1e-15);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto w = oracle::random_matrix(6, 3, rng);
    const Eigen::MatrixXd e = oracle::to_eigen(w);
    const double want = (e.transpose() * e - Eigen::MatrixXd::Identity(3, 3)).norm();
    EXPECT_NEAR(ortho_defect(w), want, 1e-13);
  }
}

TEST(Bjorck, Coefficients) {
  const auto a = bjorck_coefficients(3);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  EXPECT_DOUBLE_EQ(a[2], 0.375);
  EXPECT_DOUBLE_EQ(a[3], 0.3125);
}

TEST(Bjorck, OrthonormalInputIsFixedPoint) {
  const DenseMatrix w{{0, -1, 0}, {1, 0, 0}, {0, 0, 1}};
  OrthoConfig cfg;
  cfg.prescale = false;
  EXPECT_EQ(bjorck_project(w, cfg), w);
}

TEST(Bjorck, ScaledIdentityWithPrescale) {
  const auto out = bjorck_project(DenseMatrix::identity(3) * 2.0, OrthoConfig{});
  EXPECT_LT(frob_diff(out, DenseMatrix::identity(3)), 1e-14);
}

TEST(Bjorck, MatchesPolarFactor) {
  std::mt19937_64 rng(3);
  OrthoConfig cfg;
  cfg.iterations = 30;
  for (int t = 0; t < 20; ++t) {
    const auto w = with_singular_values(4, 4, 0.2, 1.4, rng);
    ASSERT_LT(oracle::gram_defect_spectral(w), 1.0);
    const auto polar = oracle::svd_polar(w);
    cfg.prescale = false;
    EXPECT_LT(frob_diff(bjorck_project(w, cfg), polar), 1e-5);
    cfg.prescale = true;
    EXPECT_LT(frob_diff(bjorck_project(w, cfg), polar), 1e-5);
  }
}

TEST(Bjorck, DefectMonotoneAndConverges) {
  std::mt19937_64 rng(4);
  OrthoConfig cfg;
  cfg.iterations = 30;
  cfg.prescale = false;
  for (int t = 0; t < 100; ++t) {
    const auto w = with_singular_values(5, 3, 0.1, 1.41, rng);
    ASSERT_LT(oracle::gram_defect_spectral(w), 1.0);
    const auto res = bjorck_project_traced(w, cfg);
    const auto& d = res.trace.defects;
    for (std::size_t k = 1; k < d.size(); ++k) EXPECT_LE(d[k], d[k - 1] + 1e-12);
    EXPECT_LE(d.back(), 1e-6);
  }
}

TEST(Bjorck, HigherOrderIsAtLeastAsPrecise) {
  std::mt19937_64 rng(5);
  OrthoConfig one, two;
  one.iterations = two.iterations = 3;
  one.prescale = two.prescale = false;
  two.order = 2;
  for (int t = 0; t < 50; ++t) {
    const auto w = with_singular_values(4, 4, 0.1, 1.3, rng);
    EXPECT_LE(ortho_defect(bjorck_project(w, two)), ortho_defect(bjorck_project(w, one)) + 1e-15);
  }
}

TEST(Bjorck, ProjectedSpectralNormNearOne) {
  std::mt19937_64 rng(6);
  OrthoConfig cfg;
  cfg.iterations = 30;
  for (int t = 0; t < 20; ++t) {
    const auto w = with_singular_values(6, 6, 0.3, 5.0, rng);
    EXPECT_NEAR(oracle::svd_spectral_norm(bjorck_project(w, cfg)), 1.0, 1e-4);
  }
}

TEST(Bjorck, RectangularShapes) {
  std::mt19937_64 rng(7);
  OrthoConfig cfg;
  cfg.iterations = 40;
  const auto tall = with_singular_values(7, 3, 0.5, 2.0, rng);
  const auto pt = bjorck_project(tall, cfg);
  EXPECT_EQ(pt.rows(), 7u);
  EXPECT_EQ(pt.cols(), 3u);
  EXPECT_LT(ortho_defect(pt), 1e-9);

  const auto wide = with_singular_values(2, 6, 0.5, 2.0, rng);
  const auto pw = bjorck_project(wide, cfg);
  EXPECT_EQ(pw.rows(), 2u);
  EXPECT_EQ(pw.cols(), 6u);
  EXPECT_LT(ortho_defect(transpose(pw)), 1e-9);
}

TEST(Bjorck, InputUntouched) {
  std::mt19937_64 rng(8);
  const auto w = oracle::random_matrix(4, 3, rng);
  const auto copy = w;
  (void)bjorck_project(w, OrthoConfig{});
  EXPECT_EQ(w, copy);
}

TEST(Bjorck, DivergenceNamesLayer) {
  OrthoConfig cfg;
  cfg.prescale = false;
  try {
    (void)bjorck_project(DenseMatrix::identity(2) * 3.0, cfg, "2");
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos);
    EXPECT_EQ(e.exit_code(), ExitCode::divergence);
  }
}

TEST(Bjorck, ConfigValidation) {
  OrthoConfig cfg;
  cfg.order = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.order = 1;
  cfg.iterations = -1;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.iterations = 0;
  EXPECT_NO_THROW(cfg.validate());
}

// Backward through the unrolled iterations against central differences of
// f(W) = sum(R * project(W)).
TEST(Bjorck, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const std::vector<std::pair<std::size_t, std::size_t>> shapes{{3, 3}, {5, 2}, {2, 4}};
  for (auto [rows, cols] : shapes) {
    for (int order : {1, 2}) {
      for (bool prescale : {false, true}) {
        OrthoConfig cfg;
        cfg.order = order;
        cfg.iterations = 6;
        cfg.prescale = prescale;
        cfg.power_iters = 5000;
        cfg.power_tol = 1e-14;
        const auto w = prescale ? oracle::random_matrix(rows, cols, rng)
                                : with_singular_values(rows, cols, 0.4, 1.3, rng);
        const auto r = oracle::random_matrix(rows, cols, rng);
        auto f = [&](const DenseMatrix& m) {
          const auto p = bjorck_project(m, cfg);
          double s = 0.0;
          for (std::size_t i = 0; i < p.size(); ++i) s += p.data()[i] * r.data()[i];
          return s;
        };
        const auto res = bjorck_project_traced(w, cfg);
        const auto g = bjorck_backward(res.trace, r, cfg);
        const double h = 1e-6;
        for (std::size_t i = 0; i < w.size(); ++i) {
          DenseMatrix wp = w, wm = w;
          wp.data()[i] += h;
          wm.data()[i] -= h;
          const double num = (f(wp) - f(wm)) / (2 * h);
          EXPECT_NEAR(g.data()[i], num, 1e-6 * std::max(1.0, std::abs(num)))
              << rows << "x" << cols << " order " << order << " prescale " << prescale;
        }
      }
    }
  }
}
