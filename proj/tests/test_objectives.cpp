#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace linvae;
using namespace testutil;

namespace {

struct CvaeFixture {
    WhitenedDataset ds;
    CvaeProblem prob;
    Hyperparams h;

    explicit CvaeFixture(std::uint64_t seed, Index n = 300, Index D0 = 4, Index D2 = 3,
                         Index d1 = 3) {
        Rng rng(seed);
        const Matrix x = rng.gaussian(n, D0, 1.0);
        const Matrix y = 0.6 * x * rng.gaussian(D0, D2, 0.6) + rng.gaussian(n, D2, 0.8);
        ds = prepare_xy(x, y);
        prob = cvaeProblem(ds);
        h.beta = 1.3;
        h.etaEnc = 0.9;
        h.etaDec = 1.1;
        h.d1 = d1;
    }
};

struct VaeFixture {
    SpectralStats stats;
    Matrix xt;
    VaeProblem prob;
    Hyperparams h;

    explicit VaeFixture(std::uint64_t seed, Index n = 300, Index D0 = 4, Index d1 = 3) {
        const Matrix x = synth_gaussian(n, D0, 1.0, seed);
        stats = second_moment_stats(x, true);
        xt = whiten(x, stats);
        prob = vaeProblem(stats);
        h.beta = 0.8;
        h.etaEnc = 1.2;
        h.etaDec = 0.9;
        h.d1 = d1;
    }
};

struct HvaeFixture {
    SpectralStats stats;
    Matrix xt;
    HvaeProblem prob;
    Hyperparams h;

    explicit HvaeFixture(std::uint64_t seed, Index n = 300, Index D0 = 4, Index d1 = 3,
                         Index d2 = 3) {
        const Matrix x = synth_gaussian(n, D0, 1.0, seed);
        stats = second_moment_stats(x, true);
        xt = whiten(x, stats);
        prob = hvaeProblem(stats);
        h.beta = 1.1;
        h.beta2 = 0.7;
        h.etaEnc = 0.8;
        h.etaDec = 1.2;
        h.sigma1 = 0.9;
        h.d1 = d1;
        h.d2 = d2;
    }
};

}  // namespace

TEST_CASE("vae_loss pins the fully-collapsed baseline", "[objectives]") {
    VaeFixture fx(3);
    const Index d1 = fx.h.d1;
    const double ee2 = fx.h.etaEnc * fx.h.etaEnc;
    VaeParams p{Matrix::Zero(fx.prob.Z.rows(), d1), Matrix::Zero(d1, fx.prob.Z.cols()),
                ee2 * Matrix::Identity(d1, d1)};
    const LossBreakdown lb = vae_loss(p, fx.prob, fx.h);
    const double c2 = fx.h.c() * fx.h.c();
    const double expected = fx.prob.Z.squaredNorm() / (fx.h.etaDec * fx.h.etaDec) +
                            fx.h.beta * c2 * double(d1) * ee2 / (fx.h.etaDec * fx.h.etaDec) -
                            fx.h.beta * double(d1) * std::log(ee2);
    CHECK(lb.total == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cvae copy-through solution reconstructs perfectly when y = x", "[objectives]") {
    Rng rng(7);
    const Matrix x = rng.gaussian(200, 3, 1.0);
    const auto ds = prepare_xy(x, x);
    const CvaeProblem prob = cvaeProblem(ds);
    REQUIRE((prob.Z - Matrix::Identity(3, 3)).norm() < 1e-9);

    Hyperparams h;
    h.d1 = 2;
    CvaeParams p{Matrix::Zero(prob.D.rows(), 2), Matrix::Zero(2, 3), Matrix::Zero(2, 3),
                 prob.D * prob.Z.transpose(), Matrix::Identity(2, 2)};
    const LossBreakdown lb = cvae_loss(p, prob, h);
    CHECK(std::abs(lb.lRec) < 1e-9);
}

TEST_CASE("components add up exactly", "[objectives]") {
    Rng rng(11);
    VaeFixture vf(4);
    const VaeParams vp = randomVaeParams(vf.prob.Z.rows(), vf.prob.Z.cols(), vf.h.d1, rng);
    const LossBreakdown vb = vae_loss(vp, vf.prob, vf.h);
    CHECK(std::abs(vb.total - (vb.lRec + vf.h.beta * vb.lKL)) <= 1e-10 * std::abs(vb.total));

    CvaeFixture cf(5);
    const CvaeParams cp =
        randomCvaeParams(cf.prob.D.rows(), cf.prob.Z.rows(), cf.prob.Z.cols(), cf.h.d1, rng);
    const LossBreakdown cb = cvae_loss(cp, cf.prob, cf.h);
    CHECK(std::abs(cb.total - (cb.lRec + cf.h.beta * cb.lKL)) <= 1e-10 * std::abs(cb.total));

    HvaeFixture hf(6);
    const HvaeParams hp =
        randomHvaeParams(hf.prob.Z.rows(), hf.prob.Z.cols(), hf.h.d1, hf.h.d2, rng);
    const LossBreakdown hb = hvae_loss(hp, hf.prob, hf.h);
    CHECK(std::abs(hb.total - (hb.lRec + hf.h.beta * hb.lKL1 + hf.h.beta2 * hb.lKL2)) <=
          1e-10 * std::abs(hb.total));
}

TEST_CASE("hvae with zeroed second latent degenerates to a single-latent form", "[objectives]") {
    HvaeFixture fx(8);
    Rng rng(9);
    HvaeParams p = randomHvaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, fx.h.d2, rng);
    p.U2.setZero();
    p.W2.setZero();
    const LossBreakdown lb = hvae_loss(p, fx.prob, fx.h);
    // with U2 = W2 = 0 the beta1 block reduces to ||V1||^2 + covariance traces
    const double invEd2 = 1.0 / (fx.h.etaDec * fx.h.etaDec);
    const double logDet1 = 2.0 * Eigen::LLT<Matrix>(p.Sigma1)
                                     .matrixL()
                                     .toDenseMatrix()
                                     .diagonal()
                                     .array()
                                     .log()
                                     .sum();
    const double expectKl1 = invEd2 * (p.V1.squaredNorm() + p.Sigma1.trace()) - logDet1;
    CHECK(lb.lKL1 == Catch::Approx(expectKl1).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences", "[objectives]") {
    const double tol = 1e-6;
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        Rng rng(seed);

        VaeFixture vf(seed);
        const VaeParams vp = randomVaeParams(vf.prob.Z.rows(), vf.prob.Z.cols(), vf.h.d1, rng);
        const VaeGrads vg = vae_gradient(vp, vf.prob, vf.h);
        auto vloss = [&](const VaeParams& q) { return vae_loss(q, vf.prob, vf.h).total; };
        CHECK(relErr(vg.U, finiteDiff([&](const Matrix& m) {
                         VaeParams q = vp;
                         q.U = m;
                         return vloss(q);
                     }, vp.U)) < tol);
        CHECK(relErr(vg.V, finiteDiff([&](const Matrix& m) {
                         VaeParams q = vp;
                         q.V = m;
                         return vloss(q);
                     }, vp.V)) < tol);
        CHECK(relErr(vg.Sigma, finiteDiffSym([&](const Matrix& m) {
                         VaeParams q = vp;
                         q.Sigma = m;
                         return vloss(q);
                     }, vp.Sigma)) < tol);

        CvaeFixture cf(seed);
        const CvaeParams cp =
            randomCvaeParams(cf.prob.D.rows(), cf.prob.Z.rows(), cf.prob.Z.cols(), cf.h.d1, rng);
        const CvaeGrads cg = cvae_gradient(cp, cf.prob, cf.h);
        auto closs = [&](const CvaeParams& q) { return cvae_loss(q, cf.prob, cf.h).total; };
        auto checkC = [&](const Matrix& grad, Matrix CvaeParams::*field) {
            CHECK(relErr(grad, finiteDiff([&](const Matrix& m) {
                             CvaeParams q = cp;
                             q.*field = m;
                             return closs(q);
                         }, cp.*field)) < tol);
        };
        checkC(cg.U1, &CvaeParams::U1);
        checkC(cg.V1, &CvaeParams::V1);
        checkC(cg.V2, &CvaeParams::V2);
        checkC(cg.T2, &CvaeParams::T2);
        CHECK(relErr(cg.Sigma, finiteDiffSym([&](const Matrix& m) {
                         CvaeParams q = cp;
                         q.Sigma = m;
                         return closs(q);
                     }, cp.Sigma)) < tol);

        HvaeFixture hf(seed);
        const HvaeParams hp =
            randomHvaeParams(hf.prob.Z.rows(), hf.prob.Z.cols(), hf.h.d1, hf.h.d2, rng);
        const HvaeGrads hg = hvae_gradient(hp, hf.prob, hf.h);
        auto hloss = [&](const HvaeParams& q) { return hvae_loss(q, hf.prob, hf.h).total; };
        auto checkH = [&](const Matrix& grad, Matrix HvaeParams::*field) {
            CHECK(relErr(grad, finiteDiff([&](const Matrix& m) {
                             HvaeParams q = hp;
                             q.*field = m;
                             return hloss(q);
                         }, hp.*field)) < tol);
        };
        checkH(hg.U1, &HvaeParams::U1);
        checkH(hg.U2, &HvaeParams::U2);
        checkH(hg.V1, &HvaeParams::V1);
        checkH(hg.W2, &HvaeParams::W2);
        CHECK(relErr(hg.Sigma1, finiteDiffSym([&](const Matrix& m) {
                         HvaeParams q = hp;
                         q.Sigma1 = m;
                         return hloss(q);
                     }, hp.Sigma1)) < tol);
        CHECK(relErr(hg.Sigma2, finiteDiffSym([&](const Matrix& m) {
                         HvaeParams q = hp;
                         q.Sigma2 = m;
                         return hloss(q);
                     }, hp.Sigma2)) < tol);
    }
}

TEST_CASE("per-sample gradients match finite differences of the per-sample loss",
          "[objectives]") {
    VaeFixture fx(31, 12);
    Rng rng(32);
    const Index n = fx.xt.rows();
    const VaeParams p = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    std::vector<Matrix> sigmas;
    for (Index i = 0; i < n; ++i) sigmas.push_back(randomSpd(fx.h.d1, rng, 0.5));

    const VaePerSampleGrads g = vae_gradient_per_sample(p, sigmas, fx.prob, fx.xt, fx.h);
    auto loss = [&](const VaeParams& q, const std::vector<Matrix>& sg) {
        return vae_loss_per_sample(q, sg, fx.prob, fx.xt, fx.h).total;
    };
    CHECK(relErr(g.U, finiteDiff([&](const Matrix& m) {
                     VaeParams q = p;
                     q.U = m;
                     return loss(q, sigmas);
                 }, p.U)) < 1e-6);
    CHECK(relErr(g.V, finiteDiff([&](const Matrix& m) {
                     VaeParams q = p;
                     q.V = m;
                     return loss(q, sigmas);
                 }, p.V)) < 1e-6);
    for (Index i : {Index(0), n - 1}) {
        CHECK(relErr(g.sigmas[i], finiteDiffSym([&](const Matrix& m) {
                         auto sg = sigmas;
                         sg[i] = m;
                         return loss(p, sg);
                     }, sigmas[i])) < 1e-6);
    }
}

TEST_CASE("zero product gives zero encoder gradient", "[objectives]") {
    VaeFixture fx(41);
    VaeParams p{Matrix::Zero(fx.prob.Z.rows(), fx.h.d1), Matrix::Zero(fx.h.d1, fx.prob.Z.cols()),
                Matrix::Identity(fx.h.d1, fx.h.d1)};
    const VaeGrads g = vae_gradient(p, fx.prob, fx.h);
    CHECK(g.V.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("original-coordinate loss differs from the reduced loss by a constant",
          "[objectives]") {
    const Index draws = 100;

    SECTION("vae") {
        VaeFixture fx(51, 200, 5);
        Rng rng(52);
        const Index D0 = 5, d1 = 3;
        std::vector<double> diffs;
        for (Index k = 0; k < draws; ++k) {
            OriginalVaeParams op{rng.gaussian(D0, d1, 0.7), rng.gaussian(d1, D0, 0.7),
                                 randomSpd(d1, rng, 0.5)};
            const double orig = vae_loss_original(op, fx.stats, fx.h);
            const LossBreakdown red = vae_loss(reduceParams(op, fx.stats), fx.prob, fx.h);
            diffs.push_back(orig - red.total);
            if (k == 0) CHECK(std::abs(diffs[0] - red.droppedConstant) < 1e-8);
        }
        double mean = 0;
        for (double d : diffs) mean += d;
        mean /= double(draws);
        double var = 0;
        for (double d : diffs) var += (d - mean) * (d - mean);
        CHECK(std::sqrt(var / double(draws)) <= 1e-8 * (1.0 + std::abs(mean)));
    }

    SECTION("cvae") {
        Rng rng(53);
        const Index n = 250, D0 = 4, D2 = 5, d1 = 3;
        const Matrix xraw = rng.gaussian(n, 3, 1.0) * rng.gaussian(3, D0, 1.0);  // rank 3
        const Matrix yraw = 0.5 * xraw * rng.gaussian(D0, D2, 0.7) + rng.gaussian(n, D2, 0.9);
        const auto ds = prepare_xy(xraw, yraw);
        const CvaeProblem prob = cvaeProblem(ds);
        Hyperparams h;
        h.beta = 1.4;
        h.etaEnc = 0.8;
        h.etaDec = 1.2;
        h.d1 = d1;
        std::vector<double> diffs;
        for (Index k = 0; k < draws; ++k) {
            OriginalCvaeParams op{rng.gaussian(D2, d1, 0.7), rng.gaussian(D2, D0, 0.7),
                                  rng.gaussian(d1, D0, 0.7), rng.gaussian(d1, D2, 0.7),
                                  randomSpd(d1, rng, 0.5)};
            const double orig = cvae_loss_original(op, ds.statsX, ds.statsY, prob.Z, h);
            const LossBreakdown red = cvae_loss(reduceParams(op, ds.statsX, ds.statsY), prob, h);
            diffs.push_back(orig - red.total);
            if (k == 0) CHECK(std::abs(diffs[0] - red.droppedConstant) < 1e-8);
        }
        double mean = 0;
        for (double d : diffs) mean += d;
        mean /= double(draws);
        double var = 0;
        for (double d : diffs) var += (d - mean) * (d - mean);
        CHECK(std::sqrt(var / double(draws)) <= 1e-8 * (1.0 + std::abs(mean)));
        CHECK(mean == Catch::Approx(-h.beta * double(d1)).margin(1e-7));
    }

    SECTION("hvae") {
        HvaeFixture fx(54, 200, 5);
        Rng rng(55);
        const Index D0 = 5, d1 = 3, d2 = 2;
        fx.h.d2 = d2;
        std::vector<double> diffs;
        for (Index k = 0; k < draws; ++k) {
            OriginalHvaeParams op{rng.gaussian(D0, d1, 0.7), rng.gaussian(d1, d2, 0.7),
                                  rng.gaussian(d1, D0, 0.7), rng.gaussian(d2, d1, 0.7),
                                  randomSpd(d1, rng, 0.5), randomSpd(d2, rng, 0.5)};
            const double orig = hvae_loss_original(op, fx.stats, fx.h);
            const LossBreakdown red = hvae_loss(reduceParams(op, fx.stats), fx.prob, fx.h);
            diffs.push_back(orig - red.total);
            if (k == 0) CHECK(std::abs(diffs[0] - red.droppedConstant) < 1e-8);
        }
        double mean = 0;
        for (double d : diffs) mean += d;
        mean /= double(draws);
        double var = 0;
        for (double d : diffs) var += (d - mean) * (d - mean);
        CHECK(std::sqrt(var / double(draws)) <= 1e-8 * (1.0 + std::abs(mean)));
    }
}

TEST_CASE("loss is convex in Sigma along SPD segments", "[objectives]") {
    VaeFixture fx(61);
    Rng rng(62);
    const VaeParams base = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    for (int k = 0; k < 20; ++k) {
        const Matrix Sa = randomSpd(fx.h.d1, rng, 0.8);
        const Matrix Sb = randomSpd(fx.h.d1, rng, 0.8);
        VaeParams pa = base, pb = base, pm = base;
        pa.Sigma = Sa;
        pb.Sigma = Sb;
        pm.Sigma = 0.5 * (Sa + Sb);
        const double fa = vae_loss(pa, fx.prob, fx.h).total;
        const double fb = vae_loss(pb, fx.prob, fx.h).total;
        const double fm = vae_loss(pm, fx.prob, fx.h).total;
        CHECK(fm <= 0.5 * (fa + fb) + 1e-12 * std::abs(fa + fb));
    }
}

TEST_CASE("per-sample loss with identical covariances equals the shared loss", "[objectives]") {
    VaeFixture fx(71, 64);
    Rng rng(72);
    VaeParams p = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    std::vector<Matrix> sigmas(fx.xt.rows(), p.Sigma);
    const LossBreakdown shared = vae_loss(p, fx.prob, fx.h);
    const LossBreakdown per = vae_loss_per_sample(p, sigmas, fx.prob, fx.xt, fx.h);
    CHECK(per.total == Catch::Approx(shared.total).epsilon(1e-9));
}

TEST_CASE("mc_elbo is deterministic and statistically consistent", "[objectives]") {
    VaeFixture fx(81, 400);
    Rng rng(82);
    const VaeParams p = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    const McEstimate a = mc_elbo_vae(p, fx.prob, fx.xt, fx.h, 5000, 999);
    const McEstimate b = mc_elbo_vae(p, fx.prob, fx.xt, fx.h, 5000, 999);
    CHECK(a.estimate == b.estimate);

    const double closed = vae_loss(p, fx.prob, fx.h).total;
    CHECK(std::abs(a.estimate - closed) <= 3.0 * a.standardError);

    CvaeFixture cf(83, 400);
    const CvaeParams cp =
        randomCvaeParams(cf.prob.D.rows(), cf.prob.Z.rows(), cf.prob.Z.cols(), cf.h.d1, rng);
    const McEstimate c = mc_elbo_cvae(cp, cf.prob, cf.ds.xt, cf.ds.yt, cf.h, 20000, 7);
    CHECK(std::abs(c.estimate - cvae_loss(cp, cf.prob, cf.h).total) <= 3.0 * c.standardError);

    HvaeFixture hf(84, 400);
    const HvaeParams hp =
        randomHvaeParams(hf.prob.Z.rows(), hf.prob.Z.cols(), hf.h.d1, hf.h.d2, rng);
    const McEstimate hme = mc_elbo_hvae(hp, hf.prob, hf.xt, hf.h, 20000, 11);
    CHECK(std::abs(hme.estimate - hvae_loss(hp, hf.prob, hf.h).total) <= 3.0 * hme.standardError);
}

TEST_CASE("mc_elbo approaches the deterministic limit as Sigma -> 0", "[objectives]") {
    VaeFixture fx(91);
    Rng rng(92);
    VaeParams p = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    p.Sigma = 1e-12 * Matrix::Identity(fx.h.d1, fx.h.d1);
    Matrix oneRow = fx.xt.topRows(1);
    const McEstimate e = mc_elbo_vae(p, fx.prob, oneRow, fx.h, 2000, 5);
    const Vector x0 = oneRow.row(0).transpose();
    const double invEd2 = 1.0 / (fx.h.etaDec * fx.h.etaDec);
    const double invEe2 = 1.0 / (fx.h.etaEnc * fx.h.etaEnc);
    const double deterministic =
        invEd2 * (p.U * (p.V * x0) - fx.prob.Z * x0).squaredNorm() +
        fx.h.beta * (invEe2 * (p.V * x0).squaredNorm() - double(fx.h.d1) * std::log(1e-12));
    CHECK(std::abs(e.estimate - deterministic) < 1e-4);
}

TEST_CASE("objective error paths", "[objectives]") {
    VaeFixture fx(95);
    Rng rng(96);
    VaeParams p = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    p.Sigma = -Matrix::Identity(fx.h.d1, fx.h.d1);
    REQUIRE_THROWS_AS(vae_loss(p, fx.prob, fx.h), DomainError);

    VaeParams wrongShape = randomVaeParams(fx.prob.Z.rows() + 1, fx.prob.Z.cols(), fx.h.d1, rng);
    REQUIRE_THROWS_AS(vae_loss(wrongShape, fx.prob, fx.h), ShapeError);

    VaeParams nearSingular = randomVaeParams(fx.prob.Z.rows(), fx.prob.Z.cols(), fx.h.d1, rng);
    Vector d = Vector::Ones(fx.h.d1);
    d(0) = 1e-14;
    nearSingular.Sigma = d.asDiagonal();
    REQUIRE_THROWS_AS(vae_gradient(nearSingular, fx.prob, fx.h), DomainError);
}

TEST_CASE("analytic optima evaluate to their recorded loss to 1e-10", "[objectives]") {
    const Matrix x = synth_gaussian(300, 4, 1.0, 201);
    const SpectralStats stats = second_moment_stats(x, true);
    Hyperparams h;
    h.d1 = 3;
    h.d2 = 3;
    h.beta = 0.6;
    h.beta2 = 0.9;
    h.sigma1 = 1.0;
    h.sigma2 = 1.0;

    const VaeProblem vp = vaeProblem(stats);
    const AnalyticSolution vs = vae_optimum_learnable(vp, h);
    CHECK(std::abs(vae_loss(vs.params.vae(), vp, h).total - vs.lossValue) <=
          1e-10 * std::abs(vs.lossValue));

    Rng rng(202);
    const Matrix y = 0.5 * x * rng.gaussian(4, 3, 0.7) + rng.gaussian(300, 3, 0.8);
    const auto ds = prepare_xy(x, y);
    const CvaeProblem cp = cvaeProblem(ds);
    const AnalyticSolution cspol = cvae_optimum(cp, h);
    CHECK(std::abs(cvae_loss(cspol.params.cvae(), cp, h).total - cspol.lossValue) <=
          1e-10 * std::abs(cspol.lossValue));

    const HvaeProblem hp = hvaeProblem(stats);
    const AnalyticSolution hsl = hvae_optimum_learnable(hp, h);
    CHECK(std::abs(hvae_loss(hsl.params.hvae(), hp, h).total - hsl.lossValue) <=
          1e-10 * std::abs(hsl.lossValue));
    const AnalyticSolution hsf = hvae_optimum_fixed(hp, h);
    CHECK(std::abs(hvae_loss(hsf.params.hvae(), hp, h).total - hsf.lossValue) <=
          1e-10 * std::abs(hsf.lossValue));
}
