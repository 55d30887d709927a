#pragma once

#include "linvae/analytic.hpp"

#include <map>
#include <string>

namespace linvae {

// ---------------------------------------------------------------------------
// Sorted singular-value lists and the mean-absolute-difference pseudometric
// (shorter list zero-padded).
// ---------------------------------------------------------------------------

struct Spectrum {
    Vector values;  // non-increasing, non-negative

    static Spectrum ofMatrix(const Matrix& m) {
        if (m.size() == 0) return {Vector()};
        Eigen::BDCSVD<Matrix> svd(m);
        return {svd.singularValues()};
    }
    static Spectrum ofList(Vector v) {
        for (Index i = 0; i + 1 < v.size(); ++i)
            if (v(i) < v(i + 1)) throw DomainError("Spectrum: list must be non-increasing");
        return {std::move(v)};
    }
};

inline double d_ma(const Spectrum& u, const Spectrum& v) {
    for (Index i = 0; i + 1 < u.values.size(); ++i)
        if (u.values(i) < u.values(i + 1)) throw DomainError("d_ma: first list not sorted");
    for (Index i = 0; i + 1 < v.values.size(); ++i)
        if (v.values(i) < v.values(i + 1)) throw DomainError("d_ma: second list not sorted");
    const Index D = std::max(u.values.size(), v.values.size());
    if (D == 0) return 0.0;
    double s = 0.0;
    for (Index i = 0; i < D; ++i) {
        const double a = i < u.values.size() ? u.values(i) : 0.0;
        const double b = i < v.values.size() ? v.values(i) : 0.0;
        s += std::abs(a - b);
    }
    return s / double(D);
}

// ---------------------------------------------------------------------------
// Gaussian KL divergences
// ---------------------------------------------------------------------------

// KL(N(mu, var) || N(0, priorVar)) for one dimension.
inline double kl_gaussian_1d(double mu, double var, double priorVar) {
    return 0.5 * ((var + mu * mu) / priorVar - 1.0 + std::log(priorVar / var));
}

// Exact mean KL divergences recovered from the objective's KL components:
// the objective carries 2*KL plus the dropped constants.
inline double true_kl(const LossBreakdown& lb, const Hyperparams& h, Family family) {
    if (family == Family::Hvae) throw DomainError("true_kl: use true_kl1/true_kl2 for HVAE");
    const double d1 = double(h.d1);
    return 0.5 * (lb.lKL - d1 + d1 * std::log(h.etaEnc * h.etaEnc));
}
inline double true_kl1(const LossBreakdown& lb, const Hyperparams& h) {
    const double d1 = double(h.d1);
    return 0.5 * (lb.lKL1 - d1 + d1 * std::log(h.etaDec * h.etaDec));
}
inline double true_kl2(const LossBreakdown& lb, const Hyperparams& h) {
    const double d2 = double(h.d2);
    return 0.5 * (lb.lKL2 - d2 + d2 * std::log(h.etaEnc * h.etaEnc));
}

// ---------------------------------------------------------------------------
// (epsilon, delta)-collapse: dimension i is collapsed when the fraction of
// samples with per-dimension KL below epsilon is at least 1 - delta.
// ---------------------------------------------------------------------------

struct CollapseFlags {
    std::vector<char> flags;
    Index count = 0;
};

// `meanSqOffset`, when present, is added to mu^2 per dimension; the HVAE
// second latent uses it to carry the z1-noise part of E||W2 z1||^2.
inline CollapseFlags epsilon_delta_collapse(const Matrix& mu, const Vector& varDiag,
                                            double priorVar, double eps, double delta,
                                            const Vector* meanSqOffset = nullptr) {
    const Index n = mu.rows(), d = mu.cols();
    if (varDiag.size() != d) throw ShapeError("epsilon_delta_collapse: variance length mismatch");
    if (varDiag.minCoeff() <= 0.0)
        throw DomainError("epsilon_delta_collapse: posterior variances must be positive");
    if (meanSqOffset && meanSqOffset->size() != d)
        throw ShapeError("epsilon_delta_collapse: offset length mismatch");
    CollapseFlags out;
    out.flags.resize(d);
    for (Index j = 0; j < d; ++j) {
        const double off = meanSqOffset ? (*meanSqOffset)(j) : 0.0;
        Index below = 0;
        for (Index i = 0; i < n; ++i) {
            const double m2 = mu(i, j) * mu(i, j) + off;
            const double kl =
                0.5 * ((varDiag(j) + m2) / priorVar - 1.0 + std::log(priorVar / varDiag(j)));
            below += kl < eps;
        }
        out.flags[j] = double(below) >= (1.0 - delta) * double(n);
        out.count += out.flags[j];
    }
    return out;
}

namespace detail {

inline Vector diagonalOf(const Matrix& S, const char* name) {
    const Matrix off = S - Matrix(S.diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() > 1e-6 * std::max(1.0, S.cwiseAbs().maxCoeff()))
        throw DomainError(std::string(name) + ": posterior covariance must be diagonal");
    return S.diagonal();
}

}  // namespace detail

// Per-family collapse counting on whitened samples.  For HVAE the second
// latent's marginal posterior q(z2 | x) is used.
inline CollapseFlags model_collapse_flags(const ModelParams& p, const Matrix& xt, const Matrix& yt,
                                          const Hyperparams& h, double eps, double delta) {
    switch (p.family) {
        case Family::Vae: {
            const Matrix mu = xt * p.vae().V.transpose();
            return epsilon_delta_collapse(mu, detail::diagonalOf(p.vae().Sigma, "Sigma"),
                                          h.etaEnc * h.etaEnc, eps, delta);
        }
        case Family::Cvae: {
            if (yt.rows() != xt.rows()) throw ShapeError("model_collapse_flags: need y samples");
            const Matrix mu = xt * p.cvae().V1.transpose() + yt * p.cvae().V2.transpose();
            return epsilon_delta_collapse(mu, detail::diagonalOf(p.cvae().Sigma, "Sigma"),
                                          h.etaEnc * h.etaEnc, eps, delta);
        }
        case Family::Hvae: {
            // per-dimension expected conditional KL of q(z2|z1) against the
            // prior, averaged over q(z1|x): the z1 noise enters the mean
            // square through W2 Sigma1 W2^T
            const auto& q = p.hvae();
            const Matrix mu = xt * (q.W2 * q.V1).transpose();
            const Vector offset = (q.W2 * q.Sigma1 * q.W2.transpose()).diagonal();
            return epsilon_delta_collapse(mu, detail::diagonalOf(q.Sigma2, "Sigma2"),
                                          h.etaEnc * h.etaEnc, eps, delta, &offset);
        }
    }
    throw DomainError("model_collapse_flags: unknown family");
}

// ---------------------------------------------------------------------------
// Agreement with theory
// ---------------------------------------------------------------------------

struct CollapseReport {
    std::map<std::string, double> dMa;
    Index collapsedDims = -1;  // -1 when no samples were supplied
    std::vector<char> flags;
    double lossGap = 0.0;
    double gradNorm = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
};

inline CollapseReport compare_to_theory(const ModelParams& trained, const AnalyticSolution& sol,
                                        const VaeProblem* vp, const CvaeProblem* cp,
                                        const HvaeProblem* hp, const Hyperparams& h,
                                        SigmaMode sigmaMode = SigmaMode::Learnable,
                                        const Matrix* xt = nullptr, const Matrix* yt = nullptr,
                                        double eps = 1e-4, double delta = 0.05) {
    if (trained.family != sol.family)
        throw DomainError("compare_to_theory: family mismatch between trained and analytic");

    CollapseReport rep;
    switch (trained.family) {
        case Family::Vae: {
            const auto& p = trained.vae();
            rep.dMa["omega"] = d_ma(Spectrum::ofMatrix(p.U), Spectrum::ofList(sol.omega));
            rep.dMa["lambda"] = d_ma(Spectrum::ofMatrix(p.V), Spectrum::ofList(sol.lambda));
            Eigen::SelfAdjointEigenSolver<Matrix> es(p.Sigma);
            rep.dMa["sigma"] =
                d_ma(Spectrum::ofList(detail::sortedDescending(es.eigenvalues().cwiseSqrt())),
                     Spectrum::ofList(sol.sigmaPrime));
            break;
        }
        case Family::Cvae: {
            const auto& p = trained.cvae();
            rep.dMa["omega"] = d_ma(Spectrum::ofMatrix(p.U1), Spectrum::ofList(sol.omega));
            Eigen::SelfAdjointEigenSolver<Matrix> es(p.Sigma);
            rep.dMa["sigma"] =
                d_ma(Spectrum::ofList(detail::sortedDescending(es.eigenvalues().cwiseSqrt())),
                     Spectrum::ofList(sol.sigmaPrime));
            break;
        }
        case Family::Hvae: {
            const auto& p = trained.hvae();
            rep.dMa["lambda"] = d_ma(Spectrum::ofMatrix(p.V1), Spectrum::ofList(sol.lambda));
            rep.dMa["omega"] = d_ma(Spectrum::ofMatrix(p.U2), Spectrum::ofList(sol.omega));
            Eigen::SelfAdjointEigenSolver<Matrix> es(p.Sigma2);
            rep.dMa["sigma"] =
                d_ma(Spectrum::ofList(detail::sortedDescending(es.eigenvalues().cwiseSqrt())),
                     Spectrum::ofList(sol.sigmaPrime));
            break;
        }
    }

    rep.lossGap = model_loss(trained, vp, cp, hp, h).total - sol.lossValue;
    rep.gradNorm = gradient_norm(trained, vp, cp, hp, h, sigmaMode);
    if (xt != nullptr) {
        const CollapseFlags cf = model_collapse_flags(
            trained, *xt, yt ? *yt : Matrix(), h, eps, delta);
        rep.flags = cf.flags;
        rep.collapsedDims = cf.count;
        rep.epsilon = eps;
        rep.delta = delta;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Principal angles between the top-r left singular space of U and the top-r
// eigenspace of the symmetric matrix E, in radians, non-decreasing.
// ---------------------------------------------------------------------------

inline Vector subspace_alignment(const Matrix& U, const Matrix& E, Index r) {
    if (r < 1 || r > std::min(U.rows(), U.cols()) || r > E.rows())
        throw DomainError("subspace_alignment: rank out of range");
    Eigen::BDCSVD<Matrix> svd(U, Eigen::ComputeThinU);
    const Matrix Q1 = svd.matrixU().leftCols(r);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(E);
    Matrix Q2(E.rows(), r);
    for (Index i = 0; i < r; ++i) Q2.col(i) = eig.eigenvectors().col(E.rows() - 1 - i);
    Eigen::JacobiSVD<Matrix> overlap(Q1.transpose() * Q2);
    Vector angles(r);
    for (Index i = 0; i < r; ++i)
        angles(i) = std::acos(std::clamp(overlap.singularValues()(r - 1 - i), -1.0, 1.0));
    std::sort(angles.data(), angles.data() + r);
    return angles;
}

}  // namespace linvae
