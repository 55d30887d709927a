#pragma once

#include "linvae/objectives.hpp"

#include <vector>

namespace linvae {

enum class CaseTag { Active, Collapsed, CaseA, CaseB, CaseC };

inline const char* caseTagName(CaseTag t) {
    switch (t) {
        case CaseTag::Active: return "active";
        case CaseTag::Collapsed: return "collapsed";
        case CaseTag::CaseA: return "a";
        case CaseTag::CaseB: return "b";
        case CaseTag::CaseC: return "c";
    }
    return "?";
}

// A closed-form global optimum in diagonal gauge: all arbitrary orthonormal
// factors are fixed so the returned covariances are diagonal and collapse
// shows up as exact zero rows/columns.
struct AnalyticSolution {
    Family family = Family::Vae;
    ModelParams params;
    Vector omega;        // non-increasing singular values of the collapsible decoder factor
    Vector lambda;       // non-increasing singular values of the encoder factor (when defined)
    Vector sigmaPrime;   // non-increasing optimal posterior standard deviations
    Vector thresholds;   // per-index critical beta (or beta2), theta-index order
    std::vector<CaseTag> caseTags;
    std::vector<char> collapsed;  // per-index z (or z2) collapse flags
    double lossValue = 0.0;

    Index collapsedCount() const {
        Index c = 0;
        for (char f : collapsed) c += (f != 0);
        return c;
    }
};

namespace detail {

inline Vector sortedDescending(Vector v) {
    std::sort(v.data(), v.data() + v.size(), std::greater<double>());
    return v;
}

inline Vector sigmaDiagSqrtSorted(const Matrix& Sigma) {
    return sortedDescending(Sigma.diagonal().cwiseSqrt());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// E-matrix: the output second moment unexplained by the input condition.
// E = D (I - Z^T Z) D^T, symmetric PSD; its eigenvalues set the CVAE collapse
// thresholds.  Singular values of Z above 1 are clipped to 1 and negative
// eigenvalues of E floored at 0.
// ---------------------------------------------------------------------------

struct EMatrix {
    Matrix E;         // D2 x D2
    Matrix eigvecs;   // D2 x D2, non-increasing eigenvalue order
    Vector thetaAll;  // all D2 eigenvalues, floored at 0, non-increasing
    Vector theta;     // padded/truncated to length d1
};

inline EMatrix cvae_E_matrix(const CvaeProblem& prob, Index d1) {
    Eigen::JacobiSVD<Matrix> svd(prob.Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues().size() > 0 && svd.singularValues()(0) > 1.0 + 1e-8)
        throw DomainError("cvae_E_matrix: crossZ has a singular value above 1+1e-8");
    const Vector sClip = svd.singularValues().cwiseMin(1.0);
    const Matrix Zc = svd.matrixU() * sClip.asDiagonal() * svd.matrixV().transpose();

    const Index d2 = prob.Z.cols();
    Matrix K = Matrix::Identity(d2, d2) - Zc.transpose() * Zc;
    Matrix E = prob.D * K * prob.D.transpose();
    E = 0.5 * (E + E.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(E);
    const Index D2 = E.rows();
    EMatrix out;
    out.E = E;
    out.eigvecs.resize(D2, D2);
    out.thetaAll.resize(D2);
    for (Index i = 0; i < D2; ++i) {
        out.thetaAll(i) = std::max(0.0, eig.eigenvalues()(D2 - 1 - i));
        out.eigvecs.col(i) = eig.eigenvectors().col(D2 - 1 - i);
    }
    out.theta = Vector::Zero(d1);
    for (Index i = 0; i < std::min(d1, D2); ++i) out.theta(i) = out.thetaAll(i);
    return out;
}

// ---------------------------------------------------------------------------
// CVAE global optimum (learnable Sigma)
// ---------------------------------------------------------------------------

inline AnalyticSolution cvae_optimum(const CvaeProblem& prob, const Hyperparams& h) {
    h.validate(Family::Cvae);
    const Index d1 = h.d1, d0 = prob.Z.rows(), D2 = prob.D.rows();
    const double ed2 = h.etaDec * h.etaDec;
    const double bc2 = h.beta * h.c() * h.c();
    const EMatrix em = cvae_E_matrix(prob, d1);

    AnalyticSolution sol;
    sol.family = Family::Cvae;
    sol.omega = Vector::Zero(d1);
    sol.thresholds = Vector::Zero(d1);
    sol.caseTags.resize(d1);
    sol.collapsed.resize(d1);

    Matrix U1 = Matrix::Zero(D2, d1);
    for (Index i = 0; i < d1; ++i) {
        const double th = em.theta(i);
        const double w = std::sqrt(std::max(0.0, th - h.beta * ed2)) / h.etaEnc;
        sol.omega(i) = w;
        sol.thresholds(i) = th / ed2;
        sol.collapsed[i] = (w == 0.0);
        sol.caseTags[i] = w > 0.0 ? CaseTag::Active : CaseTag::Collapsed;
        if (i < D2) U1.col(i) = w * em.eigvecs.col(i);
    }

    Vector sigmaDiag(d1);
    for (Index i = 0; i < d1; ++i) sigmaDiag(i) = h.beta * ed2 / (sol.omega(i) * sol.omega(i) + bc2);
    const Matrix Sigma = sigmaDiag.asDiagonal();

    Vector minv(d1);
    for (Index i = 0; i < d1; ++i) minv(i) = 1.0 / (sol.omega(i) * sol.omega(i) + bc2);
    const Matrix V2 = minv.asDiagonal() * U1.transpose() * prob.D;
    const Matrix V1 = -V2 * prob.Z.transpose();
    const Matrix T2 = prob.D * prob.Z.transpose();
    (void)d0;

    sol.params = ModelParams::of(CvaeParams{U1, V1, V2, T2, Sigma});
    sol.sigmaPrime = detail::sigmaDiagSqrtSorted(Sigma);

    double mid = 0.0, logs = 0.0;
    for (Index i = 0; i < d1; ++i) {
        const double w2 = sol.omega(i) * sol.omega(i);
        mid += em.theta(i) * w2 / (w2 + bc2);
        logs += std::log(w2 + bc2);
    }
    sol.lossValue = (em.thetaAll.sum() - mid) / ed2 + h.beta * double(d1) -
                    h.beta * double(d1) * std::log(h.beta * ed2) + h.beta * logs;
    return sol;
}

// ---------------------------------------------------------------------------
// VAE global optima
// ---------------------------------------------------------------------------

inline AnalyticSolution vae_optimum_learnable(const VaeProblem& prob, const Hyperparams& h) {
    h.validate(Family::Vae);
    const Index d1 = h.d1, D0 = prob.Z.rows(), d0 = prob.Z.cols();
    const double ed2 = h.etaDec * h.etaDec;
    const double bc2 = h.beta * h.c() * h.c();
    Eigen::JacobiSVD<Matrix> svd(prob.Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& th = svd.singularValues();
    const Index r = th.size();

    AnalyticSolution sol;
    sol.family = Family::Vae;
    sol.omega = Vector::Zero(d1);
    sol.lambda = Vector::Zero(d1);
    sol.thresholds = Vector::Zero(d1);
    sol.caseTags.resize(d1);
    sol.collapsed.resize(d1);

    Matrix U = Matrix::Zero(D0, d1);
    Matrix V = Matrix::Zero(d1, d0);
    for (Index i = 0; i < d1; ++i) {
        const double t = i < r ? th(i) : 0.0;
        const double gap = std::max(0.0, t * t - h.beta * ed2);
        const double w = std::sqrt(gap) / h.etaEnc;
        const double l = t > 0.0 ? h.etaEnc / t * std::sqrt(gap) : 0.0;
        sol.omega(i) = w;
        sol.lambda(i) = l;
        sol.thresholds(i) = t * t / ed2;
        sol.collapsed[i] = (w == 0.0);
        sol.caseTags[i] = w > 0.0 ? CaseTag::Active : CaseTag::Collapsed;
        if (i < r) {
            U.col(i) = w * svd.matrixU().col(i);
            V.row(i) = l * svd.matrixV().col(i).transpose();
        }
    }
    Vector sigmaDiag(d1);
    for (Index i = 0; i < d1; ++i) sigmaDiag(i) = h.beta * ed2 / (sol.omega(i) * sol.omega(i) + bc2);
    const Matrix Sigma = sigmaDiag.asDiagonal();
    sol.params = ModelParams::of(VaeParams{U, V, Sigma});
    sol.sigmaPrime = detail::sigmaDiagSqrtSorted(Sigma);

    double quad = th.squaredNorm(), mid = 0.0, logs = 0.0;
    for (Index i = 0; i < d1; ++i) {
        const double w2 = sol.omega(i) * sol.omega(i);
        const double t = i < r ? th(i) : 0.0;
        mid += t * t * w2 / (w2 + bc2);
        logs += std::log(w2 + bc2);
    }
    sol.lossValue = (quad - mid) / ed2 + h.beta * double(d1) -
                    h.beta * double(d1) * std::log(h.beta * ed2) + h.beta * logs;
    return sol;
}

inline AnalyticSolution vae_optimum_fixed(const VaeProblem& prob, const Matrix& SigmaFixed,
                                          const Hyperparams& h) {
    h.validate(Family::Vae);
    const Index d1 = h.d1, D0 = prob.Z.rows(), d0 = prob.Z.cols();
    if (SigmaFixed.rows() != d1 || SigmaFixed.cols() != d1)
        throw ShapeError("vae_optimum_fixed: Sigma must be d1 x d1");
    const Matrix offDiag = SigmaFixed - Matrix(SigmaFixed.diagonal().asDiagonal());
    if (offDiag.cwiseAbs().maxCoeff() > 1e-14 * std::max(1.0, SigmaFixed.cwiseAbs().maxCoeff()))
        throw DomainError("vae_optimum_fixed: Sigma must be diagonal");
    if (SigmaFixed.diagonal().minCoeff() <= 0.0)
        throw DomainError("vae_optimum_fixed: Sigma diagonal must be positive");

    const double ed2 = h.etaDec * h.etaDec;
    const double c = h.c();
    const double bc2 = h.beta * c * c;
    const double sb = std::sqrt(h.beta);
    Eigen::JacobiSVD<Matrix> svd(prob.Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& th = svd.singularValues();
    const Index r = th.size();

    // permutation sorting the diagonal of Sigma in non-decreasing order
    std::vector<Index> perm(d1);
    std::iota(perm.begin(), perm.end(), Index(0));
    std::stable_sort(perm.begin(), perm.end(), [&](Index a, Index b) {
        return SigmaFixed(a, a) < SigmaFixed(b, b);
    });

    AnalyticSolution sol;
    sol.family = Family::Vae;
    Vector omega(d1), lambda(d1);
    sol.thresholds = Vector::Zero(d1);
    sol.caseTags.resize(d1);
    sol.collapsed.resize(d1);

    Matrix U = Matrix::Zero(D0, d1);
    Matrix V = Matrix::Zero(d1, d0);
    for (Index i = 0; i < d1; ++i) {
        const double sp = std::sqrt(SigmaFixed(perm[i], perm[i]));
        const double t = i < r ? th(i) : 0.0;
        const double gap = t - sb * c * sp;
        const double w = std::sqrt(std::max(0.0, sb * c / sp * gap));
        const double l = std::sqrt(std::max(0.0, sp / (sb * c) * gap));
        omega(i) = w;
        lambda(i) = l;
        sol.thresholds(i) = t * t / (c * c * sp * sp);
        sol.caseTags[i] = l > 0.0 ? CaseTag::Active : CaseTag::Collapsed;
        sol.collapsed[perm[i]] = (l == 0.0);
        if (i < r) {
            U.col(perm[i]) = w * svd.matrixU().col(i);
            V.row(perm[i]) = l * svd.matrixV().col(i).transpose();
        }
    }
    sol.params = ModelParams::of(VaeParams{U, V, SigmaFixed});
    sol.omega = detail::sortedDescending(omega);
    sol.lambda = detail::sortedDescending(lambda);
    sol.sigmaPrime = detail::sigmaDiagSqrtSorted(SigmaFixed);

    double quad = th.squaredNorm(), mid = 0.0, uu = 0.0;
    for (Index i = 0; i < d1; ++i) {
        const double t = i < r ? th(i) : 0.0;
        const double w2 = omega(i) * omega(i);
        const double sp2 = SigmaFixed(perm[i], perm[i]);
        mid += t * t * w2 / (w2 + bc2);
        uu += w2 * sp2;
    }
    sol.lossValue = (quad - mid + uu + bc2 * SigmaFixed.trace()) / ed2 -
                    h.beta * SigmaFixed.diagonal().array().log().sum();
    return sol;
}

// ---------------------------------------------------------------------------
// HVAE global optima (two latents, unlearnable isotropic Sigma1)
// ---------------------------------------------------------------------------

namespace detail {

struct HvaePair {
    double lambda = 0.0;
    double omega = 0.0;
    CaseTag tag = CaseTag::CaseC;
};

// Per-index optimum for learnable Sigma2.  `hasLambda`/`hasOmega` say whether
// the index exists in V1 resp. U2; indices outside a factor's square part
// follow the corresponding single-branch formulas.
inline HvaePair hvaeLearnablePair(double theta, const Hyperparams& h, bool hasLambda,
                                  bool hasOmega) {
    const double ed2 = h.etaDec * h.etaDec;
    const double ee2 = h.etaEnc * h.etaEnc;
    const double s1 = h.sigma1, s12 = s1 * s1;
    const double ratio = h.beta2 / h.beta;
    const double a = ratio * ed2 / ee2;  // c^2 beta2/beta1
    HvaePair p;
    if (hasLambda && hasOmega) {
        if (theta * theta >= h.beta2 * ed2 / s12 * std::max(s12, ratio * ed2)) {
            p.tag = CaseTag::CaseA;
            p.lambda = s1 / (std::sqrt(h.beta2) * h.etaDec) *
                       std::sqrt(theta * theta - h.beta2 * ed2);
            p.omega = std::sqrt(s12 * theta * theta / (h.beta2 * ee2 * ed2) - a);
        } else if (s12 >= ratio * ed2) {
            p.tag = CaseTag::CaseB;
            p.lambda = 0.0;
            p.omega = std::sqrt((s12 - ratio * ed2) / ee2);
        } else {
            p.tag = CaseTag::CaseC;
            p.omega = 0.0;
            p.lambda = std::sqrt(std::max(0.0, s1 / std::sqrt(h.beta) *
                                                   (theta - std::sqrt(h.beta) * s1)));
        }
    } else if (hasLambda) {
        p.tag = CaseTag::CaseC;
        p.lambda =
            std::sqrt(std::max(0.0, s1 / std::sqrt(h.beta) * (theta - std::sqrt(h.beta) * s1)));
    } else if (hasOmega) {
        p.tag = CaseTag::CaseB;
        p.omega = std::sqrt(std::max(0.0, (s12 - ratio * ed2) / ee2));
    }
    return p;
}

inline AnalyticSolution hvaeAssemble(const HvaeProblem& prob, const Hyperparams& h,
                                     const std::vector<HvaePair>& pairs, const Matrix& R,
                                     const Matrix& S, const Vector& th, const Matrix& Sigma2,
                                     double lossValue) {
    const Index d1 = h.d1, d2 = h.d2, D0 = prob.Z.rows(), d0 = prob.Z.cols();
    const Index r = th.size();
    const double s12 = h.sigma1 * h.sigma1;
    const double a = (h.beta2 / h.beta) * (h.etaDec * h.etaDec) / (h.etaEnc * h.etaEnc);
    (void)R;

    Matrix V1 = Matrix::Zero(d1, d0);
    Matrix U2 = Matrix::Zero(d1, d2);
    const Index nl = std::min(d1, d0);
    const Index nw = std::min(d1, d2);
    for (Index i = 0; i < nl && i < r; ++i) V1.row(i) = pairs[i].lambda * S.col(i).transpose();
    for (Index i = 0; i < nw; ++i) U2(i, i) = pairs[i].omega;

    // W2 = U2^T (U2 U2^T + a I)^{-1},  U1 = Z V1^T (V1 V1^T + sigma1^2 I)^{-1}
    Matrix W2 = Matrix::Zero(d2, d1);
    for (Index i = 0; i < nw; ++i) W2(i, i) = pairs[i].omega / (pairs[i].omega * pairs[i].omega + a);
    Matrix U1 = Matrix::Zero(D0, d1);
    for (Index i = 0; i < nl && i < r; ++i) {
        const double l = pairs[i].lambda;
        // Z S e_i = theta_i R e_i, so this is Z V1^T (V1 V1^T + sigma1^2 I)^{-1} column i
        U1.col(i) = (prob.Z * S.col(i)) * (l / (l * l + s12));
    }

    AnalyticSolution sol;
    sol.family = Family::Hvae;
    const Matrix Sigma1 = s12 * Matrix::Identity(d1, d1);
    sol.params = ModelParams::of(HvaeParams{U1, U2, V1, W2, Sigma1, Sigma2});

    Vector lam(nl), om(nw);
    for (Index i = 0; i < nl; ++i) lam(i) = pairs[i].lambda;
    for (Index i = 0; i < nw; ++i) om(i) = pairs[i].omega;
    sol.lambda = detail::sortedDescending(lam);
    sol.omega = detail::sortedDescending(om);
    sol.sigmaPrime = detail::sigmaDiagSqrtSorted(Sigma2);
    sol.caseTags.resize(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) sol.caseTags[i] = pairs[i].tag;
    sol.collapsed.resize(nw);
    for (Index i = 0; i < nw; ++i) sol.collapsed[i] = (pairs[i].omega == 0.0);
    sol.lossValue = lossValue;
    return sol;
}

}  // namespace detail

inline AnalyticSolution hvae_optimum_learnable(const HvaeProblem& prob, const Hyperparams& h) {
    h.validate(Family::Hvae);
    const Index d1 = h.d1, d2 = h.d2, d0 = prob.Z.cols();
    const double ed2 = h.etaDec * h.etaDec;
    const double ratio = h.beta2 / h.beta;
    const double a = ratio * ed2 / (h.etaEnc * h.etaEnc);
    const double s12 = h.sigma1 * h.sigma1;
    Eigen::JacobiSVD<Matrix> svd(prob.Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& th = svd.singularValues();
    const Index r = th.size();

    const Index npairs = d1;
    std::vector<detail::HvaePair> pairs(npairs);
    for (Index i = 0; i < npairs; ++i) {
        const double t = i < r ? th(i) : 0.0;
        pairs[i] = detail::hvaeLearnablePair(t, h, i < std::min(d1, d0), i < std::min(d1, d2));
    }

    Vector sigma2Diag(d2);
    for (Index i = 0; i < d2; ++i) {
        const double w = i < std::min(d1, d2) ? pairs[i].omega : 0.0;
        sigma2Diag(i) = ratio * ed2 / (w * w + a);
    }
    const Matrix Sigma2 = sigma2Diag.asDiagonal();

    double loss = th.squaredNorm();
    for (Index i = 0; i < std::min(d1, d0); ++i) {
        const double t = i < r ? th(i) : 0.0;
        const double l2 = pairs[i].lambda * pairs[i].lambda;
        loss -= l2 * t * t / (l2 + s12);
    }
    const double c2b2 = h.beta2 * ed2 / (h.etaEnc * h.etaEnc);
    for (Index i = 0; i < d1; ++i) {
        const double l2 = i < std::min(d1, d0) ? pairs[i].lambda * pairs[i].lambda : 0.0;
        const double w2 = i < std::min(d1, d2) ? pairs[i].omega * pairs[i].omega : 0.0;
        loss += c2b2 * (l2 + s12) / (w2 + a);
    }
    loss /= ed2;
    loss += h.beta2 * double(d2) - h.beta * double(d1) * std::log(s12) -
            h.beta2 * double(d2) * std::log(ratio * ed2);
    for (Index i = 0; i < d2; ++i) {
        const double w2 = i < std::min(d1, d2) ? pairs[i].omega * pairs[i].omega : 0.0;
        loss += h.beta2 * std::log(w2 + a);
    }

    return detail::hvaeAssemble(prob, h, pairs, svd.matrixU(), svd.matrixV(), th, Sigma2, loss);
}

inline AnalyticSolution hvae_optimum_fixed(const HvaeProblem& prob, const Hyperparams& h) {
    h.validate(Family::Hvae);
    if (!(h.sigma2 > 0.0)) throw DomainError("hvae_optimum_fixed: sigma2 must be positive");
    const Index d1 = h.d1, d2 = h.d2, d0 = prob.Z.cols();
    Eigen::JacobiSVD<Matrix> svd(prob.Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& th = svd.singularValues();
    const Index r = th.size();
    if (!(d1 == d2 && d0 >= d1 && r >= d1))
        throw UnsupportedRegimeError(
            "hvae_optimum_fixed: requires d0 >= d1 = d2 with full-rank data");

    const double ed2 = h.etaDec * h.etaDec;
    const double c = h.c();
    const double s1 = h.sigma1, s2 = h.sigma2;
    const double b1 = h.beta, b2 = h.beta2;
    const double a = c * c * b2 / b1;
    const double caseBoundary =
        std::max(std::sqrt(std::sqrt(b1 * b2) * c * s1 * s2), b2 / std::sqrt(b1) * c * c * s2 * s2 / s1);

    std::vector<detail::HvaePair> pairs(d1);
    for (Index i = 0; i < d1; ++i) {
        const double t = th(i);
        detail::HvaePair& p = pairs[i];
        if (t >= caseBoundary) {
            p.tag = CaseTag::CaseA;
            p.lambda = std::cbrt(s1 * s1 / (std::sqrt(b1 * b2) * c * s2)) *
                       std::sqrt(std::max(0.0, std::cbrt(t * t * t * t) -
                                                   std::cbrt(b1 * b2 * c * c * s1 * s1 * s2 * s2)));
            p.omega =
                std::cbrt(std::sqrt(b2) * c * s1 / (b1 * s2 * s2)) *
                std::sqrt(std::max(0.0, std::cbrt(t * t) -
                                            std::cbrt(b2 * b2 * c * c * c * c * s2 * s2 * s2 * s2 /
                                                      (b1 * s1 * s1))));
        } else if (std::sqrt(b1) * s1 >= std::sqrt(b2) * c * s2) {
            p.tag = CaseTag::CaseB;
            p.lambda = 0.0;
            p.omega = std::sqrt(std::sqrt(b2 / b1) * c * s1 / s2 - b2 / b1 * c * c);
        } else {
            p.tag = CaseTag::CaseC;
            p.omega = 0.0;
            p.lambda = std::sqrt(std::max(0.0, s1 / std::sqrt(b1) * (t - std::sqrt(b1) * s1)));
        }
    }

    const Matrix Sigma2 = s2 * s2 * Matrix::Identity(d2, d2);
    double loss = th.squaredNorm();
    for (Index i = 0; i < d1; ++i) {
        const double t = th(i);
        const double l2 = pairs[i].lambda * pairs[i].lambda;
        const double w2 = pairs[i].omega * pairs[i].omega;
        loss += -l2 * t * t / (l2 + s1 * s1) + b1 * s2 * s2 * w2 +
                c * c * b2 * (l2 + s1 * s1) / (w2 + a);
    }
    loss += b2 * c * c * s2 * s2 * double(d2);
    loss /= ed2;
    loss += -b1 * double(d1) * std::log(s1 * s1) - b2 * double(d2) * std::log(s2 * s2);

    return detail::hvaeAssemble(prob, h, pairs, svd.matrixU(), svd.matrixV(), th, Sigma2, loss);
}

// ---------------------------------------------------------------------------
// Critical-beta table: the KL weight above which latent index i collapses.
// ---------------------------------------------------------------------------

inline Vector collapse_thresholds(const Vector& thetas, const Hyperparams& h, Family family) {
    for (Index i = 0; i + 1 < thetas.size(); ++i)
        if (thetas(i) < thetas(i + 1))
            throw DomainError("collapse_thresholds: thetas must be non-increasing");
    const double ed2 = h.etaDec * h.etaDec;
    Vector out(thetas.size());
    switch (family) {
        case Family::Cvae:
            out = thetas / ed2;
            break;
        case Family::Vae:
            out = thetas.cwiseProduct(thetas) / ed2;
            break;
        case Family::Hvae: {
            // critical beta2 at fixed beta1 solving the case-a boundary
            const double s1 = h.sigma1;
            const double knee = std::sqrt(h.beta) * s1;
            for (Index i = 0; i < thetas.size(); ++i) {
                const double t = thetas(i);
                out(i) = t <= knee ? t * t / ed2 : std::sqrt(h.beta) * s1 * t / ed2;
            }
            break;
        }
    }
    return out;
}

}  // namespace linvae
