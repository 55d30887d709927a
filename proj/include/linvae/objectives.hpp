#pragma once

#include "linvae/dataset.hpp"
#include "linvae/types.hpp"

#include <optional>
#include <vector>

namespace linvae {

// ---------------------------------------------------------------------------
// Reduced problem data.
//
// VAE/HVAE: Z = P Phi^{1/2} (ambient x d0), the data second moment in factored
// form.  CVAE: Z is the whitened cross moment E[x~ y~^T] (d0 x d2) and
// D = P_B Psi^{1/2} (D2 x d2).
// ---------------------------------------------------------------------------

struct VaeProblem {
    Matrix Z;
};
struct CvaeProblem {
    Matrix Z;
    Matrix D;
};
struct HvaeProblem {
    Matrix Z;
};

inline VaeProblem vaeProblem(const SpectralStats& stats) { return {stats.zMatrix()}; }
inline HvaeProblem hvaeProblem(const SpectralStats& stats) { return {stats.zMatrix()}; }
inline CvaeProblem cvaeProblem(const WhitenedDataset& ds) {
    if (!ds.hasY) throw ShapeError("cvaeProblem: dataset has no output stream");
    return {ds.crossZ, ds.statsY.zMatrix()};
}

// Empirical data moments for minibatch evaluation.  Full-batch whitened data
// has Cxx = Cyy = I and Cxy = Z, which is the default when absent.
struct DataMoments {
    Matrix Cxx;
    Matrix Cyy;
    Matrix Cxy;
};

inline DataMoments batchMoments(const Matrix& xt) {
    DataMoments m;
    m.Cxx = xt.transpose() * xt / double(xt.rows());
    return m;
}
inline DataMoments batchMoments(const Matrix& xt, const Matrix& yt) {
    DataMoments m = batchMoments(xt);
    m.Cyy = yt.transpose() * yt / double(yt.rows());
    m.Cxy = xt.transpose() * yt / double(xt.rows());
    return m;
}

namespace detail {

inline double logDetSpd(const Matrix& S, const char* name) {
    if (S.rows() != S.cols()) throw ShapeError(std::string(name) + " must be square");
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success)
        throw DomainError(std::string(name) + " is not symmetric positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

inline Matrix spdInverse(const Matrix& S, const char* name) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
    const Vector& ev = eig.eigenvalues();
    if (ev(0) <= 0.0) throw DomainError(std::string(name) + " is not positive definite");
    if (ev(ev.size() - 1) / ev(0) > 1e12)
        throw DomainError(std::string(name) + " is near-singular (condition number > 1e12)");
    return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

inline double quadTrace(const Matrix& A, const Matrix& C) {
    // trace(A C A^T); C = I handled by caller via squaredNorm
    return (A * C).cwiseProduct(A).sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Losses (canonical reduced objectives)
// ---------------------------------------------------------------------------

inline LossBreakdown vae_loss(const VaeParams& p, const VaeProblem& prob, const Hyperparams& h,
                              const DataMoments* mom = nullptr) {
    h.validate(Family::Vae);
    if (p.U.rows() != prob.Z.rows() || p.V.cols() != prob.Z.cols() || p.U.cols() != p.V.rows() ||
        p.Sigma.rows() != p.U.cols())
        throw ShapeError("vae_loss: inconsistent shapes");

    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const Matrix Q = p.U * p.V - prob.Z;
    const double quad = mom ? detail::quadTrace(Q, mom->Cxx) : Q.squaredNorm();
    const double encQuad = mom ? detail::quadTrace(p.V, mom->Cxx) : p.V.squaredNorm();
    const double logDet = detail::logDetSpd(p.Sigma, "Sigma");

    LossBreakdown lb;
    lb.lRec = invEd2 * (quad + (p.U.transpose() * p.U * p.Sigma).trace());
    lb.lKL = invEe2 * (encQuad + p.Sigma.trace()) - logDet;
    lb.total = lb.lRec + h.beta * lb.lKL;
    lb.droppedConstant = 0.0;
    return lb;
}

inline LossBreakdown cvae_loss(const CvaeParams& p, const CvaeProblem& prob, const Hyperparams& h,
                               const DataMoments* mom = nullptr) {
    h.validate(Family::Cvae);
    if (p.U1.rows() != prob.D.rows() || p.T2.rows() != prob.D.rows() ||
        p.V1.cols() != prob.Z.rows() || p.V2.cols() != prob.Z.cols() ||
        p.T2.cols() != prob.Z.rows() || p.U1.cols() != p.V1.rows() || p.V2.rows() != p.V1.rows() ||
        p.Sigma.rows() != p.U1.cols())
        throw ShapeError("cvae_loss: inconsistent shapes");

    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const Matrix A = p.U1 * p.V1 + p.T2;
    const Matrix B = p.U1 * p.V2 - prob.D;
    double quad, encQuad;
    if (mom) {
        quad = detail::quadTrace(A, mom->Cxx) + detail::quadTrace(B, mom->Cyy) +
               2.0 * (A * mom->Cxy).cwiseProduct(B).sum();
        encQuad = detail::quadTrace(p.V1, mom->Cxx) + detail::quadTrace(p.V2, mom->Cyy) +
                  2.0 * (p.V1 * mom->Cxy).cwiseProduct(p.V2).sum();
    } else {
        quad = A.squaredNorm() + B.squaredNorm() + 2.0 * (A * prob.Z).cwiseProduct(B).sum();
        encQuad = p.V1.squaredNorm() + p.V2.squaredNorm() +
                  2.0 * (p.V1 * prob.Z).cwiseProduct(p.V2).sum();
    }
    const double logDet = detail::logDetSpd(p.Sigma, "Sigma");

    LossBreakdown lb;
    lb.lRec = invEd2 * (quad + (p.U1.transpose() * p.U1 * p.Sigma).trace());
    lb.lKL = invEe2 * (encQuad + p.Sigma.trace()) - logDet;
    lb.total = lb.lRec + h.beta * lb.lKL;
    lb.droppedConstant = -h.beta * double(p.U1.cols());
    return lb;
}

inline LossBreakdown hvae_loss(const HvaeParams& p, const HvaeProblem& prob, const Hyperparams& h,
                               const DataMoments* mom = nullptr) {
    h.validate(Family::Hvae);
    const Index d1 = p.U1.cols(), d2 = p.U2.cols();
    if (p.U1.rows() != prob.Z.rows() || p.V1.cols() != prob.Z.cols() || p.V1.rows() != d1 ||
        p.U2.rows() != d1 || p.W2.rows() != d2 || p.W2.cols() != d1 || p.Sigma1.rows() != d1 ||
        p.Sigma2.rows() != d2)
        throw ShapeError("hvae_loss: inconsistent shapes");

    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const Matrix Q = p.U1 * p.V1 - prob.Z;
    const Matrix G = p.U2 * p.W2 - Matrix::Identity(d1, d1);
    const Matrix GV = G * p.V1;
    const Matrix WV = p.W2 * p.V1;
    const double quad = mom ? detail::quadTrace(Q, mom->Cxx) : Q.squaredNorm();
    const double quadGV = mom ? detail::quadTrace(GV, mom->Cxx) : GV.squaredNorm();
    const double quadWV = mom ? detail::quadTrace(WV, mom->Cxx) : WV.squaredNorm();
    const double logDet1 = detail::logDetSpd(p.Sigma1, "Sigma1");
    const double logDet2 = detail::logDetSpd(p.Sigma2, "Sigma2");

    LossBreakdown lb;
    lb.lRec = invEd2 * (quad + (p.U1.transpose() * p.U1 * p.Sigma1).trace());
    lb.lKL1 = invEd2 * (quadGV + (G.transpose() * G * p.Sigma1).trace() +
                        (p.U2.transpose() * p.U2 * p.Sigma2).trace()) -
              logDet1;
    lb.lKL2 = invEe2 * (quadWV + (p.W2.transpose() * p.W2 * p.Sigma1).trace() + p.Sigma2.trace()) -
              logDet2;
    lb.total = lb.lRec + h.beta * lb.lKL1 + h.beta2 * lb.lKL2;
    lb.droppedConstant = -h.beta * double(d1) - h.beta2 * double(d2);
    return lb;
}

inline LossBreakdown model_loss(const ModelParams& p, const VaeProblem* vp, const CvaeProblem* cp,
                                const HvaeProblem* hp, const Hyperparams& h) {
    switch (p.family) {
        case Family::Vae: return vae_loss(p.vae(), *vp, h);
        case Family::Cvae: return cvae_loss(p.cvae(), *cp, h);
        case Family::Hvae: return hvae_loss(p.hvae(), *hp, h);
    }
    throw DomainError("model_loss: unknown family");
}

// ---------------------------------------------------------------------------
// Sample-wise encoder covariances: the loss is the mean of per-sample losses,
// each with its own Sigma_i.
// ---------------------------------------------------------------------------

inline LossBreakdown vae_loss_per_sample(const VaeParams& shared, const std::vector<Matrix>& sigmas,
                                         const VaeProblem& prob, const Matrix& xt,
                                         const Hyperparams& h) {
    const Index n = xt.rows();
    if (static_cast<Index>(sigmas.size()) != n)
        throw ShapeError("vae_loss_per_sample: one Sigma per sample required");
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const Matrix Q = shared.U * shared.V - prob.Z;
    const Matrix UtU = shared.U.transpose() * shared.U;
    LossBreakdown lb;
    for (Index i = 0; i < n; ++i) {
        const Vector xi = xt.row(i).transpose();
        const double logDet = detail::logDetSpd(sigmas[i], "Sigma_i");
        lb.lRec += invEd2 * ((Q * xi).squaredNorm() + (UtU * sigmas[i]).trace());
        lb.lKL += invEe2 * ((shared.V * xi).squaredNorm() + sigmas[i].trace()) - logDet;
    }
    lb.lRec /= double(n);
    lb.lKL /= double(n);
    lb.total = lb.lRec + h.beta * lb.lKL;
    return lb;
}

inline LossBreakdown cvae_loss_per_sample(const CvaeParams& shared,
                                          const std::vector<Matrix>& sigmas,
                                          const CvaeProblem& prob, const Matrix& xt,
                                          const Matrix& yt, const Hyperparams& h) {
    const Index n = xt.rows();
    if (yt.rows() != n || static_cast<Index>(sigmas.size()) != n)
        throw ShapeError("cvae_loss_per_sample: sample counts differ");
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const Matrix A = shared.U1 * shared.V1 + shared.T2;
    const Matrix B = shared.U1 * shared.V2 - prob.D;
    const Matrix UtU = shared.U1.transpose() * shared.U1;
    LossBreakdown lb;
    for (Index i = 0; i < n; ++i) {
        const Vector xi = xt.row(i).transpose();
        const Vector yi = yt.row(i).transpose();
        const double logDet = detail::logDetSpd(sigmas[i], "Sigma_i");
        lb.lRec += invEd2 * ((A * xi + B * yi).squaredNorm() + (UtU * sigmas[i]).trace());
        lb.lKL +=
            invEe2 * ((shared.V1 * xi + shared.V2 * yi).squaredNorm() + sigmas[i].trace()) - logDet;
    }
    lb.lRec /= double(n);
    lb.lKL /= double(n);
    lb.total = lb.lRec + h.beta * lb.lKL;
    lb.droppedConstant = -h.beta * double(shared.U1.cols());
    return lb;
}

inline LossBreakdown hvae_loss_per_sample(const HvaeParams& shared,
                                          const std::vector<Matrix>& sigma1s,
                                          const std::vector<Matrix>& sigma2s,
                                          const HvaeProblem& prob, const Matrix& xt,
                                          const Hyperparams& h) {
    const Index n = xt.rows();
    if (static_cast<Index>(sigma1s.size()) != n || static_cast<Index>(sigma2s.size()) != n)
        throw ShapeError("hvae_loss_per_sample: one covariance pair per sample required");
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const Index d1 = shared.U1.cols();
    const Matrix Q = shared.U1 * shared.V1 - prob.Z;
    const Matrix G = shared.U2 * shared.W2 - Matrix::Identity(d1, d1);
    const Matrix U1tU1 = shared.U1.transpose() * shared.U1;
    const Matrix U2tU2 = shared.U2.transpose() * shared.U2;
    const Matrix GtG = G.transpose() * G;
    const Matrix W2tW2 = shared.W2.transpose() * shared.W2;
    LossBreakdown lb;
    for (Index i = 0; i < n; ++i) {
        const Vector xi = xt.row(i).transpose();
        const Vector v1x = shared.V1 * xi;
        const double ld1 = detail::logDetSpd(sigma1s[i], "Sigma1_i");
        const double ld2 = detail::logDetSpd(sigma2s[i], "Sigma2_i");
        lb.lRec += invEd2 * ((Q * xi).squaredNorm() + (U1tU1 * sigma1s[i]).trace());
        lb.lKL1 += invEd2 * ((G * v1x).squaredNorm() + (GtG * sigma1s[i]).trace() +
                             (U2tU2 * sigma2s[i]).trace()) -
                   ld1;
        lb.lKL2 += invEe2 * ((shared.W2 * v1x).squaredNorm() + (W2tW2 * sigma1s[i]).trace() +
                             sigma2s[i].trace()) -
                   ld2;
    }
    lb.lRec /= double(n);
    lb.lKL1 /= double(n);
    lb.lKL2 /= double(n);
    lb.total = lb.lRec + h.beta * lb.lKL1 + h.beta2 * lb.lKL2;
    lb.droppedConstant = -h.beta * double(d1) - h.beta2 * double(shared.U2.cols());
    return lb;
}

// ---------------------------------------------------------------------------
// Analytic gradients of the reduced losses
// ---------------------------------------------------------------------------

struct VaeGrads {
    Matrix U, V, Sigma;
};
struct CvaeGrads {
    Matrix U1, V1, V2, T2, Sigma;
};
struct HvaeGrads {
    Matrix U1, U2, V1, W2, Sigma1, Sigma2;
};

inline VaeGrads vae_gradient(const VaeParams& p, const VaeProblem& prob, const Hyperparams& h,
                             const DataMoments* mom = nullptr, LossBreakdown* lbOut = nullptr) {
    const double s = 2.0 / (h.etaDec * h.etaDec);
    const double bc2 = h.beta * h.c() * h.c();
    const Matrix Q = p.U * p.V - prob.Z;
    VaeGrads g;
    if (mom) {
        const Matrix QC = Q * mom->Cxx;
        g.U = s * (QC * p.V.transpose() + p.U * p.Sigma);
        g.V = s * (p.U.transpose() * QC + bc2 * p.V * mom->Cxx);
        if (lbOut) {
            lbOut->lRec = (QC.cwiseProduct(Q).sum() + (p.U.transpose() * p.U * p.Sigma).trace()) /
                          (h.etaDec * h.etaDec);
            lbOut->lKL = (detail::quadTrace(p.V, mom->Cxx) + p.Sigma.trace()) /
                             (h.etaEnc * h.etaEnc) -
                         detail::logDetSpd(p.Sigma, "Sigma");
        }
    } else {
        g.U = s * (Q * p.V.transpose() + p.U * p.Sigma);
        g.V = s * (p.U.transpose() * Q + bc2 * p.V);
        if (lbOut) {
            lbOut->lRec = (Q.squaredNorm() + (p.U.transpose() * p.U * p.Sigma).trace()) /
                          (h.etaDec * h.etaDec);
            lbOut->lKL = (p.V.squaredNorm() + p.Sigma.trace()) / (h.etaEnc * h.etaEnc) -
                         detail::logDetSpd(p.Sigma, "Sigma");
        }
    }
    if (lbOut) {
        lbOut->lKL1 = lbOut->lKL2 = 0.0;
        lbOut->total = lbOut->lRec + h.beta * lbOut->lKL;
        lbOut->droppedConstant = 0.0;
    }
    g.Sigma = (p.U.transpose() * p.U + bc2 * Matrix::Identity(p.U.cols(), p.U.cols())) /
                  (h.etaDec * h.etaDec) -
              h.beta * detail::spdInverse(p.Sigma, "Sigma");
    return g;
}

inline CvaeGrads cvae_gradient(const CvaeParams& p, const CvaeProblem& prob, const Hyperparams& h,
                               const DataMoments* mom = nullptr, LossBreakdown* lbOut = nullptr) {
    const double s = 2.0 / (h.etaDec * h.etaDec);
    const double bc2 = h.beta * h.c() * h.c();
    const Matrix A = p.U1 * p.V1 + p.T2;
    const Matrix B = p.U1 * p.V2 - prob.D;
    const Matrix& Cxy = mom ? mom->Cxy : prob.Z;
    CvaeGrads g;
    double quad = 0.0, encQuad = 0.0;
    if (mom) {
        const Matrix ACx = A * mom->Cxx;
        const Matrix BCy = B * mom->Cyy;
        const Matrix ACxy = A * Cxy;          // D2 x d2
        const Matrix BCyx = B * Cxy.transpose();  // D2 x d0
        g.T2 = s * (ACx + BCyx);
        g.U1 = s * (ACx * p.V1.transpose() + BCy * p.V2.transpose() + ACxy * p.V2.transpose() +
                    BCyx * p.V1.transpose() + p.U1 * p.Sigma);
        g.V1 = s * (p.U1.transpose() * (ACx + BCyx) + bc2 * (p.V1 * mom->Cxx + p.V2 * Cxy.transpose()));
        g.V2 = s * (p.U1.transpose() * (BCy + ACxy) + bc2 * (p.V2 * mom->Cyy + p.V1 * Cxy));
        if (lbOut) {
            quad = ACx.cwiseProduct(A).sum() + BCy.cwiseProduct(B).sum() +
                   2.0 * ACxy.cwiseProduct(B).sum();
            encQuad = detail::quadTrace(p.V1, mom->Cxx) + detail::quadTrace(p.V2, mom->Cyy) +
                      2.0 * (p.V1 * Cxy).cwiseProduct(p.V2).sum();
        }
    } else {
        const Matrix AZ = A * Cxy;            // D2 x d2
        const Matrix BZt = B * Cxy.transpose();  // D2 x d0
        g.T2 = s * (A + BZt);
        g.U1 = s * (A * p.V1.transpose() + B * p.V2.transpose() + AZ * p.V2.transpose() +
                    BZt * p.V1.transpose() + p.U1 * p.Sigma);
        g.V1 = s * (p.U1.transpose() * (A + BZt) + bc2 * (p.V1 + p.V2 * Cxy.transpose()));
        g.V2 = s * (p.U1.transpose() * (B + AZ) + bc2 * (p.V2 + p.V1 * Cxy));
        if (lbOut) {
            quad = A.squaredNorm() + B.squaredNorm() + 2.0 * AZ.cwiseProduct(B).sum();
            encQuad = p.V1.squaredNorm() + p.V2.squaredNorm() +
                      2.0 * (p.V1 * Cxy).cwiseProduct(p.V2).sum();
        }
    }
    if (lbOut) {
        lbOut->lRec =
            (quad + (p.U1.transpose() * p.U1 * p.Sigma).trace()) / (h.etaDec * h.etaDec);
        lbOut->lKL = (encQuad + p.Sigma.trace()) / (h.etaEnc * h.etaEnc) -
                     detail::logDetSpd(p.Sigma, "Sigma");
        lbOut->lKL1 = lbOut->lKL2 = 0.0;
        lbOut->total = lbOut->lRec + h.beta * lbOut->lKL;
        lbOut->droppedConstant = -h.beta * double(p.U1.cols());
    }
    g.Sigma = (p.U1.transpose() * p.U1 + bc2 * Matrix::Identity(p.U1.cols(), p.U1.cols())) /
                  (h.etaDec * h.etaDec) -
              h.beta * detail::spdInverse(p.Sigma, "Sigma");
    return g;
}

inline HvaeGrads hvae_gradient(const HvaeParams& p, const HvaeProblem& prob, const Hyperparams& h,
                               const DataMoments* mom = nullptr, LossBreakdown* lbOut = nullptr) {
    const double s = 2.0 / (h.etaDec * h.etaDec);
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    const double c2 = h.c() * h.c();
    const Index d1 = p.U1.cols(), d2 = p.U2.cols();
    const Matrix Q = p.U1 * p.V1 - prob.Z;
    const Matrix G = p.U2 * p.W2 - Matrix::Identity(d1, d1);
    const Matrix QC = mom ? Matrix(Q * mom->Cxx) : Q;
    const Matrix VC = mom ? Matrix(p.V1 * mom->Cxx) : p.V1;   // V1 Cxx
    const Matrix GV = G * VC;
    const Matrix WV = p.W2 * VC;
    const Matrix VVt = VC * p.V1.transpose();                 // V1 Cxx V1^T
    HvaeGrads g;
    g.U1 = s * (QC * p.V1.transpose() + p.U1 * p.Sigma1);
    g.V1 = s * (p.U1.transpose() * QC + h.beta * G.transpose() * GV +
                h.beta2 * c2 * p.W2.transpose() * WV);
    g.U2 = s * (h.beta * G * (VVt + p.Sigma1) * p.W2.transpose() + h.beta * p.U2 * p.Sigma2);
    g.W2 = s * (h.beta * p.U2.transpose() * G * (VVt + p.Sigma1) +
                h.beta2 * c2 * p.W2 * (VVt + p.Sigma1));
    if (lbOut) {
        lbOut->lRec = invEd2 * (QC.cwiseProduct(Q).sum() +
                                (p.U1.transpose() * p.U1 * p.Sigma1).trace());
        lbOut->lKL1 = invEd2 * (GV.cwiseProduct(G * p.V1).sum() +
                                (G.transpose() * G * p.Sigma1).trace() +
                                (p.U2.transpose() * p.U2 * p.Sigma2).trace()) -
                      detail::logDetSpd(p.Sigma1, "Sigma1");
        lbOut->lKL2 = invEe2 * (WV.cwiseProduct(p.W2 * p.V1).sum() +
                                (p.W2.transpose() * p.W2 * p.Sigma1).trace() + p.Sigma2.trace()) -
                      detail::logDetSpd(p.Sigma2, "Sigma2");
        lbOut->lKL = 0.0;
        lbOut->total = lbOut->lRec + h.beta * lbOut->lKL1 + h.beta2 * lbOut->lKL2;
        lbOut->droppedConstant = -h.beta * double(d1) - h.beta2 * double(d2);
    }
    g.Sigma1 = invEd2 * (p.U1.transpose() * p.U1 + h.beta * G.transpose() * G +
                         h.beta2 * c2 * p.W2.transpose() * p.W2) -
               h.beta * detail::spdInverse(p.Sigma1, "Sigma1");
    g.Sigma2 =
        invEd2 * (h.beta * p.U2.transpose() * p.U2 + h.beta2 * c2 * Matrix::Identity(d2, d2)) -
        h.beta2 * detail::spdInverse(p.Sigma2, "Sigma2");
    return g;
}

// ---------------------------------------------------------------------------
// Per-sample-covariance gradients.  Weight gradients are the means of the
// per-sample gradients; each Sigma_i gradient carries the 1/N weight.
// ---------------------------------------------------------------------------

struct VaePerSampleGrads {
    Matrix U, V;
    std::vector<Matrix> sigmas;
};
struct CvaePerSampleGrads {
    Matrix U1, V1, V2, T2;
    std::vector<Matrix> sigmas;
};
struct HvaePerSampleGrads {
    Matrix U1, U2, V1, W2;
    std::vector<Matrix> sigma1s, sigma2s;
};

namespace detail {

inline Matrix meanOf(const std::vector<Matrix>& ms) {
    Matrix m = Matrix::Zero(ms[0].rows(), ms[0].cols());
    for (const auto& s : ms) m += s;
    return m / double(ms.size());
}

}  // namespace detail

inline VaePerSampleGrads vae_gradient_per_sample(const VaeParams& shared,
                                                 const std::vector<Matrix>& sigmas,
                                                 const VaeProblem& prob, const Matrix& xt,
                                                 const Hyperparams& h) {
    const Index n = xt.rows(), d1 = shared.U.cols();
    if (static_cast<Index>(sigmas.size()) != n)
        throw ShapeError("vae_gradient_per_sample: one Sigma per sample required");
    const DataMoments mom = batchMoments(xt);
    VaeParams bar = shared;
    bar.Sigma = detail::meanOf(sigmas);
    const VaeGrads g = vae_gradient(bar, prob, h, &mom);
    VaePerSampleGrads out;
    out.U = g.U;
    out.V = g.V;
    const Matrix base = (shared.U.transpose() * shared.U +
                         h.beta * h.c() * h.c() * Matrix::Identity(d1, d1)) /
                        (h.etaDec * h.etaDec);
    for (Index i = 0; i < n; ++i)
        out.sigmas.push_back((base - h.beta * detail::spdInverse(sigmas[i], "Sigma_i")) /
                             double(n));
    return out;
}

inline CvaePerSampleGrads cvae_gradient_per_sample(const CvaeParams& shared,
                                                   const std::vector<Matrix>& sigmas,
                                                   const CvaeProblem& prob, const Matrix& xt,
                                                   const Matrix& yt, const Hyperparams& h) {
    const Index n = xt.rows(), d1 = shared.U1.cols();
    if (yt.rows() != n || static_cast<Index>(sigmas.size()) != n)
        throw ShapeError("cvae_gradient_per_sample: sample counts differ");
    const DataMoments mom = batchMoments(xt, yt);
    CvaeParams bar = shared;
    bar.Sigma = detail::meanOf(sigmas);
    const CvaeGrads g = cvae_gradient(bar, prob, h, &mom);
    CvaePerSampleGrads out;
    out.U1 = g.U1;
    out.V1 = g.V1;
    out.V2 = g.V2;
    out.T2 = g.T2;
    const Matrix base = (shared.U1.transpose() * shared.U1 +
                         h.beta * h.c() * h.c() * Matrix::Identity(d1, d1)) /
                        (h.etaDec * h.etaDec);
    for (Index i = 0; i < n; ++i)
        out.sigmas.push_back((base - h.beta * detail::spdInverse(sigmas[i], "Sigma_i")) /
                             double(n));
    return out;
}

inline HvaePerSampleGrads hvae_gradient_per_sample(const HvaeParams& shared,
                                                   const std::vector<Matrix>& sigma1s,
                                                   const std::vector<Matrix>& sigma2s,
                                                   const HvaeProblem& prob, const Matrix& xt,
                                                   const Hyperparams& h) {
    const Index n = xt.rows(), d1 = shared.U1.cols(), d2 = shared.U2.cols();
    if (static_cast<Index>(sigma1s.size()) != n || static_cast<Index>(sigma2s.size()) != n)
        throw ShapeError("hvae_gradient_per_sample: one covariance pair per sample required");
    const DataMoments mom = batchMoments(xt);
    HvaeParams bar = shared;
    bar.Sigma1 = detail::meanOf(sigma1s);
    bar.Sigma2 = detail::meanOf(sigma2s);
    const HvaeGrads g = hvae_gradient(bar, prob, h, &mom);
    HvaePerSampleGrads out;
    out.U1 = g.U1;
    out.U2 = g.U2;
    out.V1 = g.V1;
    out.W2 = g.W2;
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double c2 = h.c() * h.c();
    const Matrix G = shared.U2 * shared.W2 - Matrix::Identity(d1, d1);
    const Matrix base1 = invEd2 * (shared.U1.transpose() * shared.U1 +
                                   h.beta * G.transpose() * G +
                                   h.beta2 * c2 * shared.W2.transpose() * shared.W2);
    const Matrix base2 = invEd2 * (h.beta * shared.U2.transpose() * shared.U2 +
                                   h.beta2 * c2 * Matrix::Identity(d2, d2));
    for (Index i = 0; i < n; ++i) {
        out.sigma1s.push_back(
            (base1 - h.beta * detail::spdInverse(sigma1s[i], "Sigma1_i")) / double(n));
        out.sigma2s.push_back(
            (base2 - h.beta2 * detail::spdInverse(sigma2s[i], "Sigma2_i")) / double(n));
    }
    return out;
}

// Euclidean norm of the gradient over the weight matrices, plus the
// covariance blocks when they are learnable.
inline double gradient_norm(const ModelParams& p, const VaeProblem* vp, const CvaeProblem* cp,
                            const HvaeProblem* hp, const Hyperparams& h, SigmaMode mode) {
    double s = 0.0;
    switch (p.family) {
        case Family::Vae: {
            VaeGrads g = vae_gradient(p.vae(), *vp, h);
            s = g.U.squaredNorm() + g.V.squaredNorm();
            if (mode == SigmaMode::Learnable) s += g.Sigma.squaredNorm();
            break;
        }
        case Family::Cvae: {
            CvaeGrads g = cvae_gradient(p.cvae(), *cp, h);
            s = g.U1.squaredNorm() + g.V1.squaredNorm() + g.V2.squaredNorm() + g.T2.squaredNorm();
            if (mode == SigmaMode::Learnable) s += g.Sigma.squaredNorm();
            break;
        }
        case Family::Hvae: {
            HvaeGrads g = hvae_gradient(p.hvae(), *hp, h);
            s = g.U1.squaredNorm() + g.U2.squaredNorm() + g.V1.squaredNorm() + g.W2.squaredNorm();
            if (mode == SigmaMode::Learnable) s += g.Sigma2.squaredNorm();
            break;
        }
    }
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Original-coordinate parameters and objectives.  These exist to certify the
// change-of-variables reduction: original = reduced + droppedConstant.
// ---------------------------------------------------------------------------

struct OriginalVaeParams {
    Matrix U, W, Sigma;  // U: D0 x d1, W: d1 x D0
};
struct OriginalCvaeParams {
    Matrix U1, U2, W1, W2, Sigma;  // U1: D2 x d1, U2: D2 x D0, W1: d1 x D0, W2: d1 x D2
};
struct OriginalHvaeParams {
    Matrix U1, U2, W1, W2, Sigma1, Sigma2;  // U1: D0 x d1, U2: d1 x d2, W1: d1 x D0, W2: d2 x d1
};

inline VaeParams reduceParams(const OriginalVaeParams& p, const SpectralStats& sx) {
    return {p.U, p.W * sx.zMatrix(), p.Sigma};
}
inline CvaeParams reduceParams(const OriginalCvaeParams& p, const SpectralStats& sx,
                               const SpectralStats& sy) {
    return {p.U1, p.W1 * sx.zMatrix(), p.W2 * sy.zMatrix(), p.U2 * sx.zMatrix(), p.Sigma};
}
inline HvaeParams reduceParams(const OriginalHvaeParams& p, const SpectralStats& sx) {
    return {p.U1, p.U2, p.W1 * sx.zMatrix(), p.W2, p.Sigma1, p.Sigma2};
}

inline double vae_loss_original(const OriginalVaeParams& p, const SpectralStats& sx,
                                const Hyperparams& h) {
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double bc2 = h.beta * h.c() * h.c();
    const Matrix A = sx.secondMoment();
    const Matrix R = p.U * p.W - Matrix::Identity(A.rows(), A.rows());
    const double logDet = detail::logDetSpd(p.Sigma, "Sigma");
    return invEd2 * ((R * A).cwiseProduct(R).sum() +
                     ((p.U.transpose() * p.U + bc2 * Matrix::Identity(p.U.cols(), p.U.cols())) *
                      p.Sigma)
                         .trace() +
                     bc2 * (p.W * A).cwiseProduct(p.W).sum()) -
           h.beta * logDet;
}

inline double cvae_loss_original(const OriginalCvaeParams& p, const SpectralStats& sx,
                                 const SpectralStats& sy, const Matrix& Z, const Hyperparams& h) {
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double bc2 = h.beta * h.c() * h.c();
    const Matrix A = sx.secondMoment();
    const Matrix B = sy.secondMoment();
    const Matrix C = sx.zMatrix() * Z * sy.zMatrix().transpose();  // E[x y^T]
    const Matrix Gx = p.U1 * p.W1 + p.U2;
    const Matrix Gy = p.U1 * p.W2 - Matrix::Identity(B.rows(), B.rows());
    const double recon = (Gx * A).cwiseProduct(Gx).sum() + (Gy * B).cwiseProduct(Gy).sum() +
                         2.0 * (Gx * C).cwiseProduct(Gy).sum();
    const double enc = (p.W1 * A).cwiseProduct(p.W1).sum() + (p.W2 * B).cwiseProduct(p.W2).sum() +
                       2.0 * (p.W1 * C).cwiseProduct(p.W2).sum();
    const double logDet = detail::logDetSpd(p.Sigma, "Sigma");
    const Index d1 = p.U1.cols();
    return invEd2 * (recon + (p.U1 * p.Sigma).cwiseProduct(p.U1).sum() +
                     bc2 * (enc + p.Sigma.trace())) -
           h.beta * double(d1) - h.beta * logDet;
}

inline double hvae_loss_original(const OriginalHvaeParams& p, const SpectralStats& sx,
                                 const Hyperparams& h) {
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double c2 = h.c() * h.c();
    const Matrix A = sx.secondMoment();
    const Index d1 = p.U1.cols(), d2 = p.U2.cols();
    const Matrix R = p.U1 * p.W1 - Matrix::Identity(A.rows(), A.rows());
    const Matrix G = p.U2 * p.W2 - Matrix::Identity(d1, d1);
    const Matrix GW = G * p.W1;
    const Matrix WW = p.W2 * p.W1;
    const double ld1 = detail::logDetSpd(p.Sigma1, "Sigma1");
    const double ld2 = detail::logDetSpd(p.Sigma2, "Sigma2");
    return invEd2 *
               ((R * A).cwiseProduct(R).sum() + (p.U1 * p.Sigma1).cwiseProduct(p.U1).sum() +
                h.beta * ((GW * A).cwiseProduct(GW).sum() +
                          (p.U2 * p.Sigma2).cwiseProduct(p.U2).sum() +
                          (G * p.Sigma1).cwiseProduct(G).sum()) +
                h.beta2 * c2 *
                    ((WW * A).cwiseProduct(WW).sum() + (p.W2 * p.Sigma1).cwiseProduct(p.W2).sum() +
                     p.Sigma2.trace())) -
           h.beta * double(d1) - h.beta2 * double(d2) - h.beta * ld1 - h.beta2 * ld2;
}

// ---------------------------------------------------------------------------
// Reparameterized Monte-Carlo estimate of the objective
// ---------------------------------------------------------------------------

struct McEstimate {
    double estimate = 0.0;
    double standardError = 0.0;
};

namespace detail {

inline Matrix cholFactor(const Matrix& S, const char* name) {
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success)
        throw DomainError(std::string(name) + " is not symmetric positive definite");
    return llt.matrixL();
}

template <typename PerDraw>
McEstimate mcAccumulate(Index nDraws, PerDraw&& draw) {
    if (nDraws < 1) throw DomainError("mc_elbo: need at least one draw");
    double sum = 0.0, sumSq = 0.0;
    for (Index k = 0; k < nDraws; ++k) {
        const double v = draw();
        sum += v;
        sumSq += v * v;
    }
    McEstimate e;
    e.estimate = sum / double(nDraws);
    const double var = std::max(0.0, (sumSq - sum * sum / double(nDraws)) / double(nDraws - 1));
    e.standardError = nDraws > 1 ? std::sqrt(var / double(nDraws)) : 0.0;
    return e;
}

inline Vector stdNormal(Rng& rng, Index d) {
    Vector v(d);
    for (Index i = 0; i < d; ++i) v(i) = rng.normal();
    return v;
}

}  // namespace detail

inline McEstimate mc_elbo_vae(const VaeParams& p, const VaeProblem& prob, const Matrix& xt,
                              const Hyperparams& h, Index nDraws, std::uint64_t seed) {
    const Matrix L = detail::cholFactor(p.Sigma, "Sigma");
    const double logDet = 2.0 * L.diagonal().array().log().sum();
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    Rng rng(seed);
    const Index n = xt.rows(), d1 = p.U.cols();
    return detail::mcAccumulate(nDraws, [&] {
        const Vector xi = xt.row(static_cast<Index>(rng.below(n))).transpose();
        const Vector z = p.V * xi + L * detail::stdNormal(rng, d1);
        return invEd2 * (p.U * z - prob.Z * xi).squaredNorm() +
               h.beta * (invEe2 * z.squaredNorm() - logDet);
    });
}

inline McEstimate mc_elbo_cvae(const CvaeParams& p, const CvaeProblem& prob, const Matrix& xt,
                               const Matrix& yt, const Hyperparams& h, Index nDraws,
                               std::uint64_t seed) {
    const Matrix L = detail::cholFactor(p.Sigma, "Sigma");
    const double logDet = 2.0 * L.diagonal().array().log().sum();
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    Rng rng(seed);
    const Index n = xt.rows(), d1 = p.U1.cols();
    return detail::mcAccumulate(nDraws, [&] {
        const Index i = static_cast<Index>(rng.below(n));
        const Vector xi = xt.row(i).transpose();
        const Vector yi = yt.row(i).transpose();
        const Vector z = p.V1 * xi + p.V2 * yi + L * detail::stdNormal(rng, d1);
        return invEd2 * (p.U1 * z + p.T2 * xi - prob.D * yi).squaredNorm() +
               h.beta * (invEe2 * z.squaredNorm() - logDet);
    });
}

inline McEstimate mc_elbo_hvae(const HvaeParams& p, const HvaeProblem& prob, const Matrix& xt,
                               const Hyperparams& h, Index nDraws, std::uint64_t seed) {
    const Matrix L1 = detail::cholFactor(p.Sigma1, "Sigma1");
    const Matrix L2 = detail::cholFactor(p.Sigma2, "Sigma2");
    const double logDet1 = 2.0 * L1.diagonal().array().log().sum();
    const double logDet2 = 2.0 * L2.diagonal().array().log().sum();
    const double invEd2 = 1.0 / (h.etaDec * h.etaDec);
    const double invEe2 = 1.0 / (h.etaEnc * h.etaEnc);
    Rng rng(seed);
    const Index n = xt.rows(), d1 = p.U1.cols(), d2 = p.U2.cols();
    return detail::mcAccumulate(nDraws, [&] {
        const Vector xi = xt.row(static_cast<Index>(rng.below(n))).transpose();
        const Vector z1 = p.V1 * xi + L1 * detail::stdNormal(rng, d1);
        const Vector z2 = p.W2 * z1 + L2 * detail::stdNormal(rng, d2);
        return invEd2 * (p.U1 * z1 - prob.Z * xi).squaredNorm() +
               h.beta * (invEd2 * (p.U2 * z2 - z1).squaredNorm() - logDet1) +
               h.beta2 * (invEe2 * z2.squaredNorm() - logDet2);
    });
}

}  // namespace linvae
