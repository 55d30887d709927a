#pragma once

#include "linvae/common.hpp"

#include <variant>

namespace linvae {

enum class Family { Vae, Cvae, Hvae };

inline const char* familyName(Family f) {
    switch (f) {
        case Family::Vae: return "vae";
        case Family::Cvae: return "cvae";
        case Family::Hvae: return "hvae";
    }
    return "?";
}

enum class SigmaMode { Fixed, Learnable, PerSample };

// Every scalar knob of the objectives.  `beta` is the single KL weight for
// VAE/CVAE and plays the role of beta1 for HVAE; `beta2` weighs the second
// latent's KL term.  `d1`/`d2` are latent dimensions.
struct Hyperparams {
    double beta = 1.0;
    double beta2 = 1.0;
    double etaEnc = 1.0;
    double etaDec = 1.0;
    double sigma1 = 1.0;  // fixed isotropic Sigma1 scale (HVAE)
    double sigma2 = 1.0;  // fixed isotropic Sigma2 scale (HVAE, fixed setting)
    Index d1 = 0;
    Index d2 = 0;

    double c() const { return etaDec / etaEnc; }

    void validate(Family family) const {
        auto pos = [](double v, const char* n) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw DomainError(std::string("hyperparameter ") + n + " must be positive");
        };
        pos(beta, "beta");
        pos(etaEnc, "eta_enc");
        pos(etaDec, "eta_dec");
        if (d1 <= 0) throw DomainError("latent dimension d1 must be >= 1");
        if (family == Family::Hvae) {
            pos(beta2, "beta2");
            pos(sigma1, "sigma1");
            if (d2 <= 0) throw DomainError("latent dimension d2 must be >= 1");
        }
    }
};

// ---------------------------------------------------------------------------
// Model parameters, whitened/reduced frame.
//
// VAE:   decoder U (D0 x d1), encoder V (d1 x d0), encoder covariance Sigma.
// CVAE:  z-decoder U1 (D2 x d1), skip decoder T2 (D2 x d0),
//        encoders V1 (d1 x d0), V2 (d1 x d2), covariance Sigma.
// HVAE:  decoders U1 (D0 x d1), U2 (d1 x d2),
//        encoders V1 (d1 x d0), W2 (d2 x d1), covariances Sigma1, Sigma2.
// ---------------------------------------------------------------------------

struct VaeParams {
    Matrix U, V, Sigma;
};

struct CvaeParams {
    Matrix U1, V1, V2, T2, Sigma;
};

struct HvaeParams {
    Matrix U1, U2, V1, W2, Sigma1, Sigma2;
};

struct ModelParams {
    Family family = Family::Vae;
    std::variant<VaeParams, CvaeParams, HvaeParams> value;

    VaeParams& vae() { return std::get<VaeParams>(value); }
    const VaeParams& vae() const { return std::get<VaeParams>(value); }
    CvaeParams& cvae() { return std::get<CvaeParams>(value); }
    const CvaeParams& cvae() const { return std::get<CvaeParams>(value); }
    HvaeParams& hvae() { return std::get<HvaeParams>(value); }
    const HvaeParams& hvae() const { return std::get<HvaeParams>(value); }

    static ModelParams of(VaeParams p) { return {Family::Vae, std::move(p)}; }
    static ModelParams of(CvaeParams p) { return {Family::Cvae, std::move(p)}; }
    static ModelParams of(HvaeParams p) { return {Family::Hvae, std::move(p)}; }

    double norm() const {
        double s = 0.0;
        std::visit([&](const auto& p) { s = paramNorm2(p); }, value);
        return std::sqrt(s);
    }

  private:
    static double paramNorm2(const VaeParams& p) {
        return p.U.squaredNorm() + p.V.squaredNorm() + p.Sigma.squaredNorm();
    }
    static double paramNorm2(const CvaeParams& p) {
        return p.U1.squaredNorm() + p.V1.squaredNorm() + p.V2.squaredNorm() +
               p.T2.squaredNorm() + p.Sigma.squaredNorm();
    }
    static double paramNorm2(const HvaeParams& p) {
        return p.U1.squaredNorm() + p.U2.squaredNorm() + p.V1.squaredNorm() +
               p.W2.squaredNorm() + p.Sigma1.squaredNorm() + p.Sigma2.squaredNorm();
    }
};

// Loss value and its components.  `total` is the canonical reduced objective;
// components satisfy total = lRec + beta*lKL (VAE/CVAE) or
// total = lRec + beta1*lKL1 + beta2*lKL2 (HVAE) exactly.  `droppedConstant`
// is the additive constant separating the original-coordinate objective from
// the reduced one: original = reduced + droppedConstant.
struct LossBreakdown {
    double total = 0.0;
    double lRec = 0.0;
    double lKL = 0.0;
    double lKL1 = 0.0;
    double lKL2 = 0.0;
    double droppedConstant = 0.0;
};

}  // namespace linvae
