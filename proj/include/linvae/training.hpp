#pragma once

#include "linvae/objectives.hpp"

#include <functional>
#include <map>
#include <vector>

namespace linvae {

struct TrainConfig {
    int steps = 200;
    double stepSize = 0.1;
    double stepDecay = 1.0;  // multiplicative per-iteration step-size factor (1 = constant)
    double adamB1 = 0.9;
    double adamB2 = 0.999;
    double adamEps = 1e-8;
    int depth = 1;      // factors per linear module
    int batchSize = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    double initScale = 0.1;  // stddev of entry-wise Gaussian weight init
    enum class SigmaParamKind { Factor, LogDiag } sigmaParam = SigmaParamKind::LogDiag;

    void validate() const {
        if (steps < 0) throw DomainError("TrainConfig: steps must be >= 0");
        if (!(stepSize > 0.0)) throw DomainError("TrainConfig: stepSize must be positive");
        if (depth < 1) throw DomainError("TrainConfig: depth must be >= 1");
    }
};

struct TrainTrace {
    std::vector<LossBreakdown> lossHistory;  // length steps + 1
    ModelParams finalParams;
    std::map<std::string, Matrix> composedMaps;  // deep mode diagnostics
    std::vector<Matrix> perSampleSigmas;         // per-sample mode (VAE/CVAE Sigma_i, HVAE Sigma1_i)
    std::vector<Matrix> perSampleSigmas2;        // per-sample HVAE Sigma2_i
};

using TrainObserver = std::function<void(int iteration, const ModelParams&)>;

namespace detail {

// A deep linear module: compose() = f[M-1] * ... * f[0].
struct Chain {
    std::vector<Matrix> f;

    static Chain init(Index in, Index out, int depth, double scale, Rng& rng) {
        Chain c;
        const Index hid = in;
        for (int k = 0; k < depth; ++k) {
            const Index rows = (k == depth - 1) ? out : hid;
            const Index cols = (k == 0) ? in : hid;
            c.f.push_back(rng.gaussian(rows, cols, scale));
        }
        return c;
    }

    Matrix compose() const {
        Matrix P = f[0];
        for (std::size_t k = 1; k < f.size(); ++k) P = f[k] * P;
        return P;
    }

    // dL/df[k] = (f[M-1]..f[k+1])^T G (f[k-1]..f[0])^T
    std::vector<Matrix> factorGrads(const Matrix& G) const {
        const std::size_t M = f.size();
        std::vector<Matrix> prefix(M);  // prefix[k] = f[k]..f[0]
        prefix[0] = f[0];
        for (std::size_t k = 1; k < M; ++k) prefix[k] = f[k] * prefix[k - 1];
        std::vector<Matrix> grads(M);
        Matrix suffix = Matrix::Identity(G.rows(), G.rows());  // f[M-1]..f[k+1]
        for (std::size_t k = M; k-- > 0;) {
            grads[k] = k == 0 ? Matrix(suffix.transpose() * G)
                              : Matrix(suffix.transpose() * G * prefix[k - 1].transpose());
            suffix = suffix * f[k];
        }
        return grads;
    }
};

// SPD covariance parameterization.
struct SigmaBlock {
    enum class Kind { Fixed, Factor, LogDiag } kind = Kind::Fixed;
    Matrix fixedValue;
    Matrix L;  // Factor: Sigma = L L^T + eps I
    Vector s;  // LogDiag: Sigma = diag(exp s)
    static constexpr double kFloor = 1e-10;

    static SigmaBlock fixed(Matrix v) {
        SigmaBlock b;
        b.kind = Kind::Fixed;
        b.fixedValue = std::move(v);
        return b;
    }
    static SigmaBlock learnable(Index d, double initStd, TrainConfig::SigmaParamKind pk) {
        SigmaBlock b;
        if (pk == TrainConfig::SigmaParamKind::Factor) {
            b.kind = Kind::Factor;
            b.L = initStd * Matrix::Identity(d, d);
        } else {
            b.kind = Kind::LogDiag;
            b.s = Vector::Constant(d, 2.0 * std::log(initStd));
        }
        return b;
    }

    bool trainable() const { return kind != Kind::Fixed; }

    Matrix value() const {
        switch (kind) {
            case Kind::Fixed: return fixedValue;
            case Kind::Factor:
                return L * L.transpose() + kFloor * Matrix::Identity(L.rows(), L.rows());
            case Kind::LogDiag: return Matrix(s.array().exp().matrix().asDiagonal());
        }
        return {};
    }

    // gradient of the internal parameter given G = dL/dSigma (symmetric)
    Matrix paramGrad(const Matrix& G) const {
        if (kind == Kind::Factor) return (G + G.transpose()) * L;
        Matrix g(s.size(), 1);
        for (Index i = 0; i < s.size(); ++i) g(i, 0) = G(i, i) * std::exp(s(i));
        return g;
    }

    Matrix& param() { return kind == Kind::Factor ? L : sAsMatrix(); }

    Matrix& sAsMatrix() {
        // store s as a column matrix view for the optimizer
        if (sMat_.size() != s.size()) sMat_ = s;
        return sMat_;
    }
    void syncFromParam() {
        if (kind == Kind::LogDiag) s = sMat_;
    }

  private:
    Matrix sMat_;
};

struct Adam {
    std::vector<Matrix*> params;
    std::vector<Matrix> m, v;
    double b1, b2, eps;
    int t = 0;

    Adam(std::vector<Matrix*> p, const TrainConfig& cfg)
        : params(std::move(p)), b1(cfg.adamB1), b2(cfg.adamB2), eps(cfg.adamEps) {
        for (auto* x : params) {
            m.emplace_back(Matrix::Zero(x->rows(), x->cols()));
            v.emplace_back(Matrix::Zero(x->rows(), x->cols()));
        }
    }

    void step(const std::vector<Matrix>& grads, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(b1, t);
        const double c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
            const Matrix mhat = m[i] / c1;
            const Matrix vhat = v[i] / c2;
            *params[i] -=
                lr * mhat.cwiseQuotient(vhat.cwiseSqrt() + Matrix::Constant(vhat.rows(), vhat.cols(), eps));
        }
    }
};

inline void requireFiniteIterate(int it, std::initializer_list<const Matrix*> ms) {
    for (const Matrix* m : ms)
        if (!m->allFinite())
            throw DivergenceError(it, "training diverged at iteration " + std::to_string(it));
}

// Shared training loop: `eval` returns the loss and fills `grads` (aligned
// with `tensors`); `snapshot` assembles current ModelParams.
template <typename Eval, typename Snapshot>
TrainTrace runLoop(const TrainConfig& cfg, std::vector<Matrix*> tensors, Eval&& eval,
                   Snapshot&& snapshot, const TrainObserver& obs) {
    Adam opt(tensors, cfg);
    TrainTrace trace;
    trace.lossHistory.reserve(cfg.steps + 1);
    double lr = cfg.stepSize;
    std::vector<Matrix> grads(tensors.size());
    for (int it = 0; it <= cfg.steps; ++it) {
        const bool last = (it == cfg.steps);
        LossBreakdown lb;
        try {
            lb = eval(grads, !last, it);
        } catch (const DomainError& e) {
            // the iterate drove a covariance to the SPD boundary
            throw DivergenceError(it, "training diverged at iteration " + std::to_string(it) +
                                          ": " + e.what());
        }
        if (!std::isfinite(lb.total))
            throw DivergenceError(it, "training diverged at iteration " + std::to_string(it));
        trace.lossHistory.push_back(lb);
        if (obs) obs(it, snapshot());
        if (last) break;
        opt.step(grads, lr);
        lr *= cfg.stepDecay;
    }
    trace.finalParams = snapshot();
    return trace;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Family trainers.  Minibatch mode needs the whitened samples; full-batch
// mode works from the problem's moments alone.
// ---------------------------------------------------------------------------

inline TrainTrace train_vae(const VaeProblem& prob, const Hyperparams& h, const TrainConfig& cfg,
                            SigmaMode sigmaMode = SigmaMode::Learnable,
                            const Matrix* fixedSigma = nullptr, const Matrix* xt = nullptr,
                            const TrainObserver& obs = {}) {
    h.validate(Family::Vae);
    cfg.validate();
    if (cfg.batchSize > 0 && xt == nullptr)
        throw DataError("train_vae: minibatch mode needs whitened samples");
    Rng rng(cfg.seed);
    const Index D0 = prob.Z.rows(), d0 = prob.Z.cols(), d1 = h.d1;
    detail::Chain cu = detail::Chain::init(d1, D0, cfg.depth, cfg.initScale, rng);
    detail::Chain cv = detail::Chain::init(d0, d1, cfg.depth, cfg.initScale, rng);
    detail::SigmaBlock sb =
        sigmaMode == SigmaMode::Fixed
            ? detail::SigmaBlock::fixed(fixedSigma ? *fixedSigma
                                                   : Matrix(h.etaEnc * h.etaEnc *
                                                            Matrix::Identity(d1, d1)))
            : detail::SigmaBlock::learnable(d1, h.etaEnc, cfg.sigmaParam);

    std::vector<Matrix*> tensors;
    for (auto& f : cu.f) tensors.push_back(&f);
    for (auto& f : cv.f) tensors.push_back(&f);
    if (sb.trainable()) tensors.push_back(&sb.param());

    auto snapshot = [&] {
        sb.syncFromParam();
        return ModelParams::of(VaeParams{cu.compose(), cv.compose(), sb.value()});
    };
    auto eval = [&](std::vector<Matrix>& grads, bool wantGrads, int it) {
        sb.syncFromParam();
        VaeParams p{cu.compose(), cv.compose(), sb.value()};
        detail::requireFiniteIterate(it, {&p.U, &p.V, &p.Sigma});
        DataMoments mom;
        const DataMoments* momPtr = nullptr;
        if (cfg.batchSize > 0) {
            Matrix batch(cfg.batchSize, xt->cols());
            for (int i = 0; i < cfg.batchSize; ++i)
                batch.row(i) = xt->row(static_cast<Index>(rng.below(xt->rows())));
            mom = batchMoments(batch);
            momPtr = &mom;
        }
        if (!wantGrads) return vae_loss(p, prob, h, momPtr);
        LossBreakdown lb;
        {
            const VaeGrads g = vae_gradient(p, prob, h, momPtr, &lb);
            std::size_t k = 0;
            for (const Matrix& gm : cu.factorGrads(g.U)) grads[k++] = gm;
            for (const Matrix& gm : cv.factorGrads(g.V)) grads[k++] = gm;
            if (sb.trainable()) grads[k++] = sb.paramGrad(g.Sigma);
        }
        return lb;
    };
    TrainTrace t = detail::runLoop(cfg, tensors, eval, snapshot, obs);
    if (cfg.depth > 1) {
        t.composedMaps["U"] = cu.compose();
        t.composedMaps["V"] = cv.compose();
    }
    return t;
}

inline TrainTrace train_cvae(const CvaeProblem& prob, const Hyperparams& h, const TrainConfig& cfg,
                             SigmaMode sigmaMode = SigmaMode::Learnable,
                             const Matrix* fixedSigma = nullptr, const Matrix* xt = nullptr,
                             const Matrix* yt = nullptr, const TrainObserver& obs = {}) {
    h.validate(Family::Cvae);
    cfg.validate();
    if (cfg.batchSize > 0 && (xt == nullptr || yt == nullptr))
        throw DataError("train_cvae: minibatch mode needs whitened samples");
    Rng rng(cfg.seed);
    const Index d0 = prob.Z.rows(), d2 = prob.Z.cols(), D2 = prob.D.rows(), d1 = h.d1;
    detail::Chain cu1 = detail::Chain::init(d1, D2, cfg.depth, cfg.initScale, rng);
    detail::Chain cv1 = detail::Chain::init(d0, d1, cfg.depth, cfg.initScale, rng);
    detail::Chain cv2 = detail::Chain::init(d2, d1, cfg.depth, cfg.initScale, rng);
    detail::Chain ct2 = detail::Chain::init(d0, D2, cfg.depth, cfg.initScale, rng);
    detail::SigmaBlock sb =
        sigmaMode == SigmaMode::Fixed
            ? detail::SigmaBlock::fixed(fixedSigma ? *fixedSigma
                                                   : Matrix(h.etaEnc * h.etaEnc *
                                                            Matrix::Identity(d1, d1)))
            : detail::SigmaBlock::learnable(d1, h.etaEnc, cfg.sigmaParam);

    std::vector<Matrix*> tensors;
    for (auto* c : {&cu1, &cv1, &cv2, &ct2})
        for (auto& f : c->f) tensors.push_back(&f);
    if (sb.trainable()) tensors.push_back(&sb.param());

    auto snapshot = [&] {
        sb.syncFromParam();
        return ModelParams::of(
            CvaeParams{cu1.compose(), cv1.compose(), cv2.compose(), ct2.compose(), sb.value()});
    };
    auto eval = [&](std::vector<Matrix>& grads, bool wantGrads, int it) {
        sb.syncFromParam();
        CvaeParams p{cu1.compose(), cv1.compose(), cv2.compose(), ct2.compose(), sb.value()};
        detail::requireFiniteIterate(it, {&p.U1, &p.V1, &p.V2, &p.T2, &p.Sigma});
        DataMoments mom;
        const DataMoments* momPtr = nullptr;
        if (cfg.batchSize > 0) {
            Matrix bx(cfg.batchSize, xt->cols()), by(cfg.batchSize, yt->cols());
            for (int i = 0; i < cfg.batchSize; ++i) {
                const Index r = static_cast<Index>(rng.below(xt->rows()));
                bx.row(i) = xt->row(r);
                by.row(i) = yt->row(r);
            }
            mom = batchMoments(bx, by);
            momPtr = &mom;
        }
        if (!wantGrads) return cvae_loss(p, prob, h, momPtr);
        LossBreakdown lb;
        {
            const CvaeGrads g = cvae_gradient(p, prob, h, momPtr, &lb);
            std::size_t k = 0;
            for (const Matrix& gm : cu1.factorGrads(g.U1)) grads[k++] = gm;
            for (const Matrix& gm : cv1.factorGrads(g.V1)) grads[k++] = gm;
            for (const Matrix& gm : cv2.factorGrads(g.V2)) grads[k++] = gm;
            for (const Matrix& gm : ct2.factorGrads(g.T2)) grads[k++] = gm;
            if (sb.trainable()) grads[k++] = sb.paramGrad(g.Sigma);
        }
        return lb;
    };
    TrainTrace t = detail::runLoop(cfg, tensors, eval, snapshot, obs);
    if (cfg.depth > 1) {
        t.composedMaps["U1"] = cu1.compose();
        t.composedMaps["V1"] = cv1.compose();
        t.composedMaps["V2"] = cv2.compose();
        t.composedMaps["T2"] = ct2.compose();
    }
    return t;
}

inline TrainTrace train_hvae(const HvaeProblem& prob, const Hyperparams& h, const TrainConfig& cfg,
                             SigmaMode sigma2Mode = SigmaMode::Learnable,
                             const Matrix* xt = nullptr, const TrainObserver& obs = {}) {
    h.validate(Family::Hvae);
    cfg.validate();
    if (cfg.batchSize > 0 && xt == nullptr)
        throw DataError("train_hvae: minibatch mode needs whitened samples");
    Rng rng(cfg.seed);
    const Index D0 = prob.Z.rows(), d0 = prob.Z.cols(), d1 = h.d1, d2 = h.d2;
    detail::Chain cu1 = detail::Chain::init(d1, D0, cfg.depth, cfg.initScale, rng);
    detail::Chain cu2 = detail::Chain::init(d2, d1, cfg.depth, cfg.initScale, rng);
    detail::Chain cv1 = detail::Chain::init(d0, d1, cfg.depth, cfg.initScale, rng);
    detail::Chain cw2 = detail::Chain::init(d1, d2, cfg.depth, cfg.initScale, rng);
    const Matrix sigma1 = h.sigma1 * h.sigma1 * Matrix::Identity(d1, d1);
    detail::SigmaBlock sb2 =
        sigma2Mode == SigmaMode::Fixed
            ? detail::SigmaBlock::fixed(Matrix(h.sigma2 * h.sigma2 * Matrix::Identity(d2, d2)))
            : detail::SigmaBlock::learnable(d2, h.etaEnc, cfg.sigmaParam);

    std::vector<Matrix*> tensors;
    for (auto* c : {&cu1, &cu2, &cv1, &cw2})
        for (auto& f : c->f) tensors.push_back(&f);
    if (sb2.trainable()) tensors.push_back(&sb2.param());

    auto snapshot = [&] {
        sb2.syncFromParam();
        return ModelParams::of(HvaeParams{cu1.compose(), cu2.compose(), cv1.compose(),
                                          cw2.compose(), sigma1, sb2.value()});
    };
    auto eval = [&](std::vector<Matrix>& grads, bool wantGrads, int it) {
        sb2.syncFromParam();
        HvaeParams p{cu1.compose(), cu2.compose(), cv1.compose(), cw2.compose(), sigma1,
                     sb2.value()};
        detail::requireFiniteIterate(it, {&p.U1, &p.U2, &p.V1, &p.W2, &p.Sigma2});
        DataMoments mom;
        const DataMoments* momPtr = nullptr;
        if (cfg.batchSize > 0) {
            Matrix batch(cfg.batchSize, xt->cols());
            for (int i = 0; i < cfg.batchSize; ++i)
                batch.row(i) = xt->row(static_cast<Index>(rng.below(xt->rows())));
            mom = batchMoments(batch);
            momPtr = &mom;
        }
        if (!wantGrads) return hvae_loss(p, prob, h, momPtr);
        LossBreakdown lb;
        {
            const HvaeGrads g = hvae_gradient(p, prob, h, momPtr, &lb);
            std::size_t k = 0;
            for (const Matrix& gm : cu1.factorGrads(g.U1)) grads[k++] = gm;
            for (const Matrix& gm : cu2.factorGrads(g.U2)) grads[k++] = gm;
            for (const Matrix& gm : cv1.factorGrads(g.V1)) grads[k++] = gm;
            for (const Matrix& gm : cw2.factorGrads(g.W2)) grads[k++] = gm;
            if (sb2.trainable()) grads[k++] = sb2.paramGrad(g.Sigma2);
        }
        return lb;
    };
    TrainTrace t = detail::runLoop(cfg, tensors, eval, snapshot, obs);
    if (cfg.depth > 1) {
        t.composedMaps["U1"] = cu1.compose();
        t.composedMaps["U2"] = cu2.compose();
        t.composedMaps["V1"] = cv1.compose();
        t.composedMaps["W2"] = cw2.compose();
    }
    return t;
}

// ---------------------------------------------------------------------------
// Sample-wise encoder covariances: each training sample owns its Sigma_i.
// Shallow networks, full batch.
// ---------------------------------------------------------------------------

inline TrainTrace train_vae_per_sample(const VaeProblem& prob, const Matrix& xt,
                                       const Hyperparams& h, const TrainConfig& cfg,
                                       const TrainObserver& obs = {}) {
    h.validate(Family::Vae);
    cfg.validate();
    Rng rng(cfg.seed);
    const Index D0 = prob.Z.rows(), d0 = prob.Z.cols(), d1 = h.d1, n = xt.rows();
    Matrix U = rng.gaussian(D0, d1, cfg.initScale);
    Matrix V = rng.gaussian(d1, d0, cfg.initScale);
    std::vector<detail::SigmaBlock> sbs;
    for (Index i = 0; i < n; ++i) {
        auto b = detail::SigmaBlock::learnable(d1, h.etaEnc, cfg.sigmaParam);
        // per-sample jitter so agreement at the optimum is informative
        if (b.kind == detail::SigmaBlock::Kind::Factor)
            b.L += rng.gaussian(d1, d1, 0.1 * cfg.initScale);
        else
            b.s += 0.1 * cfg.initScale * rng.gaussian(d1, 1, 1.0).col(0);
        sbs.push_back(std::move(b));
    }

    std::vector<Matrix*> tensors{&U, &V};
    for (auto& b : sbs) tensors.push_back(&b.param());

    auto sigmas = [&] {
        std::vector<Matrix> out;
        for (auto& b : sbs) {
            b.syncFromParam();
            out.push_back(b.value());
        }
        return out;
    };
    auto snapshot = [&] {
        auto sg = sigmas();
        Matrix mean = Matrix::Zero(d1, d1);
        for (const auto& s : sg) mean += s;
        mean /= double(n);
        return ModelParams::of(VaeParams{U, V, mean});
    };
    auto eval = [&](std::vector<Matrix>& grads, bool wantGrads, int it) {
        const auto sg = sigmas();
        detail::requireFiniteIterate(it, {&U, &V});
        for (const Matrix& s : sg) detail::requireFiniteIterate(it, {&s});
        const LossBreakdown lb = vae_loss_per_sample(VaeParams{U, V, Matrix()}, sg, prob, xt, h);
        if (wantGrads) {
            const VaePerSampleGrads g =
                vae_gradient_per_sample(VaeParams{U, V, Matrix()}, sg, prob, xt, h);
            grads[0] = g.U;
            grads[1] = g.V;
            for (Index i = 0; i < n; ++i) grads[2 + i] = sbs[i].paramGrad(g.sigmas[i]);
        }
        return lb;
    };
    TrainTrace t = detail::runLoop(cfg, tensors, eval, snapshot, obs);
    t.perSampleSigmas = sigmas();
    return t;
}

inline TrainTrace train_cvae_per_sample(const CvaeProblem& prob, const Matrix& xt, const Matrix& yt,
                                        const Hyperparams& h, const TrainConfig& cfg,
                                        const TrainObserver& obs = {}) {
    h.validate(Family::Cvae);
    cfg.validate();
    Rng rng(cfg.seed);
    const Index d0 = prob.Z.rows(), d2 = prob.Z.cols(), D2 = prob.D.rows(), d1 = h.d1;
    const Index n = xt.rows();
    Matrix U1 = rng.gaussian(D2, d1, cfg.initScale);
    Matrix V1 = rng.gaussian(d1, d0, cfg.initScale);
    Matrix V2 = rng.gaussian(d1, d2, cfg.initScale);
    Matrix T2 = rng.gaussian(D2, d0, cfg.initScale);
    std::vector<detail::SigmaBlock> sbs;
    for (Index i = 0; i < n; ++i) {
        auto b = detail::SigmaBlock::learnable(d1, h.etaEnc, cfg.sigmaParam);
        if (b.kind == detail::SigmaBlock::Kind::Factor)
            b.L += rng.gaussian(d1, d1, 0.1 * cfg.initScale);
        else
            b.s += 0.1 * cfg.initScale * rng.gaussian(d1, 1, 1.0).col(0);
        sbs.push_back(std::move(b));
    }

    std::vector<Matrix*> tensors{&U1, &V1, &V2, &T2};
    for (auto& b : sbs) tensors.push_back(&b.param());

    auto sigmas = [&] {
        std::vector<Matrix> out;
        for (auto& b : sbs) {
            b.syncFromParam();
            out.push_back(b.value());
        }
        return out;
    };
    auto snapshot = [&] {
        auto sg = sigmas();
        Matrix mean = Matrix::Zero(d1, d1);
        for (const auto& s : sg) mean += s;
        mean /= double(n);
        return ModelParams::of(CvaeParams{U1, V1, V2, T2, mean});
    };
    auto eval = [&](std::vector<Matrix>& grads, bool wantGrads, int it) {
        const auto sg = sigmas();
        detail::requireFiniteIterate(it, {&U1, &V1, &V2, &T2});
        for (const Matrix& s : sg) detail::requireFiniteIterate(it, {&s});
        const LossBreakdown lb =
            cvae_loss_per_sample(CvaeParams{U1, V1, V2, T2, Matrix()}, sg, prob, xt, yt, h);
        if (wantGrads) {
            const CvaePerSampleGrads g = cvae_gradient_per_sample(
                CvaeParams{U1, V1, V2, T2, Matrix()}, sg, prob, xt, yt, h);
            grads[0] = g.U1;
            grads[1] = g.V1;
            grads[2] = g.V2;
            grads[3] = g.T2;
            for (Index i = 0; i < n; ++i) grads[4 + i] = sbs[i].paramGrad(g.sigmas[i]);
        }
        return lb;
    };
    TrainTrace t = detail::runLoop(cfg, tensors, eval, snapshot, obs);
    t.perSampleSigmas = sigmas();
    return t;
}

inline TrainTrace train_hvae_per_sample(const HvaeProblem& prob, const Matrix& xt,
                                        const Hyperparams& h, const TrainConfig& cfg,
                                        const TrainObserver& obs = {}) {
    h.validate(Family::Hvae);
    cfg.validate();
    Rng rng(cfg.seed);
    const Index D0 = prob.Z.rows(), d0 = prob.Z.cols(), d1 = h.d1, d2 = h.d2, n = xt.rows();
    Matrix U1 = rng.gaussian(D0, d1, cfg.initScale);
    Matrix U2 = rng.gaussian(d1, d2, cfg.initScale);
    Matrix V1 = rng.gaussian(d1, d0, cfg.initScale);
    Matrix W2 = rng.gaussian(d2, d1, cfg.initScale);
    std::vector<detail::SigmaBlock> s1s, s2s;
    for (Index i = 0; i < n; ++i) {
        auto b1 = detail::SigmaBlock::learnable(d1, h.sigma1, cfg.sigmaParam);
        auto b2 = detail::SigmaBlock::learnable(d2, h.etaEnc, cfg.sigmaParam);
        if (b1.kind == detail::SigmaBlock::Kind::Factor) {
            b1.L += rng.gaussian(d1, d1, 0.1 * cfg.initScale);
            b2.L += rng.gaussian(d2, d2, 0.1 * cfg.initScale);
        } else {
            b1.s += 0.1 * cfg.initScale * rng.gaussian(d1, 1, 1.0).col(0);
            b2.s += 0.1 * cfg.initScale * rng.gaussian(d2, 1, 1.0).col(0);
        }
        s1s.push_back(std::move(b1));
        s2s.push_back(std::move(b2));
    }

    std::vector<Matrix*> tensors{&U1, &U2, &V1, &W2};
    for (auto& b : s1s) tensors.push_back(&b.param());
    for (auto& b : s2s) tensors.push_back(&b.param());

    auto values = [&](std::vector<detail::SigmaBlock>& blocks) {
        std::vector<Matrix> out;
        for (auto& b : blocks) {
            b.syncFromParam();
            out.push_back(b.value());
        }
        return out;
    };
    auto meanOf = [&](const std::vector<Matrix>& ms) {
        Matrix mean = Matrix::Zero(ms[0].rows(), ms[0].cols());
        for (const auto& s : ms) mean += s;
        return Matrix(mean / double(n));
    };
    auto snapshot = [&] {
        return ModelParams::of(
            HvaeParams{U1, U2, V1, W2, meanOf(values(s1s)), meanOf(values(s2s))});
    };
    auto eval = [&](std::vector<Matrix>& grads, bool wantGrads, int it) {
        const auto sg1 = values(s1s);
        const auto sg2 = values(s2s);
        detail::requireFiniteIterate(it, {&U1, &U2, &V1, &W2});
        for (const Matrix& s : sg1) detail::requireFiniteIterate(it, {&s});
        for (const Matrix& s : sg2) detail::requireFiniteIterate(it, {&s});
        const LossBreakdown lb = hvae_loss_per_sample(HvaeParams{U1, U2, V1, W2, Matrix(), Matrix()},
                                                      sg1, sg2, prob, xt, h);
        if (wantGrads) {
            const HvaePerSampleGrads g = hvae_gradient_per_sample(
                HvaeParams{U1, U2, V1, W2, Matrix(), Matrix()}, sg1, sg2, prob, xt, h);
            grads[0] = g.U1;
            grads[1] = g.U2;
            grads[2] = g.V1;
            grads[3] = g.W2;
            for (Index i = 0; i < n; ++i) {
                grads[4 + i] = s1s[i].paramGrad(g.sigma1s[i]);
                grads[4 + n + i] = s2s[i].paramGrad(g.sigma2s[i]);
            }
        }
        return lb;
    };
    TrainTrace t = detail::runLoop(cfg, tensors, eval, snapshot, obs);
    t.perSampleSigmas = values(s1s);
    t.perSampleSigmas2 = values(s2s);
    return t;
}

}  // namespace linvae
