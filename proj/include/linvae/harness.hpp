#pragma once

#include "linvae/serialize.hpp"
#include "linvae/svg.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <set>

namespace linvae {

struct IoError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Declarative experiment configuration
// ---------------------------------------------------------------------------

struct FamilySpec {
    Family family = Family::Vae;
    bool fixedCov = false;  // unlearnable encoder covariance variant
};

inline FamilySpec parseFamily(const std::string& name) {
    if (name == "vae") return {Family::Vae, false};
    if (name == "vae-fixed") return {Family::Vae, true};
    if (name == "cvae") return {Family::Cvae, false};
    if (name == "hvae") return {Family::Hvae, false};
    if (name == "hvae-fixed") return {Family::Hvae, true};
    throw ConfigError("family: unknown value '" + name + "'");
}

inline std::string familySpecName(const FamilySpec& f) {
    std::string n = familyName(f.family);
    return f.fixedCov ? n + "-fixed" : n;
}

struct DataConfig {
    enum class Source { Synthetic, Idx } source = Source::Synthetic;
    Index n = 500;
    Index dimX = 5;
    Index dimY = 5;
    double scale = 0.1;
    std::uint64_t seed = 0;
    std::string images, labels;
    std::vector<int> digits;
    bool quadrant = false;
    bool center = true;
    double rankTolerance = 1e-10;
};

struct ExperimentConfig {
    std::string experiment;  // solve | train-vs-theory | beta-scan | mnist-prepare | sample-sigma-check
    FamilySpec family;
    DataConfig data;
    Hyperparams hyper;
    TrainConfig train;
    Vector vaeFixedSigmaDiag;  // optional explicit diagonal for vae-fixed
    std::string scanParameter = "beta";
    std::vector<double> scanValues;
    double epsilon = 1e-4;
    double delta = 0.05;
    std::uint64_t seed = 0;
    std::string out;
};

namespace detail {

template <typename T>
T jsonGet(const Json& j, const std::string& key, const std::string& path, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError("config key " + path + "." + key + " has the wrong type");
    }
}

}  // namespace detail

inline ExperimentConfig parseConfig(const Json& j) {
    using detail::jsonGet;
    ExperimentConfig c;
    c.experiment = jsonGet<std::string>(j, "experiment", "$", "");
    if (!c.experiment.empty()) {
        const std::set<std::string> kinds = {"solve", "train-vs-theory", "beta-scan",
                                             "mnist-prepare", "sample-sigma-check"};
        if (!kinds.count(c.experiment))
            throw ConfigError("config key $.experiment has unknown value '" + c.experiment + "'");
    }
    c.family = parseFamily(jsonGet<std::string>(j, "family", "$", "vae"));
    c.seed = jsonGet<std::uint64_t>(j, "seed", "$", 0);
    c.out = jsonGet<std::string>(j, "out", "$", "");

    if (j.contains("data")) {
        const Json& d = j.at("data");
        const std::string src = jsonGet<std::string>(d, "source", "$.data", "synthetic");
        if (src == "synthetic")
            c.data.source = DataConfig::Source::Synthetic;
        else if (src == "idx")
            c.data.source = DataConfig::Source::Idx;
        else
            throw ConfigError("config key $.data.source has unknown value '" + src + "'");
        c.data.n = jsonGet<Index>(d, "n", "$.data", c.data.n);
        c.data.dimX = jsonGet<Index>(d, "dim_x", "$.data", c.data.dimX);
        c.data.dimY = jsonGet<Index>(d, "dim_y", "$.data", c.data.dimY);
        c.data.scale = jsonGet<double>(d, "scale", "$.data", c.data.scale);
        c.data.seed = jsonGet<std::uint64_t>(d, "seed", "$.data", 0);
        c.data.images = jsonGet<std::string>(d, "images", "$.data", "");
        c.data.labels = jsonGet<std::string>(d, "labels", "$.data", "");
        c.data.digits = jsonGet<std::vector<int>>(d, "digits", "$.data", {});
        c.data.quadrant = jsonGet<bool>(d, "quadrant_split", "$.data", false);
        c.data.center = jsonGet<bool>(d, "center", "$.data", true);
        c.data.rankTolerance = jsonGet<double>(d, "rank_tolerance", "$.data", 1e-10);
        if (c.data.source == DataConfig::Source::Idx) {
            if (c.data.images.empty())
                throw ConfigError("config key $.data.images is missing");
            if (!std::filesystem::exists(c.data.images))
                throw IoError("missing data file: " + c.data.images);
            if (!c.data.labels.empty() && !std::filesystem::exists(c.data.labels))
                throw IoError("missing data file: " + c.data.labels);
        }
    }

    if (j.contains("hyper")) {
        const Json& hj = j.at("hyper");
        c.hyper.beta = jsonGet<double>(hj, "beta", "$.hyper", 1.0);
        c.hyper.beta2 = jsonGet<double>(hj, "beta2", "$.hyper", 1.0);
        c.hyper.etaEnc = jsonGet<double>(hj, "eta_enc", "$.hyper", 1.0);
        c.hyper.etaDec = jsonGet<double>(hj, "eta_dec", "$.hyper", 1.0);
        c.hyper.sigma1 = jsonGet<double>(hj, "sigma1", "$.hyper", 1.0);
        c.hyper.sigma2 = jsonGet<double>(hj, "sigma2", "$.hyper", 1.0);
        c.hyper.d1 = jsonGet<Index>(hj, "d1", "$.hyper", 0);
        c.hyper.d2 = jsonGet<Index>(hj, "d2", "$.hyper", 0);
        if (hj.contains("sigma_diag"))
            c.vaeFixedSigmaDiag = vectorFromJson(hj.at("sigma_diag"));
    }

    if (j.contains("train")) {
        const Json& t = j.at("train");
        c.train.steps = jsonGet<int>(t, "steps", "$.train", 200);
        c.train.stepSize = jsonGet<double>(t, "step_size", "$.train", 0.1);
        c.train.stepDecay = jsonGet<double>(t, "step_decay", "$.train", 1.0);
        c.train.depth = jsonGet<int>(t, "depth", "$.train", 1);
        c.train.batchSize = jsonGet<int>(t, "batch", "$.train", 0);
        c.train.seed = jsonGet<std::uint64_t>(t, "seed", "$.train", 0);
        c.train.initScale = jsonGet<double>(t, "init_scale", "$.train", 0.1);
        const std::string sp = jsonGet<std::string>(t, "sigma_param", "$.train", "log-diag");
        if (sp == "log-diag")
            c.train.sigmaParam = TrainConfig::SigmaParamKind::LogDiag;
        else if (sp == "factor")
            c.train.sigmaParam = TrainConfig::SigmaParamKind::Factor;
        else
            throw ConfigError("config key $.train.sigma_param has unknown value '" + sp + "'");
    }

    if (j.contains("scan")) {
        const Json& s = j.at("scan");
        c.scanParameter = jsonGet<std::string>(s, "parameter", "$.scan", "beta");
        if (c.scanParameter != "beta" && c.scanParameter != "beta2")
            throw ConfigError("config key $.scan.parameter must be 'beta' or 'beta2'");
        c.scanValues = jsonGet<std::vector<double>>(s, "values", "$.scan", {});
    }
    c.epsilon = jsonGet<double>(j, "epsilon", "$", 1e-4);
    c.delta = jsonGet<double>(j, "delta", "$", 0.05);
    return c;
}

inline ExperimentConfig loadConfig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parseConfig(j);
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

inline WhitenedDataset loadExperimentData(const DataConfig& d, Family family) {
    if (d.source == DataConfig::Source::Synthetic) {
        const Matrix x = synth_gaussian(d.n, d.dimX, d.scale, d.seed);
        if (family == Family::Cvae) {
            const Matrix y = synth_gaussian(d.n, d.dimY, d.scale, Rng::mix(d.seed, 0x79));
            return prepare_xy(x, y, d.center, d.rankTolerance);
        }
        return prepare_x(x, d.center, d.rankTolerance);
    }

    Matrix images = load_idx(d.images);
    if (!d.digits.empty()) {
        if (d.labels.empty()) throw ConfigError("config key $.data.labels is required with digits");
        const Matrix labels = load_idx(d.labels);
        if (labels.rows() != images.rows())
            throw ShapeError("image/label sample counts differ");
        std::vector<Index> keep;
        const std::set<int> want(d.digits.begin(), d.digits.end());
        for (Index i = 0; i < labels.rows(); ++i)
            if (want.count(int(labels(i, 0)))) keep.push_back(i);
        if (keep.empty()) throw DataError("digit filter selected no samples");
        Matrix filtered(Index(keep.size()), images.cols());
        for (std::size_t i = 0; i < keep.size(); ++i) filtered.row(Index(i)) = images.row(keep[i]);
        images = std::move(filtered);
    }
    if (family == Family::Cvae) {
        if (!d.quadrant)
            throw ConfigError("config key $.data.quadrant_split must be true for cvae idx data");
        auto [x, y] = quadrant_split(images);
        return prepare_xy(x, y, d.center, d.rankTolerance);
    }
    if (d.quadrant) {
        auto [x, y] = quadrant_split(images);
        (void)y;
        return prepare_x(x, d.center, d.rankTolerance);
    }
    return prepare_x(images, d.center, d.rankTolerance);
}

// ---------------------------------------------------------------------------
// Artifact manifest with stable content hashes
// ---------------------------------------------------------------------------

struct Manifest {
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::uint64_t>> artifacts;
};

class ArtifactWriter {
  public:
    ArtifactWriter(std::string outDir, std::uint64_t seed) : dir_(std::move(outDir)) {
        manifest_.seed = seed;
        std::filesystem::create_directories(dir_);
    }

    void write(const std::string& name, const std::string& content) {
        const std::filesystem::path target = std::filesystem::path(dir_) / name;
        const std::filesystem::path tmp = target.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw IoError("cannot write artifact: " + target.string());
            out.write(content.data(), std::streamsize(content.size()));
        }
        std::filesystem::rename(tmp, target);
        manifest_.artifacts.emplace_back(name, fnv1a64(content));
    }

    Manifest finalize() {
        std::sort(manifest_.artifacts.begin(), manifest_.artifacts.end());
        Json files = Json::array();
        for (const auto& [name, hash] : manifest_.artifacts) {
            char hex[24];
            std::snprintf(hex, sizeof hex, "0x%016llx", static_cast<unsigned long long>(hash));
            files.push_back(Json{{"file", name}, {"fnv1a64", hex}});
        }
        const Json j{{"seed", manifest_.seed}, {"artifacts", files}};
        const std::filesystem::path target = std::filesystem::path(dir_) / "manifest.json";
        std::ofstream out(target);
        out << j.dump(2) << "\n";
        return manifest_;
    }

  private:
    std::string dir_;
    Manifest manifest_;
};

// ---------------------------------------------------------------------------
// Shared experiment plumbing
// ---------------------------------------------------------------------------

namespace detail {

struct SolveResult {
    AnalyticSolution solution;
    Vector theta;  // the list driving the thresholds, padded to the latent dim
};

inline SolveResult solveFamily(const ExperimentConfig& c, const WhitenedDataset& ds,
                               const Hyperparams& h) {
    SolveResult out;
    switch (c.family.family) {
        case Family::Cvae: {
            const CvaeProblem prob = cvaeProblem(ds);
            const EMatrix em = cvae_E_matrix(prob, h.d1);
            out.theta = em.theta;
            out.solution = cvae_optimum(prob, h);
            break;
        }
        case Family::Vae: {
            const VaeProblem prob = vaeProblem(ds.statsX);
            out.theta = Vector::Zero(h.d1);
            const Vector th = ds.statsX.thetas();
            for (Index i = 0; i < std::min<Index>(h.d1, th.size()); ++i) out.theta(i) = th(i);
            if (c.family.fixedCov) {
                const Matrix Sigma =
                    c.vaeFixedSigmaDiag.size() > 0
                        ? Matrix(c.vaeFixedSigmaDiag.asDiagonal())
                        : Matrix(h.sigma1 * h.sigma1 * Matrix::Identity(h.d1, h.d1));
                out.solution = vae_optimum_fixed(prob, Sigma, h);
            } else {
                out.solution = vae_optimum_learnable(prob, h);
            }
            break;
        }
        case Family::Hvae: {
            const HvaeProblem prob = hvaeProblem(ds.statsX);
            out.theta = Vector::Zero(h.d1);
            const Vector th = ds.statsX.thetas();
            for (Index i = 0; i < std::min<Index>(h.d1, th.size()); ++i) out.theta(i) = th(i);
            out.solution =
                c.family.fixedCov ? hvae_optimum_fixed(prob, h) : hvae_optimum_learnable(prob, h);
            break;
        }
    }
    return out;
}

inline TrainTrace trainFamily(const ExperimentConfig& c, const WhitenedDataset& ds,
                              const Hyperparams& h, const TrainConfig& cfg,
                              const TrainObserver& obs = {}) {
    const SigmaMode mode = c.family.fixedCov ? SigmaMode::Fixed : SigmaMode::Learnable;
    switch (c.family.family) {
        case Family::Vae: {
            const VaeProblem prob = vaeProblem(ds.statsX);
            std::optional<Matrix> fixedSigma;
            if (c.family.fixedCov)
                fixedSigma = c.vaeFixedSigmaDiag.size() > 0
                                 ? Matrix(c.vaeFixedSigmaDiag.asDiagonal())
                                 : Matrix(h.sigma1 * h.sigma1 * Matrix::Identity(h.d1, h.d1));
            return train_vae(prob, h, cfg, mode, fixedSigma ? &*fixedSigma : nullptr, &ds.xt, obs);
        }
        case Family::Cvae: {
            const CvaeProblem prob = cvaeProblem(ds);
            return train_cvae(prob, h, cfg, mode, nullptr, &ds.xt, &ds.yt, obs);
        }
        case Family::Hvae: {
            const HvaeProblem prob = hvaeProblem(ds.statsX);
            return train_hvae(prob, h, cfg, mode, &ds.xt, obs);
        }
    }
    throw DomainError("trainFamily: unknown family");
}

inline CollapseReport reportFamily(const ExperimentConfig& c, const WhitenedDataset& ds,
                                   const Hyperparams& h, const ModelParams& trained,
                                   const AnalyticSolution& sol) {
    const SigmaMode mode = c.family.fixedCov ? SigmaMode::Fixed : SigmaMode::Learnable;
    switch (c.family.family) {
        case Family::Vae: {
            const VaeProblem prob = vaeProblem(ds.statsX);
            return compare_to_theory(trained, sol, &prob, nullptr, nullptr, h, mode, &ds.xt,
                                     nullptr, c.epsilon, c.delta);
        }
        case Family::Cvae: {
            const CvaeProblem prob = cvaeProblem(ds);
            return compare_to_theory(trained, sol, nullptr, &prob, nullptr, h, mode, &ds.xt,
                                     &ds.yt, c.epsilon, c.delta);
        }
        case Family::Hvae: {
            const HvaeProblem prob = hvaeProblem(ds.statsX);
            return compare_to_theory(trained, sol, nullptr, nullptr, &prob, h, mode, &ds.xt,
                                     nullptr, c.epsilon, c.delta);
        }
    }
    throw DomainError("reportFamily: unknown family");
}

inline LossBreakdown lossFamily(const ExperimentConfig& c, const WhitenedDataset& ds,
                                const Hyperparams& h, const ModelParams& p) {
    switch (c.family.family) {
        case Family::Vae: {
            const VaeProblem prob = vaeProblem(ds.statsX);
            return vae_loss(p.vae(), prob, h);
        }
        case Family::Cvae: {
            const CvaeProblem prob = cvaeProblem(ds);
            return cvae_loss(p.cvae(), prob, h);
        }
        case Family::Hvae: {
            const HvaeProblem prob = hvaeProblem(ds.statsX);
            return hvae_loss(p.hvae(), prob, h);
        }
    }
    throw DomainError("lossFamily: unknown family");
}

inline double betaWeightedKl(const ExperimentConfig& c, const Hyperparams& h,
                             const LossBreakdown& lb) {
    if (c.family.family == Family::Hvae) return h.beta2 * true_kl2(lb, h);
    return h.beta * true_kl(lb, h, c.family.family);
}

inline Json thresholdsJson(const ExperimentConfig& c, const SolveResult& sr) {
    return Json{{"family", familySpecName(c.family)},
                {"parameter", c.family.family == Family::Hvae ? "beta2" : "beta"},
                {"theta", toJson(sr.theta)},
                {"critical", toJson(sr.solution.thresholds)}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

inline Manifest run_solve(const ExperimentConfig& c, const std::string& outDir) {
    const WhitenedDataset ds = loadExperimentData(c.data, c.family.family);
    Hyperparams h = c.hyper;
    h.validate(c.family.family);
    const detail::SolveResult sr = detail::solveFamily(c, ds, h);
    ArtifactWriter w(outDir, c.seed);
    w.write("thresholds.json", detail::thresholdsJson(c, sr).dump(2) + "\n");
    w.write("solution.json", toJson(sr.solution).dump(2) + "\n");
    return w.finalize();
}

inline Manifest run_train_vs_theory(const ExperimentConfig& c, const std::string& outDir) {
    const WhitenedDataset ds = loadExperimentData(c.data, c.family.family);
    Hyperparams h = c.hyper;
    h.validate(c.family.family);
    const detail::SolveResult sr = detail::solveFamily(c, ds, h);

    std::string dmaCsv = "iteration,d_ma_omega,d_ma_lambda,d_ma_sigma\n";
    std::vector<double> its, dmaOmega, dmaLambda;
    TrainObserver obs;
    if (h.d1 <= 64) {
        obs = [&](int it, const ModelParams& p) {
            const CollapseReport r = detail::reportFamily(c, ds, h, p, sr.solution);
            const double dw = r.dMa.count("omega") ? r.dMa.at("omega") : 0.0;
            const double dl = r.dMa.count("lambda") ? r.dMa.at("lambda") : 0.0;
            const double dsg = r.dMa.count("sigma") ? r.dMa.at("sigma") : 0.0;
            dmaCsv += std::to_string(it) + "," + csvNum(dw) + "," + csvNum(dl) + "," +
                      csvNum(dsg) + "\n";
            its.push_back(it);
            dmaOmega.push_back(dw);
            dmaLambda.push_back(dl);
        };
    }
    TrainConfig cfg = c.train;
    if (cfg.seed == 0) cfg.seed = Rng::mix(c.seed, 1);
    const TrainTrace trace = detail::trainFamily(c, ds, h, cfg, obs);
    const CollapseReport rep = detail::reportFamily(c, ds, h, trace.finalParams, sr.solution);

    ArtifactWriter w(outDir, c.seed);
    w.write("thresholds.json", detail::thresholdsJson(c, sr).dump(2) + "\n");
    w.write("solution.json", toJson(sr.solution).dump(2) + "\n");
    w.write("trace.csv", traceCsv(trace));
    w.write("dma_trace.csv", dmaCsv);
    w.write("report.json", toJson(rep).dump(2) + "\n");

    // per-dimension posterior KL histogram (diagonal covariances only)
    if (h.d1 <= 64 && ds.xt.rows() <= 20000) {
        try {
            Matrix mu;
            Vector var;
            double priorVar = h.etaEnc * h.etaEnc;
            switch (c.family.family) {
                case Family::Vae:
                    mu = ds.xt * trace.finalParams.vae().V.transpose();
                    var = trace.finalParams.vae().Sigma.diagonal();
                    break;
                case Family::Cvae:
                    mu = ds.xt * trace.finalParams.cvae().V1.transpose() +
                         ds.yt * trace.finalParams.cvae().V2.transpose();
                    var = trace.finalParams.cvae().Sigma.diagonal();
                    break;
                case Family::Hvae: {
                    const auto& q = trace.finalParams.hvae();
                    mu = ds.xt * (q.W2 * q.V1).transpose();
                    var = q.Sigma2.diagonal();
                    break;
                }
            }
            w.write("kl_histogram.csv", klHistogramCsv(mu, var, priorVar));
        } catch (const Error&) {
            // non-diagonal covariance parameterization: histogram not defined
        }
    }

    LinePlot plot("training agreement with the closed form", "iteration", "D_MA");
    plot.addSeries("D_MA(omega)", its, dmaOmega);
    plot.addSeries("D_MA(lambda)", its, dmaLambda);
    w.write("plot.svg", plot.render());
    return w.finalize();
}

inline Manifest run_beta_scan(const ExperimentConfig& c, const std::string& outDir) {
    if (c.scanValues.empty())
        throw ConfigError("config key $.scan.values must be a non-empty grid");
    const WhitenedDataset ds = loadExperimentData(c.data, c.family.family);
    Hyperparams base = c.hyper;
    base.validate(c.family.family);
    const detail::SolveResult baseSolve = detail::solveFamily(c, ds, base);

    struct Point {
        double beta = 0.0;
        LossBreakdown loss;
        double betaKl = 0.0;
        Index collapsedAnalytic = 0;
        CollapseReport report;
    };

    auto runPoint = [&](std::size_t idx) {
        const double value = c.scanValues[idx];
        Hyperparams h = c.hyper;
        if (c.scanParameter == "beta2")
            h.beta2 = value;
        else
            h.beta = value;
        const detail::SolveResult sr = detail::solveFamily(c, ds, h);
        TrainConfig cfg = c.train;
        cfg.seed = Rng::mix(c.seed, idx);
        const TrainTrace trace = detail::trainFamily(c, ds, h, cfg);
        Point p;
        p.beta = value;
        p.loss = detail::lossFamily(c, ds, h, trace.finalParams);
        p.betaKl = detail::betaWeightedKl(c, h, p.loss);
        p.collapsedAnalytic = sr.solution.collapsedCount();
        p.report = detail::reportFamily(c, ds, h, trace.finalParams, sr.solution);
        return p;
    };

    // independent grid points run concurrently, each with its own seed stream
    std::vector<std::future<Point>> futures;
    for (std::size_t i = 0; i < c.scanValues.size(); ++i)
        futures.push_back(std::async(std::launch::async, runPoint, i));
    std::vector<Point> points;
    for (auto& f : futures) points.push_back(f.get());

    for (std::size_t i = 1; i < points.size(); ++i)
        if (points[i].beta > points[i - 1].beta &&
            points[i].collapsedAnalytic < points[i - 1].collapsedAnalytic)
            throw DataError("beta-scan: analytic collapsed count decreased along the grid");

    std::string csv =
        "beta,l_rec,beta_l_kl,collapsed_analytic,collapsed_measured,d_ma_omega,d_ma_lambda,"
        "d_ma_sigma,loss_gap,grad_norm\n";
    Json reports = Json::array();
    std::vector<double> xs, lrec, bkl;
    for (const Point& p : points) {
        auto dma = [&](const char* k) { return p.report.dMa.count(k) ? p.report.dMa.at(k) : 0.0; };
        csv += csvNum(p.beta) + "," + csvNum(p.loss.lRec) + "," + csvNum(p.betaKl) + "," +
               std::to_string(p.collapsedAnalytic) + "," + std::to_string(p.report.collapsedDims) +
               "," + csvNum(dma("omega")) + "," + csvNum(dma("lambda")) + "," +
               csvNum(dma("sigma")) + "," + csvNum(p.report.lossGap) + "," +
               csvNum(p.report.gradNorm) + "\n";
        reports.push_back(Json{{"beta", p.beta},
                               {"loss", toJson(p.loss)},
                               {"beta_l_kl", p.betaKl},
                               {"collapsed_analytic", p.collapsedAnalytic},
                               {"report", toJson(p.report)}});
        xs.push_back(p.beta);
        lrec.push_back(p.loss.lRec);
        bkl.push_back(p.betaKl);
    }

    ArtifactWriter w(outDir, c.seed);
    w.write("thresholds.json", detail::thresholdsJson(c, baseSolve).dump(2) + "\n");
    w.write("scan.csv", csv);
    w.write("report.json", reports.dump(2) + "\n");

    const std::string xname = c.scanParameter;
    LinePlot plot("loss components against the KL weight", xname, "value");
    plot.addSeries("l_rec", xs, lrec);
    plot.addSeries(xname + " * l_kl", xs, bkl);
    std::set<double> seen;
    for (Index i = 0; i < baseSolve.solution.thresholds.size(); ++i) {
        const double t = baseSolve.solution.thresholds(i);
        if (t > 0 && !seen.count(t)) {
            seen.insert(t);
            plot.addVLine(t, "t" + std::to_string(i + 1));
        }
    }
    w.write("plot.svg", plot.render());
    return w.finalize();
}

inline Manifest run_sample_sigma_check(const ExperimentConfig& c, const std::string& outDir) {
    const WhitenedDataset ds = loadExperimentData(c.data, c.family.family);
    Hyperparams h = c.hyper;
    h.validate(c.family.family);
    TrainConfig cfg = c.train;
    if (cfg.seed == 0) cfg.seed = Rng::mix(c.seed, 2);

    TrainTrace per;
    TrainTrace shared;
    switch (c.family.family) {
        case Family::Vae: {
            const VaeProblem prob = vaeProblem(ds.statsX);
            per = train_vae_per_sample(prob, ds.xt, h, cfg);
            shared = train_vae(prob, h, cfg);
            break;
        }
        case Family::Cvae: {
            const CvaeProblem prob = cvaeProblem(ds);
            per = train_cvae_per_sample(prob, ds.xt, ds.yt, h, cfg);
            shared = train_cvae(prob, h, cfg);
            break;
        }
        case Family::Hvae: {
            const HvaeProblem prob = hvaeProblem(ds.statsX);
            per = train_hvae_per_sample(prob, ds.xt, h, cfg);
            shared = train_hvae(prob, h, cfg);
            break;
        }
    }

    auto spread = [](const std::vector<Matrix>& sigmas) {
        double maxPair = 0.0;
        Matrix mean = Matrix::Zero(sigmas[0].rows(), sigmas[0].cols());
        for (const auto& s : sigmas) mean += s;
        mean /= double(sigmas.size());
        for (const auto& a : sigmas)
            for (const auto& b : sigmas) maxPair = std::max(maxPair, (a - b).norm());
        return std::pair<double, double>(maxPair, mean.norm());
    };
    const auto [maxPair, meanNorm] = spread(per.perSampleSigmas);
    Json j{{"family", familySpecName(c.family)},
           {"samples", ds.xt.rows()},
           {"max_pairwise_sigma_distance", maxPair},
           {"mean_sigma_norm", meanNorm},
           {"relative_spread", maxPair / std::max(meanNorm, 1e-300)},
           {"per_sample_loss", per.lossHistory.back().total},
           {"shared_loss", shared.lossHistory.back().total},
           {"loss_diff",
            std::abs(per.lossHistory.back().total - shared.lossHistory.back().total)}};
    if (!per.perSampleSigmas2.empty()) {
        const auto [maxPair2, meanNorm2] = spread(per.perSampleSigmas2);
        j["max_pairwise_sigma2_distance"] = maxPair2;
        j["relative_spread_sigma2"] = maxPair2 / std::max(meanNorm2, 1e-300);
    }

    ArtifactWriter w(outDir, c.seed);
    w.write("report.json", j.dump(2) + "\n");
    w.write("trace.csv", traceCsv(per));
    return w.finalize();
}

// ---------------------------------------------------------------------------
// MNIST preparation: center, quadrant-split, whiten, serialize
// ---------------------------------------------------------------------------

inline Manifest mnist_prepare(const std::string& imagesPath, const std::string& labelsPath,
                              const std::string& outDir, const std::vector<int>& digits = {},
                              bool quadrant = true, bool center = true) {
    if (!std::filesystem::exists(imagesPath)) throw IoError("missing data file: " + imagesPath);
    Matrix images = load_idx(imagesPath);
    Matrix labels;
    if (!labelsPath.empty()) {
        if (!std::filesystem::exists(labelsPath)) throw IoError("missing data file: " + labelsPath);
        labels = load_idx(labelsPath);
    }
    if (!digits.empty()) {
        if (labels.size() == 0) throw ConfigError("digit filter requires a label file");
        const std::set<int> want(digits.begin(), digits.end());
        std::vector<Index> keep;
        for (Index i = 0; i < labels.rows(); ++i)
            if (want.count(int(labels(i, 0)))) keep.push_back(i);
        if (keep.empty()) throw DataError("digit filter selected no samples");
        Matrix filtered(Index(keep.size()), images.cols());
        for (std::size_t i = 0; i < keep.size(); ++i) filtered.row(Index(i)) = images.row(keep[i]);
        images = std::move(filtered);
    }

    ArtifactWriter w(outDir, 0);
    const std::filesystem::path dir(outDir);
    if (quadrant) {
        auto [x, y] = quadrant_split(images);
        const WhitenedDataset ds = prepare_xy(x, y, center);
        write_idx_f64((dir / "x_white.idx").string(), ds.xt);
        write_idx_f64((dir / "y_white.idx").string(), ds.yt);
        write_idx_f64((dir / "cross_z.idx").string(), ds.crossZ);
        w.write("stats_x.json", toJson(ds.statsX).dump(2) + "\n");
        w.write("stats_y.json", toJson(ds.statsY).dump(2) + "\n");
    } else {
        const WhitenedDataset ds = prepare_x(images, center);
        write_idx_f64((dir / "x_white.idx").string(), ds.xt);
        w.write("stats_x.json", toJson(ds.statsX).dump(2) + "\n");
    }
    return w.finalize();
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

inline Manifest run(const ExperimentConfig& c, const std::string& outDirOverride = "") {
    const std::string outDir = !outDirOverride.empty() ? outDirOverride
                               : !c.out.empty()        ? c.out
                                                       : std::string("out");
    if (c.experiment == "solve") return run_solve(c, outDir);
    if (c.experiment == "train-vs-theory") return run_train_vs_theory(c, outDir);
    if (c.experiment == "beta-scan") return run_beta_scan(c, outDir);
    if (c.experiment == "sample-sigma-check") return run_sample_sigma_check(c, outDir);
    if (c.experiment == "mnist-prepare")
        return mnist_prepare(c.data.images, c.data.labels, outDir, c.data.digits, c.data.quadrant,
                             c.data.center);
    throw ConfigError("unknown experiment kind: " + c.experiment);
}

// ---------------------------------------------------------------------------
// Invariant battery (the `verify` subcommand)
// ---------------------------------------------------------------------------

inline bool verify(std::ostream& os, std::uint64_t seed = 12345) {
    int failed = 0;
    auto check = [&](const char* name, bool ok) {
        os << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
        failed += !ok;
    };

    {
        const Matrix x = synth_gaussian(300, 5, 1.0, seed);
        const SpectralStats s = second_moment_stats(x, true);
        const Matrix xt = whiten(x, s);
        const Matrix mom = xt.transpose() * xt / double(xt.rows());
        check("whitened second moment is the identity",
              (mom - Matrix::Identity(s.rank(), s.rank())).norm() <= 1e-6 * double(s.rank()));

        const Matrix y = synth_gaussian(300, 4, 1.0, Rng::mix(seed, 1));
        const WhitenedDataset ds = prepare_xy(x, y);
        check("cross-moment singular values bounded by one",
              ds.crossZ.jacobiSvd().singularValues().maxCoeff() <= 1.0 + 1e-8);

        Matrix shifted = x;
        shifted.rowwise() += Vector::Constant(5, 2.5).transpose();
        const SpectralStats s2 = second_moment_stats(shifted, true);
        check("centering invariance",
              (s.secondMoment() - s2.secondMoment()).norm() <= 1e-10);
    }

    {
        Rng rng(Rng::mix(seed, 2));
        const Matrix x = synth_gaussian(200, 3, 1.0, Rng::mix(seed, 3));
        const SpectralStats stats = second_moment_stats(x, true);
        const VaeProblem prob = vaeProblem(stats);
        Hyperparams h;
        h.d1 = 3;
        VaeParams p{rng.gaussian(3, 3, 0.7), rng.gaussian(3, 3, 0.7),
                    Matrix(Matrix::Identity(3, 3) * 0.8)};
        const VaeGrads g = vae_gradient(p, prob, h);
        const double step = 1e-5;
        Matrix fd(3, 3);
        for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 3; ++j) {
                VaeParams a = p, b = p;
                a.U(i, j) += step;
                b.U(i, j) -= step;
                fd(i, j) = (vae_loss(a, prob, h).total - vae_loss(b, prob, h).total) / (2 * step);
            }
        check("analytic gradient matches finite differences",
              (g.U - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
    }

    {
        // reduction consistency across 20 draws
        Rng rng(Rng::mix(seed, 4));
        const Matrix x = synth_gaussian(200, 4, 1.0, Rng::mix(seed, 5));
        const SpectralStats stats = second_moment_stats(x, true);
        const VaeProblem prob = vaeProblem(stats);
        Hyperparams h;
        h.d1 = 3;
        double minD = 1e300, maxD = -1e300;
        for (int k = 0; k < 20; ++k) {
            Matrix L = rng.gaussian(3, 3, 0.5);
            OriginalVaeParams op{rng.gaussian(4, 3, 0.7), rng.gaussian(3, 4, 0.7),
                                 Matrix(L * L.transpose() + 0.1 * Matrix::Identity(3, 3))};
            const double diff =
                vae_loss_original(op, stats, h) - vae_loss(reduceParams(op, stats), prob, h).total;
            minD = std::min(minD, diff);
            maxD = std::max(maxD, diff);
        }
        check("original and reduced losses differ by a constant", maxD - minD <= 1e-8);
    }

    {
        // stationarity of every closed-form solver
        const Matrix x = synth_gaussian(300, 4, 1.0, Rng::mix(seed, 6));
        const SpectralStats stats = second_moment_stats(x, true);
        const VaeProblem vp = vaeProblem(stats);
        const HvaeProblem hp = hvaeProblem(stats);
        Hyperparams h;
        h.d1 = 3;
        h.d2 = 3;
        h.beta = 0.6;
        h.beta2 = 0.8;
        bool ok = true;
        {
            const AnalyticSolution s = vae_optimum_learnable(vp, h);
            ok &= gradient_norm(s.params, &vp, nullptr, nullptr, h, SigmaMode::Learnable) <=
                  1e-8 * (1.0 + s.params.norm());
        }
        {
            Vector d(3);
            d << 0.5, 1.0, 1.7;
            const AnalyticSolution s = vae_optimum_fixed(vp, Matrix(d.asDiagonal()), h);
            ok &= gradient_norm(s.params, &vp, nullptr, nullptr, h, SigmaMode::Fixed) <=
                  1e-8 * (1.0 + s.params.norm());
        }
        {
            const AnalyticSolution s = hvae_optimum_learnable(hp, h);
            ok &= gradient_norm(s.params, nullptr, nullptr, &hp, h, SigmaMode::Learnable) <=
                  1e-8 * (1.0 + s.params.norm());
        }
        {
            const AnalyticSolution s = hvae_optimum_fixed(hp, h);
            ok &= gradient_norm(s.params, nullptr, nullptr, &hp, h, SigmaMode::Fixed) <=
                  1e-8 * (1.0 + s.params.norm());
        }
        {
            const Matrix y = synth_gaussian(300, 3, 1.0, Rng::mix(seed, 7));
            const CvaeProblem cp = cvaeProblem(prepare_xy(x, y));
            const AnalyticSolution s = cvae_optimum(cp, h);
            ok &= gradient_norm(s.params, nullptr, &cp, nullptr, h, SigmaMode::Learnable) <=
                  1e-8 * (1.0 + s.params.norm());
        }
        check("closed-form optima are stationary points", ok);
    }

    {
        Rng rng(Rng::mix(seed, 8));
        bool ok = true;
        for (int rep = 0; rep < 20 && ok; ++rep) {
            auto spec = [&] {
                Vector v(3);
                for (Index i = 0; i < 3; ++i) v(i) = rng.uniform();
                std::sort(v.data(), v.data() + 3, std::greater<double>());
                return Spectrum::ofList(v);
            };
            const Spectrum a = spec(), b = spec(), cth = spec();
            ok &= std::abs(d_ma(a, b) - d_ma(b, a)) <= 1e-12;
            ok &= d_ma(a, cth) <= d_ma(a, b) + d_ma(b, cth) + 1e-12;
        }
        check("D_MA is a pseudometric", ok);
    }

    {
        Rng rng(Rng::mix(seed, 9));
        bool ok = true;
        for (int rep = 0; rep < 100 && ok; ++rep) {
            Vector th(4);
            for (Index i = 0; i < 4; ++i) th(i) = 3.0 * rng.uniform();
            std::sort(th.data(), th.data() + 4, std::greater<double>());
            Hyperparams h;
            h.d1 = 4;
            h.sigma1 = 0.5 + rng.uniform();
            h.beta = 0.5 + rng.uniform();
            for (Family fam : {Family::Cvae, Family::Vae, Family::Hvae}) {
                const Vector crit = collapse_thresholds(th, h, fam);
                Index prev = 0;
                for (double beta = 0.2; beta < 5.0; beta += 0.2) {
                    Index cnt = 0;
                    for (Index i = 0; i < 4; ++i) cnt += beta > crit(i);
                    ok &= cnt >= prev;
                    prev = cnt;
                }
            }
        }
        check("collapsed counts are monotone in the KL weight", ok);
    }

    {
        const Matrix x = synth_gaussian(200, 4, 0.5, Rng::mix(seed, 10));
        const VaeProblem prob = vaeProblem(second_moment_stats(x, true));
        Hyperparams h;
        h.d1 = 3;
        TrainConfig cfg;
        cfg.steps = 30;
        cfg.seed = 77;
        const TrainTrace a = train_vae(prob, h, cfg);
        const TrainTrace b = train_vae(prob, h, cfg);
        bool ok = a.lossHistory.size() == b.lossHistory.size();
        for (std::size_t i = 0; ok && i < a.lossHistory.size(); ++i)
            ok &= a.lossHistory[i].total == b.lossHistory[i].total;
        check("training is deterministic under a fixed seed", ok);
    }

    os << (failed == 0 ? "verify: all invariants hold\n"
                       : "verify: " + std::to_string(failed) + " invariant(s) violated\n");
    return failed == 0;
}

}  // namespace linvae
