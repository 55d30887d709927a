#include "linvae/linvae.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace linvae;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

struct CommonOpts {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seedSet = false;
};

void addCommon(CLI::App* cmd, CommonOpts& opts, bool configRequired = true) {
    auto* c = cmd->add_option("--config", opts.config, "experiment configuration (JSON)");
    if (configRequired) c->required();
    cmd->add_option("--out", opts.out, "output directory");
    cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
        opts.seedSet = true;
    });
}

ExperimentConfig loadWithKind(const CommonOpts& opts, const std::string& kind,
                              const std::set<std::string>& allowed) {
    ExperimentConfig c = loadConfig(opts.config);
    if (c.experiment.empty() || !allowed.count(c.experiment)) c.experiment = kind;
    if (opts.seedSet) c.seed = opts.seed;
    return c;
}

void printManifest(const Manifest& m, const std::string& outDir) {
    std::cout << "wrote " << m.artifacts.size() << " artifact(s) to " << outDir << "\n";
    for (const auto& [name, hash] : m.artifacts) {
        char hex[24];
        std::snprintf(hex, sizeof hex, "0x%016llx", static_cast<unsigned long long>(hash));
        std::cout << "  " << name << "  " << hex << "\n";
    }
}

int runStats(const CommonOpts& opts) {
    const ExperimentConfig c = loadWithKind(opts, "solve", {"solve"});
    const std::string outDir = !opts.out.empty() ? opts.out : (!c.out.empty() ? c.out : "out");
    const WhitenedDataset ds = loadExperimentData(c.data, c.family.family);
    ArtifactWriter w(outDir, c.seed);
    w.write("stats_x.json", toJson(ds.statsX).dump(2) + "\n");
    if (ds.hasY) {
        w.write("stats_y.json", toJson(ds.statsY).dump(2) + "\n");
        w.write("cross_z.json", toJson(ds.crossZ).dump(2) + "\n");
    }
    printManifest(w.finalize(), outDir);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"closed-form analysis and training of linear VAE families"};
    app.require_subcommand(1);

    CommonOpts statsOpts, solveOpts, trainOpts, scanOpts, prepOpts;
    std::string prepImages, prepLabels;
    std::vector<int> prepDigits;
    bool prepNoQuadrant = false, prepNoCenter = false;
    std::uint64_t verifySeed = 12345;

    auto* statsCmd = app.add_subcommand("stats", "second-moment spectral statistics of a dataset");
    addCommon(statsCmd, statsOpts);

    auto* solveCmd = app.add_subcommand("solve", "closed-form optimum and collapse thresholds");
    addCommon(solveCmd, solveOpts);

    auto* trainCmd =
        app.add_subcommand("train", "first-order training compared against the closed form");
    addCommon(trainCmd, trainOpts);

    auto* scanCmd = app.add_subcommand("scan", "KL-weight grid scan with collapse diagnostics");
    addCommon(scanCmd, scanOpts);

    auto* prepCmd = app.add_subcommand("mnist-prepare", "center, split and whiten MNIST IDX data");
    addCommon(prepCmd, prepOpts, /*configRequired=*/false);
    prepCmd->add_option("--images", prepImages, "IDX image file");
    prepCmd->add_option("--labels", prepLabels, "IDX label file");
    prepCmd->add_option("--digits", prepDigits, "keep only these digit labels");
    prepCmd->add_flag("--no-quadrant", prepNoQuadrant, "skip the quadrant split");
    prepCmd->add_flag("--no-center", prepNoCenter, "skip centering");

    auto* verifyCmd = app.add_subcommand("verify", "run the library invariant suite");
    verifyCmd->add_option("--seed", verifySeed, "seed for the randomized invariants");

    CLI11_PARSE(app, argc, argv);

    try {
        if (statsCmd->parsed()) return runStats(statsOpts);
        if (solveCmd->parsed()) {
            const ExperimentConfig c = loadWithKind(solveOpts, "solve", {"solve"});
            printManifest(run(c, solveOpts.out), !solveOpts.out.empty() ? solveOpts.out : c.out);
            return kExitOk;
        }
        if (trainCmd->parsed()) {
            const ExperimentConfig c = loadWithKind(
                trainOpts, "train-vs-theory", {"train-vs-theory", "sample-sigma-check"});
            printManifest(run(c, trainOpts.out), !trainOpts.out.empty() ? trainOpts.out : c.out);
            return kExitOk;
        }
        if (scanCmd->parsed()) {
            const ExperimentConfig c = loadWithKind(scanOpts, "beta-scan", {"beta-scan"});
            printManifest(run(c, scanOpts.out), !scanOpts.out.empty() ? scanOpts.out : c.out);
            return kExitOk;
        }
        if (prepCmd->parsed()) {
            std::string images = prepImages, labels = prepLabels, out = prepOpts.out;
            std::vector<int> digits = prepDigits;
            bool quadrant = !prepNoQuadrant, center = !prepNoCenter;
            if (!prepOpts.config.empty()) {
                const ExperimentConfig c =
                    loadWithKind(prepOpts, "mnist-prepare", {"mnist-prepare"});
                if (images.empty()) images = c.data.images;
                if (labels.empty()) labels = c.data.labels;
                if (digits.empty()) digits = c.data.digits;
                if (out.empty()) out = c.out;
                quadrant = !prepNoQuadrant && c.data.quadrant;
                center = !prepNoCenter && c.data.center;
            }
            if (images.empty())
                throw ConfigError("mnist-prepare needs --images or a config with $.data.images");
            if (out.empty()) out = "out";
            printManifest(mnist_prepare(images, labels, out, digits, quadrant, center), out);
            return kExitOk;
        }
        if (verifyCmd->parsed()) return verify(std::cout, verifySeed) ? kExitOk : kExitValidation;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
