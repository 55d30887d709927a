#pragma once

#include "linvae/analytic.hpp"
#include "linvae/dataset.hpp"
#include "linvae/objectives.hpp"
#include "linvae/training.hpp"

#include <filesystem>
#include <functional>

namespace testutil {

using namespace linvae;

inline Matrix randomSpd(Index d, Rng& rng, double scale = 1.0) {
    Matrix L = rng.gaussian(d, d, scale);
    return L * L.transpose() + 0.2 * scale * scale * Matrix::Identity(d, d);
}

inline VaeParams randomVaeParams(Index D0, Index d0, Index d1, Rng& rng) {
    return {rng.gaussian(D0, d1, 0.7), rng.gaussian(d1, d0, 0.7), randomSpd(d1, rng, 0.5)};
}

inline CvaeParams randomCvaeParams(Index D2, Index d0, Index d2, Index d1, Rng& rng) {
    return {rng.gaussian(D2, d1, 0.7), rng.gaussian(d1, d0, 0.7), rng.gaussian(d1, d2, 0.7),
            rng.gaussian(D2, d0, 0.7), randomSpd(d1, rng, 0.5)};
}

inline HvaeParams randomHvaeParams(Index D0, Index d0, Index d1, Index d2, Rng& rng) {
    return {rng.gaussian(D0, d1, 0.7), rng.gaussian(d1, d2, 0.7), rng.gaussian(d1, d0, 0.7),
            rng.gaussian(d2, d1, 0.7), randomSpd(d1, rng, 0.5), randomSpd(d2, rng, 0.5)};
}

// Central finite differences of a scalar function over one matrix entry.
inline Matrix finiteDiff(const std::function<double(const Matrix&)>& f, const Matrix& at,
                         double step = 1e-5) {
    Matrix g(at.rows(), at.cols());
    for (Index i = 0; i < at.rows(); ++i)
        for (Index j = 0; j < at.cols(); ++j) {
            Matrix p = at, m = at;
            p(i, j) += step;
            m(i, j) -= step;
            g(i, j) = (f(p) - f(m)) / (2.0 * step);
        }
    return g;
}

// Symmetrized finite differences for covariance blocks: perturbs (i,j) and
// (j,i) together so the result is comparable to the symmetric analytic
// derivative of log|Sigma|.
inline Matrix finiteDiffSym(const std::function<double(const Matrix&)>& f, const Matrix& at,
                            double step = 1e-5) {
    Matrix g(at.rows(), at.cols());
    for (Index i = 0; i < at.rows(); ++i)
        for (Index j = 0; j < at.cols(); ++j) {
            Matrix p = at, m = at;
            if (i == j) {
                p(i, i) += step;
                m(i, i) -= step;
                g(i, i) = (f(p) - f(m)) / (2.0 * step);
            } else {
                p(i, j) += step / 2;
                p(j, i) += step / 2;
                m(i, j) -= step / 2;
                m(j, i) -= step / 2;
                g(i, j) = (f(p) - f(m)) / (2.0 * step);
            }
        }
    return g;
}

inline double relErr(const Matrix& a, const Matrix& b) {
    const double denom = std::max(1.0, std::max(a.norm(), b.norm()));
    return (a - b).norm() / denom;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("linvae_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
