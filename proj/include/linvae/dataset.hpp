#pragma once

#include "linvae/common.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <utility>
#include <vector>

namespace linvae {

// ---------------------------------------------------------------------------
// IDX binary format (big-endian magic + dims, payload)
//
// Accepted magics:
//   0x00000803  ubyte images, 3 dims  -> n x (rows*cols), pixels scaled to [0,1]
//   0x00000801  ubyte labels, 1 dim   -> n x 1, raw values
//   0x00000e02  double matrix, 2 dims -> n x cols, raw values (big-endian f64)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t readBe32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void writeBe32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline double readBeF64(const unsigned char* p) {
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u = (u << 8) | p[i];
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}

inline void writeBeF64(std::ofstream& out, double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    unsigned char b[8];
    for (int i = 7; i >= 0; --i) {
        b[i] = static_cast<unsigned char>(u & 0xff);
        u >>= 8;
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::vector<unsigned char> readFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open IDX file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline Matrix load_idx(const std::string& path) {
    const auto bytes = detail::readFile(path);
    if (bytes.size() < 4) throw LengthError("IDX file shorter than its magic: " + path);
    const std::uint32_t magic = detail::readBe32(bytes.data());

    auto needDims = [&](std::size_t n) {
        if (bytes.size() < 4 + 4 * n) throw LengthError("IDX header truncated: " + path);
    };

    if (magic == 0x00000803u) {
        needDims(3);
        const std::uint32_t n = detail::readBe32(bytes.data() + 4);
        const std::uint32_t r = detail::readBe32(bytes.data() + 8);
        const std::uint32_t c = detail::readBe32(bytes.data() + 12);
        const std::size_t expect = std::size_t(n) * r * c;
        if (bytes.size() < 16 + expect) throw LengthError("IDX image payload truncated: " + path);
        Matrix m(n, std::size_t(r) * c);
        const unsigned char* p = bytes.data() + 16;
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = 0; j < r * c; ++j) m(i, j) = p[std::size_t(i) * r * c + j] / 255.0;
        return m;
    }
    if (magic == 0x00000801u) {
        needDims(1);
        const std::uint32_t n = detail::readBe32(bytes.data() + 4);
        if (bytes.size() < 8 + n) throw LengthError("IDX label payload truncated: " + path);
        Matrix m(n, 1);
        for (std::uint32_t i = 0; i < n; ++i) m(i, 0) = bytes[8 + i];
        return m;
    }
    if (magic == 0x00000e02u) {
        needDims(2);
        const std::uint32_t n = detail::readBe32(bytes.data() + 4);
        const std::uint32_t c = detail::readBe32(bytes.data() + 8);
        const std::size_t expect = std::size_t(n) * c * 8;
        if (bytes.size() < 12 + expect) throw LengthError("IDX double payload truncated: " + path);
        Matrix m(n, c);
        const unsigned char* p = bytes.data() + 12;
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = 0; j < c; ++j)
                m(i, j) = detail::readBeF64(p + (std::size_t(i) * c + j) * 8);
        return m;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "unsupported IDX magic 0x%08x in ", magic);
    throw FormatError(buf + path);
}

// Quantizes values (assumed in [0,1]) to bytes and writes an image file.
inline void write_idx_u8(const std::string& path, const Matrix& data, Index rows, Index cols) {
    if (data.cols() != rows * cols) throw ShapeError("write_idx_u8: row length != rows*cols");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write IDX file: " + path);
    detail::writeBe32(out, 0x00000803u);
    detail::writeBe32(out, static_cast<std::uint32_t>(data.rows()));
    detail::writeBe32(out, static_cast<std::uint32_t>(rows));
    detail::writeBe32(out, static_cast<std::uint32_t>(cols));
    for (Index i = 0; i < data.rows(); ++i)
        for (Index j = 0; j < data.cols(); ++j) {
            const double v = std::clamp(data(i, j), 0.0, 1.0);
            const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
            out.write(reinterpret_cast<const char*>(&b), 1);
        }
}

inline void write_idx_u8_labels(const std::string& path, const Matrix& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write IDX file: " + path);
    detail::writeBe32(out, 0x00000801u);
    detail::writeBe32(out, static_cast<std::uint32_t>(labels.rows()));
    for (Index i = 0; i < labels.rows(); ++i) {
        const unsigned char b = static_cast<unsigned char>(std::lround(labels(i, 0)));
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
}

inline void write_idx_f64(const std::string& path, const Matrix& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write IDX file: " + path);
    detail::writeBe32(out, 0x00000e02u);
    detail::writeBe32(out, static_cast<std::uint32_t>(data.rows()));
    detail::writeBe32(out, static_cast<std::uint32_t>(data.cols()));
    for (Index i = 0; i < data.rows(); ++i)
        for (Index j = 0; j < data.cols(); ++j) detail::writeBeF64(out, data(i, j));
}

// ---------------------------------------------------------------------------
// Quadrant split of 28x28 digit images: the bottom-left 14x14 block is the
// input x; the remaining three quadrants (top-left, top-right, bottom-right,
// each row-major) concatenated are the output y.
// ---------------------------------------------------------------------------

inline std::pair<Matrix, Matrix> quadrant_split(const Matrix& images) {
    constexpr Index S = 28, H = 14;
    if (images.cols() != S * S) throw ShapeError("quadrant_split: rows must have 784 entries");
    const Index n = images.rows();
    Matrix x(n, H * H), y(n, 3 * H * H);
    for (Index i = 0; i < n; ++i) {
        Index xk = 0, yk = 0;
        auto px = [&](Index r, Index c) { return images(i, r * S + c); };
        for (Index r = H; r < S; ++r)  // bottom-left
            for (Index c = 0; c < H; ++c) x(i, xk++) = px(r, c);
        for (Index r = 0; r < H; ++r)  // top-left
            for (Index c = 0; c < H; ++c) y(i, yk++) = px(r, c);
        for (Index r = 0; r < H; ++r)  // top-right
            for (Index c = H; c < S; ++c) y(i, yk++) = px(r, c);
        for (Index r = H; r < S; ++r)  // bottom-right
            for (Index c = H; c < S; ++c) y(i, yk++) = px(r, c);
    }
    return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------------------
// Second-moment spectral statistics and whitening
// ---------------------------------------------------------------------------

struct SpectralStats {
    Matrix eigvecs;              // ambient x rank, orthonormal columns
    Vector eigvals;              // positive, non-increasing
    double rankTolerance = 1e-10;
    Vector mean;                 // stored for re-use; zero when centering off
    bool centered = false;

    Index rank() const { return eigvals.size(); }
    Index ambient() const { return eigvecs.rows(); }

    Matrix secondMoment() const {
        return eigvecs * eigvals.asDiagonal() * eigvecs.transpose();
    }
    // Z = P Phi^{1/2}: the canonical cross-moment of data with its whitening.
    Matrix zMatrix() const { return eigvecs * eigvals.cwiseSqrt().asDiagonal(); }
    // Singular values of zMatrix().
    Vector thetas() const { return eigvals.cwiseSqrt(); }
};

inline SpectralStats second_moment_stats(const Matrix& data, bool center = true,
                                         double rankTolerance = 1e-10) {
    if (data.rows() < 1) throw ShapeError("second_moment_stats: need at least one sample");
    if (!(rankTolerance > 0.0 && rankTolerance < 1.0))
        throw DomainError("second_moment_stats: rankTolerance must lie in (0,1)");
    requireFinite(data, "second_moment_stats: data");

    const Index n = data.rows(), D = data.cols();
    SpectralStats s;
    s.rankTolerance = rankTolerance;
    s.centered = center;
    s.mean = center ? Vector(data.colwise().mean()) : Vector(Vector::Zero(D));

    Matrix centered_data = data;
    if (center) centered_data.rowwise() -= s.mean.transpose();
    Matrix A = centered_data.transpose() * centered_data / double(n);
    A = 0.5 * (A + A.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
    if (eig.info() != Eigen::Success) throw DataError("second_moment_stats: eigendecomposition failed");

    // ascending from Eigen; keep the non-increasing tail above the cutoff
    const Vector& ev = eig.eigenvalues();
    const double cutoff = rankTolerance * std::max(ev(D - 1), 0.0);
    std::vector<Index> keep;
    for (Index i = D - 1; i >= 0; --i)
        if (ev(i) > cutoff && ev(i) > 0.0) keep.push_back(i);

    const Index d = static_cast<Index>(keep.size());
    s.eigvals.resize(d);
    s.eigvecs.resize(D, d);
    for (Index k = 0; k < d; ++k) {
        s.eigvals(k) = ev(keep[k]);
        s.eigvecs.col(k) = eig.eigenvectors().col(keep[k]);
    }
    return s;
}

inline Matrix whiten(const Matrix& data, const SpectralStats& stats) {
    if (data.cols() != stats.ambient()) throw ShapeError("whiten: dimension mismatch with stats");
    Matrix centered_data = data;
    if (stats.centered) centered_data.rowwise() -= stats.mean.transpose();
    return centered_data * stats.eigvecs * stats.eigvals.cwiseSqrt().cwiseInverse().asDiagonal();
}

inline Matrix cross_moment(const Matrix& xw, const Matrix& yw) {
    if (xw.rows() != yw.rows()) throw ShapeError("cross_moment: sample counts differ");
    Matrix Z = xw.transpose() * yw / double(xw.rows());
    if (Z.size() > 0) {
        const double top = Z.jacobiSvd().singularValues()(0);
        if (top > 1.0 + 1e-6)
            throw DataError("cross_moment: inputs are not whitened (top singular value " +
                            std::to_string(top) + ")");
    }
    return Z;
}

inline Matrix synth_gaussian(Index n, Index dim, double scale, std::uint64_t seed) {
    if (n < 1) throw ShapeError("synth_gaussian: need n >= 1");
    if (!(scale > 0.0)) throw DomainError("synth_gaussian: scale must be positive");
    Rng rng(seed);
    return rng.gaussian(n, dim, scale);
}

// ---------------------------------------------------------------------------
// Whitened dataset bundle
// ---------------------------------------------------------------------------

struct WhitenedDataset {
    Matrix xt;            // n x d0
    Matrix yt;            // n x d2 (empty when unsupervised)
    Matrix crossZ;        // d0 x d2 cross moment E[x~ y~^T]
    SpectralStats statsX;
    SpectralStats statsY;
    bool hasY = false;
};

inline WhitenedDataset prepare_x(const Matrix& x, bool center = true, double tol = 1e-10) {
    WhitenedDataset ds;
    ds.statsX = second_moment_stats(x, center, tol);
    ds.xt = whiten(x, ds.statsX);
    return ds;
}

inline WhitenedDataset prepare_xy(const Matrix& x, const Matrix& y, bool center = true,
                                  double tol = 1e-10) {
    if (x.rows() != y.rows()) throw ShapeError("prepare_xy: sample counts differ");
    WhitenedDataset ds;
    ds.statsX = second_moment_stats(x, center, tol);
    ds.statsY = second_moment_stats(y, center, tol);
    ds.xt = whiten(x, ds.statsX);
    ds.yt = whiten(y, ds.statsY);
    ds.crossZ = cross_moment(ds.xt, ds.yt);
    ds.hasY = true;
    return ds;
}

}  // namespace linvae
