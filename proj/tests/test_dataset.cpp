#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <fstream>

using namespace linvae;
using testutil::TempDir;

namespace {

void writeBytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace

TEST_CASE("load_idx parses image files and scales to [0,1]", "[dataset]") {
    TempDir dir("idx");
    std::vector<unsigned char> bytes = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
    for (int v : {0, 36, 73, 109, 146, 182, 219, 255}) bytes.push_back(unsigned(v));
    writeBytes(dir.file("img.idx"), bytes);

    const Matrix m = load_idx(dir.file("img.idx"));
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 4);
    CHECK(m(0, 0) == 0.0);
    CHECK(m(0, 1) == Catch::Approx(36.0 / 255.0));
    CHECK(m(1, 3) == 1.0);
}

TEST_CASE("load_idx rejects unsupported magic, naming it", "[dataset]") {
    TempDir dir("idxbad");
    writeBytes(dir.file("bad.idx"), {0, 0, 8, 2, 0, 0, 0, 1});
    try {
        load_idx(dir.file("bad.idx"));
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("0x00000802") != std::string::npos);
    }
}

TEST_CASE("load_idx rejects truncated payloads", "[dataset]") {
    TempDir dir("idxtrunc");
    std::vector<unsigned char> bytes = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3};
    writeBytes(dir.file("trunc.idx"), bytes);
    REQUIRE_THROWS_AS(load_idx(dir.file("trunc.idx")), LengthError);
}

TEST_CASE("label files give an n x 1 matrix of raw values", "[dataset]") {
    TempDir dir("idxlab");
    writeBytes(dir.file("lab.idx"), {0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9});
    const Matrix m = load_idx(dir.file("lab.idx"));
    REQUIRE(m.rows() == 3);
    REQUIRE(m.cols() == 1);
    CHECK(m(0, 0) == 7.0);
    CHECK(m(2, 0) == 9.0);
}

TEST_CASE("IDX round-trip is the identity on byte-quantized values", "[dataset]") {
    TempDir dir("idxrt");
    Rng rng(11);
    Matrix img(5, 784);
    for (Index i = 0; i < img.size(); ++i) img(i / 784, i % 784) = rng.uniform();
    write_idx_u8(dir.file("rt.idx"), img, 28, 28);
    const Matrix back = load_idx(dir.file("rt.idx"));
    Matrix quantized(img.rows(), img.cols());
    for (Index i = 0; i < img.rows(); ++i)
        for (Index j = 0; j < img.cols(); ++j)
            quantized(i, j) = std::lround(img(i, j) * 255.0) / 255.0;
    CHECK((back - quantized).cwiseAbs().maxCoeff() == 0.0);

    // double container round-trips exactly
    const Matrix m = rng.gaussian(4, 7, 2.5);
    write_idx_f64(dir.file("d.idx"), m);
    CHECK((load_idx(dir.file("d.idx")) - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quadrant_split extracts bottom-left input and 3-quadrant output", "[dataset]") {
    Matrix img = Matrix::Zero(1, 784);
    for (Index r = 14; r < 28; ++r)
        for (Index c = 0; c < 14; ++c) img(0, r * 28 + c) = 1.0;
    auto [x, y] = quadrant_split(img);
    REQUIRE(x.cols() == 196);
    REQUIRE(y.cols() == 588);
    CHECK(x.minCoeff() == 1.0);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);

    const Matrix constant = Matrix::Constant(3, 784, 0.25);
    auto [xc, yc] = quadrant_split(constant);
    CHECK(xc.isApproxToConstant(0.25));
    CHECK(yc.isApproxToConstant(0.25));

    REQUIRE_THROWS_AS(quadrant_split(Matrix::Zero(1, 100)), ShapeError);
}

TEST_CASE("second_moment_stats on isotropic and rank-deficient data", "[dataset]") {
    Matrix iso = std::sqrt(3.0) * Matrix::Identity(3, 3);
    const SpectralStats s = second_moment_stats(iso, /*center=*/false);
    REQUIRE(s.rank() == 3);
    CHECK(s.eigvals.isApproxToConstant(1.0, 1e-12));

    Matrix two(2, 2);
    two << 1, 0, 1, 0;
    const SpectralStats r1 = second_moment_stats(two, /*center=*/false);
    REQUIRE(r1.rank() == 1);
    CHECK(r1.eigvals(0) == Catch::Approx(1.0));
    CHECK(std::abs(r1.eigvecs(0, 0)) == Catch::Approx(1.0));
}

TEST_CASE("second_moment_stats matches the dense product oracle", "[dataset]") {
    const Matrix x = synth_gaussian(50, 5, 1.0, 17);
    const SpectralStats s = second_moment_stats(x, /*center=*/false);
    const Matrix oracle = x.transpose() * x / 50.0;
    CHECK((s.secondMoment() - oracle).norm() <= 1e-10 * oracle.norm());
}

TEST_CASE("second_moment_stats rejects non-finite data and bad tolerance", "[dataset]") {
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(second_moment_stats(bad, false), DataError);
    REQUIRE_THROWS_AS(second_moment_stats(Matrix::Identity(2, 2), false, 2.0), DomainError);
}

TEST_CASE("whitening yields identity second moment and respects rank", "[dataset]") {
    Rng rng(23);
    const Matrix x = rng.gaussian(200, 6, 1.0) * rng.gaussian(6, 6, 1.0);
    const SpectralStats s = second_moment_stats(x, true);
    const Matrix xt = whiten(x, s);
    const Index d = s.rank();
    const Matrix mom = xt.transpose() * xt / double(xt.rows());
    CHECK((mom - Matrix::Identity(d, d)).norm() <= 1e-6 * double(d));

    // round trip back to the rank-d projection
    const Matrix back = xt * s.zMatrix().transpose();
    Matrix centered = x;
    centered.rowwise() -= s.mean.transpose();
    const Matrix proj = centered * s.eigvecs * s.eigvecs.transpose();
    CHECK((back - proj).norm() <= 1e-8 * std::max(1.0, proj.norm()));

    // rank-deficient data keeps only d columns
    Matrix lowRank = rng.gaussian(100, 2, 1.0) * rng.gaussian(2, 7, 1.0);
    const SpectralStats sl = second_moment_stats(lowRank, false);
    CHECK(sl.rank() == 2);
    CHECK(whiten(lowRank, sl).cols() == 2);

    REQUIRE_THROWS_AS(whiten(Matrix::Zero(3, 5), s), ShapeError);
}

TEST_CASE("already-white data keeps an identity second moment", "[dataset]") {
    Rng rng(5);
    Matrix x = rng.gaussian(5000, 4, 1.0);
    const SpectralStats s0 = second_moment_stats(x, false);
    const Matrix xt = whiten(x, s0);
    const SpectralStats s1 = second_moment_stats(xt, false);
    CHECK((s1.secondMoment() - Matrix::Identity(4, 4)).norm() <= 1e-8);
}

TEST_CASE("cross_moment: perfect, anti and zero correlation", "[dataset]") {
    Rng rng(31);
    const Matrix x = rng.gaussian(300, 3, 1.0);
    const SpectralStats s = second_moment_stats(x, false);
    const Matrix xt = whiten(x, s);

    Matrix z = cross_moment(xt, xt);
    CHECK((z - Matrix::Identity(3, 3)).norm() <= 1e-10);
    CHECK((Matrix::Identity(3, 3) - z.transpose() * z).norm() <= 1e-9);

    z = cross_moment(xt, Matrix(-xt));
    CHECK((z + Matrix::Identity(3, 3)).norm() <= 1e-10);

    Matrix a(4, 1), b(4, 1);
    a << 1, 1, -1, -1;
    b << 1, -1, 1, -1;
    CHECK(cross_moment(a, b).cwiseAbs().maxCoeff() == 0.0);

    REQUIRE_THROWS_AS(cross_moment(xt, Matrix::Zero(5, 2)), ShapeError);
}

TEST_CASE("cross_moment singular values stay below 1 + 1e-8", "[dataset]") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        Rng rng(seed);
        const Matrix x = rng.gaussian(60, 4, 1.0);
        Matrix y = 0.8 * x * rng.gaussian(4, 3, 1.0) + rng.gaussian(60, 3, 0.3);
        const auto ds = prepare_xy(x, y);
        if (ds.crossZ.size() == 0) continue;
        CHECK(ds.crossZ.jacobiSvd().singularValues()(0) <= 1.0 + 1e-8);
    }
}

TEST_CASE("synth_gaussian is seeded and matches its variance", "[dataset]") {
    const Matrix a = synth_gaussian(100, 5, 0.1, 99);
    const Matrix b = synth_gaussian(100, 5, 0.1, 99);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(synth_gaussian(1, 3, 1.0, 0).rows() == 1);

    const Matrix big = synth_gaussian(10000, 5, 0.1, 7);
    for (Index j = 0; j < 5; ++j) {
        const double var = big.col(j).squaredNorm() / 10000.0;
        CHECK(var >= 0.0085);
        CHECK(var <= 0.0115);
    }
}

TEST_CASE("centering invariance: shifted samples give identical stats", "[dataset]") {
    Rng rng(41);
    const Matrix x = rng.gaussian(80, 4, 1.3);
    Matrix shifted = x;
    shifted.rowwise() += Vector::Constant(4, 3.7).transpose();
    const SpectralStats s0 = second_moment_stats(x, true);
    const SpectralStats s1 = second_moment_stats(shifted, true);
    REQUIRE(s0.rank() == s1.rank());
    CHECK((s0.eigvals - s1.eigvals).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((s0.secondMoment() - s1.secondMoment()).norm() <= 1e-10);
}
