#pragma once

#include "linvae/diagnostics.hpp"
#include "linvae/training.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <string>

namespace linvae {

using Json = nlohmann::json;

inline Json toJson(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Json toJson(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Vector vectorFromJson(const Json& a) {
    Vector v(Index(a.size()));
    for (Index i = 0; i < v.size(); ++i) v(i) = a.at(i).get<double>();
    return v;
}

inline Matrix matrixFromJson(const Json& a) {
    const Index r = Index(a.size());
    if (r == 0) return Matrix();
    const Index c = Index(a.at(0).size());
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = a.at(i).at(j).get<double>();
    return m;
}

inline Json toJson(const SpectralStats& s) {
    return Json{{"eigvals", toJson(s.eigvals)},
                {"eigvecs", toJson(s.eigvecs)},
                {"rank", s.rank()},
                {"mean", toJson(s.mean)},
                {"centered", s.centered},
                {"rank_tolerance", s.rankTolerance}};
}

inline SpectralStats statsFromJson(const Json& j) {
    SpectralStats s;
    s.eigvals = vectorFromJson(j.at("eigvals"));
    s.eigvecs = matrixFromJson(j.at("eigvecs"));
    s.mean = vectorFromJson(j.at("mean"));
    s.centered = j.value("centered", true);
    s.rankTolerance = j.value("rank_tolerance", 1e-10);
    return s;
}

inline Json toJson(const LossBreakdown& lb) {
    return Json{{"total", lb.total},         {"l_rec", lb.lRec},
                {"l_kl", lb.lKL},            {"l_kl1", lb.lKL1},
                {"l_kl2", lb.lKL2},          {"dropped_constant", lb.droppedConstant}};
}

inline Json toJson(const AnalyticSolution& sol) {
    Json tags = Json::array();
    for (CaseTag t : sol.caseTags) tags.push_back(caseTagName(t));
    Json flags = Json::array();
    for (char f : sol.collapsed) flags.push_back(bool(f));
    return Json{{"family", familyName(sol.family)},
                {"singulars", Json{{"omega", toJson(sol.omega)},
                                   {"lambda", toJson(sol.lambda)},
                                   {"sigma_prime", toJson(sol.sigmaPrime)}}},
                {"thresholds", toJson(sol.thresholds)},
                {"case_tags", tags},
                {"collapsed", flags},
                {"loss", sol.lossValue}};
}

inline Json toJson(const CollapseReport& rep) {
    Json dma = Json::object();
    for (const auto& [k, v] : rep.dMa) dma[k] = v;
    Json flags = Json::array();
    for (char f : rep.flags) flags.push_back(bool(f));
    return Json{{"d_ma", dma},
                {"collapsed_dims", rep.collapsedDims},
                {"flags", flags},
                {"loss_gap", rep.lossGap},
                {"grad_norm", rep.gradNorm},
                {"epsilon", rep.epsilon},
                {"delta", rep.delta}};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csvNum(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string traceCsv(const TrainTrace& trace) {
    std::string out = "iteration,total,l_rec,l_kl,l_kl1,l_kl2\n";
    for (std::size_t i = 0; i < trace.lossHistory.size(); ++i) {
        const LossBreakdown& lb = trace.lossHistory[i];
        out += std::to_string(i) + "," + csvNum(lb.total) + "," + csvNum(lb.lRec) + "," +
               csvNum(lb.lKL) + "," + csvNum(lb.lKL1) + "," + csvNum(lb.lKL2) + "\n";
    }
    return out;
}

// per-dimension KL histogram rows: dimension, kl
inline std::string klHistogramCsv(const Matrix& mu, const Vector& varDiag, double priorVar) {
    std::string out = "dimension,sample,kl\n";
    for (Index j = 0; j < mu.cols(); ++j)
        for (Index i = 0; i < mu.rows(); ++i)
            out += std::to_string(j) + "," + std::to_string(i) + "," +
                   csvNum(kl_gaussian_1d(mu(i, j), varDiag(j), priorVar)) + "\n";
    return out;
}

}  // namespace linvae
