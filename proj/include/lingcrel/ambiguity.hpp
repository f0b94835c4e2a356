#pragma once

// Effect-respecting reparametrizations v = M z that yield a different but
// observationally identical linear model on the same graph. They show that
// mixing each latent with its effect-dominating parents cannot be undone.

#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/graph.hpp"
#include "lingcrel/io.hpp"
#include "lingcrel/rng.hpp"
#include "lingcrel/scm.hpp"

#include <json.hpp>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace lingcrel {

struct HypotheticalModel {
    MatrixXd M;
    std::vector<MatrixXd> A_hat;
    std::vector<VectorXd> omega_hat;
    MatrixXd H_hat;  ///< M H, so that v = M z = H_hat x
};

inline constexpr int kEffectRespectingRetryCap = 50;
inline constexpr double kEffectRespectingMinSv = 1e-6;

/// Identity plus N(0, scale^2) entries on every off-diagonal closed dom
/// position, redrawn until the smallest singular value exceeds 1e-6.
inline MatrixXd random_effect_respecting(const Dag& g, double scale, Rng& rng) {
    if (!(scale > 0)) throw InvalidArgument("random_effect_respecting: scale must be positive");
    std::normal_distribution<double> normal(0.0, scale);
    for (int attempt = 0; attempt <= kEffectRespectingRetryCap; ++attempt) {
        MatrixXd m = MatrixXd::Identity(g.d(), g.d());
        for (Node i = 0; i < g.d(); ++i)
            for (Node j : g.dom_set(i)) {
                double v;
                do v = normal(rng);
                while (v == 0.0);
                m(i, j) = v;
            }
        if (detail::min_singular_value(m) > kEffectRespectingMinSv) return m;
    }
    throw NumericalError("random_effect_respecting: no invertible draw after " + std::to_string(kEffectRespectingRetryCap) + " retries");
}

/// The hypothetical model with latents v = M z:
///   omega_hat_i = M_ii^2 omega_i,
///   A_hat = I - Omega_hat^{1/2} Omega^{-1/2} (I - A) M^{-1},
///   H_hat = M H.
/// M must be invertible, supported on closed dom positions, and have a
/// positive diagonal (a negative M_ii would put 2 on the diagonal of A_hat).
inline HypotheticalModel construct_hypothetical(const LinearScm& truth, const MatrixXd& M) {
    const int d = truth.d();
    if (!pattern_membership(M, truth.g, PatternClass::dom0, 0.0))
        throw InvalidArgument("construct_hypothetical: M is not an invertible effect-respecting matrix");
    for (int i = 0; i < d; ++i)
        if (!(M(i, i) > 0)) throw InvalidArgument("construct_hypothetical: M must have a positive diagonal");
    const MatrixXd m_inv = M.inverse();
    HypotheticalModel h;
    h.M = M;
    h.H_hat = M * truth.H;
    const MatrixXd I = MatrixXd::Identity(d, d);
    for (int k = 0; k < truth.K(); ++k) {
        const VectorXd& om = truth.omega[static_cast<std::size_t>(k)];
        VectorXd om_hat(d);
        for (int i = 0; i < d; ++i) om_hat(i) = M(i, i) * M(i, i) * om(i);
        const VectorXd ratio = (om_hat.array() / om.array()).sqrt().matrix();
        MatrixXd a_hat = I - ratio.asDiagonal() * (I - truth.A[static_cast<std::size_t>(k)]) * m_inv;
        // The diagonal is 1 - sign(M_ii) = 0 up to rounding.
        a_hat.diagonal().setZero();
        h.A_hat.push_back(std::move(a_hat));
        h.omega_hat.push_back(std::move(om_hat));
    }
    return h;
}

/// The hypothetical model as a LinearScm on the same graph and noise shapes.
inline LinearScm as_model(const LinearScm& truth, const HypotheticalModel& h) {
    LinearScm m = truth;
    m.H = h.H_hat;
    m.A = h.A_hat;
    m.omega = h.omega_hat;
    return m;
}

struct CheckResult {
    bool applicable = true;
    bool passed = false;
    std::string detail;
};

struct AmbiguityReport {
    CheckResult obs_invariance;
    CheckResult sparsity;
    CheckResult nondegeneracy;
    CheckResult intervention_structure;
    int resamples = 0;

    bool all_passed() const {
        for (const auto* c : {&obs_invariance, &sparsity, &nondegeneracy, &intervention_structure})
            if (c->applicable && !c->passed) return false;
        return true;
    }
};

namespace detail {

inline double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace detail

/// Checks, relative to the scale of the matrices involved:
/// (a) B_hat_k H_hat = B_k H for every k;
/// (b) the support of every A_hat_k is exactly the true edge set;
/// (c) node-level non-degeneracy of the hypothetical model;
/// (d) for grouped single-node interventions, rows of B_hat_k differ within
///     a group exactly at the intervened node.
inline AmbiguityReport verify_indistinguishable(const LinearScm& truth, const HypotheticalModel& hypo, double tol = 1e-10) {
    if (hypo.A_hat.size() != truth.A.size() || hypo.H_hat.rows() != truth.H.rows() || hypo.H_hat.cols() != truth.H.cols())
        throw InvalidArgument("verify_indistinguishable: dimension mismatch");
    const int d = truth.d();
    const LinearScm hm = as_model(truth, hypo);
    AmbiguityReport rep;

    double worst = 0.0;
    for (int k = 0; k < truth.K(); ++k) {
        const MatrixXd lhs = noise_mat_b(hm, k) * hm.H;
        const MatrixXd rhs = noise_mat_b(truth, k) * truth.H;
        worst = std::max(worst, detail::max_abs(lhs - rhs) / std::max(1.0, detail::max_abs(rhs)));
    }
    rep.obs_invariance.passed = worst <= tol;
    rep.obs_invariance.detail = "max relative deviation " + io::format_double(worst);

    rep.sparsity.passed = true;
    for (int k = 0; k < truth.K() && rep.sparsity.passed; ++k) {
        const MatrixXd& a = hypo.A_hat[static_cast<std::size_t>(k)];
        const double zero = 1e-9 * std::max(1.0, detail::max_abs(a));
        for (Node i = 0; i < d && rep.sparsity.passed; ++i)
            for (Node j = 0; j < d; ++j)
                if ((std::abs(a(i, j)) > zero) != truth.g.has_edge(j, i)) {
                    rep.sparsity.passed = false;
                    rep.sparsity.detail = "environment " + std::to_string(k + 1) + ", entry (" + std::to_string(i + 1) + "," +
                                          std::to_string(j + 1) + ") = " + io::format_double(a(i, j));
                    break;
                }
    }

    const auto nd = check_nondegeneracy(hm);
    rep.nondegeneracy.passed = true;
    double margin = std::numeric_limits<double>::infinity();
    for (Node i = 0; i < d; ++i) {
        margin = std::min(margin, nd[static_cast<std::size_t>(i)].margin);
        if (!nd[static_cast<std::size_t>(i)].ok) rep.nondegeneracy.passed = false;
    }
    rep.nondegeneracy.detail = "smallest margin " + io::format_double(margin);

    if (truth.targets.empty()) {
        rep.intervention_structure.applicable = false;
        rep.intervention_structure.detail = "environments are not grouped single-node interventions";
    } else {
        rep.intervention_structure.passed = true;
        std::vector<MatrixXd> b;
        for (int k = 0; k < hm.K(); ++k) b.push_back(noise_mat_b(hm, k));
        for (int k = 0; k < hm.K() && rep.intervention_structure.passed; ++k)
            for (int l = k + 1; l < hm.K(); ++l) {
                if (truth.targets[k] != truth.targets[l]) continue;
                const double scale = std::max(1.0, std::max(detail::max_abs(b[k]), detail::max_abs(b[l])));
                for (Node j = 0; j < d; ++j) {
                    const bool differs = (b[k].row(j) - b[l].row(j)).cwiseAbs().maxCoeff() > 1e-9 * scale;
                    if (differs != (j == truth.targets[k])) {
                        rep.intervention_structure.passed = false;
                        rep.intervention_structure.detail = "environments " + std::to_string(k + 1) + " and " + std::to_string(l + 1) +
                                                            ", row " + std::to_string(j + 1);
                        break;
                    }
                }
                if (!rep.intervention_structure.passed) break;
            }
    }
    return rep;
}

struct AmbiguityDemo {
    HypotheticalModel hypo;
    AmbiguityReport report;
};

/// Draws M, builds the hypothetical model and verifies it. A failed sparsity
/// check is retried once with a fresh M, since exact cancellations only
/// occur on a null set of M.
inline AmbiguityDemo demonstrate_ambiguity(const LinearScm& truth, double scale, Rng& rng, double tol = 1e-10) {
    AmbiguityDemo demo;
    for (int attempt = 0; attempt < 2; ++attempt) {
        demo.hypo = construct_hypothetical(truth, random_effect_respecting(truth.g, scale, rng));
        demo.report = verify_indistinguishable(truth, demo.hypo, tol);
        demo.report.resamples = attempt;
        if (demo.report.sparsity.passed) break;
    }
    return demo;
}

inline nlohmann::json to_json(const AmbiguityReport& rep) {
    auto check = [](const CheckResult& c) -> nlohmann::json { return c.applicable ? nlohmann::json(c.passed) : nlohmann::json(nullptr); };
    auto detail = [](const CheckResult& c) { return c.detail; };
    return {{"checks",
             {{"obs_invariance", check(rep.obs_invariance)},
              {"sparsity", check(rep.sparsity)},
              {"nondegeneracy", check(rep.nondegeneracy)},
              {"intervention_structure", check(rep.intervention_structure)}}},
            {"details",
             {{"obs_invariance", detail(rep.obs_invariance)},
              {"sparsity", detail(rep.sparsity)},
              {"nondegeneracy", detail(rep.nondegeneracy)},
              {"intervention_structure", detail(rep.intervention_structure)}}},
            {"resamples", rep.resamples},
            {"passed", rep.all_passed()}};
}

inline nlohmann::json to_json(const HypotheticalModel& h) {
    nlohmann::json a = nlohmann::json::array(), om = nlohmann::json::array();
    for (const auto& m : h.A_hat) a.push_back(io::matrix_to_json(m));
    for (const auto& v : h.omega_hat) om.push_back(io::vector_to_json(v));
    return {{"M", io::matrix_to_json(h.M)}, {"A_hat", std::move(a)}, {"omega_hat", std::move(om)}, {"H_hat", io::matrix_to_json(h.H_hat)}};
}

}  // namespace lingcrel
