#pragma once

// Step one of the pipeline: per-environment linear ICA recovering
// M_k = B_k H, followed by alignment of the recovered rows across
// environments so that row r refers to the same noise component everywhere.

#include "lingcrel/detail/assignment.hpp"
#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/io.hpp"
#include "lingcrel/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lingcrel {

class AlignmentError : public Error {
public:
    using Error::Error;
};

using Clock = std::chrono::steady_clock;

struct IcaOptions {
    int max_iter = 500;
    /// Convergence when max_i (1 - |<w_i, w_i'>|) over successive iterates
    /// drops below tol.
    double tol = 1e-6;
    int restarts = 3;
    /// After the log-cosh fit, pick per component the nonlinearity with the
    /// smallest estimated asymptotic variance and iterate again.
    bool adaptive = true;
    std::uint64_t seed = 0;
    std::optional<Clock::time_point> deadline;
};

struct IcaResult {
    MatrixXd unmixing;  ///< d x n, rows give unit-variance components
    int iterations = 0;
    bool converged = false;
    double contrast = 0.0;
    int restart = 0;
    std::vector<int> nonlinearity;  ///< per component, index into the adaptive family; empty if unused
};

namespace detail {

/// E[log cosh(nu)] for nu ~ N(0,1), by Simpson's rule on [-12, 12].
inline double gaussian_logcosh_mean() {
    static const double value = [] {
        const int steps = 24000;
        const double a = -12.0, h = 24.0 / steps;
        auto f = [](double x) {
            const double ax = std::abs(x);
            return (ax + std::log1p(std::exp(-2.0 * ax)) - std::log(2.0)) * std::exp(-0.5 * x * x);
        };
        double s = f(a) + f(a + steps * h);
        for (int i = 1; i < steps; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
        return s * h / 3.0 / std::sqrt(2.0 * M_PI);
    }();
    return value;
}

/// (W W^T)^{-1/2} W
inline MatrixXd symmetric_decorrelation(const MatrixXd& w) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(w * w.transpose());
    const VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).array().rsqrt();
    return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * w;
}

inline double logcosh_contrast(const MatrixXd& y) {
    const double gauss = gaussian_logcosh_mean();
    double j = 0.0;
    for (Index i = 0; i < y.rows(); ++i) {
        const auto a = y.row(i).array().abs();
        const double mean = (a + (-2.0 * a).exp().log1p() - std::log(2.0)).mean();
        j += (mean - gauss) * (mean - gauss);
    }
    return j;
}

/// Candidate nonlinearities g with derivative g'. tanh suits mildly
/// super-Gaussian sources, steep tanh strongly super-Gaussian ones, and the
/// Gaussian kernel sub-Gaussian ones. All are bounded, which keeps them
/// robust against heavy tails.
inline constexpr int kNonlinearities = 3;

inline void apply_nonlinearity(int kind, const Eigen::ArrayXd& s, Eigen::ArrayXd& g, Eigen::ArrayXd& gp) {
    switch (kind) {
        case 0: g = s.tanh(); gp = 1.0 - g.square(); break;
        case 1: g = (3.0 * s).tanh() / 3.0; gp = 1.0 - (3.0 * g).square(); break;
        default: {
            const Eigen::ArrayXd e = (-0.5 * s.square()).exp();
            g = s * e;
            gp = (1.0 - s.square()) * e;
            break;
        }
    }
}

/// One-unit asymptotic variance factor (E g^2 - (E s g)^2) / (E s g - E g')^2
/// on a unit-variance component sample.
inline double nonlinearity_cost(int kind, const Eigen::ArrayXd& s) {
    Eigen::ArrayXd g, gp;
    apply_nonlinearity(kind, s, g, gp);
    const double esg = (s * g).mean();
    const double tau = esg - gp.mean();
    if (!(std::abs(tau) > 1e-12)) return std::numeric_limits<double>::infinity();
    return (g.square().mean() - esg * esg) / (tau * tau);
}

/// Efficiency refinement of an orthogonal whitened-space unmixing `w`:
/// every row gets its lowest-cost nonlinearity and a one-unit fixed-point
/// polish, then row k is re-orthogonalized against the others with weights
/// c_kl = tau_l gamma_k / (tau_k (gamma_l + tau_l^2)), c_kk = 1.
/// Rows whose polish drifts to another component keep their symmetric fit.
inline std::vector<int> efficient_refine(MatrixXd& w, const MatrixXd& z, const IcaOptions& opts) {
    const Index d = w.rows();
    std::vector<int> kinds(static_cast<std::size_t>(d), 0);
    MatrixXd polished = w;
    VectorXd gamma(d), tau(d);
    Eigen::ArrayXd g, gp;
    for (Index k = 0; k < d; ++k) {
        const RowVectorXd start = w.row(k);
        Eigen::ArrayXd y = (start * z).transpose().array();
        double best_cost = std::numeric_limits<double>::infinity();
        for (int kind = 0; kind < kNonlinearities; ++kind) {
            const double c = nonlinearity_cost(kind, y);
            if (c < best_cost) {
                best_cost = c;
                kinds[static_cast<std::size_t>(k)] = kind;
            }
        }
        const int kind = kinds[static_cast<std::size_t>(k)];
        RowVectorXd v = start;
        for (int it = 0; it < opts.max_iter; ++it) {
            if (opts.deadline && Clock::now() > *opts.deadline) throw TimeoutError("fast_ica: trial budget exhausted");
            y = (v * z).transpose().array();
            apply_nonlinearity(kind, y, g, gp);
            RowVectorXd next = (z * g.matrix()).transpose() / static_cast<double>(z.cols()) - gp.mean() * v;
            next.normalize();
            const double lim = 1.0 - std::abs(next.dot(v));
            v = next;
            if (lim < opts.tol) break;
        }
        if (std::abs(v.dot(start)) > 0.95) polished.row(k) = v;
        y = (polished.row(k) * z).transpose().array();
        apply_nonlinearity(kind, y, g, gp);
        const double mu = (y * g).mean();
        gamma(k) = g.square().mean() - mu * mu;
        tau(k) = std::abs(mu - gp.mean());
    }
    if (!(tau.array() > 1e-12).all()) return {};
    MatrixXd out(d, w.cols());
    for (Index k = 0; k < d; ++k) {
        VectorXd c(d);
        for (Index l = 0; l < d; ++l)
            c(l) = l == k ? 1.0 : tau(l) * gamma(k) / (tau(k) * (gamma(l) + tau(l) * tau(l)));
        out.row(k) = symmetric_decorrelation(c.asDiagonal() * polished).row(k);
    }
    w = out;
    return kinds;
}

}  // namespace detail

/// Symmetric fixed-point ICA with the log-cosh contrast. X holds one sample
/// per row. When X has more than d columns the data are first reduced to
/// their top-d principal components.
inline IcaResult fast_ica(const MatrixXd& X, int d, const IcaOptions& opts = {}) {
    const Index N = X.rows(), n = X.cols();
    if (d < 1 || d > n) throw InvalidArgument("fast_ica: component count must lie in [1, n]");
    if (N <= d) throw InvalidArgument("fast_ica: need more samples than components");

    const RowVectorXd mean = X.colwise().mean();
    const MatrixXd xc = X.rowwise() - mean;
    const MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(N);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    const VectorXd lambda = es.eigenvalues().tail(d);
    if (!(lambda(0) > 1e-12 * std::max(1.0, lambda(d - 1))))
        throw NumericalError("fast_ica: data have rank below the requested component count");
    const MatrixXd whitening = lambda.array().rsqrt().matrix().asDiagonal() * es.eigenvectors().rightCols(d).transpose();
    const MatrixXd z = whitening * xc.transpose();  // d x N
    const double inv_n = 1.0 / static_cast<double>(N);

    IcaResult best;
    bool have_best = false;
    std::vector<double> residuals;
    MatrixXd y(d, N), t(d, N);
    for (int r = 0; r < std::max(1, opts.restarts); ++r) {
        Rng rng = make_stream(opts.seed, {static_cast<std::uint64_t>(r)});
        std::normal_distribution<double> normal;
        MatrixXd w(d, d);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
        w = detail::symmetric_decorrelation(w);

        bool converged = false;
        int it = 0;
        VectorXd lim;
        for (it = 1; it <= opts.max_iter; ++it) {
            if (opts.deadline && Clock::now() > *opts.deadline) throw TimeoutError("fast_ica: trial budget exhausted");
            y.noalias() = w * z;
            t = y.array().tanh();
            const VectorXd gp = (1.0 - t.array().square()).rowwise().mean();
            MatrixXd w1 = (t * z.transpose()) * inv_n;
            w1 -= gp.asDiagonal() * w;
            w1 = detail::symmetric_decorrelation(w1);
            lim = (1.0 - (w1 * w.transpose()).diagonal().array().abs()).abs();
            w = w1;
            if (lim.maxCoeff() < opts.tol) {
                converged = true;
                break;
            }
        }
        y.noalias() = w * z;
        const double contrast = detail::logcosh_contrast(y);
        if (!converged) {
            residuals.assign(lim.data(), lim.data() + lim.size());
            continue;
        }
        if (!have_best || contrast > best.contrast) {
            best.unmixing = w * whitening;
            best.iterations = it;
            best.converged = true;
            best.contrast = contrast;
            best.restart = r;
            have_best = true;
        }
    }
    if (!have_best) {
        std::string msg = "fast_ica: no restart converged within " + std::to_string(opts.max_iter) + " iterations; residuals";
        for (double v : residuals) msg += " " + io::format_double(v);
        throw NumericalError(msg);
    }
    if (opts.adaptive) {
        // The whitening map has full row rank, so w = unmixing * pinv(whitening).
        MatrixXd w = best.unmixing * detail::pseudo_inverse(whitening);
        best.nonlinearity = detail::efficient_refine(w, z, opts);
        if (!best.nonlinearity.empty()) best.unmixing = w * whitening;
    }
    // Rescale rows to unit sample variance.
    const VectorXd var = (best.unmixing * cov * best.unmixing.transpose()).diagonal();
    best.unmixing = var.array().rsqrt().matrix().asDiagonal() * best.unmixing;
    return best;
}

/// Amari index of a square matrix P (0 iff P is a scaled permutation).
inline double amari_index(const MatrixXd& p) {
    const Index d = p.rows();
    if (d < 2) return 0.0;
    const MatrixXd a = p.cwiseAbs();
    double s = 0.0;
    for (Index i = 0; i < d; ++i) s += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
    for (Index j = 0; j < d; ++j) s += a.col(j).sum() / a.col(j).maxCoeff() - 1.0;
    return s / (2.0 * static_cast<double>(d * (d - 1)));
}

// ---------------------------------------------------------------------------
// Alignment across environments

/// Fraction of entries with |x| <= 1.
inline double psi_statistic(std::span<const double> samples) {
    if (samples.empty()) throw InvalidArgument("psi_statistic: empty input");
    const auto hits = std::count_if(samples.begin(), samples.end(), [](double v) { return std::abs(v) <= 1.0; });
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

enum class AlignStrategy {
    psi_sort,       ///< sort rows by ascending psi in every environment
    ks_matching,    ///< min-cost matching to the first environment, KS distance
    pooled_matching ///< iterative min-cost matching to pooled per-row histograms
};

struct AlignOptions {
    AlignStrategy strategy = AlignStrategy::psi_sort;
    /// psi_sort: adjacent sorted psi values closer than this in one
    /// environment are a collision.
    double split_threshold = 0.005;
    /// psi_sort: per-position psi spread across environments must stay below.
    double consistency_threshold = 0.05;
    int histogram_bins = 400;
    int max_rounds = 20;
};

struct MixingEstimate {
    std::vector<MatrixXd> M;               ///< K aligned d x n matrices
    std::vector<VectorXd> psi;             ///< per-row psi after alignment
    std::vector<std::vector<int>> perms;   ///< perms[k][r] = raw row placed at r

    int K() const noexcept { return static_cast<int>(M.size()); }
    int d() const noexcept { return M.empty() ? 0 : static_cast<int>(M.front().rows()); }
};

namespace detail {

/// Components of centered data under unmixing W, one column per component.
inline MatrixXd components(const MatrixXd& W, const MatrixXd& X) {
    const RowVectorXd mean = X.colwise().mean();
    return (X.rowwise() - mean) * W.transpose();
}

inline VectorXd column_psi(const MatrixXd& y) {
    VectorXd psi(y.cols());
    for (Index j = 0; j < y.cols(); ++j) psi(j) = psi_statistic(std::span<const double>(y.col(j).data(), static_cast<std::size_t>(y.rows())));
    return psi;
}

inline std::vector<int> argsort(const VectorXd& v) {
    std::vector<int> idx(static_cast<std::size_t>(v.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v(a) < v(b); });
    return idx;
}

inline std::vector<double> sorted_abs(const MatrixXd& y, Index col) {
    std::vector<double> out(static_cast<std::size_t>(y.rows()));
    for (Index i = 0; i < y.rows(); ++i) out[static_cast<std::size_t>(i)] = std::abs(y(i, col));
    std::sort(out.begin(), out.end());
    return out;
}

/// Two-sample Kolmogorov-Smirnov statistic on sorted inputs.
inline double ks_distance(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double best = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return best;
}

}  // namespace detail

/// Applies per-environment row orders (computed on raw unmixing matrices)
/// and records psi of every aligned row.
inline MixingEstimate assemble_estimate(std::span<const MatrixXd> raw, std::span<const MatrixXd> datasets,
                                        std::vector<std::vector<int>> perms) {
    MixingEstimate est;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        const Index d = raw[k].rows();
        MatrixXd m(d, raw[k].cols());
        for (Index r = 0; r < d; ++r) m.row(r) = raw[k].row(perms[k][static_cast<std::size_t>(r)]);
        est.psi.push_back(detail::column_psi(detail::components(m, datasets[k])));
        est.M.push_back(std::move(m));
    }
    est.perms = std::move(perms);
    return est;
}

/// Orders the rows of each environment's unmixing matrix so that row r
/// corresponds to the same noise component in every environment.
inline MixingEstimate align_environments(std::span<const MatrixXd> raw, std::span<const MatrixXd> datasets,
                                         const AlignOptions& opts = {}) {
    if (raw.empty() || raw.size() != datasets.size()) throw InvalidArgument("align_environments: need one dataset per unmixing matrix");
    const Index d = raw.front().rows();
    for (const auto& w : raw)
        if (w.rows() != d || w.cols() != raw.front().cols()) throw InvalidArgument("align_environments: unmixing matrices differ in shape");
    const std::size_t K = raw.size();

    std::vector<MatrixXd> comps;
    std::vector<VectorXd> psi;
    for (std::size_t k = 0; k < K; ++k) {
        comps.push_back(detail::components(raw[k], datasets[k]));
        psi.push_back(detail::column_psi(comps.back()));
    }

    std::vector<std::vector<int>> perms(K);
    for (std::size_t k = 0; k < K; ++k) perms[k] = detail::argsort(psi[k]);

    if (opts.strategy == AlignStrategy::psi_sort) {
        for (std::size_t k = 0; k < K; ++k)
            for (Index r = 1; r < d; ++r) {
                const double gap = psi[k](perms[k][r]) - psi[k](perms[k][r - 1]);
                if (gap < opts.split_threshold)
                    throw AlignmentError("psi collision in environment " + std::to_string(k + 1) + ": components " +
                                         std::to_string(perms[k][r - 1] + 1) + " and " + std::to_string(perms[k][r] + 1) +
                                         " differ by " + io::format_double(gap));
            }
        for (Index r = 0; r < d; ++r) {
            double lo = 1.0, hi = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                lo = std::min(lo, psi[k](perms[k][r]));
                hi = std::max(hi, psi[k](perms[k][r]));
            }
            if (hi - lo >= opts.consistency_threshold)
                throw AlignmentError("psi values at aligned position " + std::to_string(r + 1) + " disagree across environments by " +
                                     io::format_double(hi - lo));
        }
    } else if (opts.strategy == AlignStrategy::ks_matching) {
        std::vector<std::vector<double>> ref;
        for (Index r = 0; r < d; ++r) ref.push_back(detail::sorted_abs(comps[0], perms[0][r]));
        for (std::size_t k = 1; k < K; ++k) {
            MatrixXd cost(d, d);
            for (Index j = 0; j < d; ++j) {
                const auto s = detail::sorted_abs(comps[k], j);
                for (Index r = 0; r < d; ++r) cost(r, j) = detail::ks_distance(ref[r], s);
            }
            perms[k] = detail::min_cost_assignment(cost);
        }
    } else {
        // Common bin edges: quantiles of |y| pooled over every component.
        std::vector<double> pool;
        for (const auto& c : comps)
            for (Index i = 0; i < c.size(); ++i) pool.push_back(std::abs(c.data()[i]));
        std::sort(pool.begin(), pool.end());
        const int bins = std::max(2, opts.histogram_bins);
        std::vector<double> edges;
        for (int b = 1; b < bins; ++b) edges.push_back(pool[pool.size() * static_cast<std::size_t>(b) / static_cast<std::size_t>(bins)]);
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        const Index nb = static_cast<Index>(edges.size()) + 1;
        // hist[k] is nb x d: normalized histogram of each raw component.
        std::vector<MatrixXd> hist(K, MatrixXd::Zero(nb, d));
        std::vector<MatrixXd> counts(K, MatrixXd::Zero(nb, d));
        for (std::size_t k = 0; k < K; ++k) {
            for (Index j = 0; j < d; ++j)
                for (Index i = 0; i < comps[k].rows(); ++i) {
                    const double v = std::abs(comps[k](i, j));
                    const auto b = std::upper_bound(edges.begin(), edges.end(), v) - edges.begin();
                    counts[k](b, j) += 1.0;
                }
            hist[k] = counts[k] / static_cast<double>(comps[k].rows());
        }
        for (int round = 0; round < opts.max_rounds; ++round) {
            bool changed = false;
            for (std::size_t k = 0; k < K; ++k) {
                // Leave-one-out pooled reference per aligned position.
                MatrixXd ref = MatrixXd::Constant(nb, d, 0.5);
                for (std::size_t o = 0; o < K; ++o) {
                    if (o == k && K > 1) continue;
                    for (Index r = 0; r < d; ++r) ref.col(r) += counts[o].col(perms[o][r]);
                }
                for (Index r = 0; r < d; ++r) ref.col(r) /= ref.col(r).sum();
                const MatrixXd logref = ref.array().log();
                const MatrixXd cost = -(logref.transpose() * hist[k]);  // cost(r, j)
                std::vector<int> next = detail::min_cost_assignment(cost);
                if (next != perms[k]) {
                    perms[k] = std::move(next);
                    changed = true;
                }
            }
            if (!changed) break;
        }
        // Keep the canonical psi ordering of positions.
        VectorXd mean_psi = VectorXd::Zero(d);
        for (std::size_t k = 0; k < K; ++k)
            for (Index r = 0; r < d; ++r) mean_psi(r) += psi[k](perms[k][r]) / static_cast<double>(K);
        const std::vector<int> order = detail::argsort(mean_psi);
        for (auto& p : perms) {
            std::vector<int> q(p.size());
            for (std::size_t r = 0; r < p.size(); ++r) q[r] = p[static_cast<std::size_t>(order[r])];
            p = std::move(q);
        }
    }
    return assemble_estimate(raw, datasets, std::move(perms));
}

inline nlohmann::json to_json(const MixingEstimate& est) {
    nlohmann::json m = nlohmann::json::array(), psi = nlohmann::json::array(), perms = nlohmann::json::array();
    for (int k = 0; k < est.K(); ++k) {
        m.push_back(io::matrix_to_json(est.M[k]));
        psi.push_back(io::vector_to_json(est.psi[k]));
        nlohmann::json p = nlohmann::json::array();
        for (int v : est.perms[k]) p.push_back(v + 1);
        perms.push_back(std::move(p));
    }
    return {{"M", std::move(m)}, {"psi", std::move(psi)}, {"perms", std::move(perms)}};
}

inline MixingEstimate mixing_from_json(const nlohmann::json& j) {
    MixingEstimate est;
    for (const auto& m : j.at("M")) est.M.push_back(io::matrix_from_json(m));
    for (const auto& p : j.at("psi")) est.psi.push_back(io::vector_from_json(p));
    for (const auto& p : j.at("perms")) {
        std::vector<int> v;
        for (const auto& e : p) v.push_back(e.get<int>() - 1);
        est.perms.push_back(std::move(v));
    }
    if (est.psi.size() != est.M.size() || est.perms.size() != est.M.size()) throw InvalidArgument("mixing JSON: inconsistent K");
    return est;
}

/// Wraps exact matrices as an estimate (identity alignment, psi unknown).
inline MixingEstimate exact_estimate(std::vector<MatrixXd> M) {
    MixingEstimate est;
    for (const auto& m : M) {
        std::vector<int> id(static_cast<std::size_t>(m.rows()));
        std::iota(id.begin(), id.end(), 0);
        est.perms.push_back(std::move(id));
        est.psi.push_back(VectorXd::Constant(m.rows(), std::nan("")));
    }
    est.M = std::move(M);
    return est;
}

}  // namespace lingcrel
