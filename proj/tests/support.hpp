#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.
// Everything here is computed from first principles (bitmasks, brute-force
// enumeration, series expansions) rather than through the library helpers
// it is used to check.

#include "lingcrel/lingcrel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace lingcrel::testing {

using Mask = std::uint32_t;

inline Mask bit(Node v) { return Mask{1} << v; }

inline NodeSet to_set(Mask m, int d) {
    NodeSet out;
    for (Node v = 0; v < d; ++v)
        if (m & bit(v)) out.push_back(v);
    return out;
}

inline Mask to_mask(const NodeSet& s) {
    Mask m = 0;
    for (Node v : s) m |= bit(v);
    return m;
}

/// Adjacency as parent/child bitmasks, read straight off the edge list.
struct Adjacency {
    int d = 0;
    std::vector<Mask> pa, ch;

    explicit Adjacency(const Dag& g) : d(g.d()), pa(static_cast<std::size_t>(g.d()), 0), ch(static_cast<std::size_t>(g.d()), 0) {
        for (const auto& [from, to] : g.edges()) {
            pa[to] |= bit(from);
            ch[from] |= bit(to);
        }
    }

    /// Ancestors by fixed-point iteration of the parent relation.
    Mask ancestors(Node i) const {
        Mask an = pa[i];
        for (;;) {
            Mask next = an;
            for (Node v = 0; v < d; ++v)
                if (an & bit(v)) next |= pa[v];
            if (next == an) return an;
            an = next;
        }
    }

    /// Parents i of j with ch(j) a subset of ch(i), straight from the definition.
    Mask dom(Node j) const {
        Mask out = 0;
        for (Node i = 0; i < d; ++i)
            if ((pa[j] & bit(i)) && (ch[j] & ~ch[i]) == 0) out |= bit(i);
        return out;
    }
};

/// Every labeled DAG on d nodes: each unordered pair is absent, forward or
/// backward (3^(d(d-1)/2) candidates), keeping the acyclic ones.
inline std::vector<Dag> all_dags(int d) {
    std::vector<std::pair<Node, Node>> pairs;
    for (Node i = 0; i < d; ++i)
        for (Node j = i + 1; j < d; ++j) pairs.emplace_back(i, j);
    std::size_t total = 1;
    for (std::size_t p = 0; p < pairs.size(); ++p) total *= 3;
    std::vector<Dag> out;
    for (std::size_t code = 0; code < total; ++code) {
        std::vector<Mask> pa(static_cast<std::size_t>(d), 0);
        std::vector<Edge> edges;
        std::size_t c = code;
        for (const auto& [i, j] : pairs) {
            const std::size_t t = c % 3;
            c /= 3;
            if (t == 1) {
                edges.emplace_back(i, j);
                pa[j] |= bit(i);
            } else if (t == 2) {
                edges.emplace_back(j, i);
                pa[i] |= bit(j);
            }
        }
        // Acyclic iff repeatedly peeling parentless nodes empties the graph.
        Mask left = (Mask{1} << d) - 1;
        bool progress = true;
        while (left && progress) {
            progress = false;
            for (Node v = 0; v < d; ++v)
                if ((left & bit(v)) && (pa[v] & left) == 0) {
                    left &= ~bit(v);
                    progress = true;
                }
        }
        if (!left) out.emplace_back(d, std::move(edges));
    }
    return out;
}

/// Random weights on g that pass the non-degeneracy check.
inline LinearScm nondegenerate_model(const Dag& g, int K, Rng& rng, WeightScheme scheme = WeightScheme::unit_diagonal) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        LinearScm m = random_weights(g, g.d(), K, scheme, rng);
        if (detail::min_singular_value(m.H) > 1e-6 && all_nondegenerate(m)) return m;
    }
    throw NumericalError("nondegenerate_model: no valid draw");
}

/// Prefix-rank oracle on exact M_k: for node i and an ancestral order S
/// containing pa(i), identify_parents must report
/// r_m = |closed parents of i minus {s_1..s_m}| at every prefix m and return
/// exactly pa(i). Returns the number of violating (prefix, node) checks.
inline int prefix_rank_violations(const LinearScm& m, const std::vector<MatrixXd>& M, Node i, const std::vector<Node>& S) {
    const Adjacency adj(m.g);
    const ParentSearch ps = identify_parents(S, i, M, RecoveryOptions::population());
    int bad = 0;
    Mask remaining = adj.pa[i] | bit(i);
    for (std::size_t k = 0; k <= S.size(); ++k) {
        if (k > 0) remaining &= ~bit(S[k - 1]);
        if (ps.ranks[k] != std::popcount(remaining)) ++bad;
    }
    if (to_mask(ps.parents) != adj.pa[i]) ++bad;
    return bad;
}

/// Ancestral orders to feed the oracle: the non-descendants of i and the
/// ancestors of i, each listed in a topological order of g.
inline std::vector<std::vector<Node>> ancestral_orders(const Dag& g, Node i) {
    const Adjacency adj(g);
    Mask desc = 0;
    for (Node v = 0; v < g.d(); ++v)
        if (adj.ancestors(v) & bit(i)) desc |= bit(v);
    const Mask an = adj.ancestors(i);
    std::vector<Node> nd, a;
    for (Node v : g.topological_order()) {
        if (v == i) continue;
        if (!(desc & bit(v))) nd.push_back(v);
        if (an & bit(v)) a.push_back(v);
    }
    return {nd, a};
}

/// Residual of v outside the row span of `rows`, by a least-squares solve
/// (column-pivoting QR on the transposed system).
inline double residual_norm(const MatrixXd& rows, const VectorXd& v) {
    if (rows.rows() == 0) return v.norm();
    const VectorXd coef = rows.transpose().colPivHouseholderQr().solve(v);
    return (v - rows.transpose() * coef).norm();
}

/// Exhaustive min over all d! * 2^d signed row permutations of
/// max_i residual of (sign * H_hat row) outside span{h_j : j in closed dom(i)}.
inline double exhaustive_eda_inf(const Dag& g, const MatrixXd& H, const MatrixXd& H_hat) {
    const int d = g.d();
    const Adjacency adj(g);
    // res[i][r][s]: residual of sign s applied to unit row r against truth i.
    std::vector<std::vector<std::array<double, 2>>> res(static_cast<std::size_t>(d), std::vector<std::array<double, 2>>(static_cast<std::size_t>(d)));
    for (Node i = 0; i < d; ++i) {
        const NodeSet dom = to_set(adj.dom(i) | bit(i), d);
        MatrixXd rows(static_cast<Index>(dom.size()), H.cols());
        for (std::size_t c = 0; c < dom.size(); ++c) rows.row(static_cast<Index>(c)) = H.row(dom[c]);
        for (Index r = 0; r < d; ++r) {
            const VectorXd u = H_hat.row(r).transpose() / H_hat.row(r).norm();
            res[i][r][0] = residual_norm(rows, u);
            res[i][r][1] = residual_norm(rows, -u);
        }
    }
    std::vector<int> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        for (Mask signs = 0; signs < (Mask{1} << d); ++signs) {
            double worst = 0.0;
            for (Node i = 0; i < d; ++i) worst = std::max(worst, res[i][perm[i]][(signs >> i) & 1]);
            best = std::min(best, worst);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// Regularized lower incomplete gamma P(a, x) by its power series
/// x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n)), in long double.
inline double gamma_p_series(double a, double x) {
    if (x <= 0) return 0.0;
    // Far in the upper tail the complement is below 1e-30 for the shapes used here.
    if (x > 100.0 + 20.0 * a) return 1.0;
    const long double la = a, lx = x;
    long double term = 1.0L, sum = 1.0L;
    for (int n = 1; n < 5000; ++n) {
        term *= lx / (la + n);
        sum += term;
        if (term < sum * 1e-19L) break;
    }
    const long double logp = la * std::log(lx) - lx - std::lgamma(la + 1.0L) + std::log(sum);
    return static_cast<double>(std::min(1.0L, std::exp(logp)));
}

/// CDF of the unit-variance generalized Gaussian with shape beta.
inline double gg_cdf_oracle(double beta, double x) {
    const double alpha = std::sqrt(std::tgamma(1.0 / beta) / std::tgamma(3.0 / beta));
    const double t = std::pow(std::abs(x) / alpha, beta);
    const double half = 0.5 * gamma_p_series(1.0 / beta, t);
    return x >= 0 ? 0.5 + half : 0.5 - half;
}

/// One-sample Kolmogorov-Smirnov statistic of `v` against `cdf`.
template <class Cdf>
double ks_statistic(VectorXd v, Cdf cdf) {
    std::sort(v.data(), v.data() + v.size());
    const double n = static_cast<double>(v.size());
    double ks = 0.0;
    for (Index i = 0; i < v.size(); ++i) {
        const double f = cdf(v(i));
        ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
    }
    return ks;
}

/// Amari index straight from its definition.
inline double amari_oracle(const MatrixXd& p) {
    const Index d = p.rows();
    double rows = 0.0, cols = 0.0;
    for (Index i = 0; i < d; ++i) {
        double s = 0.0, mx = 0.0;
        for (Index j = 0; j < d; ++j) {
            s += std::abs(p(i, j));
            mx = std::max(mx, std::abs(p(i, j)));
        }
        rows += s / mx - 1.0;
    }
    for (Index j = 0; j < d; ++j) {
        double s = 0.0, mx = 0.0;
        for (Index i = 0; i < d; ++i) {
            s += std::abs(p(i, j));
            mx = std::max(mx, std::abs(p(i, j)));
        }
        cols += s / mx - 1.0;
    }
    return (rows + cols) / (2.0 * static_cast<double>(d) * static_cast<double>(d - 1));
}

/// True iff aligned row r of every estimate corresponds to truth row r:
/// in P_k = M_hat_k * M_k^+ the dominant entry of row r sits at column r.
inline bool alignment_matches(std::span<const MatrixXd> est, std::span<const MatrixXd> truth) {
    for (std::size_t k = 0; k < est.size(); ++k) {
        const MatrixXd p = est[k] * detail::pseudo_inverse(truth[k]);
        for (Index r = 0; r < p.rows(); ++r) {
            Index arg = 0;
            p.row(r).cwiseAbs().maxCoeff(&arg);
            if (arg != r) return false;
        }
    }
    return true;
}

/// Random matrix in the class M0_dom(g): identity plus Gaussian entries on
/// the off-diagonal closed dom positions (oracle dom sets).
inline MatrixXd random_dom0(const Dag& g, Rng& rng) {
    const Adjacency adj(g);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (;;) {
        MatrixXd m = MatrixXd::Identity(g.d(), g.d());
        for (Node i = 0; i < g.d(); ++i) {
            m(i, i) = 1.0 + 0.5 * std::abs(normal(rng));
            for (Node j = 0; j < g.d(); ++j)
                if (adj.dom(i) & bit(j)) m(i, j) = normal(rng);
        }
        if (detail::min_singular_value(m) > 1e-3) return m;
    }
}

/// Largest |entry| of m at positions outside the closed dom pattern.
inline double off_pattern_max(const MatrixXd& m, const Dag& g) {
    const Adjacency adj(g);
    double worst = 0.0;
    for (Node i = 0; i < g.d(); ++i)
        for (Node j = 0; j < g.d(); ++j)
            if (i != j && !(adj.dom(i) & bit(j))) worst = std::max(worst, std::abs(m(i, j)));
    return worst;
}

}  // namespace lingcrel::testing
