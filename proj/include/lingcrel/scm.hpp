#pragma once

// Ground-truth linear SCMs across K environments:
//
//   z = A_k z + Omega_k^{1/2} eps,   x = G z,   G = pinv(H),
//
// with eps_i generalized-Gaussian of shape beta_i and unit variance.

#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/graph.hpp"
#include "lingcrel/io.hpp"
#include "lingcrel/rng.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace lingcrel {

struct LinearScm {
    Dag g;
    int n = 0;
    MatrixXd H;                  ///< d x n unmixing matrix, z = H x
    std::vector<MatrixXd> A;     ///< K weight matrices, (A_k)_{ij} != 0 iff j in pa(i)
    std::vector<VectorXd> omega; ///< K noise-scale diagonals
    VectorXd betas;              ///< noise shape per node
    std::uint64_t seed = 0;
    /// Optional: intervened node per environment for grouped single-node
    /// interventions. Empty when the environments are general.
    std::vector<Node> targets;

    int d() const noexcept { return g.d(); }
    int K() const noexcept { return static_cast<int>(A.size()); }
};

inline constexpr double kRankTol = 1e-8;

/// Throws InvalidArgument on any broken model invariant.
inline void validate(const LinearScm& m, double tol = kRankTol) {
    const int d = m.d();
    if (m.n < d) throw InvalidArgument("model: n must be >= d");
    if (m.H.rows() != d || m.H.cols() != m.n) throw InvalidArgument("model: H must be d x n");
    if (detail::min_singular_value(m.H) <= tol) throw InvalidArgument("model: H is not of full row rank");
    if (m.K() < 1 || m.omega.size() != m.A.size()) throw InvalidArgument("model: need K >= 1 matching A and omega lists");
    if (m.betas.size() != d) throw InvalidArgument("model: betas must have length d");
    for (int i = 0; i < d; ++i) {
        if (!(m.betas(i) > 0)) throw InvalidArgument("model: betas must be positive");
        for (int j = 0; j < i; ++j)
            if (m.betas(i) == m.betas(j)) throw InvalidArgument("model: betas must be pairwise distinct");
    }
    for (int k = 0; k < m.K(); ++k) {
        if (m.A[k].rows() != d || m.A[k].cols() != d) throw InvalidArgument("model: A_k must be d x d");
        if (m.omega[k].size() != d || !(m.omega[k].array() > 0).all()) throw InvalidArgument("model: omega_k must be positive of length d");
        for (Node i = 0; i < d; ++i)
            for (Node j = 0; j < d; ++j)
                if ((m.A[k](i, j) != 0.0) != m.g.has_edge(j, i))
                    throw InvalidArgument("model: sparsity of A_" + std::to_string(k + 1) + " does not match the graph at (" +
                                          std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
    }
    if (!m.targets.empty()) {
        if (static_cast<int>(m.targets.size()) != m.K()) throw InvalidArgument("model: targets must list one node per environment");
        for (Node t : m.targets)
            if (t < 0 || t >= d) throw InvalidArgument("model: intervention target out of range");
    }
}

/// B_k = Omega_k^{-1/2} (I - A_k).
inline MatrixXd noise_mat_b(const LinearScm& m, int k) {
    if (k < 0 || k >= m.K()) throw InvalidArgument("noise_mat_b: environment index out of range");
    const int d = m.d();
    const VectorXd scale = m.omega[k].array().rsqrt();
    return scale.asDiagonal() * (MatrixXd::Identity(d, d) - m.A[k]);
}

/// Exact M_k = B_k H for every environment.
inline std::vector<MatrixXd> population_mixing(const LinearScm& m) {
    std::vector<MatrixXd> out;
    out.reserve(static_cast<std::size_t>(m.K()));
    for (int k = 0; k < m.K(); ++k) out.push_back(noise_mat_b(m, k) * m.H);
    return out;
}

// ---------------------------------------------------------------------------
// Generalized-Gaussian noise, density proportional to exp(-|x/alpha|^beta)

/// alpha such that the variance is one.
inline double generalized_gaussian_scale(double beta) {
    if (!(beta > 0)) throw InvalidArgument("generalized Gaussian: beta must be positive");
    return std::exp(0.5 * (std::lgamma(1.0 / beta) - std::lgamma(3.0 / beta)));
}

/// Draws |X| = alpha * G^{1/beta} with G ~ Gamma(1/beta, 1) and a fair sign.
inline VectorXd sample_generalized_gaussian(double beta, Index count, Rng& rng) {
    const double alpha = generalized_gaussian_scale(beta);
    if (count < 0) throw InvalidArgument("generalized Gaussian: negative count");
    std::gamma_distribution<double> gamma(1.0 / beta, 1.0);
    std::bernoulli_distribution sign(0.5);
    VectorXd out(count);
    for (Index i = 0; i < count; ++i) {
        const double mag = alpha * std::pow(gamma(rng), 1.0 / beta);
        out(i) = sign(rng) ? mag : -mag;
    }
    return out;
}

inline double generalized_gaussian_cdf(double beta, double x) {
    const double alpha = generalized_gaussian_scale(beta);
    const double t = std::pow(std::abs(x) / alpha, beta);
    const double half = 0.5 * boost::math::gamma_p(1.0 / beta, t);
    return x >= 0 ? 0.5 + half : 0.5 - half;
}

/// P[|X| <= 1] for the unit-variance generalized Gaussian of shape beta.
inline double generalized_gaussian_psi(double beta) {
    const double alpha = generalized_gaussian_scale(beta);
    return boost::math::gamma_p(1.0 / beta, std::pow(1.0 / alpha, beta));
}

/// Nodes ordered by ascending population psi of their noise; the labeling
/// the psi-sorting alignment stage converges to.
inline std::vector<Node> canonical_order(const LinearScm& m) {
    std::vector<Node> order(static_cast<std::size_t>(m.d()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> psi(order.size());
    for (Node i = 0; i < m.d(); ++i) psi[i] = generalized_gaussian_psi(m.betas(i));
    std::stable_sort(order.begin(), order.end(), [&](Node a, Node b) { return psi[a] < psi[b]; });
    return order;
}

// ---------------------------------------------------------------------------
// Random model generation

enum class WeightScheme {
    /// Off-diagonal entries of B_k on the parent pattern are i.i.d. N(0,1)
    /// and the diagonal is 1, i.e. Omega_k = I and A_k = I - B_k.
    unit_diagonal,
    /// Entries of B_k on the closed-parent pattern are i.i.d. N(0,1); (A_k,
    /// Omega_k) are derived from them.
    gaussian_b,
    /// Entries of A_k on the parent pattern are N(0,1); Omega_k entries are
    /// squared standard normals kept above 1e-3.
    gaussian_a_omega,
};

inline const char* scheme_name(WeightScheme s) {
    switch (s) {
        case WeightScheme::unit_diagonal: return "unit_diagonal";
        case WeightScheme::gaussian_b: return "gaussian_b";
        case WeightScheme::gaussian_a_omega: return "gaussian_a_omega";
    }
    return "?";
}

inline WeightScheme parse_scheme(const std::string& s) {
    for (auto w : {WeightScheme::unit_diagonal, WeightScheme::gaussian_b, WeightScheme::gaussian_a_omega})
        if (s == scheme_name(w)) return w;
    throw InvalidArgument("unknown weight scheme '" + s + "' (expected unit_diagonal, gaussian_b or gaussian_a_omega)");
}

struct ModelSpec {
    int d = 5;
    int n = 5;
    int K = 5;
    double p = 0.5;
    WeightScheme scheme = WeightScheme::unit_diagonal;
};

inline constexpr int kModelRetryCap = 50;
inline constexpr double kWeightFloor = 1e-3;

namespace detail {

inline double nonzero_normal(Rng& rng, std::normal_distribution<double>& normal) {
    double v;
    do v = normal(rng);
    while (std::abs(v) < kWeightFloor);
    return v;
}

/// Row i of (A_k, omega_k) for one environment.
inline void draw_row(const Dag& g, Node i, WeightScheme scheme, Rng& rng, MatrixXd& a, VectorXd& omega) {
    std::normal_distribution<double> normal(0.0, 1.0);
    if (scheme == WeightScheme::unit_diagonal) {
        omega(i) = 1.0;
        for (Node j : g.parents(i)) a(i, j) = nonzero_normal(rng, normal);
    } else if (scheme == WeightScheme::gaussian_b) {
        const double diag = nonzero_normal(rng, normal);
        omega(i) = 1.0 / (diag * diag);
        // B row = sign(diag) * b keeps Omega^{-1/2} positive; eps is symmetric.
        for (Node j : g.parents(i)) a(i, j) = -nonzero_normal(rng, normal) / diag;
    } else {
        for (Node j : g.parents(i)) a(i, j) = nonzero_normal(rng, normal);
        double w;
        do {
            const double v = normal(rng);
            w = v * v;
        } while (w < kWeightFloor);
        omega(i) = w;
    }
}

inline void draw_environment(const Dag& g, WeightScheme scheme, Rng& rng, MatrixXd& a, VectorXd& omega) {
    a = MatrixXd::Zero(g.d(), g.d());
    omega = VectorXd::Ones(g.d());
    for (Node i = 0; i < g.d(); ++i) draw_row(g, i, scheme, rng, a, omega);
}

inline MatrixXd gaussian_matrix(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

}  // namespace detail

/// betas_i = 0.2 * i^2 for 1-based i.
inline VectorXd default_betas(int d) {
    VectorXd b(d);
    for (int i = 0; i < d; ++i) b(i) = 0.2 * (i + 1) * (i + 1);
    return b;
}

/// Fresh H and K environments on a fixed graph, without any checks.
inline LinearScm random_weights(const Dag& g, int n, int K, WeightScheme scheme, Rng& rng) {
    LinearScm m;
    m.g = g;
    m.n = n;
    m.betas = default_betas(g.d());
    m.H = detail::gaussian_matrix(g.d(), n, rng);
    m.A.resize(static_cast<std::size_t>(K));
    m.omega.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) detail::draw_environment(g, scheme, rng, m.A[k], m.omega[k]);
    return m;
}

struct NodeCheck {
    bool ok = false;
    double margin = 0.0;
};

/// Per node: the (|pa(i)|+1)-th singular value of the rows (B_k)_i restricted
/// to the closed parent set, stacked over k, must exceed tol.
inline std::vector<NodeCheck> check_nondegeneracy(const LinearScm& m, double tol = kRankTol) {
    const int d = m.d();
    std::vector<MatrixXd> b;
    for (int k = 0; k < m.K(); ++k) b.push_back(noise_mat_b(m, k));
    std::vector<NodeCheck> out(static_cast<std::size_t>(d));
    for (Node i = 0; i < d; ++i) {
        const NodeSet cols = m.g.closed_parents(i);
        MatrixXd rows(m.K(), static_cast<Index>(cols.size()));
        for (int k = 0; k < m.K(); ++k)
            for (std::size_t c = 0; c < cols.size(); ++c) rows(k, static_cast<Index>(c)) = b[k](i, cols[c]);
        const VectorXd s = detail::singular_values(rows);
        const Index need = static_cast<Index>(cols.size());
        out[i].margin = s.size() >= need ? s(need - 1) : 0.0;
        out[i].ok = out[i].margin > tol;
    }
    return out;
}

/// Per node: the weight vectors w_k(i) affinely span R^{|pa(i)|}.
inline std::vector<bool> check_affine_nondegeneracy(const LinearScm& m, double tol = kRankTol) {
    std::vector<bool> out(static_cast<std::size_t>(m.d()), true);
    for (Node i = 0; i < m.d(); ++i) {
        const NodeSet& pa = m.g.parents(i);
        if (pa.empty()) continue;
        MatrixXd w(m.K(), static_cast<Index>(pa.size()));
        for (int k = 0; k < m.K(); ++k)
            for (std::size_t c = 0; c < pa.size(); ++c) w(k, static_cast<Index>(c)) = m.A[k](i, pa[c]);
        w.rowwise() -= w.colwise().mean();
        const VectorXd s = detail::singular_values(w);
        const Index need = static_cast<Index>(pa.size());
        out[i] = s.size() >= need && s(need - 1) > tol;
    }
    return out;
}

inline bool all_nondegenerate(const LinearScm& m, double tol = kRankTol) {
    for (const auto& c : check_nondegeneracy(m, tol))
        if (!c.ok) return false;
    return true;
}

/// Random DAG plus weights; weights are redrawn until H has full row rank
/// and every node is non-degenerate. `retries` receives the redraw count.
inline LinearScm random_model(const ModelSpec& spec, Rng& rng, std::uint64_t seed = 0, int* retries = nullptr) {
    if (spec.d < 1 || spec.n < spec.d) throw InvalidArgument("random_model: need 1 <= d <= n");
    if (spec.K < spec.d) throw InvalidArgument("random_model: need K >= d");
    const Dag g = random_dag(spec.d, spec.p, rng);
    for (int attempt = 0; attempt <= kModelRetryCap; ++attempt) {
        LinearScm m = random_weights(g, spec.n, spec.K, spec.scheme, rng);
        m.seed = seed;
        if (detail::min_singular_value(m.H) > kRankTol && all_nondegenerate(m)) {
            if (retries) *retries = attempt;
            return m;
        }
    }
    throw NumericalError("random_model: no non-degenerate draw after " + std::to_string(kModelRetryCap) + " retries");
}

/// Grouped single-node soft interventions: a base environment, then for each
/// node i a group of |pa(i)|+1 environments that redraw only row i.
inline LinearScm random_intervention_model(const ModelSpec& spec, Rng& rng, std::uint64_t seed = 0) {
    if (spec.d < 1 || spec.n < spec.d) throw InvalidArgument("random_intervention_model: need 1 <= d <= n");
    const Dag g = random_dag(spec.d, spec.p, rng);
    for (int attempt = 0; attempt <= kModelRetryCap; ++attempt) {
        LinearScm m;
        m.g = g;
        m.n = spec.n;
        m.seed = seed;
        m.betas = default_betas(g.d());
        m.H = detail::gaussian_matrix(g.d(), spec.n, rng);
        MatrixXd base_a;
        VectorXd base_omega;
        detail::draw_environment(g, spec.scheme, rng, base_a, base_omega);
        for (Node i = 0; i < g.d(); ++i)
            for (std::size_t r = 0; r <= g.parents(i).size(); ++r) {
                MatrixXd a = base_a;
                VectorXd om = base_omega;
                a.row(i).setZero();
                detail::draw_row(g, i, spec.scheme, rng, a, om);
                m.A.push_back(std::move(a));
                m.omega.push_back(std::move(om));
                m.targets.push_back(i);
            }
        if (detail::min_singular_value(m.H) > kRankTol && all_nondegenerate(m)) return m;
    }
    throw NumericalError("random_intervention_model: no non-degenerate draw");
}

// ---------------------------------------------------------------------------
// Sampling

struct EnvSample {
    MatrixXd eps;  ///< N x d
    MatrixXd z;    ///< N x d
    MatrixXd x;    ///< N x n
};

inline EnvSample sample_environment_full(const LinearScm& m, int k, Index N, Rng& rng) {
    if (k < 0 || k >= m.K()) throw InvalidArgument("sample_environment: environment index out of range");
    if (N < 1) throw InvalidArgument("sample_environment: N must be positive");
    const int d = m.d();
    EnvSample s;
    s.eps.resize(N, d);
    for (Node i = 0; i < d; ++i) s.eps.col(i) = sample_generalized_gaussian(m.betas(i), N, rng);
    s.z.resize(N, d);
    const MatrixXd& a = m.A[k];
    for (Node i : m.g.topological_order()) {
        s.z.col(i) = std::sqrt(m.omega[k](i)) * s.eps.col(i);
        for (Node j : m.g.parents(i)) s.z.col(i) += a(i, j) * s.z.col(j);
    }
    if (!s.z.allFinite()) throw NumericalError("sample_environment: non-finite latent values");
    const MatrixXd G = detail::pseudo_inverse(m.H);
    s.x = s.z * G.transpose();
    return s;
}

inline MatrixXd sample_environment(const LinearScm& m, int k, Index N, Rng& rng) {
    return sample_environment_full(m, k, N, rng).x;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const LinearScm& m) {
    nlohmann::json a = nlohmann::json::array(), om = nlohmann::json::array();
    for (int k = 0; k < m.K(); ++k) {
        a.push_back(io::matrix_to_json(m.A[k]));
        om.push_back(io::vector_to_json(m.omega[k]));
    }
    nlohmann::json j = {
        {"d", m.d()},           {"n", m.n},
        {"K", m.K()},           {"edges", to_json(m.g)["edges"]},
        {"H", io::matrix_to_json(m.H)}, {"A", std::move(a)},
        {"omega", std::move(om)}, {"betas", io::vector_to_json(m.betas)},
        {"seed", m.seed},
    };
    if (!m.targets.empty()) {
        nlohmann::json t = nlohmann::json::array();
        for (Node v : m.targets) t.push_back(v + 1);
        j["targets"] = std::move(t);
    }
    return j;
}

inline LinearScm model_from_json(const nlohmann::json& j) {
    LinearScm m;
    m.g = Dag(j.at("d").get<int>(), edges_from_json(j.at("edges")));
    m.n = j.at("n").get<int>();
    m.H = io::matrix_from_json(j.at("H"));
    for (const auto& a : j.at("A")) m.A.push_back(io::matrix_from_json(a));
    for (const auto& o : j.at("omega")) m.omega.push_back(io::vector_from_json(o));
    m.betas = io::vector_from_json(j.at("betas"));
    m.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("targets"))
        for (const auto& t : j.at("targets")) m.targets.push_back(t.get<int>() - 1);
    if (j.at("K").get<int>() != m.K()) throw InvalidArgument("model JSON: K does not match the number of environments");
    validate(m);
    return m;
}

/// SHA-256 of the canonical (compact, key-sorted) model JSON.
inline std::string model_hash(const LinearScm& m) { return io::sha256_hex(to_json(m).dump()); }

// ---------------------------------------------------------------------------
// Datasets

struct DatasetManifest {
    std::uint64_t seed = 0;
    Index N = 0;
    std::string model_hash;
    std::string timestamp;
};

struct EnvDataset {
    std::vector<MatrixXd> blocks;  ///< one N x n sample matrix per environment
    DatasetManifest manifest;
};

/// Environment k draws from the sub-stream (seed, samples, k), so blocks can
/// be produced in any order or concurrently with identical results.
inline EnvDataset generate_dataset(const LinearScm& m, Index N, std::uint64_t seed) {
    EnvDataset ds;
    for (int k = 0; k < m.K(); ++k) {
        Rng rng = make_stream(seed, {stream_tag::kSamples, static_cast<std::uint64_t>(k)});
        ds.blocks.push_back(sample_environment(m, k, N, rng));
    }
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    ds.manifest = {seed, N, model_hash(m), stamp};
    return ds;
}

inline void write_dataset(const EnvDataset& ds, const std::filesystem::path& dir) {
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t k = 0; k < ds.blocks.size(); ++k) {
        const std::string name = "env_" + std::to_string(k + 1) + ".csv";
        io::write_text(dir / name, io::matrix_to_csv(ds.blocks[k]));
        files.push_back(name);
    }
    io::write_json(dir / "manifest.json", {{"seed", ds.manifest.seed},
                                           {"N", ds.manifest.N},
                                           {"model_hash", ds.manifest.model_hash},
                                           {"timestamp", ds.manifest.timestamp},
                                           {"files", files}});
}

inline EnvDataset read_dataset(const std::filesystem::path& dir) {
    const nlohmann::json man = io::read_json(dir / "manifest.json");
    EnvDataset ds;
    ds.manifest = {man.at("seed").get<std::uint64_t>(), man.at("N").get<Index>(), man.at("model_hash").get<std::string>(),
                   man.value("timestamp", std::string())};
    for (const auto& f : man.at("files")) ds.blocks.push_back(io::matrix_from_csv(io::read_text(dir / f.get<std::string>())));
    for (const auto& b : ds.blocks)
        if (b.cols() != ds.blocks.front().cols()) throw InvalidArgument("dataset: environments disagree on n");
    return ds;
}

}  // namespace lingcrel
