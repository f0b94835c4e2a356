#include "support.hpp"

#include <gtest/gtest.h>

using namespace lingcrel;
using namespace lingcrel::testing;

namespace {

Dag chain3() { return Dag(3, {{0, 1}, {1, 2}}); }
Dag triangle() { return Dag(3, {{0, 1}, {0, 2}, {1, 2}}); }

std::vector<MatrixXd> exact_mixing(const Dag& g, Rng& rng, int K = -1) {
    return population_mixing(nondegenerate_model(g, K < 0 ? g.d() : K, rng));
}

MatrixXd rows_of(const MatrixXd& m, const NodeSet& s) {
    MatrixXd out(static_cast<Index>(s.size()), m.cols());
    for (std::size_t r = 0; r < s.size(); ++r) out.row(static_cast<Index>(r)) = m.row(s[r]);
    return out;
}

}  // namespace

TEST(Projections, EmptyPrefixAndContainedRows) {
    Rng rng = make_stream(61);
    const auto M = exact_mixing(triangle(), rng);
    const auto p = orthogonal_projections({}, 2, M);
    for (std::size_t k = 0; k < M.size(); ++k) EXPECT_EQ(p[k], VectorXd(M[k].row(2).transpose()));

    std::vector<MatrixXd> dup = M;
    for (auto& m : dup) m.row(2) = 0.3 * m.row(0) - 2.0 * m.row(1);
    const std::vector<Node> S = {0, 1};
    for (const auto& v : orthogonal_projections(S, 2, dup)) EXPECT_LT(v.norm(), 1e-12);

    EXPECT_THROW(orthogonal_projections(S, 1, M), InvalidArgument);
    EXPECT_THROW(orthogonal_projections({}, 3, M), InvalidArgument);
}

TEST(Projections, TriangleFirstStepSpansOneDimension) {
    Rng rng = make_stream(62);
    const auto M = exact_mixing(triangle(), rng);
    const std::vector<Node> S = {0};
    EXPECT_EQ(rank_of_span(orthogonal_projections(S, 1, M), 1e-8).rank, 1);
}

TEST(RankOfSpan, Examples) {
    const VectorXd v = Eigen::Vector3d(1.0, -2.0, 0.5);
    const std::vector<VectorXd> copies(4, v);
    EXPECT_EQ(rank_of_span(copies, 0.9 * v.norm()).rank, 1);
    const std::vector<VectorXd> basis = {Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ()};
    EXPECT_EQ(rank_of_span(basis, 0.5).rank, 3);
    // Second singular value of [[1, 0], [1, 1e-6]] is about 1e-6 / sqrt(2).
    const std::vector<VectorXd> close = {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(1.0, 1e-6)};
    const SpanRank sr = rank_of_span(close, 1e-3);
    EXPECT_EQ(sr.rank, 1);
    EXPECT_NEAR(sr.singular_values(1), 1e-6 / std::sqrt(2.0), 1e-9);
    EXPECT_THROW(rank_of_span(std::vector<VectorXd>{}, 0.1), InvalidArgument);
}

TEST(IdentifyParents, TriangleRanksDropTwice) {
    Rng rng = make_stream(63);
    const auto M = exact_mixing(triangle(), rng);
    const std::vector<Node> S = {0, 1};
    const ParentSearch ps = identify_parents(S, 2, M, RecoveryOptions::population());
    EXPECT_EQ(ps.ranks, std::vector<int>({3, 2, 1}));
    EXPECT_EQ(ps.parents, NodeSet({0, 1}));
    EXPECT_TRUE(ps.diagnostics.empty());
}

TEST(IdentifyParents, EdgelessRanksStayAtOne) {
    Rng rng = make_stream(64);
    const auto M = exact_mixing(Dag(4), rng);
    for (Node i = 0; i < 4; ++i) {
        std::vector<Node> S;
        for (Node v = 0; v < 4; ++v)
            if (v != i) S.push_back(v);
        const ParentSearch ps = identify_parents(S, i, M, RecoveryOptions::population());
        EXPECT_EQ(ps.ranks, std::vector<int>(4, 1));
        EXPECT_TRUE(ps.parents.empty());
    }
}

TEST(IdentifyParents, PrefixRankFormulaOnAllSmallDags) {
    Rng rng = make_stream(65);
    for (int d = 1; d <= 4; ++d)
        for (const Dag& g : all_dags(d)) {
            const LinearScm m = nondegenerate_model(g, d, rng);
            const auto M = population_mixing(m);
            for (Node i = 0; i < d; ++i)
                for (const auto& S : ancestral_orders(g, i)) ASSERT_EQ(prefix_rank_violations(m, M, i, S), 0) << "d=" << d << " node " << i;
        }
}

TEST(IdentifyParents, PrefixRankFormulaOnRandomLargerDags) {
    Rng rng = make_stream(66);
    for (int t = 0; t < 100; ++t) {
        const int d = 5 + t % 2;
        const LinearScm m = nondegenerate_model(random_dag(d, 0.5, rng), d, rng, static_cast<WeightScheme>(t % 3));
        const auto M = population_mixing(m);
        for (Node i = 0; i < d; ++i)
            for (const auto& S : ancestral_orders(m.g, i)) ASSERT_EQ(prefix_rank_violations(m, M, i, S), 0) << "trial " << t;
    }
}

TEST(SelectNextNode, ChainSourceFirstAndSingleNode) {
    Rng rng = make_stream(67);
    const auto M = exact_mixing(chain3(), rng);
    const std::vector<Node> all = {0, 1, 2};
    EXPECT_EQ(select_next_node({}, all, M, RecoveryOptions::population()).node, 0);
    EXPECT_EQ(select_next_node({}, all, M, RecoveryOptions::finite_sample(0.15)).node, 0);
    const std::vector<Node> S = {0}, rest = {1, 2};
    EXPECT_EQ(select_next_node(S, rest, M, RecoveryOptions::population()).node, 1);

    const auto single = exact_mixing(Dag(1), rng);
    const std::vector<Node> one = {0};
    EXPECT_EQ(select_next_node({}, one, single, RecoveryOptions::population()).node, 0);
    EXPECT_THROW(select_next_node({}, {}, M, RecoveryOptions::population()), InvalidArgument);
}

TEST(SelectNextNode, SingleEnvironmentRatioIsInfinite) {
    Rng rng = make_stream(68);
    const auto M = exact_mixing(Dag(2), rng, 1);
    const std::vector<Node> all = {0, 1};
    const Selection s = select_next_node({}, all, M, RecoveryOptions::finite_sample(0.1));
    EXPECT_EQ(s.node, 0);
    EXPECT_TRUE(std::isinf(s.score));
}

TEST(SelectNextNode, PopulationModeWithoutRankOneCandidateFails) {
    Rng rng = make_stream(69);
    const auto M = exact_mixing(Dag(2, {{0, 1}}), rng);
    const std::vector<Node> child = {1};
    EXPECT_THROW(select_next_node({}, child, M, RecoveryOptions::population()), RecoveryError);
}

TEST(Intersect, ChildlessNodeStaysInItsSpan) {
    const MatrixXd u = Eigen::Vector3d(1.0, 2.0, 2.0).normalized();
    const std::vector<MatrixXd> bases = {u};
    const Intersection x = intersect_subspaces(0, bases, {}, RecoveryOptions::population());
    EXPECT_LT((x.h - u * (u.transpose() * x.h)).norm(), 1e-10);
    EXPECT_NEAR(x.h.norm(), 1.0, 1e-14);
    EXPECT_EQ(x.null_dim, 1);
}

TEST(Intersect, DisjointSpansFailInPopulationMode) {
    const std::vector<MatrixXd> bases = {MatrixXd(Eigen::Vector2d::UnitX()), MatrixXd(Eigen::Vector2d::UnitY())};
    const std::vector<Node> child = {1};
    EXPECT_THROW(intersect_subspaces(0, bases, child, RecoveryOptions::population()), RecoveryError);
    EXPECT_NO_THROW(intersect_subspaces(0, bases, child, RecoveryOptions::finite_sample(0.1)));
}

TEST(Learn, TriangleAndChainExtractDomSpans) {
    Rng rng = make_stream(70);
    {
        const LinearScm m = nondegenerate_model(triangle(), 3, rng);
        const RecoveredModel rm = learn_causal_model(population_mixing(m), RecoveryOptions::population());
        EXPECT_EQ(rm.g_hat, m.g);
        // dom(1) is empty, so h_hat_1 is parallel to h_1.
        EXPECT_LT(residual_norm(rows_of(m.H, {0}), rm.H_hat.row(0).transpose()), 1e-10);
    }
    {
        const LinearScm m = nondegenerate_model(chain3(), 3, rng);
        const RecoveredModel rm = learn_causal_model(population_mixing(m), RecoveryOptions::population());
        EXPECT_EQ(rm.g_hat, m.g);
        EXPECT_LT(residual_norm(rows_of(m.H, {1, 2}), rm.H_hat.row(2).transpose()), 1e-10);
        EXPECT_LT(residual_norm(rows_of(m.H, {1}), rm.H_hat.row(1).transpose()), 1e-10);
    }
}

TEST(Learn, SingleNode) {
    Rng rng = make_stream(71);
    const LinearScm m = nondegenerate_model(Dag(1, {}), 1, rng);
    const RecoveredModel rm = learn_causal_model(population_mixing(m), RecoveryOptions::population());
    EXPECT_EQ(rm.g_hat.edge_count(), 0u);
    EXPECT_NEAR(std::abs(rm.H_hat.row(0).dot(m.H.row(0).normalized())), 1.0, 1e-12);
}

TEST(Learn, PopulationRecoveryOnRandomModels) {
    for (int t = 0; t < 200; ++t) {
        Rng rng = make_stream(static_cast<std::uint64_t>(t), {72});
        const int d = 3 + t % 6;
        const LinearScm m = random_model({d, d + t % 3, d, 0.5, static_cast<WeightScheme>(t % 3)}, rng);
        const RecoveredModel rm = learn_causal_model(population_mixing(m), RecoveryOptions::population(), [&](std::span<const Node> S) {
            ASSERT_TRUE(m.g.is_ancestral(NodeSet(S.begin(), S.end())));
        });
        ASSERT_EQ(rm.g_hat, m.g) << "trial " << t;
        EXPECT_LT(eda_error(m, rm).errors.maxCoeff(), 1e-8) << "trial " << t;
        EXPECT_TRUE(rm.diagnostics.warnings.empty());
        EXPECT_EQ(rm.order.size(), static_cast<std::size_t>(d));
    }
}

TEST(Learn, EnvironmentRowSpanEqualsClosedParentSpan) {
    Rng rng = make_stream(73);
    for (int t = 0; t < 50; ++t) {
        const LinearScm m = random_model({6, 8, 6, 0.5}, rng);
        const auto M = population_mixing(m);
        for (Node i = 0; i < 6; ++i) {
            MatrixXd stacked(m.K(), m.n);
            for (int k = 0; k < m.K(); ++k) stacked.row(k) = M[static_cast<std::size_t>(k)].row(i);
            const NodeSet cp = m.g.closed_parents(i);
            const MatrixXd h = rows_of(m.H, cp);
            for (int k = 0; k < m.K(); ++k) EXPECT_LT(residual_norm(h, stacked.row(k).transpose()), 1e-10 * stacked.row(k).norm());
            for (Index r = 0; r < h.rows(); ++r) EXPECT_LT(residual_norm(stacked, h.row(r).transpose()), 1e-10 * h.row(r).norm());
        }
    }
}

TEST(Learn, DecisionsInvariantToRowSignsAndScales) {
    Rng rng = make_stream(74);
    std::uniform_real_distribution<double> mag(0.2, 5.0);
    std::bernoulli_distribution flip(0.5);
    for (int t = 0; t < 30; ++t) {
        const LinearScm m = random_model({5, 5, 5, 0.5}, rng);
        const auto M = population_mixing(m);
        std::vector<MatrixXd> scaled = M, signed_only = M;
        for (std::size_t k = 0; k < M.size(); ++k)
            for (Index r = 0; r < 5; ++r) {
                const double s = flip(rng) ? -1.0 : 1.0;
                scaled[k].row(r) *= s * mag(rng);
                signed_only[k].row(r) *= s;
            }
        const auto pop = RecoveryOptions::population();
        EXPECT_EQ(learn_causal_model(scaled, pop).g_hat, learn_causal_model(M, pop).g_hat);

        // Thresholded decisions see singular values, which sign flips keep.
        std::vector<MatrixXd> noisy = M;
        std::normal_distribution<double> normal(0.0, 0.05);
        for (auto& x : noisy)
            for (Index i = 0; i < x.size(); ++i) x.data()[i] += normal(rng);
        std::vector<MatrixXd> noisy_signed = noisy;
        for (std::size_t k = 0; k < M.size(); ++k)
            for (Index r = 0; r < 5; ++r)
                if ((signed_only[k].row(r).array() != M[k].row(r).array()).any()) noisy_signed[k].row(r) *= -1.0;
        const auto fin = RecoveryOptions::finite_sample(0.15);
        const RecoveredModel a = learn_causal_model(noisy, fin), b = learn_causal_model(noisy_signed, fin);
        EXPECT_EQ(a.g_hat, b.g_hat);
        EXPECT_EQ(a.order, b.order);
        ASSERT_EQ(a.diagnostics.decisions.size(), b.diagnostics.decisions.size());
        for (std::size_t r = 0; r < a.diagnostics.decisions.size(); ++r)
            EXPECT_LT((a.diagnostics.decisions[r].singular_values - b.diagnostics.decisions[r].singular_values).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Options, ThresholdGuidanceAndValidation) {
    EXPECT_NEAR(default_tl(5), 0.15, 1e-15);
    for (int d = 2; d <= 200; ++d) {
        const double gap = std::sqrt(static_cast<double>(d)) - std::sqrt(static_cast<double>(d - 1));
        EXPECT_GE(default_tl(d), 0.5 * gap) << "d=" << d;
        EXPECT_LE(default_tl(d), 2.0 * gap) << "d=" << d;
    }
    EXPECT_THROW(RecoveryOptions::finite_sample(0.0).validate(), InvalidArgument);
    EXPECT_THROW(RecoveryOptions::finite_sample(-0.1).validate(), InvalidArgument);
    EXPECT_NO_THROW((RecoveryOptions{0.0, Mode::population, 1e-8}.validate()));
}

TEST(Recovered, JsonRoundTripAndRelabel) {
    Rng rng = make_stream(75);
    const LinearScm m = random_model({4, 4, 4, 0.6}, rng);
    const RecoveredModel rm = learn_causal_model(population_mixing(m), RecoveryOptions::finite_sample(0.15));
    const RecoveredModel back = recovered_from_json(nlohmann::json::parse(to_json(rm).dump()));
    EXPECT_EQ(back.g_hat, rm.g_hat);
    EXPECT_EQ(back.H_hat, rm.H_hat);
    EXPECT_EQ(back.order, rm.order);
    EXPECT_EQ(back.diagnostics.decisions.size(), rm.diagnostics.decisions.size());

    const std::vector<Node> labels = {2, 0, 3, 1};
    const RecoveredModel r = relabel(rm, labels);
    for (const auto& [a, b] : rm.g_hat.edges()) EXPECT_TRUE(r.g_hat.has_edge(labels[a], labels[b]));
    for (Node v = 0; v < 4; ++v) EXPECT_EQ(r.H_hat.row(labels[v]), rm.H_hat.row(v));
}
