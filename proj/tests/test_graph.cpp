#include "support.hpp"

#include <gtest/gtest.h>

using namespace lingcrel;
using namespace lingcrel::testing;

namespace {

Dag chain3() { return Dag(3, {{0, 1}, {1, 2}}); }
Dag triangle() { return Dag(3, {{0, 1}, {0, 2}, {1, 2}}); }

}  // namespace

TEST(Dag, RejectsCyclesSelfLoopsAndDuplicates) {
    EXPECT_THROW(Dag(3, {{0, 1}, {1, 2}, {2, 0}}), InvalidArgument);
    EXPECT_THROW(Dag(2, {{1, 1}}), InvalidArgument);
    EXPECT_THROW(Dag(2, {{0, 1}, {0, 1}}), InvalidArgument);
    EXPECT_THROW(Dag(2, {{0, 2}}), InvalidArgument);
    EXPECT_THROW(Dag(0), InvalidArgument);
}

TEST(Dag, StructuralSetsOnSmallGraphs) {
    const Dag c = chain3();
    EXPECT_EQ(c.parents(2), NodeSet({1}));
    EXPECT_EQ(c.ancestors(2), NodeSet({0, 1}));
    EXPECT_EQ(c.children(0), NodeSet({1}));
    EXPECT_EQ(c.descendants(0), NodeSet({1, 2}));
    EXPECT_EQ(triangle().non_descendants(1), NodeSet({0}));
    EXPECT_THROW(c.parents(3), InvalidArgument);
    EXPECT_THROW(c.parents(-1), InvalidArgument);
}

TEST(Dag, DomSetsOfChainEdgelessAndTriangle) {
    const Dag c = chain3();
    EXPECT_TRUE(c.dom_set(0).empty());
    EXPECT_TRUE(c.dom_set(1).empty());
    EXPECT_EQ(c.dom_set(2), NodeSet({1}));
    const Dag e(4);
    for (Node j = 0; j < 4; ++j) EXPECT_TRUE(e.dom_set(j).empty());
    const Dag t = triangle();
    EXPECT_EQ(t.dom_set(1), NodeSet({0}));
    EXPECT_EQ(t.dom_set(2), NodeSet({0, 1}));
    EXPECT_EQ(t.dom_closure(2), NodeSet({0, 1, 2}));
    EXPECT_THROW(t.dom_set(5), InvalidArgument);
}

TEST(Dag, IsAncestralExamples) {
    const Dag c = chain3();
    EXPECT_TRUE(c.is_ancestral({}));
    EXPECT_TRUE(c.is_ancestral({0, 1}));
    EXPECT_FALSE(c.is_ancestral({1}));
}

TEST(Dag, EnumerationCountsMatchKnownSequence) {
    // Labeled DAG counts 1, 3, 25, 543, 29281.
    const std::size_t expected[] = {1, 3, 25, 543, 29281};
    for (int d = 1; d <= 5; ++d) EXPECT_EQ(all_dags(d).size(), expected[d - 1]) << "d=" << d;
}

TEST(Dag, StructureAgreesWithBitmaskOracleOnAllSmallDags) {
    for (int d = 1; d <= 5; ++d)
        for (const Dag& g : all_dags(d)) {
            const Adjacency adj(g);
            for (Node v = 0; v < d; ++v) {
                ASSERT_EQ(to_mask(g.ancestors(v)), adj.ancestors(v));
                ASSERT_EQ(to_mask(g.dom_set(v)), adj.dom(v));
                // dom(v) is a subset of pa(v).
                ASSERT_EQ(adj.dom(v) & ~adj.pa[v], 0u);
            }
            // The topological order places every parent first.
            std::vector<int> pos(static_cast<std::size_t>(d));
            for (std::size_t r = 0; r < g.topological_order().size(); ++r) pos[g.topological_order()[r]] = static_cast<int>(r);
            for (const auto& [a, b] : g.edges()) ASSERT_LT(pos[a], pos[b]);
        }
}

TEST(Dag, ChainAndNestingLemmasOnAllSmallDags) {
    for (int d = 1; d <= 5; ++d)
        for (const Dag& g : all_dags(d)) {
            const Adjacency adj(g);
            for (Node i = 0; i < d; ++i)
                for (Node j = 0; j < d; ++j) {
                    if (adj.pa[i] & bit(j)) { ASSERT_EQ(adj.dom(j) & ~adj.pa[i], 0u) << "chain lemma"; }
                    if (adj.dom(i) & bit(j)) { ASSERT_EQ(adj.dom(j) & ~adj.dom(i), 0u) << "nesting lemma"; }
                }
        }
}

TEST(Dag, AncestralExtensionOnAllSmallDags) {
    // If S and S + {i} are both ancestral, every ancestor of i lies in S.
    for (int d = 1; d <= 4; ++d)
        for (const Dag& g : all_dags(d)) {
            const Adjacency adj(g);
            for (Mask s = 0; s < (Mask{1} << d); ++s) {
                const bool anc = g.is_ancestral(to_set(s, d));
                bool oracle = true;
                for (Node v = 0; v < d; ++v)
                    if ((s & bit(v)) && (adj.ancestors(v) & ~s)) oracle = false;
                ASSERT_EQ(anc, oracle);
                for (Node i = 0; i < d; ++i)
                    if (anc && !(s & bit(i)) && g.is_ancestral(to_set(s | bit(i), d))) { ASSERT_EQ(adj.ancestors(i) & ~s, 0u); }
            }
        }
}

TEST(RandomDag, BoundaryCasesAndEdgeCountMean) {
    Rng rng = make_stream(11);
    EXPECT_EQ(random_dag(1, 0.5, rng).edge_count(), 0u);
    const Dag full = random_dag(6, 1.0, rng);
    EXPECT_EQ(full.edge_count(), 15u);
    for (Node i = 0; i < 6; ++i)
        for (Node j = i + 1; j < 6; ++j) EXPECT_TRUE(full.has_edge(i, j));
    EXPECT_THROW(random_dag(3, 0.0, rng), InvalidArgument);
    EXPECT_THROW(random_dag(3, 1.5, rng), InvalidArgument);
    EXPECT_THROW(random_dag(0, 0.5, rng), InvalidArgument);

    // 10 Bernoulli(1/2) pairs: mean 5, standard error sqrt(2.5 / 1e4).
    double sum = 0;
    const int draws = 10000;
    for (int t = 0; t < draws; ++t) sum += static_cast<double>(random_dag(5, 0.5, rng).edge_count());
    EXPECT_NEAR(sum / draws, 5.0, 5 * std::sqrt(2.5 / draws));
}

TEST(Pattern, MembershipExamples) {
    const Dag c = chain3();
    EXPECT_TRUE(pattern_membership(MatrixXd::Identity(3, 3), c, PatternClass::dom0));
    MatrixXd m = MatrixXd::Identity(3, 3);
    m(2, 1) = 0.7;
    EXPECT_TRUE(pattern_membership(m, c, PatternClass::dom0));
    EXPECT_TRUE(pattern_membership(m, c, PatternClass::dom));
    // Identity misses the (3,2) position required by the exact class.
    EXPECT_FALSE(pattern_membership(MatrixXd::Identity(3, 3), c, PatternClass::dom));
    MatrixXd bad = MatrixXd::Identity(3, 3);
    bad(1, 0) = 0.3;
    EXPECT_FALSE(pattern_membership(bad, c, PatternClass::dom_bar));
    MatrixXd singular = MatrixXd::Zero(3, 3);
    singular(2, 1) = 1.0;
    EXPECT_TRUE(pattern_membership(singular, c, PatternClass::dom_bar));
    EXPECT_FALSE(pattern_membership(singular, c, PatternClass::dom0));
    EXPECT_THROW(pattern_membership(MatrixXd::Identity(2, 2), c, PatternClass::dom0), InvalidArgument);
}

TEST(Pattern, InverseAndProductClosure) {
    Rng rng = make_stream(12);
    for (int t = 0; t < 1000; ++t) {
        std::uniform_int_distribution<int> dd(2, 7);
        const Dag g = random_dag(dd(rng), 0.6, rng);
        const MatrixXd a = random_dom0(g, rng), b = random_dom0(g, rng);
        ASSERT_LT(off_pattern_max(a.inverse(), g), 1e-8);
        ASSERT_LT(off_pattern_max(a * b, g), 1e-8);
        ASSERT_TRUE(pattern_membership(a.inverse(), g, PatternClass::dom0, 1e-8));
    }
}

TEST(Dag, JsonRoundTripIsSortedAndOneBased) {
    const Dag g(4, {{2, 3}, {0, 3}, {0, 1}});
    const auto j = to_json(g);
    EXPECT_EQ(j.dump(), R"({"d":4,"edges":[[1,2],[1,4],[3,4]]})");
    EXPECT_EQ(dag_from_json(j), g);
}
