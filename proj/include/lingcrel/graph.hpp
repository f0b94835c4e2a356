#pragma once

// Directed acyclic graphs and the structural queries used by the recovery
// algorithms: parent/child/ancestor sets, effect-domination sets and the
// effect-respecting matrix classes built on them.
//
// Nodes are 0-based internally. JSON and every user-facing surface use
// 1-based labels.

#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <deque>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace lingcrel {

using Node = int;
/// Sorted, duplicate-free list of nodes.
using NodeSet = std::vector<Node>;
using Edge = std::pair<Node, Node>;  // (from, to)

class Dag {
public:
    Dag() = default;

    explicit Dag(int d, std::vector<Edge> edges = {}) : d_(d), parents_(d), children_(d) {
        if (d < 1) throw InvalidArgument("Dag: node count must be positive");
        std::sort(edges.begin(), edges.end());
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto [from, to] = edges[e];
            if (from < 0 || from >= d || to < 0 || to >= d)
                throw InvalidArgument("Dag: edge endpoint out of range");
            if (from == to) throw InvalidArgument("Dag: self-loop on node " + std::to_string(from + 1));
            if (e > 0 && edges[e - 1] == edges[e])
                throw InvalidArgument("Dag: duplicate edge " + std::to_string(from + 1) + "->" + std::to_string(to + 1));
            parents_[to].push_back(from);
            children_[from].push_back(to);
        }
        for (auto& p : parents_) std::sort(p.begin(), p.end());
        for (auto& c : children_) std::sort(c.begin(), c.end());
        edges_ = std::move(edges);
        topo_ = kahn_order();
        if (static_cast<int>(topo_.size()) != d) throw InvalidArgument("Dag: graph contains a directed cycle");
    }

    int d() const noexcept { return d_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    std::size_t edge_count() const noexcept { return edges_.size(); }

    bool has_edge(Node from, Node to) const {
        check(from);
        check(to);
        const auto& c = children_[from];
        return std::binary_search(c.begin(), c.end(), to);
    }

    const NodeSet& parents(Node i) const { check(i); return parents_[i]; }
    const NodeSet& children(Node i) const { check(i); return children_[i]; }

    /// Parents plus the node itself.
    NodeSet closed_parents(Node i) const { return with(parents(i), i); }

    NodeSet ancestors(Node i) const { return reach(i, parents_); }
    NodeSet descendants(Node i) const { return reach(i, children_); }

    NodeSet non_descendants(Node i) const {
        const NodeSet desc = descendants(i);
        NodeSet out;
        for (Node v = 0; v < d_; ++v)
            if (v != i && !std::binary_search(desc.begin(), desc.end(), v)) out.push_back(v);
        return out;
    }

    /// Topological order; among ready nodes the smallest index goes first.
    const std::vector<Node>& topological_order() const noexcept { return topo_; }

    /// Parents i of j with ch(j) a subset of ch(i).
    NodeSet dom_set(Node j) const {
        check(j);
        NodeSet out;
        const auto& cj = children_[j];
        for (Node i : parents_[j]) {
            const auto& ci = children_[i];
            if (std::includes(ci.begin(), ci.end(), cj.begin(), cj.end())) out.push_back(i);
        }
        return out;
    }

    /// dom_set(j) together with j.
    NodeSet dom_closure(Node j) const { return with(dom_set(j), j); }

    /// True iff every member's ancestors are members too.
    bool is_ancestral(const NodeSet& s) const {
        std::vector<char> in(d_, 0);
        for (Node v : s) {
            check(v);
            in[v] = 1;
        }
        for (Node v : s)
            for (Node a : ancestors(v))
                if (!in[a]) return false;
        return true;
    }

    friend bool operator==(const Dag& a, const Dag& b) { return a.d_ == b.d_ && a.edges_ == b.edges_; }

private:
    void check(Node i) const {
        if (i < 0 || i >= d_) throw InvalidArgument("node index " + std::to_string(i) + " out of range for d=" + std::to_string(d_));
    }

    static NodeSet with(NodeSet s, Node i) {
        s.insert(std::upper_bound(s.begin(), s.end(), i), i);
        return s;
    }

    NodeSet reach(Node start, const std::vector<NodeSet>& adj) const {
        check(start);
        std::vector<char> seen(d_, 0);
        std::deque<Node> queue(adj[start].begin(), adj[start].end());
        for (Node v : adj[start]) seen[v] = 1;
        while (!queue.empty()) {
            const Node v = queue.front();
            queue.pop_front();
            for (Node w : adj[v])
                if (!seen[w]) {
                    seen[w] = 1;
                    queue.push_back(w);
                }
        }
        NodeSet out;
        for (Node v = 0; v < d_; ++v)
            if (seen[v]) out.push_back(v);
        return out;
    }

    std::vector<Node> kahn_order() const {
        std::vector<int> indeg(d_);
        for (Node v = 0; v < d_; ++v) indeg[v] = static_cast<int>(parents_[v].size());
        std::set<Node> ready;
        for (Node v = 0; v < d_; ++v)
            if (indeg[v] == 0) ready.insert(v);
        std::vector<Node> order;
        while (!ready.empty()) {
            const Node v = *ready.begin();
            ready.erase(ready.begin());
            order.push_back(v);
            for (Node w : children_[v])
                if (--indeg[w] == 0) ready.insert(w);
        }
        return order;
    }

    int d_ = 0;
    std::vector<Edge> edges_;
    std::vector<NodeSet> parents_;
    std::vector<NodeSet> children_;
    std::vector<Node> topo_;
};

/// Random DAG over the fixed order 0..d-1: each forward edge i->j (i<j)
/// is present independently with probability p. p = 1 gives the full
/// tournament.
inline Dag random_dag(int d, double p, Rng& rng) {
    if (d < 1) throw InvalidArgument("random_dag: d must be positive");
    if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("random_dag: p must lie in (0, 1]");
    std::bernoulli_distribution coin(p);
    std::vector<Edge> edges;
    for (Node i = 0; i < d; ++i)
        for (Node j = i + 1; j < d; ++j)
            if (coin(rng)) edges.emplace_back(i, j);
    return Dag(d, std::move(edges));
}

// ---------------------------------------------------------------------------
// Effect-respecting matrix classes

/// Per-row set of columns allowed to be nonzero.
struct SparsityPattern {
    int d = 0;
    std::vector<NodeSet> allowed;

    bool permits(Node i, Node j) const {
        const auto& a = allowed.at(static_cast<std::size_t>(i));
        return std::binary_search(a.begin(), a.end(), j);
    }
};

/// Row i may be nonzero exactly on the closed dom set of i.
inline SparsityPattern dom_pattern(const Dag& g) {
    SparsityPattern p{g.d(), {}};
    p.allowed.reserve(static_cast<std::size_t>(g.d()));
    for (Node i = 0; i < g.d(); ++i) p.allowed.push_back(g.dom_closure(i));
    return p;
}

enum class PatternClass {
    dom,      ///< nonzero exactly on the closed dom positions
    dom0,     ///< invertible, nonzero only on closed dom positions
    dom_bar,  ///< nonzero only on closed dom positions
};

inline constexpr double kDefaultPatternTol = 1e-9;

inline bool pattern_membership(const MatrixXd& m, const Dag& g, PatternClass cls, double tol = kDefaultPatternTol) {
    if (m.rows() != g.d() || m.cols() != g.d()) throw InvalidArgument("pattern_membership: matrix dimension does not match graph");
    if (tol < 0) throw InvalidArgument("pattern_membership: tol must be nonnegative");
    const SparsityPattern pat = dom_pattern(g);
    for (Node i = 0; i < g.d(); ++i)
        for (Node j = 0; j < g.d(); ++j) {
            const bool nonzero = std::abs(m(i, j)) > tol;
            const bool allowed = pat.permits(i, j);
            if (nonzero && !allowed) return false;
            if (cls == PatternClass::dom && allowed && !nonzero) return false;
        }
    if (cls == PatternClass::dom0) return detail::min_singular_value(m) > tol;
    return true;
}

// ---------------------------------------------------------------------------
// JSON: {"d": int, "edges": [[i,j],...]} with 1-based labels, edges sorted.

inline nlohmann::json to_json(const Dag& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [from, to] : g.edges()) edges.push_back({from + 1, to + 1});
    return {{"d", g.d()}, {"edges", std::move(edges)}};
}

inline std::vector<Edge> edges_from_json(const nlohmann::json& j) {
    std::vector<Edge> edges;
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 2) throw InvalidArgument("edge must be a pair [from, to]");
        edges.emplace_back(e[0].get<int>() - 1, e[1].get<int>() - 1);
    }
    return edges;
}

inline Dag dag_from_json(const nlohmann::json& j) {
    return Dag(j.at("d").get<int>(), edges_from_json(j.at("edges")));
}

inline std::string format_nodes(const NodeSet& s) {
    std::string out = "{";
    for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + std::to_string(s[k] + 1);
    return out + "}";
}

}  // namespace lingcrel
