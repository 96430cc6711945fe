#pragma once

// Mobility between regions: per-block diagonal connectivity C_w^{ij} (flow from
// region j into region i), the region digraph induced by the infected block,
// reachability, and the EAT-to-DFAT distance of a pattern.

#include "metapatch/equilibria.hpp"
#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace metapatch {

/// Diagonals of C_x, C_y, C_z for one ordered region pair.
struct Connectivity {
    Vec cx;
    Vec cy;
    Vec cz;

    bool any_infected() const { return cx.size() > 0 && cx.maxCoeff() > 0.0; }
};

struct MobilityNetwork {
    int r = 0;
    int n = 0;
    int m = 0;
    int k = 0;
    double alpha = 0.0;
    /// links[i * r + j] holds C^{ij}; diagonal pairs stay zero.
    std::vector<Connectivity> links;
    std::string name;

    MobilityNetwork() = default;

    MobilityNetwork(int regions, int n_, int m_, int k_)
        : r(regions)
        , n(n_)
        , m(m_)
        , k(k_)
    {
        if (r <= 0 || n <= 0 || m <= 0 || k <= 0) {
            throw DomainError("MobilityNetwork: region count and block sizes must be positive");
        }
        links.assign(static_cast<std::size_t>(r * r), Connectivity{Vec::Zero(n), Vec::Zero(m), Vec::Zero(k)});
    }

    void check_region(int i) const
    {
        if (i < 0 || i >= r) {
            throw DomainError("region index " + std::to_string(i + 1) + " out of range 1.." + std::to_string(r));
        }
    }

    /// C^{to,from}: movement from `from` into `to`.
    const Connectivity& link(int to, int from) const
    {
        check_region(to);
        check_region(from);
        return links[static_cast<std::size_t>(to * r + from)];
    }

    Connectivity& link(int to, int from)
    {
        check_region(to);
        check_region(from);
        if (to == from) {
            throw DomainError("MobilityNetwork: self-links are not allowed");
        }
        return links[static_cast<std::size_t>(to * r + from)];
    }

    /// Sets the same connectivity on every compartment of every block.
    void set_edge(int from, int to, double c = 1.0)
    {
        auto& l = link(to, from);
        l.cx.setConstant(c);
        l.cy.setConstant(c);
        l.cz.setConstant(c);
    }

    void validate() const
    {
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
            throw DomainError("MobilityNetwork: alpha must be a finite nonnegative number");
        }
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < r; ++j) {
                const auto& l = links[static_cast<std::size_t>(i * r + j)];
                if (l.cx.size() != n || l.cy.size() != m || l.cz.size() != k) {
                    throw DomainError("MobilityNetwork: connectivity dimensions do not match the patch blocks");
                }
                if (l.cx.minCoeff() < 0.0 || l.cy.minCoeff() < 0.0 || l.cz.minCoeff() < 0.0 || !l.cx.allFinite() ||
                    !l.cy.allFinite() || !l.cz.allFinite()) {
                    throw DomainError("MobilityNetwork: connectivity must be finite and nonnegative");
                }
                if (i == j && (l.cx.maxCoeff() > 0.0 || l.cy.maxCoeff() > 0.0 || l.cz.maxCoeff() > 0.0)) {
                    throw DomainError("MobilityNetwork: self-links are not allowed");
                }
            }
        }
    }

    /// Edge list (from, to) of the region digraph, 0-based.
    std::vector<std::pair<int, int>> edges() const
    {
        std::vector<std::pair<int, int>> out;
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < r; ++i) {
                if (i != j && link(i, j).any_infected()) {
                    out.emplace_back(j, i);
                }
            }
        }
        return out;
    }
};

/// True iff some infected compartment of `from` moves into `to`.
inline bool direct_connection(const MobilityNetwork& net, int from, int to)
{
    net.check_region(from);
    net.check_region(to);
    if (from == to) {
        throw DomainError("direct_connection: regions must differ");
    }
    return net.link(to, from).any_infected();
}

/// Region digraph as a pattern with (i, j) true for an edge j -> i.
inline BoolMat region_digraph(const MobilityNetwork& net)
{
    BoolMat g = BoolMat::Constant(net.r, net.r, false);
    for (int i = 0; i < net.r; ++i) {
        for (int j = 0; j < net.r; ++j) {
            g(i, j) = i != j && net.link(i, j).any_infected();
        }
    }
    return g;
}

namespace detail {

/// Multi-source BFS; dist is -1 where unreachable, parent gives the predecessor on a shortest path.
inline void bfs(const BoolMat& g, const std::vector<int>& sources, std::vector<int>& dist, std::vector<int>& parent)
{
    const int r = static_cast<int>(g.rows());
    dist.assign(r, -1);
    parent.assign(r, -1);
    std::deque<int> queue;
    for (int s : sources) {
        dist[s] = 0;
        queue.push_back(s);
    }
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int w = 0; w < r; ++w) {
            if (g(w, v) && dist[w] < 0) {
                dist[w] = dist[v] + 1;
                parent[w] = v;
                queue.push_back(w);
            }
        }
    }
}

} // namespace detail

/// True iff a directed path of direct connections leads from `from` to `to`.
inline bool reachable(const MobilityNetwork& net, int from, int to)
{
    net.check_region(from);
    net.check_region(to);
    if (from == to) {
        throw DomainError("reachable: regions must differ");
    }
    std::vector<int> dist, parent;
    detail::bfs(region_digraph(net), {from}, dist, parent);
    return dist[to] >= 0;
}

/// Connected once edge directions are ignored. A single region counts as connected.
inline bool is_weakly_connected(const MobilityNetwork& net)
{
    const BoolMat g = region_digraph(net);
    const BoolMat sym = (g.array() || g.transpose().array()).matrix();
    std::vector<int> dist, parent;
    detail::bfs(sym, {0}, dist, parent);
    return std::all_of(dist.begin(), dist.end(), [](int d) { return d >= 0; });
}

struct PatternClassification {
    std::vector<bool> endemic; ///< EAT flag per region
    /// intermediate regions on a shortest EAT -> i path, r-1 when unreachable; -1 for EAT regions
    std::vector<int> M;
    std::vector<bool> reachable_from_eat;
    /// shortest path from an EAT region to i (inclusive), empty when unreachable or EAT
    std::vector<std::vector<int>> witness;

    bool dfat(int i) const { return !endemic[static_cast<std::size_t>(i)]; }
};

inline PatternClassification classify_pattern(const MobilityNetwork& net, const EquilibriumPattern& pattern)
{
    if (pattern.regions() != net.r) {
        throw DomainError("classify_pattern: pattern has " + std::to_string(pattern.regions()) + " regions, network " +
                          std::to_string(net.r));
    }
    PatternClassification c;
    std::vector<int> sources;
    for (int i = 0; i < net.r; ++i) {
        c.endemic.push_back(pattern.choices[i] > 0);
        if (pattern.choices[i] > 0) {
            sources.push_back(i);
        }
    }
    std::vector<int> dist, parent;
    detail::bfs(region_digraph(net), sources, dist, parent);
    c.M.assign(net.r, -1);
    c.reachable_from_eat.assign(net.r, false);
    c.witness.assign(net.r, {});
    for (int i = 0; i < net.r; ++i) {
        if (c.endemic[i]) {
            continue;
        }
        if (dist[i] > 0) {
            c.M[i] = dist[i] - 1;
            c.reachable_from_eat[i] = true;
            for (int v = i; v >= 0; v = parent[v]) {
                c.witness[i].insert(c.witness[i].begin(), v);
            }
        }
        else {
            c.M[i] = net.r - 1;
        }
    }
    return c;
}

/// The six ordered pairs of three regions, in the bit order used by enumerate_networks.
inline constexpr std::array<std::pair<int, int>, 6> three_region_pairs{
    {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}};

/// All 64 three-region digraphs; bit b of the index switches on three_region_pairs[b] with unit connectivity.
inline std::vector<MobilityNetwork> enumerate_networks(int r, int n, int m, int k)
{
    if (r != 3) {
        throw DomainError("enumerate_networks: only three regions are supported");
    }
    std::vector<MobilityNetwork> out;
    for (int mask = 0; mask < 64; ++mask) {
        MobilityNetwork net(3, n, m, k);
        net.name = "digraph" + std::to_string(mask);
        for (int b = 0; b < 6; ++b) {
            if (mask >> b & 1) {
                net.set_edge(three_region_pairs[b].first, three_region_pairs[b].second);
            }
        }
        out.push_back(std::move(net));
    }
    return out;
}

inline const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names{"fig2", "fig3a", "fig3b", "fig3c", "fig4a", "fig4b", "fig4c", "fig4d"};
    return names;
}

/**
 * Named three-region networks with unit connectivity, edges given as from -> to (1-based):
 *
 *   fig3a  1->2, 2->1, 3->2               reducible
 *   fig3b  fig3a plus 1->3                irreducible
 *   fig3c  complete
 *   fig4a  1->2, 1->3, 2->3, 3->2         4 persisting equilibria
 *   fig4b  1->2, 2->1, 1->3               5
 *   fig4c  1->2, 1->3                     6
 *   fig4d  1->3, 2->3                     7
 *
 * The last four counts hold for R1 in the backward window and R2, R3 above one.
 * fig2 uses per-class links and needs at least three infected classes: class 1 of
 * region 1 moves to region 2, every class of region 3 moves to region 2, and
 * classes 2 and 3 of region 2 move to region 3.
 */
inline MobilityNetwork preset(const std::string& name, int n, int m, int k)
{
    MobilityNetwork net(3, n, m, k);
    net.name = name;
    auto edges = [&](std::initializer_list<std::pair<int, int>> list) {
        for (auto [from, to] : list) {
            net.set_edge(from - 1, to - 1);
        }
    };
    if (name == "fig3a") {
        edges({{1, 2}, {2, 1}, {3, 2}});
    }
    else if (name == "fig3b") {
        edges({{1, 2}, {2, 1}, {3, 2}, {1, 3}});
    }
    else if (name == "fig3c") {
        edges({{1, 2}, {1, 3}, {2, 1}, {2, 3}, {3, 1}, {3, 2}});
    }
    else if (name == "fig4a") {
        edges({{1, 2}, {1, 3}, {2, 3}, {3, 2}});
    }
    else if (name == "fig4b") {
        edges({{1, 2}, {2, 1}, {1, 3}});
    }
    else if (name == "fig4c") {
        edges({{1, 2}, {1, 3}});
    }
    else if (name == "fig4d") {
        edges({{1, 3}, {2, 3}});
    }
    else if (name == "fig2") {
        if (n < 3) {
            throw DomainError("preset fig2 needs at least three infected classes");
        }
        net.link(1, 0).cx(0) = 1.0;
        net.link(1, 2).cx.head(3).setOnes();
        net.link(2, 1).cx.segment(1, 2).setOnes();
    }
    else {
        throw DomainError("unknown network preset '" + name + "'");
    }
    return net;
}

/// Same network with regions relabeled: region i becomes perm[i].
inline MobilityNetwork relabel(const MobilityNetwork& net, const std::vector<int>& perm)
{
    MobilityNetwork out(net.r, net.n, net.m, net.k);
    out.alpha = net.alpha;
    out.name = net.name;
    for (int i = 0; i < net.r; ++i) {
        for (int j = 0; j < net.r; ++j) {
            if (i != j) {
                out.link(perm[i], perm[j]) = net.link(i, j);
            }
        }
    }
    return out;
}

} // namespace metapatch
