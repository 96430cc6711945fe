#pragma once

// Three-region HIV setups: each region picks one of three transmission levels.

#include "common.hpp"

#include "metapatch/persist.hpp"

#include <map>
#include <mutex>

namespace testing_support {

using metapatch::Regime;
using metapatch::RegionProfile;

inline HivParams regime_params(Regime r)
{
    switch (r) {
    case Regime::below_Rc:
        return hiv_below();
    case Regime::backward_window:
        return hiv_window();
    case Regime::above_one:
        return hiv_above();
    }
    return hiv_window();
}

inline const RegionProfile& regime_profile(Regime r)
{
    static std::mutex mutex;
    static std::map<Regime, RegionProfile> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(r);
    if (it == cache.end()) {
        it = cache.emplace(r, metapatch::profile_region(metapatch::make_hiv(regime_params(r)))).first;
    }
    return it->second;
}

inline std::vector<RegionProfile> regions(std::initializer_list<Regime> list)
{
    std::vector<RegionProfile> out;
    for (Regime r : list) {
        out.push_back(regime_profile(r));
    }
    return out;
}

inline std::vector<RegionProfile> regions(const std::vector<Regime>& list)
{
    std::vector<RegionProfile> out;
    for (Regime r : list) {
        out.push_back(regime_profile(r));
    }
    return out;
}

constexpr Regime W = Regime::backward_window;
constexpr Regime A = Regime::above_one;
constexpr Regime B = Regime::below_Rc;

/// All 27 assignments of the three regimes to three regions.
inline std::vector<std::vector<Regime>> all_regime_assignments()
{
    const Regime all[3] = {B, W, A};
    std::vector<std::vector<Regime>> out;
    for (Regime a : all) {
        for (Regime b : all) {
            for (Regime c : all) {
                out.push_back({a, b, c});
            }
        }
    }
    return out;
}

inline metapatch::MobilityNetwork hiv_net(const std::string& name) { return metapatch::preset(name, 4, 2, 1); }

inline metapatch::MobilityNetwork hiv_chain()
{
    // 3 -> 2 -> 1
    metapatch::MobilityNetwork net(3, 4, 2, 1);
    net.name = "chain";
    net.set_edge(2, 1);
    net.set_edge(1, 0);
    return net;
}

} // namespace testing_support
