#pragma once

// Core library. The configuration layer (metapatch/cli.hpp) additionally needs json.hpp.

#include "metapatch/continuation.hpp"
#include "metapatch/equilibria.hpp"
#include "metapatch/errors.hpp"
#include "metapatch/matalg.hpp"
#include "metapatch/model.hpp"
#include "metapatch/network.hpp"
#include "metapatch/persist.hpp"
#include "metapatch/sim.hpp"
