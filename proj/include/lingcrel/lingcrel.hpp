#pragma once

#include "lingcrel/ambiguity.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/graph.hpp"
#include "lingcrel/harness.hpp"
#include "lingcrel/ica.hpp"
#include "lingcrel/io.hpp"
#include "lingcrel/metrics.hpp"
#include "lingcrel/recovery.hpp"
#include "lingcrel/rng.hpp"
#include "lingcrel/scm.hpp"
