#pragma once

// Blind joint channel estimation and symbol detection on linear ISI channels:
// interleaved EM and belief propagation on an Ungerboeck factor graph, with a
// variational linear-equalizer initializer, momentum-weighted message passing,
// learned update schedules, and coherent/pilot-based reference detectors.

#include "embp/baselines.hpp"
#include "embp/blind.hpp"
#include "embp/channel.hpp"
#include "embp/constellation.hpp"
#include "embp/em.hpp"
#include "embp/errors.hpp"
#include "embp/experiments.hpp"
#include "embp/graph.hpp"
#include "embp/learn.hpp"
#include "embp/metrics.hpp"
#include "embp/rng.hpp"
#include "embp/vae_init.hpp"
#include "embp/weights.hpp"
