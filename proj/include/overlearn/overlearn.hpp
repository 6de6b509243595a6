#pragma once

// Representation-leakage audit toolkit: synthetic data with a controlled
// label/attribute association, task training with layer-addressable
// representations, two censoring defenses, three inference attacks, and
// similarity/association analysis, orchestrated by a config-driven
// experiment harness.

#include "overlearn/analysis.hpp"
#include "overlearn/attack.hpp"
#include "overlearn/censor.hpp"
#include "overlearn/common.hpp"
#include "overlearn/csv.hpp"
#include "overlearn/dataset.hpp"
#include "overlearn/error.hpp"
#include "overlearn/experiment.hpp"
#include "overlearn/model.hpp"
#include "overlearn/nn.hpp"
#include "overlearn/rng.hpp"
#include "overlearn/toml.hpp"
