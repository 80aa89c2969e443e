// Umbrella header: the full library in one include.
#pragma once

#include "array.hpp"      // IWYU pragma: export
#include "checkpoint.hpp" // IWYU pragma: export
#include "common.hpp"     // IWYU pragma: export
#include "config.hpp"     // IWYU pragma: export
#include "hip.hpp"        // IWYU pragma: export
#include "masking.hpp"    // IWYU pragma: export
#include "model_common.hpp" // IWYU pragma: export
#include "objectives.hpp" // IWYU pragma: export
#include "optim.hpp"      // IWYU pragma: export
#include "params.hpp"     // IWYU pragma: export
#include "rng.hpp"        // IWYU pragma: export
#include "swin.hpp"       // IWYU pragma: export
#include "synth.hpp"      // IWYU pragma: export
#include "tape.hpp"       // IWYU pragma: export
#include "train.hpp"      // IWYU pragma: export
#include "verify.hpp"     // IWYU pragma: export
#include "vit.hpp"        // IWYU pragma: export
