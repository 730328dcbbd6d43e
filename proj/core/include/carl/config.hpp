#pragma once

#include <string>

#include "carl/trainer.hpp"

namespace carl {

// Everything a CLI run needs: model/train/attack settings plus data wiring.
// Presets populate every default; explicit config keys override them.
struct RunConfig {
    CarlConfig carl;
    std::string preset = "desk";
    std::string corpus;
    double scale_lo = -1.0;
    double scale_hi = 1.0;
};

// "paper": every constant from the source setup (lr 2e-5, batch 128,
//          max_len 128, epsilon 5e-9, alpha 5, ...).
// "desk":  small-model defaults sized for a single CPU core.
// "smoke": desk sizes with a detectable attack (epsilon 0.5, alpha 0.25)
//          for fast end-to-end runs.
void apply_preset(CarlConfig& cfg, const std::string& name);

// Loads TOML (flat [section] key = value subset) or JSON by extension.
// Unknown keys raise a ConfigError naming the key.
RunConfig load_run_config(const std::string& path);

}  // namespace carl
