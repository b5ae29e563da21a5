#pragma once

#include "biblab/harness.hpp"

#include <map>
#include <string>

namespace biblab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * One experiment manifest, parsed from an INI-style file: [section] headers,
 * key = value lines, '#' or ';' comments. Unknown sections or keys are
 * rejected. The [model] section either names a preset or spells out weights
 * and bindings; explicit keys override the preset's entries.
 */
struct RunConfig {
    DatasetSpec dataset;
    ModelSpec model;
    PresetConfig preset_cfg = preset(PresetName::BIBAE);
    TrainConfig train;
    std::string output_dir = "out";

    // rd-curve command
    std::vector<Index> rd_codebook_sizes = {1, 2, 4, 8, 16};
    int rd_seeds = 1;

    // novelty command
    double novelty_weight_disc = 1.0;
    double novelty_weight_recon = 1.0;
    double novelty_outlier_sigma = 5.0;
    Index novelty_outliers = 1000;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

/// Resolved-config dump for the run manifest (JSON object text).
std::string run_config_to_json(const RunConfig& cfg);

/// Rejection-sampled points at least sigma_multiplier * component_sigma away
/// from every mixture mean; the labeled outlier set for novelty scoring.
Mat make_outliers(const DatasetSpec& spec, Index n, double sigma_multiplier,
                  Rng& rng);

} // namespace biblab
