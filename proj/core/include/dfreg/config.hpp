#pragma once

#include <cstdint>
#include <string>

#include "dfreg/field.hpp"
#include "dfreg/network.hpp"
#include "dfreg/objectives.hpp"

namespace dfreg {

/// One run of the engine, parsed from a flat `key = value` text file
/// (# comments). Unknown keys are rejected.
struct RunConfig {
    GridShape shape{{64, 64}};
    SrConfig model;
    LossWeights weights = LossWeights::defaults(3);

    double lr = 1e-4;
    int iterations = 600;
    std::uint64_t seed = 7;
    int ncc_window = 9;
    int log_every = 50;

    std::string dataset = "blob";  // blob | c-shape | multi-organ
    int eval_pairs = 10;
    double warp_amplitude = 6.0;
    double noise_sigma = 0.02;

    std::string out_dir = "out";

    // compare-integrators
    std::string velocity = "linear";  // linear | radial | vortex
    int ss_steps = 7;                 // T of scaling and squaring
    int integration_steps = 8;        // N of the control-increment Euler run
    double velocity_amplitude = 0.15;

    void finalize();  // derive dims, broadcast lambda1, validate
};

RunConfig parse_config_text(const std::string& text, RunConfig base = RunConfig());
RunConfig load_config(const std::string& path, RunConfig base = RunConfig());
std::string serialize_config(const RunConfig& cfg);

}  // namespace dfreg
