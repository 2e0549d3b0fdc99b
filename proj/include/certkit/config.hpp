#pragma once

// Run configuration as a YAML document with sections dataset, model, loss,
// schedule, attack, certify, analysis and output. Unknown keys are errors and
// every loaded config has one canonical text form.

#include "certkit/certify.hpp"
#include "certkit/data.hpp"
#include "certkit/trainer.hpp"

#include <string>
#include <vector>

namespace certkit {

struct AnalysisConfig {
    int samples = 50;           // noise draws per input for the sampled probe
    Index probe_inputs = 128;   // inputs used by the neuron and tightness probes
    std::uint64_t seed = 0;
    std::vector<Corruption> corruptions{Corruption::gaussian_noise, Corruption::brightness, Corruption::contrast};
    double severity = 0.5;
};

struct OutputConfig {
    std::string name = "run";
    std::string dir = "runs";
};

struct Config {
    TrainConfig train;
    Index test_subset = -1;  // samples certified and analyzed
    CertifyConfig certify;
    AnalysisConfig analysis;
    OutputConfig output;

    /// Eps used for certification and analysis.
    double test_eps() const { return train.eval_eps > 0 ? train.eval_eps : train.loss.train_eps; }
    void validate() const;
};

/// Throws Error("bad_config") naming the offending key.
Config parse_config(const std::string& yaml_text);
Config load_config(const std::string& path);

/// Every field, fixed key order, shortest round-trip number formatting.
std::string canonical(const Config& cfg);

/// Stable hash of the canonical form.
std::uint64_t config_hash(const Config& cfg);

/// "<setting>_<method>": full-scale hyperparameters for one setting and method
/// (cnn7, full schedule, 1000 s per-sample certification budget); the same
/// name prefixed with "desk_" keeps the loss hyperparameters on cnn3 with a
/// short schedule and a 10 s budget. Tables: mnist_0.1, mnist_0.3,
/// cifar_2.255, cifar_8.255, tin_1.255.
Config preset(const std::string& name);
std::vector<std::string> preset_names();

/// Rescales a full-scale config to a short cnn3 run.
Config desk_scale(Config cfg);

}  // namespace certkit
