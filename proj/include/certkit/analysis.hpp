#pragma once

// Read-only diagnostics of trained models: unstable-neuron ratios, clean
// utilization, propagation tightness, shared certification mistakes against an
// independence null, and accuracy under corruption.

#include "certkit/data.hpp"
#include "certkit/ibp.hpp"

#include <map>

namespace certkit {

enum class Probe { sampled, ibp };

struct NeuronStats {
    Probe probe = Probe::ibp;
    int samples = 0;  // sampled probe only
    // Per relu layer, summed over inputs.
    std::vector<Index> active, inactive, unstable, width;
    Index inputs = 0;

    Index total_unstable() const;
    Index total() const;  // inputs * sum(width)
    double ratio() const;
};

/// Clean input plus n noisy copies per row: N(0,1) clipped to [-1, 1], times
/// eps, added, clipped to the domain. A neuron is unstable when its
/// pre-activation is positive for some copy and non-positive for another.
NeuronStats neuron_stats_sampled(const Network<double>& net, const Mat<double>& x, double eps, int n,
                                 std::uint64_t seed, InputDomain domain = {});
/// l < 0 < u under IBP; active is l > 0, inactive u <= 0, ties at 0 count as stable.
NeuronStats neuron_stats_ibp(const Network<double>& net, const Mat<double>& x, double eps, InputDomain domain = {});

double unstable_ratio_sampled(const Network<double>& net, const Mat<double>& x, double eps, int n = 50,
                              std::uint64_t seed = 0, InputDomain domain = {});
double unstable_ratio_ibp(const Network<double>& net, const Mat<double>& x, double eps, InputDomain domain = {});

/// Mean over rows of the fraction of relu neurons with positive pre-activation.
double utilization(const Network<double>& net, const Mat<double>& x);

struct Tightness {
    double mean = 1;
    std::vector<double> per_output;  // averaged over inputs
};

/// Linearizes each row at its clean activation pattern and compares the exact
/// radius of that linear map with the IBP radius through it.
Tightness propagation_tightness(const Network<double>& net, const Mat<double>& x, double eps);

/// Exact pmf of the number of successes, O(n^2).
std::vector<double> poisson_binomial_pmf(const std::vector<double>& p);

struct MistakeHistogram {
    std::vector<Index> observed;     // samples certified by exactly k models
    std::vector<double> expected;    // dataset size * Poisson-binomial pmf
    std::vector<double> accuracies;  // per model
};

MistakeHistogram shared_mistakes(const std::vector<std::vector<bool>>& certified);

std::string mistakes_csv(const MistakeHistogram& h);

double accuracy(const Network<double>& net, const Dataset& data, Index batch = 512);

/// accuracy(corrupted) / accuracy(clean).
double ood_generalization(const Network<double>& net, const Dataset& clean, const Dataset& corrupted);

struct ModelReport {
    double unstable_sampled = 0, unstable_ibp = 0, utilization = 0, tightness = 0;
    std::optional<double> cert_acc, nat_acc, adv_acc;
    std::map<std::string, double> ood;
};

std::string report_json(const std::map<std::string, ModelReport>& models);

}  // namespace certkit
