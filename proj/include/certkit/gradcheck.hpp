#pragma once

// Central finite-difference check of parameter gradients.

#include "certkit/network.hpp"

#include <functional>
#include <limits>

namespace certkit {

struct GradCheckReport {
    double max_rel_error = 0;  // over checked, non-kink coordinates
    Index checked = 0;
    Index kinks = 0;     // one-sided differences disagree; excluded
    Index failures = 0;  // relative error above tolerance or non-finite
    Index worst_param = -1, worst_index = -1;
    bool passed() const { return failures == 0; }
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-3;
    double floor = 1e-6;     // denominator floor of the relative error
    double kink_tolerance = 1e-3;  // relative gap between one-sided differences marking a kink
    Index max_coords = 256;  // random subset size; <= 0 checks every coordinate
    std::uint64_t seed = 0;
};

/// loss(graph) must be a deterministic scalar of the parameters. It is called
/// once for the analytic gradient, then three times per checked coordinate.
template <class T>
using GraphLoss = std::function<Var<T>(const Graph<T>&)>;

template <class T>
GradCheckReport finite_diff_check(const Network<T>& net, const BnStats<T>& stats, const GraphLoss<T>& loss,
                                  const GradCheckOptions& opt = {});

}  // namespace certkit
