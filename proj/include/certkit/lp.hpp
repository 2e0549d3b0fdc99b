#pragma once

// Dense bounded-variable primal simplex for small row counts.
//
//   maximize c.x  subject to  A x <= b,  lo <= x <= hi
//
// Box bounds are handled implicitly, so the basis is only as large as the
// number of general rows. Phase 1 minimizes the sum of artificials; Bland's
// rule on both ratio tests rules out cycling.

#include "certkit/types.hpp"

namespace certkit {

enum class LpStatus { optimal, infeasible, iteration_limit };

struct LpResult {
    LpStatus status = LpStatus::infeasible;
    double value = 0;
    Vec<double> x;
    int iterations = 0;
};

struct LpOptions {
    double tolerance = 1e-9;
    int max_iterations = 100000;
};

/// A is m x n, b has m entries, lo/hi/c have n. Requires finite lo <= hi.
LpResult maximize_box_lp(const Mat<double>& A, const Vec<double>& b, const Vec<double>& c, const Vec<double>& lo,
                         const Vec<double>& hi, const LpOptions& opt = {});

}  // namespace certkit
