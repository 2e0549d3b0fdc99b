#pragma once

// CROWN back-substitution over IBP intermediate bounds.
//
// Every back-substitution computes an upper bound; lower bounds are obtained
// by negating the specification. Rows of the specification belong to samples
// through a row -> sample index so that B*K margin rows share one pass.

#include "certkit/ibp.hpp"

#include <cstdint>

namespace certkit {

enum class NeuronFix : std::int8_t { inactive = -1, free = 0, active = 1 };

/// Per-layer neuron assignments, indexed by layer; only relu layers are read.
/// An empty inner vector means "all free".
using ReluMasks = std::vector<std::vector<NeuronFix>>;

/// target(x) <= coef . x + offset for every x in the box, one row per spec row.
template <class T>
struct LinearBound {
    Var<T> coef;
    Var<T> offset;
};

template <class T>
struct AffineBounds {
    Var<T> A_low, b_low;
    Var<T> A_up, b_up;
    std::vector<Index> sample;
};

/// Relaxation of relu over [l, u]: slope/intercept of the upper line and the
/// lower slope alpha in {0, 1}. Differentiable in l and u.
template <class T>
struct ReluRelaxation {
    Var<T> upper_slope;
    Var<T> upper_intercept;
    Var<T> lower_slope;
};

template <class T>
ReluRelaxation<T> relu_relaxation(const VarBox<T>& pre, const std::vector<NeuronFix>* fix = nullptr);

/// Upper linear bound of spec . (output of layer end-1). boxes must come from
/// ibp_propagate starting at layer 0 and cover every relu input before `end`.
template <class T>
LinearBound<T> backsubstitute_upper(const Graph<T>& g, const LayerBoxes<T>& boxes, const Var<T>& spec,
                                    const std::vector<Index>& sample, Index end = -1,
                                    const ReluMasks* masks = nullptr);

template <class T>
AffineBounds<T> backsubstitute(const Graph<T>& g, const LayerBoxes<T>& boxes, const Var<T>& spec,
                               const std::vector<Index>& sample, Index end = -1, const ReluMasks* masks = nullptr);

/// max over the box of coef . x + offset, R x 1.
template <class T>
Var<T> concretize_upper(const LinearBound<T>& lb, const VarBox<T>& box, const std::vector<Index>& sample);

/// Lower/upper concretization of both sides, R x 1 each.
template <class T>
IntervalBox<T> concretize(const AffineBounds<T>& ab, const IntervalBox<T>& box);

/// Rows (b, i) = e_i - e_y, B*K x K, and the matching sample index.
template <class T>
Mat<T> margin_spec(const Labels& y, Index num_classes, std::vector<Index>& sample);

/// Pure CROWN margin upper bounds, B x K (column y is 0).
template <class T>
Var<T> crown_margin_upper(const Graph<T>& g, const LayerBoxes<T>& boxes, const Labels& y,
                          const ReluMasks* masks = nullptr);

/// CROWN-IBP margin upper bounds: elementwise min of CROWN and IBP, B x K.
template <class T>
Var<T> crown_ibp_margin_bounds(const Graph<T>& g, const VarBox<T>& in, const Labels& y);

template <class T>
Mat<T> crown_ibp_margins(const Network<T>& net, const BnStats<T>& stats, const IntervalBox<T>& box, const Labels& y);

/// Loss-fusion bound on the mean worst-case cross-entropy: exp-chords over the
/// IBP margin intervals give one linear functional of the logits per sample,
/// which is bounded by a single CROWN pass.
template <class T>
Var<T> fused_loss_bound(const Graph<T>& g, const VarBox<T>& in, const Labels& y, const IbpResult<T>* ibp = nullptr);

/// Per-sample fused bound, B x 1. `ibp` reuses already propagated boxes.
template <class T>
Var<T> fused_loss_bound_rows(const Graph<T>& g, const VarBox<T>& in, const Labels& y,
                             const IbpResult<T>* ibp = nullptr);

}  // namespace certkit
