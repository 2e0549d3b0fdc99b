#pragma once

// Interval bound propagation.
//
// Boxes live on the tape so every bound is differentiable with respect to the
// parameters. Layer boxes are indexed like forward_trace: boxes[0] is the raw
// input box and boxes[i + 1] is the output box of layer i.

#include "certkit/network.hpp"

namespace certkit {

template <class T>
struct IntervalBox {
    Mat<T> lower;
    Mat<T> upper;

    Mat<T> center() const { return (lower + upper) * T(0.5); }
    Mat<T> radius() const { return (upper - lower) * T(0.5); }
    bool contains(const Mat<T>& x) const {
        return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
    }
};

template <class T>
struct VarBox {
    Var<T> lower;
    Var<T> upper;
};

template <class T>
using LayerBoxes = std::vector<VarBox<T>>;

/// [x - eps, x + eps] intersected with the input domain.
template <class T>
IntervalBox<T> input_box(const Mat<T>& x, double eps, InputDomain domain = {});

template <class T>
VarBox<T> constant_box(Tape<T>& tape, const IntervalBox<T>& box);

/// Propagates through layers [begin, end). The result holds end - begin + 1
/// boxes, the first being `in`. Post-relu boxes are multiplied by relu_shrink.
template <class T>
LayerBoxes<T> ibp_propagate(const Graph<T>& g, const VarBox<T>& in, Index begin = 0, Index end = -1,
                            T relu_shrink = T(1));

/// Elided bounds on f_i - f_y through the final linear layer, given the box of
/// its input. B x K, zero in column y.
template <class T>
Var<T> ibp_margin_upper(const Graph<T>& g, const VarBox<T>& last_input, const Labels& y);
template <class T>
Var<T> ibp_margin_lower(const Graph<T>& g, const VarBox<T>& last_input, const Labels& y);

/// Naive (non-elided) margin upper bounds upper_i - lower_y; test oracle only.
template <class T>
Var<T> ibp_margin_upper_naive(const Graph<T>& g, const VarBox<T>& logits_box, const Labels& y);

/// Boxes up to the final linear layer's input plus the elided margin bounds.
template <class T>
struct IbpResult {
    LayerBoxes<T> boxes;
    Var<T> margin_upper;
};

template <class T>
IbpResult<T> ibp_bounds(const Graph<T>& g, const VarBox<T>& in, const Labels& y, T relu_shrink = T(1));

/// Mean cross-entropy on the worst-case pseudo-logits (margin upper bounds).
template <class T>
Var<T> ibp_robust_loss(const Graph<T>& g, const Mat<T>& x, const Labels& y, double eps, InputDomain domain = {});

/// Plain-valued convenience: margin upper bounds for a frozen network.
template <class T>
Mat<T> ibp_margins(const Network<T>& net, const BnStats<T>& stats, const IntervalBox<T>& box, const Labels& y);

}  // namespace certkit
