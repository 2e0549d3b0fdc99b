#include "certkit/crown.hpp"

#include <cmath>
#include <limits>

namespace certkit {

namespace {

template <class T>
NeuronFix fix_of(const std::vector<NeuronFix>* fix, Index j) {
    if (fix == nullptr || fix->empty()) return NeuronFix::free;
    return (*fix)[static_cast<std::size_t>(j)];
}

template <class T>
bool unstable(T l, T u, NeuronFix f) {
    return f == NeuronFix::free && l < T(0) && u > T(0);
}

template <class T>
bool active(T l, NeuronFix f) {
    return f == NeuronFix::active || (f == NeuronFix::free && l >= T(0));
}

// expm1(d)/d, continuous at 0.
template <class T>
T expm1_ratio_value(T d) {
    if (std::abs(d) < T(1e-4)) return T(1) + d / T(2) + d * d / T(6) + d * d * d / T(24);
    return std::expm1(d) / d;
}

template <class T>
T expm1_ratio_deriv(T d) {
    if (std::abs(d) < T(1e-4)) return T(0.5) + d / T(3) + d * d / T(8);
    return (std::exp(d) * (d - T(1)) + T(1)) / (d * d);
}

template <class T>
Var<T> expm1_ratio(const Var<T>& d) {
    Tape<T>* t = d.tape();
    const int id = d.id();
    Mat<T> out = d.value().unaryExpr([](T v) { return expm1_ratio_value(v); });
    return t->push(std::move(out), {d}, [t, id](const Mat<T>& g) {
        const Mat<T> dv = t->value(id).unaryExpr([](T v) { return expm1_ratio_deriv(v); });
        t->accumulate(id, g.cwiseProduct(dv));
    });
}

}  // namespace

template <class T>
ReluRelaxation<T> relu_relaxation(const VarBox<T>& pre, const std::vector<NeuronFix>* fix) {
    Tape<T>* t = pre.lower.tape();
    const Mat<T>& l = pre.lower.value();
    const Mat<T>& u = pre.upper.value();
    const Index rows = l.rows(), cols = l.cols();
    Mat<T> slope(rows, cols), intercept(rows, cols), alpha(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < cols; ++j) {
            const NeuronFix f = fix_of<T>(fix, j);
            const T lo = l(r, j), hi = u(r, j);
            if (unstable(lo, hi, f)) {
                slope(r, j) = hi / (hi - lo);
                intercept(r, j) = -hi * lo / (hi - lo);
                alpha(r, j) = hi >= -lo ? T(1) : T(0);
            } else {
                const T a = active(lo, f) ? T(1) : T(0);
                slope(r, j) = a;
                intercept(r, j) = T(0);
                alpha(r, j) = a;
            }
        }
    std::vector<NeuronFix> fix_copy = fix ? *fix : std::vector<NeuronFix>{};
    const int il = pre.lower.id(), iu = pre.upper.id();
    ReluRelaxation<T> out;
    out.upper_slope = t->push(std::move(slope), {pre.lower, pre.upper}, [t, il, iu, fix_copy](const Mat<T>& g) {
        const Mat<T>& l = t->value(il);
        const Mat<T>& u = t->value(iu);
        Mat<T> gl = Mat<T>::Zero(l.rows(), l.cols()), gu = gl;
        for (Index r = 0; r < l.rows(); ++r)
            for (Index j = 0; j < l.cols(); ++j) {
                if (!unstable(l(r, j), u(r, j), fix_of<T>(&fix_copy, j))) continue;
                const T w = u(r, j) - l(r, j);
                gl(r, j) = g(r, j) * u(r, j) / (w * w);
                gu(r, j) = -g(r, j) * l(r, j) / (w * w);
            }
        t->accumulate(il, gl);
        t->accumulate(iu, gu);
    });
    out.upper_intercept = t->push(std::move(intercept), {pre.lower, pre.upper}, [t, il, iu, fix_copy](const Mat<T>& g) {
        const Mat<T>& l = t->value(il);
        const Mat<T>& u = t->value(iu);
        Mat<T> gl = Mat<T>::Zero(l.rows(), l.cols()), gu = gl;
        for (Index r = 0; r < l.rows(); ++r)
            for (Index j = 0; j < l.cols(); ++j) {
                if (!unstable(l(r, j), u(r, j), fix_of<T>(&fix_copy, j))) continue;
                const T w = u(r, j) - l(r, j);
                gl(r, j) = -g(r, j) * u(r, j) * u(r, j) / (w * w);
                gu(r, j) = g(r, j) * l(r, j) * l(r, j) / (w * w);
            }
        t->accumulate(il, gl);
        t->accumulate(iu, gu);
    });
    out.lower_slope = t->constant(std::move(alpha));
    return out;
}

template <class T>
LinearBound<T> backsubstitute_upper(const Graph<T>& g, const LayerBoxes<T>& boxes, const Var<T>& spec,
                                    const std::vector<Index>& sample, Index end, const ReluMasks* masks) {
    const auto& net = g.net();
    Tape<T>& tape = g.tape();
    if (end < 0) end = net.size();
    if (static_cast<Index>(sample.size()) != spec.rows()) throw Error("shape_mismatch", "one sample index per spec row");
    Var<T> lam = spec;
    Var<T> beta = tape.constant(Mat<T>::Zero(spec.rows(), 1));
    for (Index i = end - 1; i >= 0; --i) {
        const auto& layer = net.layers[static_cast<std::size_t>(i)];
        if (layer.kind == LayerKind::flatten) continue;
        if (layer.kind == LayerKind::relu) {
            if (static_cast<Index>(boxes.size()) <= i)
                throw Error("missing_bounds", "no intermediate bounds for relu layer " + std::to_string(i));
            const std::vector<NeuronFix>* fix =
                masks && static_cast<Index>(masks->size()) > i ? &(*masks)[static_cast<std::size_t>(i)] : nullptr;
            const auto rel = relu_relaxation(boxes[static_cast<std::size_t>(i)], fix);
            const Var<T> a = ad::gather_rows(rel.upper_slope, sample);
            const Var<T> c = ad::gather_rows(rel.upper_intercept, sample);
            const Var<T> alpha = ad::gather_rows(rel.lower_slope, sample);
            const Var<T> pos = ad::relu(lam);
            const Var<T> neg = ad::sub(lam, pos);
            beta = ad::add(beta, ad::rowsum(ad::mul(pos, c)));
            lam = ad::add(ad::mul(pos, a), ad::mul(neg, alpha));
            continue;
        }
        beta = ad::add(beta, g.pullback_offset(i, lam));
        lam = g.pullback(i, lam);
    }
    beta = ad::add(beta, g.norm_pullback_offset(lam));
    lam = g.norm_pullback(lam);
    return {lam, beta};
}

template <class T>
AffineBounds<T> backsubstitute(const Graph<T>& g, const LayerBoxes<T>& boxes, const Var<T>& spec,
                               const std::vector<Index>& sample, Index end, const ReluMasks* masks) {
    const auto up = backsubstitute_upper(g, boxes, spec, sample, end, masks);
    const auto neg = backsubstitute_upper(g, boxes, ad::scale(spec, T(-1)), sample, end, masks);
    AffineBounds<T> ab;
    ab.A_up = up.coef;
    ab.b_up = up.offset;
    ab.A_low = ad::scale(neg.coef, T(-1));
    ab.b_low = ad::scale(neg.offset, T(-1));
    ab.sample = sample;
    return ab;
}

template <class T>
Var<T> concretize_upper(const LinearBound<T>& lb, const VarBox<T>& box, const std::vector<Index>& sample) {
    const Var<T> c = ad::gather_rows(ad::scale(ad::add(box.lower, box.upper), T(0.5)), sample);
    const Var<T> r = ad::gather_rows(ad::scale(ad::sub(box.upper, box.lower), T(0.5)), sample);
    return ad::add(ad::add(ad::rowsum(ad::mul(lb.coef, c)), ad::rowsum(ad::mul(ad::abs(lb.coef), r))), lb.offset);
}

template <class T>
IntervalBox<T> concretize(const AffineBounds<T>& ab, const IntervalBox<T>& box) {
    Mat<T> c(static_cast<Index>(ab.sample.size()), box.lower.cols()), r(c.rows(), c.cols());
    const Mat<T> bc = box.center(), br = box.radius();
    for (std::size_t i = 0; i < ab.sample.size(); ++i) {
        c.row(static_cast<Index>(i)) = bc.row(ab.sample[i]);
        r.row(static_cast<Index>(i)) = br.row(ab.sample[i]);
    }
    IntervalBox<T> out;
    const Mat<T>& al = ab.A_low.value();
    const Mat<T>& au = ab.A_up.value();
    out.lower = (al.cwiseProduct(c).rowwise().sum() - al.cwiseAbs().cwiseProduct(r).rowwise().sum()) + ab.b_low.value();
    out.upper = (au.cwiseProduct(c).rowwise().sum() + au.cwiseAbs().cwiseProduct(r).rowwise().sum()) + ab.b_up.value();
    return out;
}

template <class T>
Mat<T> margin_spec(const Labels& y, Index num_classes, std::vector<Index>& sample) {
    const Index batch = static_cast<Index>(y.size());
    Mat<T> spec = Mat<T>::Zero(batch * num_classes, num_classes);
    sample.clear();
    for (Index b = 0; b < batch; ++b) {
        const int label = y[static_cast<std::size_t>(b)];
        if (label < 0 || label >= num_classes) throw Error("bad_label", "label out of range");
        for (Index i = 0; i < num_classes; ++i) {
            sample.push_back(b);
            if (i == label) continue;
            spec(b * num_classes + i, i) = T(1);
            spec(b * num_classes + i, label) = T(-1);
        }
    }
    return spec;
}

template <class T>
Var<T> crown_margin_upper(const Graph<T>& g, const LayerBoxes<T>& boxes, const Labels& y, const ReluMasks* masks) {
    std::vector<Index> sample;
    const Index k = g.net().num_classes;
    const Var<T> spec = g.tape().constant(margin_spec<T>(y, k, sample));
    const auto lb = backsubstitute_upper(g, boxes, spec, sample, -1, masks);
    const Var<T> up = concretize_upper(lb, boxes.front(), sample);
    return ad::reshape(up, static_cast<Index>(y.size()), k);
}

template <class T>
Var<T> crown_ibp_margin_bounds(const Graph<T>& g, const VarBox<T>& in, const Labels& y) {
    const auto ibp = ibp_bounds(g, in, y);
    const Var<T> crown = crown_margin_upper(g, ibp.boxes, y);
    return ad::minimum(crown, ibp.margin_upper);
}

template <class T>
Mat<T> crown_ibp_margins(const Network<T>& net, const BnStats<T>& stats, const IntervalBox<T>& box, const Labels& y) {
    Tape<T> tape;
    Graph<T> g(tape, net, stats, false);
    return crown_ibp_margin_bounds(g, constant_box(tape, box), y).value();
}

template <class T>
Var<T> fused_loss_bound_rows(const Graph<T>& g, const VarBox<T>& in, const Labels& y, const IbpResult<T>* pre) {
    Tape<T>& tape = g.tape();
    const Index batch = static_cast<Index>(y.size());
    const Index k = g.net().num_classes;
    const IbpResult<T> ibp = pre ? *pre : ibp_bounds(g, in, y);
    const Var<T> up = ibp.margin_upper;
    const Var<T> lo = ibp_margin_lower(g, ibp.boxes.back(), y);

    // exp(m - s) <= a m + b on [lo, up] (chord of a convex function), with the
    // shift s = max_i up_i held constant for stability.
    const Mat<T> s = up.value().rowwise().maxCoeff();
    const Var<T> shifted = ad::add_col(lo, tape.constant(-s));
    const Var<T> el = ad::exp(shifted);
    const Var<T> a = ad::mul(el, expm1_ratio(ad::sub(up, lo)));
    const Var<T> b = ad::sub(el, ad::mul(a, lo));

    // Functional on logits: sum_i a_i (f_i - f_y); column y carries -sum_{i != y} a_i.
    Mat<T> onehot = Mat<T>::Zero(batch, k);
    for (Index r = 0; r < batch; ++r) onehot(r, y[static_cast<std::size_t>(r)]) = T(1);
    const Var<T> w = ad::sub(a, ad::mul_col(tape.constant(onehot), ad::rowsum(a)));
    const Var<T> c0 = ad::rowsum(b);

    std::vector<Index> sample(static_cast<std::size_t>(batch));
    for (Index r = 0; r < batch; ++r) sample[static_cast<std::size_t>(r)] = r;
    const auto lb = backsubstitute_upper(g, ibp.boxes, w, sample);
    const Var<T> bound = ad::add(concretize_upper(lb, in, sample), c0);
    const T tiny = std::numeric_limits<T>::min();
    return ad::add(ad::log(ad::clamp_min(bound, tiny)), tape.constant(s));
}

template <class T>
Var<T> fused_loss_bound(const Graph<T>& g, const VarBox<T>& in, const Labels& y, const IbpResult<T>* ibp) {
    return ad::mean(fused_loss_bound_rows(g, in, y, ibp));
}

#define CERTKIT_INSTANTIATE_CROWN(T)                                                                         \
    template ReluRelaxation<T> relu_relaxation<T>(const VarBox<T>&, const std::vector<NeuronFix>*);         \
    template LinearBound<T> backsubstitute_upper<T>(const Graph<T>&, const LayerBoxes<T>&, const Var<T>&,   \
                                                    const std::vector<Index>&, Index, const ReluMasks*);    \
    template AffineBounds<T> backsubstitute<T>(const Graph<T>&, const LayerBoxes<T>&, const Var<T>&,        \
                                               const std::vector<Index>&, Index, const ReluMasks*);         \
    template Var<T> concretize_upper<T>(const LinearBound<T>&, const VarBox<T>&, const std::vector<Index>&); \
    template IntervalBox<T> concretize<T>(const AffineBounds<T>&, const IntervalBox<T>&);                   \
    template Mat<T> margin_spec<T>(const Labels&, Index, std::vector<Index>&);                              \
    template Var<T> crown_margin_upper<T>(const Graph<T>&, const LayerBoxes<T>&, const Labels&, const ReluMasks*); \
    template Var<T> crown_ibp_margin_bounds<T>(const Graph<T>&, const VarBox<T>&, const Labels&);           \
    template Mat<T> crown_ibp_margins<T>(const Network<T>&, const BnStats<T>&, const IntervalBox<T>&, const Labels&); \
    template Var<T> fused_loss_bound_rows<T>(const Graph<T>&, const VarBox<T>&, const Labels&, const IbpResult<T>*); \
    template Var<T> fused_loss_bound<T>(const Graph<T>&, const VarBox<T>&, const Labels&, const IbpResult<T>*);

CERTKIT_INSTANTIATE_CROWN(float)
CERTKIT_INSTANTIATE_CROWN(double)

}  // namespace certkit
