#include "certkit/ibp.hpp"

namespace certkit {

template <class T>
IntervalBox<T> input_box(const Mat<T>& x, double eps, InputDomain domain) {
    if (eps < 0) throw Error("bad_eps", "eps must be non-negative");
    if (domain.lower > domain.upper) throw Error("bad_domain", "domain lower exceeds upper");
    const T e = static_cast<T>(eps);
    const T lo = static_cast<T>(domain.lower), hi = static_cast<T>(domain.upper);
    IntervalBox<T> box;
    box.lower = (x.array() - e).cwiseMax(lo).cwiseMin(hi).matrix();
    box.upper = (x.array() + e).cwiseMax(lo).cwiseMin(hi).matrix();
    if (eps == 0) box.lower = box.upper = x;
    return box;
}

template <class T>
VarBox<T> constant_box(Tape<T>& tape, const IntervalBox<T>& box) {
    return {tape.constant(box.lower), tape.constant(box.upper)};
}

template <class T>
LayerBoxes<T> ibp_propagate(const Graph<T>& g, const VarBox<T>& in, Index begin, Index end, T relu_shrink) {
    const auto& net = g.net();
    if (end < 0) end = net.size();
    if (begin < 0 || begin > end || end > net.size()) throw Error("bad_range", "ibp_propagate: bad layer range");
    LayerBoxes<T> boxes;
    boxes.reserve(static_cast<std::size_t>(end - begin + 1));
    boxes.push_back(in);
    VarBox<T> cur = in;
    if (begin == 0 && !net.norm.identity()) {
        // Normalization has a positive diagonal, so endpoints map to endpoints.
        cur = {g.norm_center(cur.lower), g.norm_center(cur.upper)};
    }
    for (Index i = begin; i < end; ++i) {
        const auto kind = net.layers[static_cast<std::size_t>(i)].kind;
        if (kind == LayerKind::relu) {
            VarBox<T> next{ad::relu(cur.lower), ad::relu(cur.upper)};
            if (relu_shrink != T(1)) next = {ad::scale(next.lower, relu_shrink), ad::scale(next.upper, relu_shrink)};
            cur = next;
        } else if (kind == LayerKind::flatten) {
        } else {
            const Var<T> c = ad::scale(ad::add(cur.lower, cur.upper), T(0.5));
            const Var<T> r = ad::scale(ad::sub(cur.upper, cur.lower), T(0.5));
            const Var<T> c2 = g.affine_center(i, c);
            const Var<T> r2 = g.affine_radius(i, r);
            cur = {ad::sub(c2, r2), ad::add(c2, r2)};
        }
        boxes.push_back(cur);
    }
    return boxes;
}

namespace {

// Rows (b, i) of W_i - W_y and b_i - b_y for the final linear layer.
template <class T>
void margin_rows(const Graph<T>& g, const Labels& y, Index batch, Var<T>& dw, Var<T>& db, std::vector<Index>& sample) {
    const Index last = g.net().size() - 1;
    const Index k = g.net().num_classes;
    std::vector<Index> cls, lab;
    sample.clear();
    for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < k; ++i) {
            sample.push_back(b);
            cls.push_back(i);
            lab.push_back(y[static_cast<std::size_t>(b)]);
        }
    const Var<T>& w = g.weight(last);
    const Var<T> bt = ad::reshape(g.bias(last), k, 1);
    dw = ad::sub(ad::gather_rows(w, cls), ad::gather_rows(w, lab));
    db = ad::sub(ad::gather_rows(bt, cls), ad::gather_rows(bt, lab));
}

template <class T>
Var<T> elided_margin(const Graph<T>& g, const VarBox<T>& in, const Labels& y, T sign) {
    const auto& net = g.net();
    if (net.layers.back().kind != LayerKind::linear) throw Error("bad_network", "the final layer must be linear");
    const Index batch = in.lower.rows();
    if (static_cast<Index>(y.size()) != batch) throw Error("shape_mismatch", "one label per sample");
    for (int label : y)
        if (label < 0 || label >= net.num_classes) throw Error("bad_label", "label out of range");
    Var<T> dw, db;
    std::vector<Index> sample;
    margin_rows(g, y, batch, dw, db, sample);
    const Var<T> c = ad::gather_rows(ad::scale(ad::add(in.lower, in.upper), T(0.5)), sample);
    const Var<T> r = ad::gather_rows(ad::scale(ad::sub(in.upper, in.lower), T(0.5)), sample);
    Var<T> out = ad::add(ad::rowsum(ad::mul(dw, c)), db);
    out = ad::add(out, ad::scale(ad::rowsum(ad::mul(ad::abs(dw), r)), sign));
    return ad::reshape(out, batch, net.num_classes);
}

}  // namespace

template <class T>
Var<T> ibp_margin_upper(const Graph<T>& g, const VarBox<T>& last_input, const Labels& y) {
    return elided_margin(g, last_input, y, T(1));
}

template <class T>
Var<T> ibp_margin_lower(const Graph<T>& g, const VarBox<T>& last_input, const Labels& y) {
    return elided_margin(g, last_input, y, T(-1));
}

template <class T>
Var<T> ibp_margin_upper_naive(const Graph<T>& g, const VarBox<T>& logits_box, const Labels& y) {
    Tape<T>& tape = g.tape();
    const Index batch = logits_box.upper.rows();
    std::vector<Index> cols(y.begin(), y.end());
    const Var<T> ly = ad::pick(logits_box.lower, cols);
    Mat<T> ones = Mat<T>::Ones(1, g.net().num_classes);
    Var<T> m = ad::sub(logits_box.upper, ad::matmul(ly, tape.constant(ones)));
    Mat<T> mask = Mat<T>::Ones(batch, g.net().num_classes);
    for (Index b = 0; b < batch; ++b) mask(b, y[static_cast<std::size_t>(b)]) = T(0);
    return ad::mul(m, tape.constant(mask));
}

template <class T>
IbpResult<T> ibp_bounds(const Graph<T>& g, const VarBox<T>& in, const Labels& y, T relu_shrink) {
    IbpResult<T> res;
    const Index last = g.net().size() - 1;
    res.boxes = ibp_propagate(g, in, 0, last, relu_shrink);
    res.margin_upper = ibp_margin_upper(g, res.boxes.back(), y);
    return res;
}

template <class T>
Var<T> ibp_robust_loss(const Graph<T>& g, const Mat<T>& x, const Labels& y, double eps, InputDomain domain) {
    const auto box = input_box(x, eps, domain);
    const auto res = ibp_bounds(g, constant_box(g.tape(), box), y);
    return ad::cross_entropy(res.margin_upper, y);
}

template <class T>
Mat<T> ibp_margins(const Network<T>& net, const BnStats<T>& stats, const IntervalBox<T>& box, const Labels& y) {
    Tape<T> tape;
    Graph<T> g(tape, net, stats, false);
    return ibp_bounds(g, constant_box(tape, box), y).margin_upper.value();
}

#define CERTKIT_INSTANTIATE_IBP(T)                                                                       \
    template IntervalBox<T> input_box<T>(const Mat<T>&, double, InputDomain);                           \
    template VarBox<T> constant_box<T>(Tape<T>&, const IntervalBox<T>&);                                \
    template LayerBoxes<T> ibp_propagate<T>(const Graph<T>&, const VarBox<T>&, Index, Index, T);        \
    template Var<T> ibp_margin_upper<T>(const Graph<T>&, const VarBox<T>&, const Labels&);              \
    template Var<T> ibp_margin_lower<T>(const Graph<T>&, const VarBox<T>&, const Labels&);              \
    template Var<T> ibp_margin_upper_naive<T>(const Graph<T>&, const VarBox<T>&, const Labels&);        \
    template IbpResult<T> ibp_bounds<T>(const Graph<T>&, const VarBox<T>&, const Labels&, T);           \
    template Var<T> ibp_robust_loss<T>(const Graph<T>&, const Mat<T>&, const Labels&, double, InputDomain); \
    template Mat<T> ibp_margins<T>(const Network<T>&, const BnStats<T>&, const IntervalBox<T>&, const Labels&);

CERTKIT_INSTANTIATE_IBP(float)
CERTKIT_INSTANTIATE_IBP(double)

}  // namespace certkit
