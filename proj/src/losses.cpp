#include "certkit/losses.hpp"

#include <cmath>

namespace certkit {

const char* to_string(LossMethod m) {
    switch (m) {
        case LossMethod::natural: return "natural";
        case LossMethod::pgd: return "pgd";
        case LossMethod::ibp: return "ibp";
        case LossMethod::crown_ibp: return "crown_ibp";
        case LossMethod::sabr: return "sabr";
        case LossMethod::taps: return "taps";
        case LossMethod::staps: return "staps";
        case LossMethod::mtl_ibp: return "mtl_ibp";
    }
    return "unknown";
}

LossMethod loss_method_from_string(const std::string& name) {
    for (auto m : {LossMethod::natural, LossMethod::pgd, LossMethod::ibp, LossMethod::crown_ibp, LossMethod::sabr,
                   LossMethod::taps, LossMethod::staps, LossMethod::mtl_ibp})
        if (name == to_string(m)) return m;
    throw Error("bad_config", "unknown loss method '" + name + "'");
}

bool is_certified_method(LossMethod m) { return m != LossMethod::natural && m != LossMethod::pgd; }

void LossSpec::validate() const {
    auto fail = [](const std::string& msg) { throw Error("bad_config", msg); };
    if (!(w_rob >= 0 && w_rob <= 1)) fail("w_rob must lie in [0, 1]");
    if (!(train_eps >= 0)) fail("train_eps must be non-negative");
    if (!(sabr_lambda > 0 && sabr_lambda <= 1)) fail("sabr_lambda must lie in (0, 1]");
    if (!(relu_shrink > 0 && relu_shrink <= 1)) fail("relu_shrink must lie in (0, 1]");
    if (taps_classifier_size < 0) fail("taps classifier size must be >= 0");
    if (!(taps_grad_scale > 0)) fail("taps_grad_scale must be positive");
    if (!(mtl_tau >= 0 && mtl_tau <= 1)) fail("mtl_tau must lie in [0, 1]");
    if (!(attack_eps_scale >= 1)) fail("attack_eps_scale must be >= 1");
    if (!(l1_weight >= 0)) fail("l1_weight must be non-negative");
    if (!(warmup_reg_weight >= 0)) fail("warmup_reg_weight must be non-negative");
    attack.validate();
}

template <class T>
Index taps_split_index(const Network<T>& net, const LossSpec& spec) {
    const auto relus = net.relu_layers();
    if (spec.taps_split >= 0) {
        const Index s = spec.taps_split;
        if (s <= 0 || s >= net.size() || net.layers[static_cast<std::size_t>(s - 1)].kind != LayerKind::relu)
            throw Error("bad_split", "taps split must follow a relu layer");
        return s;
    }
    const Index m = static_cast<Index>(relus.size()), k = spec.taps_classifier_size;
    if (k < 0 || k >= m)
        throw Error("bad_split", "taps classifier size " + std::to_string(k) + " needs more than " +
                                     std::to_string(k) + " relu layers, network has " + std::to_string(m));
    return relus[static_cast<std::size_t>(m - k - 1)] + 1;
}

namespace {

template <class T>
AttackConfig seeded(const LossSpec& spec, std::uint64_t seed) {
    AttackConfig cfg = spec.attack;
    cfg.seed = seed;
    return cfg;
}

template <class T>
using Cache = FrozenAttackCache<T>;

template <class T>
bool replaying(const LossInput<T>& in) {
    return in.cache && in.cache->mode == Cache<T>::Mode::replay;
}

template <class T>
bool recording(const LossInput<T>& in) {
    return in.cache && in.cache->mode == Cache<T>::Mode::record;
}

template <class T>
const Mat<T>& replayed(const std::optional<Mat<T>>& slot, const char* what) {
    if (!slot) throw Error("cache_miss", std::string("no recorded ") + what + " to replay");
    return *slot;
}

// Input-space PGD on cross-entropy under the step's statistics.
template <class T>
Mat<T> adversarial_point(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                         std::uint64_t seed) {
    if (replaying(in)) return replayed(in.cache->x_adv, "attack point");
    AttackConfig cfg = seeded<T>(spec, seed);
    cfg.objective = AttackObjective::cross_entropy;
    const auto box = input_box(in.x, eps, in.domain);
    Mat<T> x_adv = pgd_attack(g.net(), g.stats(), in.x, in.y, box, eps, cfg, in.sample_ids).x_adv;
    if (recording(in)) in.cache->x_adv = x_adv;
    return x_adv;
}

// z = l + t (u - l) with t held fixed; gradients reach l and u scaled by c.
template <class T>
Var<T> taps_connector(const Var<T>& l, const Var<T>& u, const Mat<T>& t, T c) {
    Tape<T>* tape = l.tape();
    Mat<T> out = (l.value().array() + t.array() * (u.value() - l.value()).array()).matrix();
    const int il = l.id(), iu = u.id();
    return tape->push(std::move(out), {l, u}, [tape, il, iu, t, c](const Mat<T>& g) {
        tape->accumulate(il, (c * (T(1) - t.array()) * g.array()).matrix());
        tape->accumulate(iu, (c * t.array() * g.array()).matrix());
    });
}

template <class T>
IntervalBox<T> sabr_box(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                        std::uint64_t seed) {
    const T rho = static_cast<T>(spec.sabr_lambda * eps);
    const T lo = static_cast<T>(in.domain.lower), hi = static_cast<T>(in.domain.upper);
    Mat<T> center;
    if (replaying(in)) {
        center = replayed(in.cache->sabr_center, "sabr center");
    } else if (spec.sabr_lambda >= 1) {
        center = in.x;
    } else {
        const Mat<T> x_adv = adversarial_point(g, in, eps, spec, seed);
        const T slack = static_cast<T>(eps) - rho;
        center = x_adv.cwiseMax((in.x.array() - slack).matrix()).cwiseMin((in.x.array() + slack).matrix());
    }
    if (recording(in)) in.cache->sabr_center = center;
    IntervalBox<T> box;
    box.lower = (center.array() - rho).cwiseMax(lo).cwiseMin(hi).matrix();
    box.upper = (center.array() + rho).cwiseMax(lo).cwiseMin(hi).matrix();
    if (eps == 0) box.lower = box.upper = center;
    return box;
}

template <class T>
RobustLoss<T> taps_on_box(const Graph<T>& g, const LossInput<T>& in, const IntervalBox<T>& box,
                          const LossSpec& spec, std::uint64_t seed) {
    const auto& net = g.net();
    Tape<T>& tape = g.tape();
    const Index split = taps_split_index(net, spec);
    const Index batch = in.x.rows(), k = net.num_classes;
    RobustLoss<T> res;
    res.boxes = ibp_propagate(g, constant_box(tape, box), 0, split, static_cast<T>(spec.relu_shrink));
    const VarBox<T>& latent = res.boxes.back();

    std::vector<Index> cls, lab, sample;
    for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < k; ++i) {
            cls.push_back(i);
            lab.push_back(in.y[static_cast<std::size_t>(b)]);
            sample.push_back(b);
        }
    const Var<T> l = ad::gather_rows(latent.lower, sample);
    const Var<T> u = ad::gather_rows(latent.upper, sample);

    Mat<T> t;
    if (replaying(in)) {
        t = replayed(in.cache->taps_fraction, "taps position");
    } else {
        const IntervalBox<T> lbox{latent.lower.value(), latent.upper.value()};
        const Mat<T> z = latent_pgd(net, g.stats(), split, lbox, in.y, seeded<T>(spec, seed), in.sample_ids).z;
        const Mat<T> width = u.value() - l.value();
        t = Mat<T>::Constant(z.rows(), z.cols(), T(0.5));
        for (Index r = 0; r < z.rows(); ++r)
            for (Index j = 0; j < z.cols(); ++j)
                if (width(r, j) > 0) t(r, j) = std::clamp((z(r, j) - l.value()(r, j)) / width(r, j), T(0), T(1));
    }
    if (recording(in)) in.cache->taps_fraction = t;

    const Var<T> z = taps_connector(l, u, t, static_cast<T>(spec.taps_grad_scale));
    const Var<T> logits = g.forward(z, split, net.size());
    const Var<T> margins = ad::reshape(ad::sub(ad::pick(logits, cls), ad::pick(logits, lab)), batch, k);
    res.loss = ad::cross_entropy(margins, in.y);
    return res;
}

}  // namespace

template <class T>
RobustLoss<T> pgd_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                       std::uint64_t seed) {
    const Mat<T> x_adv = adversarial_point(g, in, eps, spec, seed);
    return {ad::cross_entropy(g.forward(g.tape().constant(x_adv)), in.y), {}};
}

template <class T>
RobustLoss<T> ibp_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec&) {
    const auto box = input_box(in.x, eps, in.domain);
    auto res = ibp_bounds(g, constant_box(g.tape(), box), in.y);
    return {ad::cross_entropy(res.margin_upper, in.y), std::move(res.boxes)};
}

template <class T>
RobustLoss<T> crown_ibp_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec&) {
    const auto box = constant_box(g.tape(), input_box(in.x, eps, in.domain));
    auto ibp = ibp_bounds(g, box, in.y);
    Var<T> loss = fused_loss_bound(g, box, in.y, &ibp);
    return {loss, std::move(ibp.boxes)};
}

template <class T>
RobustLoss<T> sabr_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                        std::uint64_t seed) {
    const auto box = sabr_box(g, in, eps, spec, seed);
    auto res = ibp_bounds(g, constant_box(g.tape(), box), in.y, static_cast<T>(spec.relu_shrink));
    return {ad::cross_entropy(res.margin_upper, in.y), std::move(res.boxes)};
}

template <class T>
RobustLoss<T> taps_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                        std::uint64_t seed) {
    return taps_on_box(g, in, input_box(in.x, eps, in.domain), spec, seed);
}

template <class T>
RobustLoss<T> staps_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                         std::uint64_t seed) {
    return taps_on_box(g, in, sabr_box(g, in, eps, spec, seed), spec, seed);
}

template <class T>
RobustLoss<T> mtl_ibp_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                           std::uint64_t seed) {
    const T tau = static_cast<T>(spec.mtl_tau);
    const RobustLoss<T> adv = pgd_loss(g, in, spec.attack_eps_scale * eps, spec, seed);
    RobustLoss<T> cert = ibp_loss(g, in, eps, spec);
    return {ad::add(ad::scale(adv.loss, T(1) - tau), ad::scale(cert.loss, tau)), std::move(cert.boxes)};
}

template <class T>
RobustLoss<T> robust_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                          std::uint64_t seed) {
    switch (spec.method) {
        case LossMethod::natural: return {ad::cross_entropy(g.forward(g.tape().constant(in.x)), in.y), {}};
        case LossMethod::pgd: return pgd_loss(g, in, eps, spec, seed);
        case LossMethod::ibp: return ibp_loss(g, in, eps, spec);
        case LossMethod::crown_ibp: return crown_ibp_loss(g, in, eps, spec);
        case LossMethod::sabr: return sabr_loss(g, in, eps, spec, seed);
        case LossMethod::taps: return taps_loss(g, in, eps, spec, seed);
        case LossMethod::staps: return staps_loss(g, in, eps, spec, seed);
        case LossMethod::mtl_ibp: return mtl_ibp_loss(g, in, eps, spec, seed);
    }
    throw Error("bad_config", "unknown loss method");
}

namespace {

template <class T>
Var<T> row_mean(const Var<T>& v) {
    return ad::scale(ad::rowsum(v), T(1) / static_cast<T>(v.value().cols()));
}

// 1 - min(r, 1/r) for r = (a + d) / (b + d), per row.
template <class T>
Var<T> imbalance(const Var<T>& a, const Var<T>& b, T delta) {
    const Var<T> r = ad::div(ad::add_scalar(a, delta), ad::add_scalar(b, delta));
    const Var<T> inv = ad::div(ad::add_scalar(b, delta), ad::add_scalar(a, delta));
    return ad::add_scalar(ad::scale(ad::minimum(r, inv), T(-1)), T(1));
}

}  // namespace

template <class T>
Var<T> warmup_regularizer(const Graph<T>& g, const LayerBoxes<T>& boxes, const ScheduleState& state, double weight) {
    Tape<T>& tape = g.tape();
    const T factor = static_cast<T>(weight * (1.0 - std::clamp(state.warmup_progress, 0.0, 1.0)));
    if (!state.warmup_active || factor <= T(0) || boxes.empty()) return tape.constant(Mat<T>::Zero(1, 1));
    const T tol = T(0.5), delta = T(1e-12);
    const Var<T> w0 = row_mean(ad::sub(boxes[0].upper, boxes[0].lower));

    Var<T> acc;
    int layers = 0;
    for (Index i : g.net().relu_layers()) {
        if (i >= static_cast<Index>(boxes.size())) break;
        const VarBox<T>& pre = boxes[static_cast<std::size_t>(i)];
        const Var<T> width = row_mean(ad::sub(pre.upper, pre.lower));
        const Var<T> ratio = ad::div(ad::add_scalar(w0, delta), ad::add_scalar(width, delta));
        const Var<T> tight = ad::scale(ad::relu(ad::add_scalar(ad::scale(ratio, T(-1)), tol)), T(1) / tol);

        const Var<T> c = ad::scale(ad::add(pre.lower, pre.upper), T(0.5));
        const Var<T> pos = ad::relu(c), neg = ad::relu(ad::scale(c, T(-1)));
        const Var<T> bal1 = imbalance(row_mean(pos), row_mean(neg), delta);
        const Var<T> bal2 = imbalance(row_mean(ad::square(pos)), row_mean(ad::square(neg)), delta);

        const Var<T> term = ad::mean(ad::add(tight, ad::add(bal1, bal2)));
        acc = layers == 0 ? term : ad::add(acc, term);
        ++layers;
    }
    if (layers == 0) return tape.constant(Mat<T>::Zero(1, 1));
    return ad::scale(acc, factor / static_cast<T>(layers));
}

template <class T>
Var<T> l1_regularizer(const Graph<T>& g, double l1) {
    Var<T> acc = g.tape().constant(Mat<T>::Zero(1, 1));
    for (Index i = 0; i < g.net().size(); ++i)
        if (g.net().layers[static_cast<std::size_t>(i)].has_weight()) acc = ad::add(acc, ad::sum(ad::abs(g.weight(i))));
    return ad::scale(acc, static_cast<T>(l1));
}

template <class T>
LossTerms<T> compose_total_loss(const Graph<T>& g, const LossInput<T>& in, const LossSpec& spec,
                                const ScheduleState& state, std::uint64_t seed) {
    Tape<T>& tape = g.tape();
    const T w = static_cast<T>(spec.w_rob);
    LossTerms<T> out;
    const Var<T> nat = ad::cross_entropy(g.forward(tape.constant(in.x)), in.y);
    out.nat = static_cast<double>(nat.value()(0, 0));

    RobustLoss<T> rob;
    if (spec.method == LossMethod::natural) {
        rob.loss = nat;
    } else {
        rob = robust_loss(g, in, state.eps, spec, seed);
    }
    out.rob = static_cast<double>(rob.loss.value()(0, 0));

    if (spec.method == LossMethod::natural || w == T(0)) {
        out.total = nat;
    } else if (w == T(1)) {
        out.total = rob.loss;
    } else {
        out.total = ad::add(ad::scale(nat, T(1) - w), ad::scale(rob.loss, w));
    }

    Var<T> reg;
    bool has_reg = false;
    if (spec.l1_weight > 0) {
        reg = l1_regularizer(g, spec.l1_weight);
        has_reg = true;
    }
    if (state.warmup_active && spec.warmup_reg_weight > 0 && is_certified_method(spec.method) && !rob.boxes.empty()) {
        const Var<T> wr = warmup_regularizer(g, rob.boxes, state, spec.warmup_reg_weight);
        reg = has_reg ? ad::add(reg, wr) : wr;
        has_reg = true;
    }
    if (has_reg) {
        out.reg = static_cast<double>(reg.value()(0, 0));
        out.total = ad::add(out.total, reg);
    }
    return out;
}

#define CERTKIT_INSTANTIATE_LOSSES(T)                                                                                  \
    template Index taps_split_index<T>(const Network<T>&, const LossSpec&);                                            \
    template RobustLoss<T> pgd_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&, std::uint64_t);  \
    template RobustLoss<T> ibp_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&);                 \
    template RobustLoss<T> crown_ibp_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&);           \
    template RobustLoss<T> sabr_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&, std::uint64_t); \
    template RobustLoss<T> taps_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&, std::uint64_t); \
    template RobustLoss<T> staps_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&,                \
                                         std::uint64_t);                                                               \
    template RobustLoss<T> mtl_ibp_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&,              \
                                           std::uint64_t);                                                             \
    template RobustLoss<T> robust_loss<T>(const Graph<T>&, const LossInput<T>&, double, const LossSpec&,               \
                                          std::uint64_t);                                                              \
    template Var<T> warmup_regularizer<T>(const Graph<T>&, const LayerBoxes<T>&, const ScheduleState&, double);        \
    template Var<T> l1_regularizer<T>(const Graph<T>&, double);                                                        \
    template LossTerms<T> compose_total_loss<T>(const Graph<T>&, const LossInput<T>&, const LossSpec&,                 \
                                                const ScheduleState&, std::uint64_t);

CERTKIT_INSTANTIATE_LOSSES(float)
CERTKIT_INSTANTIATE_LOSSES(double)

}  // namespace certkit
