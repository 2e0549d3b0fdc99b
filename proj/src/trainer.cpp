#include "certkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace certkit {

const char* to_string(RampShape r) { return r == RampShape::linear ? "linear" : "smooth"; }

RampShape ramp_shape_from_string(const std::string& name) {
    if (name == "linear") return RampShape::linear;
    if (name == "smooth") return RampShape::smooth;
    throw Error("bad_config", "unknown eps ramp '" + name + "'");
}

double EpsSchedule::progress(std::uint64_t step) const {
    if (step >= warmup_end) return 1.0;
    if (step < warmup_start) return 0.0;
    return static_cast<double>(step - warmup_start) / static_cast<double>(warmup_end - warmup_start);
}

double EpsSchedule::eps(std::uint64_t step) const {
    if (step >= warmup_end) return target;
    if (step < warmup_start) return 0.0;
    const double t = progress(step);
    if (shape == RampShape::linear) return target * t;
    // Polynomial start joined to a linear tail with matching slope at m.
    constexpr double m = 0.25, beta = 4.0;
    const double c = 1.0 / (std::pow(m, beta) + beta * std::pow(m, beta - 1) * (1 - m));
    if (t < m) return target * c * std::pow(t, beta);
    const double b = beta * c * std::pow(m, beta - 1);
    return target * ((1 - b) + b * t);
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error("bad_config", msg); };
    loss.validate();
    if (total_epochs < 1) fail("total_epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= total_epochs) fail("warmup_epochs must lie in [0, total_epochs)");
    if (std_pretrain_epochs != 0 && std_pretrain_epochs != 1) fail("std_pretrain_epochs must be 0 or 1");
    if (!(lr > 0)) fail("lr must be positive");
    for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
        if (lr_decay_epochs[i] < 0 || lr_decay_epochs[i] >= total_epochs) fail("lr decay epochs must lie in [0, total_epochs)");
        if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) fail("lr decay epochs must be strictly increasing");
    }
    if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) fail("lr_decay_factor must lie in (0, 1]");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (grad_accum_factor < 1) fail("grad_accum_factor must be >= 1");
    if (grad_accum_factor > batch_size) fail("grad_accum_factor cannot exceed batch_size");
    if (!(grad_clip_l2 > 0)) fail("grad_clip_l2 must be positive");
    if (swa.start_epoch < 0 || (swa.enabled && swa.start_epoch >= total_epochs)) fail("swa start_epoch out of range");
    if (!(eval_eps >= 0)) fail("eval_eps must be non-negative");
    if (train_subset < -1 || val_subset < -1) fail("subset sizes must be >= -1");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
    double lr = cfg.lr;
    for (int d : cfg.lr_decay_epochs)
        if (epoch >= d) lr *= cfg.lr_decay_factor;
    return lr;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    auto sm = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return sm(sm(sm(a) ^ b) ^ c);
}

template <class T>
Index fan_in(const Layer<T>& l) {
    return l.weight.cols();
}

}  // namespace

template <class T>
void ibp_init(Network<T>& net, std::uint64_t seed) {
    std::mt19937_64 gen(mix(seed, 0x1b9));
    for (auto& l : net.layers) {
        if (!l.has_weight()) continue;
        std::normal_distribution<double> n(0.0, std::sqrt(2 * M_PI) / static_cast<double>(fan_in(l)));
        for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<T>(n(gen));
        l.bias.setZero();
    }
}

template <class T>
void fan_in_init(Network<T>& net, std::uint64_t seed) {
    std::mt19937_64 gen(mix(seed, 0xfa1));
    for (auto& l : net.layers) {
        if (!l.has_weight()) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(l)));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<T>(u(gen));
        for (Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = static_cast<T>(u(gen));
    }
}

template <class T>
std::vector<double> ibp_growth_ratios(const Network<T>& net, const Mat<T>& x, double eps) {
    Tape<T> tape;
    Graph<T> g(tape, net, compute_batch_stats(net, x), false);
    const auto boxes = ibp_propagate(g, constant_box(tape, input_box(x, eps)));
    std::vector<double> widths{2 * eps};
    for (Index i : net.relu_layers()) {
        const auto& b = boxes[static_cast<std::size_t>(i + 1)];
        widths.push_back(static_cast<double>((b.upper.value() - b.lower.value()).mean()));
    }
    std::vector<double> ratios;
    for (std::size_t i = 1; i < widths.size(); ++i) ratios.push_back(widths[i] / widths[i - 1]);
    return ratios;
}

template <class T>
void Adam<T>::step(std::vector<Mat<T>*> params, const std::vector<Mat<T>>& grads, double lr) {
    if (m.empty()) {
        for (const auto& g : grads) {
            m.push_back(Mat<T>::Zero(g.rows(), g.cols()));
            v.push_back(Mat<T>::Zero(g.rows(), g.cols()));
        }
    }
    ++t;
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T c1 = static_cast<T>(1 - std::pow(beta1, static_cast<double>(t)));
    const T c2 = static_cast<T>(1 - std::pow(beta2, static_cast<double>(t)));
    const T rate = static_cast<T>(lr), e = static_cast<T>(epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grads[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
        *params[i] -= (rate * (m[i] / c1).array() / ((v[i] / c2).array().sqrt() + e)).matrix();
    }
}

template <class T>
double clip_grad_norm(std::vector<Mat<T>>& grads, double max_norm) {
    double sq = 0;
    for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& g : grads) g *= s;
    }
    return norm;
}

template <class T>
StepReport train_step(Network<T>& net, Adam<T>& opt, const Mat<T>& x, const Labels& y,
                      const std::vector<std::uint64_t>& ids, const LossSpec& spec, const ScheduleState& state,
                      double lr, int accum, double clip, std::uint64_t seed) {
    const Index n = x.rows();
    if (n == 0) throw Error("empty_batch", "training step on an empty batch");
    const BnStats<T> stats = compute_batch_stats(net, x);

    const Index k = std::min<Index>(accum, n);
    const Index chunk = (n + k - 1) / k;
    std::vector<Mat<T>> grads;
    StepReport rep;
    for (Index begin = 0; begin < n; begin += chunk) {
        const Index rows = std::min(chunk, n - begin);
        const Mat<T> xs = x.middleRows(begin, rows);
        const Labels ys(y.begin() + begin, y.begin() + begin + rows);
        const std::vector<std::uint64_t> is(ids.begin() + begin, ids.begin() + begin + rows);
        const double w = rows == n ? 1.0 : static_cast<double>(rows) / static_cast<double>(n);

        Tape<T> tape;
        Graph<T> g(tape, net, stats, true);
        LossInput<T> in{xs, ys, is, InputDomain{}, nullptr};
        const LossTerms<T> terms = compose_total_loss(g, in, spec, state, seed);
        const double total = static_cast<double>(terms.total.value()(0, 0));
        if (!std::isfinite(total))
            throw Error("nan_loss", "non-finite loss (nat=" + std::to_string(terms.nat) +
                                        ", rob=" + std::to_string(terms.rob) + ", eps=" + std::to_string(state.eps) +
                                        ", step=" + std::to_string(state.step) + ")");
        tape.backward(w == 1.0 ? terms.total : ad::scale(terms.total, static_cast<T>(w)));
        auto sub = g.gradients();
        if (grads.empty()) {
            grads = std::move(sub);
        } else {
            for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += sub[i];
        }
        rep.loss += w * total;
        rep.nat += w * terms.nat;
        rep.rob += w * terms.rob;
        rep.reg += w * terms.reg;
    }
    rep.grad_norm = clip_grad_norm(grads, clip);
    opt.step(net.parameters(), grads, lr);
    update_running_stats(net, stats);
    return rep;
}

template <class T>
void Swa<T>::update(const Network<T>& net) {
    const auto params = net.parameters();
    if (count == 0) {
        average.clear();
        for (const auto* p : params) average.push_back(*p);
    } else {
        const T w = T(1) / static_cast<T>(count + 1);
        for (std::size_t i = 0; i < params.size(); ++i) average[i] += w * (*params[i] - average[i]);
    }
    ++count;
}

template <class T>
void Swa<T>::apply(Network<T>& net) const {
    if (count == 0) return;
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = average[i];
}

template <class T>
void recompute_population_stats(Network<T>& net, const Mat<T>& x) {
    if (!net.has_batchnorm() || x.rows() == 0) return;
    const BnStats<T> s = compute_batch_stats(net, x);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].kind != LayerKind::batchnorm) continue;
        net.layers[i].running_mean = s.mean[i];
        net.layers[i].running_var = s.var[i];
    }
}

namespace {

template <class T>
EvalResult evaluate_impl(const Network<T>& net, const Dataset& data, double eps, const AttackConfig* attack,
                         Index batch) {
    EvalResult r;
    r.n = data.size();
    if (r.n == 0) return r;
    const BnStats<T> stats = net.population_stats();
    Index nat = 0, adv = 0, cert = 0;
    for (Index begin = 0; begin < r.n; begin += batch) {
        const Index rows = std::min(batch, r.n - begin);
        std::vector<Index> idx(static_cast<std::size_t>(rows));
        std::iota(idx.begin(), idx.end(), begin);
        const Mat<T> x = data.batch<T>(idx);
        const Labels y(data.labels.begin() + begin, data.labels.begin() + begin + rows);
        std::vector<std::uint64_t> ids(idx.begin(), idx.end());

        const Mat<T> logits = forward(net, x, BnMode::population);
        const auto box = input_box(x, eps);
        const Mat<T> margins = ibp_margins(net, stats, box, y);
        Mat<T> adv_logits;
        if (attack) {
            const auto res = pgd_attack(net, stats, x, y, box, eps, *attack, ids);
            adv_logits = forward(net, res.x_adv, BnMode::population);
        }
        for (Index b = 0; b < rows; ++b) {
            const int yb = y[static_cast<std::size_t>(b)];
            Index pred;
            logits.row(b).maxCoeff(&pred);
            const bool ok = pred == yb;
            bool certified = true;
            for (Index i = 0; i < margins.cols(); ++i)
                if (i != yb && !(margins(b, i) < 0)) certified = false;
            certified = certified && ok;
            bool robust = ok;
            if (attack && ok && !certified) {
                Index apred;
                adv_logits.row(b).maxCoeff(&apred);
                robust = apred == yb;
            }
            nat += ok;
            adv += robust;
            cert += certified;
        }
    }
    const double n = static_cast<double>(r.n);
    r.nat_acc = nat / n;
    r.adv_acc = attack ? adv / n : r.nat_acc;
    r.cert_acc_ibp = cert / n;
    return r;
}

}  // namespace

template <class T>
EvalResult evaluate(const Network<T>& net, const Dataset& data, double eps, const AttackConfig& attack, Index batch) {
    return evaluate_impl(net, data, eps, &attack, batch);
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::string out = "epoch,eps,lr,loss_nat,loss_rob,loss_reg,nat_acc,cert_acc_ibp\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f,%.6f\n", r.epoch, r.eps, r.lr, r.loss_nat,
                      r.loss_rob, r.loss_reg, r.nat_acc, r.cert_acc_ibp);
        out += buf;
    }
    return out;
}

template <class T>
Network<T> build_network(const TrainConfig& cfg, const Dataset& train) {
    Network<T> net = make_architecture<T>(cfg.architecture, train.shape, train.num_classes, cfg.batchnorm);
    if (cfg.normalize_input) channel_moments(train, net.norm.mean, net.norm.std);
    if (is_certified_method(cfg.loss.method)) {
        ibp_init(net, cfg.seed);
    } else {
        fan_in_init(net, cfg.seed);
    }
    return net;
}

template <class T>
TrainResult<T> train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                     const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw Error("empty_dataset", "training set is empty");
    TrainResult<T> res;
    res.net = build_network<T>(cfg, train_set);
    Network<T>& net = res.net;

    LossSpec spec = cfg.loss;
    if (spec.method == LossMethod::taps || spec.method == LossMethod::staps) {
        const Index m = net.relu_count();
        if (spec.taps_split < 0 && spec.taps_classifier_size >= m)
            spec.taps_classifier_size = static_cast<int>(std::max<Index>(m - 1, 0));
        taps_split_index(net, spec);
    }
    LossSpec natural = spec;
    natural.method = LossMethod::natural;
    natural.w_rob = 0;
    natural.warmup_reg_weight = 0;

    const Index n = train_set.size();
    const Index steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    EpsSchedule sched;
    sched.target = spec.train_eps;
    sched.warmup_end = static_cast<std::uint64_t>(cfg.warmup_epochs * steps_per_epoch);
    sched.shape = cfg.ramp;

    Adam<T> opt;
    Swa<T> swa;
    std::uint64_t step = 0, global_step = 0;
    const int epochs = cfg.std_pretrain_epochs + cfg.total_epochs;
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (int e = 0; e < epochs; ++e) {
        const bool pretrain = e < cfg.std_pretrain_epochs;
        const int epoch = e - cfg.std_pretrain_epochs;  // -1 for the pretrain epoch
        const double lr = pretrain ? cfg.lr : learning_rate(cfg, epoch);
        std::iota(order.begin(), order.end(), Index(0));
        std::mt19937_64 shuffle_gen(mix(cfg.seed, 0x5f, static_cast<std::uint64_t>(e)));
        std::shuffle(order.begin(), order.end(), shuffle_gen);

        EpochMetrics em;
        em.epoch = e;
        em.lr = lr;
        for (Index s = 0; s < steps_per_epoch; ++s) {
            const Index begin = s * cfg.batch_size, rows = std::min(cfg.batch_size, n - begin);
            std::vector<Index> idx(order.begin() + begin, order.begin() + begin + rows);
            Mat<T> x = train_set.batch<T>(idx);
            if (cfg.augment) {
                std::mt19937_64 aug(mix(cfg.seed, 0xa6, global_step));
                augment_crop_flip(x, train_set.shape, 2, aug);
            }
            Labels y;
            std::vector<std::uint64_t> ids;
            for (Index i : idx) {
                y.push_back(train_set.labels[static_cast<std::size_t>(i)]);
                ids.push_back(static_cast<std::uint64_t>(i));
            }
            ScheduleState st;
            st.step = step;
            if (!pretrain) {
                st.eps = sched.eps(step);
                st.warmup_active = epoch < cfg.warmup_epochs;
                st.warmup_progress = sched.progress(step);
            }
            const StepReport rep = train_step(net, opt, x, y, ids, pretrain ? natural : spec, st, lr,
                                              cfg.grad_accum_factor, cfg.grad_clip_l2, mix(cfg.seed, 0x57, global_step));
            em.eps = st.eps;
            em.loss_nat += rep.nat / static_cast<double>(steps_per_epoch);
            em.loss_rob += rep.rob / static_cast<double>(steps_per_epoch);
            em.loss_reg += rep.reg / static_cast<double>(steps_per_epoch);
            em.loss_total += rep.loss / static_cast<double>(steps_per_epoch);
            ++global_step;
            if (!pretrain) ++step;
        }
        if (cfg.swa.enabled && !pretrain && epoch >= cfg.swa.start_epoch) swa.update(net);
        const double eval_eps = cfg.eval_eps > 0 ? cfg.eval_eps : spec.train_eps;
        const EvalResult ev = evaluate_impl(net, val_set.empty() ? train_set : val_set, eval_eps,
                                            static_cast<const AttackConfig*>(nullptr), 256);
        em.nat_acc = ev.nat_acc;
        em.cert_acc_ibp = ev.cert_acc_ibp;
        res.metrics.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    if (cfg.swa.enabled) swa.apply(net);
    std::vector<Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index(0));
    recompute_population_stats(net, train_set.batch<T>(all));
    return res;
}

#define CERTKIT_INSTANTIATE_TRAINER(T)                                                                           \
    template void ibp_init<T>(Network<T>&, std::uint64_t);                                                     \
    template void fan_in_init<T>(Network<T>&, std::uint64_t);                                                  \
    template std::vector<double> ibp_growth_ratios<T>(const Network<T>&, const Mat<T>&, double);               \
    template struct Adam<T>;                                                                                   \
    template double clip_grad_norm<T>(std::vector<Mat<T>>&, double);                                           \
    template StepReport train_step<T>(Network<T>&, Adam<T>&, const Mat<T>&, const Labels&,                     \
                                      const std::vector<std::uint64_t>&, const LossSpec&, const ScheduleState&, \
                                      double, int, double, std::uint64_t);                                     \
    template struct Swa<T>;                                                                                    \
    template void recompute_population_stats<T>(Network<T>&, const Mat<T>&);                                   \
    template EvalResult evaluate<T>(const Network<T>&, const Dataset&, double, const AttackConfig&, Index);     \
    template Network<T> build_network<T>(const TrainConfig&, const Dataset&);                                  \
    template TrainResult<T> train<T>(const TrainConfig&, const Dataset&, const Dataset&, const EpochCallback&);

CERTKIT_INSTANTIATE_TRAINER(float)
CERTKIT_INSTANTIATE_TRAINER(double)

}  // namespace certkit
