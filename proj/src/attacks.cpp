#include "certkit/attacks.hpp"

namespace certkit {

const char* to_string(AttackObjective o) {
    switch (o) {
        case AttackObjective::cross_entropy: return "cross_entropy";
        case AttackObjective::margin: return "margin";
        case AttackObjective::max_margin: return "max_margin";
    }
    return "unknown";
}

AttackObjective attack_objective_from_string(const std::string& name) {
    if (name == "cross_entropy") return AttackObjective::cross_entropy;
    if (name == "margin") return AttackObjective::margin;
    if (name == "max_margin") return AttackObjective::max_margin;
    throw Error("bad_config", "unknown attack objective '" + name + "'");
}

void AttackConfig::validate() const {
    if (steps < 1) throw Error("bad_config", "attack steps must be >= 1");
    if (restarts < 1) throw Error("bad_config", "attack restarts must be >= 1");
    if (!(step_size > 0)) throw Error("bad_config", "attack step_size must be > 0");
    if (objective == AttackObjective::margin && target_class < 0)
        throw Error("bad_config", "margin objective needs a target class");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<std::uint64_t> default_ids(Index n, const std::vector<std::uint64_t>& ids) {
    if (!ids.empty()) {
        if (static_cast<Index>(ids.size()) != n) throw Error("shape_mismatch", "one sample id per row");
        return ids;
    }
    std::vector<std::uint64_t> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i);
    return out;
}

// Objective rows and their gradient with respect to x.
template <class T>
Mat<T> objective_and_grad(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x, const Labels& y,
                          const AttackConfig& cfg, Mat<T>* grad) {
    Tape<T> tape;
    Graph<T> g(tape, net, stats, false);
    const Var<T> xv = grad ? tape.variable(x) : tape.constant(x);
    const Var<T> logits = g.forward(xv);
    Var<T> obj;
    std::vector<Index> ycols(y.begin(), y.end());
    if (cfg.objective == AttackObjective::cross_entropy) {
        obj = ad::cross_entropy_rows(logits, y);
    } else {
        std::vector<Index> target(y.size());
        const Mat<T>& z = logits.value();
        for (std::size_t b = 0; b < y.size(); ++b) {
            if (cfg.objective == AttackObjective::margin) {
                target[b] = cfg.target_class;
                continue;
            }
            Index best = -1;
            for (Index i = 0; i < z.cols(); ++i) {
                if (i == y[b]) continue;
                if (best < 0 || z(static_cast<Index>(b), i) > z(static_cast<Index>(b), best)) best = i;
            }
            target[b] = best < 0 ? y[b] : best;
        }
        obj = ad::sub(ad::pick(logits, target), ad::pick(logits, ycols));
    }
    if (grad) {
        tape.backward(ad::sum(obj));
        *grad = tape.grad(xv);
    }
    return obj.value();
}

template <class T>
void keep_best(const Mat<T>& cand, const Mat<T>& val, Mat<T>& best_x, Mat<T>& best_val) {
    for (Index b = 0; b < cand.rows(); ++b)
        if (val(b, 0) > best_val(b, 0)) {
            best_val(b, 0) = val(b, 0);
            best_x.row(b) = cand.row(b);
        }
}

}  // namespace

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t stream) {
    return std::mt19937_64(splitmix(splitmix(seed) ^ splitmix(sample_id * 2654435761ULL + stream)));
}

template <class T>
Mat<T> attack_objective(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x, const Labels& y,
                        const AttackConfig& cfg) {
    return objective_and_grad(net, stats, x, y, cfg, static_cast<Mat<T>*>(nullptr));
}

template <class T>
AttackResult<T> pgd_attack(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x, const Labels& y,
                           const IntervalBox<T>& box, double eps, const AttackConfig& cfg,
                           const std::vector<std::uint64_t>& sample_ids) {
    cfg.validate();
    const Index n = x.rows(), d = x.cols();
    if (static_cast<Index>(y.size()) != n) throw Error("shape_mismatch", "one label per sample");
    const auto ids = default_ids(n, sample_ids);
    AttackResult<T> res;
    res.x_adv = x;
    res.loss = objective_and_grad(net, stats, x, y, cfg, static_cast<Mat<T>*>(nullptr));
    if (eps <= 0 || n == 0) return res;
    const T step = static_cast<T>(cfg.step_size * eps);

    for (int restart = 0; restart < cfg.restarts; ++restart) {
        Mat<T> cur = x;
        if (cfg.random_init) {
            for (Index b = 0; b < n; ++b) {
                auto gen = sample_rng(cfg.seed, ids[static_cast<std::size_t>(b)], static_cast<std::uint64_t>(restart));
                std::uniform_real_distribution<double> u(0.0, 1.0);
                for (Index j = 0; j < d; ++j)
                    cur(b, j) = box.lower(b, j) + static_cast<T>(u(gen)) * (box.upper(b, j) - box.lower(b, j));
            }
        }
        for (int s = 0; s < cfg.steps; ++s) {
            Mat<T> grad;
            const Mat<T> val = objective_and_grad(net, stats, cur, y, cfg, &grad);
            keep_best(cur, val, res.x_adv, res.loss);
            cur = (cur.array() + step * grad.array().sign()).matrix();
            cur = cur.cwiseMax(box.lower).cwiseMin(box.upper);
        }
        keep_best(cur, objective_and_grad(net, stats, cur, y, cfg, static_cast<Mat<T>*>(nullptr)), res.x_adv,
                  res.loss);
    }
    return res;
}

namespace {

// Margins f_i - f_y through the tail for rows (b, i); grad w.r.t. z if asked.
template <class T>
Mat<T> tail_margins(const Network<T>& net, const BnStats<T>& stats, Index split, const Mat<T>& z,
                    const std::vector<Index>& cls, const std::vector<Index>& lab, Mat<T>* grad) {
    Tape<T> tape;
    Graph<T> g(tape, net, stats, false);
    const Var<T> zv = grad ? tape.variable(z) : tape.constant(z);
    const Var<T> logits = g.forward(zv, split, net.size());
    const Var<T> m = ad::sub(ad::pick(logits, cls), ad::pick(logits, lab));
    if (grad) {
        tape.backward(ad::sum(m));
        *grad = tape.grad(zv);
    }
    return m.value();
}

}  // namespace

template <class T>
LatentAttackResult<T> latent_pgd(const Network<T>& net, const BnStats<T>& stats, Index split,
                                 const IntervalBox<T>& latent_box, const Labels& y, const AttackConfig& cfg,
                                 const std::vector<std::uint64_t>& sample_ids) {
    cfg.validate();
    if (split <= 0 || split >= net.size()) throw Error("bad_split", "latent split index out of range");
    const Index n = latent_box.lower.rows(), d = latent_box.lower.cols(), k = net.num_classes;
    if (d != net.layers[static_cast<std::size_t>(split)].in_shape.size())
        throw Error("shape_mismatch", "latent box width does not match the split layer");
    const auto ids = default_ids(n, sample_ids);

    std::vector<Index> cls, lab, sample;
    for (Index b = 0; b < n; ++b)
        for (Index i = 0; i < k; ++i) {
            cls.push_back(i);
            lab.push_back(y[static_cast<std::size_t>(b)]);
            sample.push_back(b);
        }
    const Index rows = n * k;
    Mat<T> lo(rows, d), hi(rows, d);
    for (Index r = 0; r < rows; ++r) {
        lo.row(r) = latent_box.lower.row(sample[static_cast<std::size_t>(r)]);
        hi.row(r) = latent_box.upper.row(sample[static_cast<std::size_t>(r)]);
    }
    const Mat<T> center = (lo + hi) * T(0.5);
    const Mat<T> step = (hi - lo) * static_cast<T>(0.5 * cfg.step_size);

    Mat<T> best_z = center;
    Mat<T> best = tail_margins(net, stats, split, center, cls, lab, static_cast<Mat<T>*>(nullptr));
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        Mat<T> cur = center;
        if (restart > 0 && cfg.random_init) {
            for (Index r = 0; r < rows; ++r) {
                auto gen = sample_rng(cfg.seed, ids[static_cast<std::size_t>(sample[static_cast<std::size_t>(r)])],
                                      static_cast<std::uint64_t>(restart * 4096 + cls[static_cast<std::size_t>(r)]));
                std::uniform_real_distribution<double> u(0.0, 1.0);
                for (Index j = 0; j < d; ++j) cur(r, j) = lo(r, j) + static_cast<T>(u(gen)) * (hi(r, j) - lo(r, j));
            }
        }
        for (int s = 0; s < cfg.steps; ++s) {
            Mat<T> grad;
            const Mat<T> val = tail_margins(net, stats, split, cur, cls, lab, &grad);
            keep_best(cur, val, best_z, best);
            cur = (cur.array() + step.array() * grad.array().sign()).matrix();
            cur = cur.cwiseMax(lo).cwiseMin(hi);
        }
        keep_best(cur, tail_margins(net, stats, split, cur, cls, lab, static_cast<Mat<T>*>(nullptr)), best_z, best);
    }
    LatentAttackResult<T> res;
    res.z = best_z;
    res.margin = Mat<T>(n, k);
    for (Index r = 0; r < rows; ++r) {
        const T v = cls[static_cast<std::size_t>(r)] == lab[static_cast<std::size_t>(r)] ? T(0) : best(r, 0);
        res.margin(sample[static_cast<std::size_t>(r)], cls[static_cast<std::size_t>(r)]) = v;
    }
    return res;
}

#define CERTKIT_INSTANTIATE_ATTACK(T)                                                                          \
    template AttackResult<T> pgd_attack<T>(const Network<T>&, const BnStats<T>&, const Mat<T>&, const Labels&, \
                                           const IntervalBox<T>&, double, const AttackConfig&,                 \
                                           const std::vector<std::uint64_t>&);                                 \
    template Mat<T> attack_objective<T>(const Network<T>&, const BnStats<T>&, const Mat<T>&, const Labels&,    \
                                        const AttackConfig&);                                                  \
    template LatentAttackResult<T> latent_pgd<T>(const Network<T>&, const BnStats<T>&, Index,                  \
                                                 const IntervalBox<T>&, const Labels&, const AttackConfig&,    \
                                                 const std::vector<std::uint64_t>&);

CERTKIT_INSTANTIATE_ATTACK(float)
CERTKIT_INSTANTIATE_ATTACK(double)

}  // namespace certkit
