#include "certkit/analysis.hpp"

#include "certkit/attacks.hpp"

#include "json.hpp"

#include <cstdio>

namespace certkit {

namespace {

NeuronStats empty_stats(const Network<double>& net, Probe probe) {
    NeuronStats s;
    s.probe = probe;
    for (Index i : net.relu_layers()) {
        s.width.push_back(net.layers[static_cast<std::size_t>(i)].in_shape.size());
        s.active.push_back(0);
        s.inactive.push_back(0);
        s.unstable.push_back(0);
    }
    return s;
}

}  // namespace

Index NeuronStats::total_unstable() const {
    Index t = 0;
    for (Index u : unstable) t += u;
    return t;
}

Index NeuronStats::total() const {
    Index w = 0;
    for (Index v : width) w += v;
    return w * inputs;
}

double NeuronStats::ratio() const {
    const Index t = total();
    return t == 0 ? 0.0 : static_cast<double>(total_unstable()) / static_cast<double>(t);
}

NeuronStats neuron_stats_sampled(const Network<double>& net, const Mat<double>& x, double eps, int n,
                                 std::uint64_t seed, InputDomain domain) {
    if (n < 0) throw Error("bad_range", "sample count must be >= 0");
    NeuronStats s = empty_stats(net, Probe::sampled);
    s.samples = n;
    s.inputs = x.rows();
    const BnStats<double> stats = net.population_stats();
    const auto relus = net.relu_layers();
    for (Index b = 0; b < x.rows(); ++b) {
        auto gen = sample_rng(seed, static_cast<std::uint64_t>(b), 0x5a);
        std::normal_distribution<double> normal(0.0, 1.0);
        Mat<double> pts = x.row(b).replicate(n + 1, 1);
        for (Index r = 1; r <= n; ++r)
            for (Index d = 0; d < x.cols(); ++d) {
                const double v = pts(r, d) + eps * std::clamp(normal(gen), -1.0, 1.0);
                pts(r, d) = std::clamp(v, domain.lower, domain.upper);
            }
        const auto trace = forward_trace(net, stats, pts);
        for (std::size_t k = 0; k < relus.size(); ++k) {
            const Mat<double>& pre = trace[static_cast<std::size_t>(relus[k])];
            for (Index j = 0; j < pre.cols(); ++j) {
                const bool pos = (pre.col(j).array() > 0).any();
                const bool neg = (pre.col(j).array() <= 0).any();
                if (pos && neg)
                    ++s.unstable[k];
                else if (pos)
                    ++s.active[k];
                else
                    ++s.inactive[k];
            }
        }
    }
    return s;
}

NeuronStats neuron_stats_ibp(const Network<double>& net, const Mat<double>& x, double eps, InputDomain domain) {
    NeuronStats s = empty_stats(net, Probe::ibp);
    s.inputs = x.rows();
    if (x.rows() == 0) return s;
    Tape<double> tape;
    Graph<double> g(tape, net, net.population_stats(), false);
    const auto boxes = ibp_propagate(g, constant_box(tape, input_box(x, eps, domain)));
    const auto relus = net.relu_layers();
    for (std::size_t k = 0; k < relus.size(); ++k) {
        const auto& box = boxes[static_cast<std::size_t>(relus[k])];
        const Mat<double>& l = box.lower.value();
        const Mat<double>& u = box.upper.value();
        for (Index i = 0; i < l.size(); ++i) {
            const double lo = l.data()[i], hi = u.data()[i];
            if (lo < 0 && hi > 0)
                ++s.unstable[k];
            else if (lo > 0)
                ++s.active[k];
            else if (hi <= 0)
                ++s.inactive[k];
            else
                ++s.active[k];  // lo == 0 < hi: never negative
        }
    }
    return s;
}

double unstable_ratio_sampled(const Network<double>& net, const Mat<double>& x, double eps, int n,
                              std::uint64_t seed, InputDomain domain) {
    return neuron_stats_sampled(net, x, eps, n, seed, domain).ratio();
}

double unstable_ratio_ibp(const Network<double>& net, const Mat<double>& x, double eps, InputDomain domain) {
    return neuron_stats_ibp(net, x, eps, domain).ratio();
}

double utilization(const Network<double>& net, const Mat<double>& x) {
    if (x.rows() == 0) return 0;
    const auto trace = forward_trace(net, net.population_stats(), x);
    Index width = 0;
    Vec<double> active = Vec<double>::Zero(x.rows());
    for (Index i : net.relu_layers()) {
        const Mat<double>& pre = trace[static_cast<std::size_t>(i)];
        width += pre.cols();
        active += (pre.array() > 0).cast<double>().rowwise().sum().matrix();
    }
    if (width == 0) return 0;
    return (active / static_cast<double>(width)).mean();
}

Tightness propagation_tightness(const Network<double>& net, const Mat<double>& x, double eps) {
    const Index k = net.num_classes;
    Tightness out;
    out.per_output.assign(static_cast<std::size_t>(k), 0.0);
    if (x.rows() == 0) return out;
    const BnStats<double> stats = net.population_stats();
    const auto trace = forward_trace(net, stats, x);
    double total = 0;
    for (Index b = 0; b < x.rows(); ++b) {
        Tape<double> tape;
        Graph<double> g(tape, net, stats, false);
        auto pattern = [&](Index layer) {
            return Mat<double>((trace[static_cast<std::size_t>(layer)].row(b).array() > 0).cast<double>());
        };
        // Exact radius: row-wise L1 norm of the composed Jacobian.
        Var<double> lam = tape.constant(Mat<double>::Identity(k, k));
        for (Index i = net.size() - 1; i >= 0; --i) {
            const auto kind = net.layers[static_cast<std::size_t>(i)].kind;
            if (kind == LayerKind::relu)
                lam = tape.constant(lam.value().array().rowwise() * pattern(i).row(0).array());
            else
                lam = g.pullback(i, lam);
        }
        const Mat<double> jac = g.norm_pullback(lam).value();
        // IBP radius of the same linear map.
        Var<double> r = g.norm_radius(tape.constant(Mat<double>::Constant(1, x.cols(), eps)));
        for (Index i = 0; i < net.size(); ++i) {
            if (net.layers[static_cast<std::size_t>(i)].kind == LayerKind::relu)
                r = tape.constant(r.value().cwiseProduct(pattern(i)));
            else
                r = g.affine_radius(i, r);
        }
        const Mat<double> exact = Mat<double>::Constant(1, x.cols(), eps) * jac.cwiseAbs().transpose();
        for (Index o = 0; o < k; ++o) {
            const double ibp = r.value()(0, o);
            // exact <= ibp by the triangle inequality; clamp rounding.
            const double t = ibp > 0 ? std::min(exact(0, o) / ibp, 1.0) : 1.0;
            out.per_output[static_cast<std::size_t>(o)] += t / static_cast<double>(x.rows());
            total += t;
        }
    }
    out.mean = total / static_cast<double>(x.rows() * k);
    return out;
}

std::vector<double> poisson_binomial_pmf(const std::vector<double>& p) {
    std::vector<double> pmf{1.0};
    for (double q : p) {
        if (!(q >= 0 && q <= 1)) throw Error("bad_range", "success probabilities must lie in [0, 1]");
        std::vector<double> next(pmf.size() + 1, 0.0);
        for (std::size_t k = 0; k < pmf.size(); ++k) {
            next[k] += pmf[k] * (1 - q);
            next[k + 1] += pmf[k] * q;
        }
        pmf = std::move(next);
    }
    return pmf;
}

MistakeHistogram shared_mistakes(const std::vector<std::vector<bool>>& certified) {
    MistakeHistogram h;
    const std::size_t models = certified.size();
    const std::size_t n = models ? certified[0].size() : 0;
    for (const auto& c : certified)
        if (c.size() != n) throw Error("sample_mismatch", "certification vectors cover different sample sets");
    h.observed.assign(models + 1, 0);
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t k = 0;
        for (const auto& c : certified) k += c[s];
        ++h.observed[k];
    }
    for (const auto& c : certified) {
        std::size_t hits = 0;
        for (bool v : c) hits += v;
        h.accuracies.push_back(n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0);
    }
    for (double q : poisson_binomial_pmf(h.accuracies)) h.expected.push_back(q * static_cast<double>(n));
    return h;
}

std::string mistakes_csv(const MistakeHistogram& h) {
    std::string s = "k,observed,expected\n";
    char buf[96];
    for (std::size_t k = 0; k < h.observed.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%lld,%.6f\n", k, static_cast<long long>(h.observed[k]), h.expected[k]);
        s += buf;
    }
    return s;
}

double accuracy(const Network<double>& net, const Dataset& data, Index batch) {
    if (data.empty()) throw Error("empty_dataset", "accuracy of an empty dataset");
    Index correct = 0;
    for (Index start = 0; start < data.size(); start += batch) {
        const Index rows = std::min(batch, data.size() - start);
        const Mat<double> z = forward(net, Mat<double>(data.images.middleRows(start, rows)), BnMode::population);
        for (Index r = 0; r < rows; ++r) {
            Index arg = 0;
            z.row(r).maxCoeff(&arg);
            correct += arg == data.labels[static_cast<std::size_t>(start + r)];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double ood_generalization(const Network<double>& net, const Dataset& clean, const Dataset& corrupted) {
    if (clean.labels != corrupted.labels) throw Error("label_mismatch", "corrupted set must keep the clean labels");
    const double nat = accuracy(net, clean);
    if (nat == 0) throw Error("zero_accuracy", "clean accuracy is zero");
    return accuracy(net, corrupted) / nat;
}

std::string report_json(const std::map<std::string, ModelReport>& models) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, m] : models) {
        j[name] = {{"unstable_sampled", m.unstable_sampled},
                   {"unstable_ibp", m.unstable_ibp},
                   {"utilization", m.utilization},
                   {"tightness", m.tightness},
                   {"cert_acc", opt(m.cert_acc)},
                   {"nat_acc", opt(m.nat_acc)},
                   {"adv_acc", opt(m.adv_acc)},
                   {"ood", m.ood}};
    }
    return j.dump(2) + "\n";
}

}  // namespace certkit
