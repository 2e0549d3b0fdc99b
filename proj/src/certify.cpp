#include "certkit/certify.hpp"

#include "certkit/lp.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <queue>
#include <thread>

namespace certkit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// f_i - f_y on the clean point, 1 x K.
Mat<double> clean_margins(const Network<double>& net, const Mat<double>& x, int y) {
    Mat<double> z = forward(net, x, BnMode::population);
    return z.array().colwise() - z.col(y).array();
}

bool robust_row(const Mat<double>& margins, int y) {
    for (Index i = 0; i < margins.cols(); ++i)
        if (i != y && !(margins(0, i) < 0)) return false;
    return true;
}

double worst_margin(const Mat<double>& m, int y, Index* arg = nullptr) {
    double w = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < m.size(); ++i)
        if (i != y && m.data()[i] > w) {
            w = m.data()[i];
            if (arg) *arg = i;
        }
    return w;
}

struct Node {
    ReluMasks masks;
    Mat<double> bound;  // 1 x K margin upper bounds
    double score = 0;
    Index depth = 0;
    std::uint64_t seq = 0;
};

struct NodeOrder {
    bool operator()(const Node& a, const Node& b) const {
        if (a.score != b.score) return a.score < b.score;
        return a.seq > b.seq;
    }
};

class Bab {
public:
    Bab(const Network<double>& net, const Mat<double>& x, int y, double eps, const CertifyConfig& cfg,
        InputDomain domain)
        : net_(net), x_(x), y_(y), cfg_(cfg), stats_(net.population_stats()), box_(input_box(x, eps, domain)) {
        Tape<double> tape;
        Graph<double> g(tape, net_, stats_, false);
        const auto ibp = ibp_bounds(g, constant_box(tape, box_), Labels{y_});
        for (const auto& b : ibp.boxes) boxes_.push_back({b.lower.value(), b.upper.value()});
        ibp_margin_ = ibp.margin_upper.value();
        for (Index i : net_.relu_layers()) {
            const auto& pre = boxes_[static_cast<std::size_t>(i)];
            for (Index j = 0; j < pre.lower.cols(); ++j)
                if (pre.lower(0, j) < 0 && pre.upper(0, j) > 0) unstable_.push_back({i, j});
        }
    }

    const std::vector<std::pair<Index, Index>>& unstable() const { return unstable_; }

    BabResult run() {
        const auto t0 = Clock::now();
        BabResult res;
        if (static_cast<Index>(unstable_.size()) > cfg_.unstable_cap) return res;

        Node root;
        root.masks.resize(static_cast<std::size_t>(net_.size()));
        for (Index i : net_.relu_layers())
            root.masks[static_cast<std::size_t>(i)].assign(
                static_cast<std::size_t>(boxes_[static_cast<std::size_t>(i)].lower.cols()), NeuronFix::free);
        root.bound = ibp_margin_;

        std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
        bool inexact = false;
        auto visit = [&](Node node) -> bool {
            ++res.nodes;
            Mat<double> cex;
            const Outcome o = evaluate(node, cex);
            if (o == Outcome::counterexample) {
                res.status = CertStatus::falsified;
                res.counterexample = cex;
                return true;
            }
            if (o == Outcome::inexact) inexact = true;
            if (o == Outcome::open) {
                node.seq = seq_++;
                open.push(std::move(node));
            }
            return false;
        };

        if (visit(std::move(root))) {
            res.nodes = 0;
            return res;
        }
        res.nodes = 0;
        while (!open.empty()) {
            if (seconds_since(t0) > cfg_.budget_seconds) return res;
            if (cfg_.max_nodes > 0 && res.nodes >= cfg_.max_nodes) return res;
            Node node = open.top();
            open.pop();
            const auto [layer, neuron] = branch_choice(node);
            for (NeuronFix f : {NeuronFix::inactive, NeuronFix::active}) {
                Node child;
                child.masks = node.masks;
                child.masks[static_cast<std::size_t>(layer)][static_cast<std::size_t>(neuron)] = f;
                child.bound = node.bound;
                child.depth = node.depth + 1;
                if (visit(std::move(child))) return res;
            }
        }
        res.status = inexact ? CertStatus::unknown : CertStatus::certified;
        return res;
    }

private:
    enum class Outcome { pruned, open, counterexample, inexact };

    bool misclassifies(const Mat<double>& point) const {
        return !robust_row(clean_margins(net_, point, y_), y_);
    }

    bool leaf(const Node& node) const {
        for (const auto& [l, j] : unstable_)
            if (node.masks[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)] == NeuronFix::free) return false;
        return true;
    }

    std::pair<Index, Index> branch_choice(const Node& node) const {
        std::pair<Index, Index> best{-1, -1};
        double width = -1;
        for (const auto& [l, j] : unstable_) {
            if (node.masks[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)] != NeuronFix::free) continue;
            const auto& b = boxes_[static_cast<std::size_t>(l)];
            const double w = b.upper(0, j) - b.lower(0, j);
            if (w > width) {
                width = w;
                best = {l, j};
            }
        }
        return best;
    }

    LayerBoxes<double> tape_boxes(Tape<double>& tape) const {
        LayerBoxes<double> out;
        for (const auto& b : boxes_) out.push_back(constant_box(tape, b));
        return out;
    }

    Outcome evaluate(Node& node, Mat<double>& cex) const {
        Tape<double> tape;
        Graph<double> g(tape, net_, stats_, false);
        const auto boxes = tape_boxes(tape);
        std::vector<Index> sample;
        const Index k = net_.num_classes;
        const Var<double> spec = tape.constant(margin_spec<double>(Labels{y_}, k, sample));
        const auto lb = backsubstitute_upper(g, boxes, spec, sample, -1, &node.masks);
        const Mat<double> up = concretize_upper(lb, boxes.front(), sample).value().transpose();
        node.bound = node.bound.cwiseMin(up);
        Index worst = 0;
        node.score = worst_margin(node.bound, y_, &worst);

        // The maximizing corner of the worst linear bound is a cheap attack.
        const Mat<double>& coef = lb.coef.value();
        Mat<double> corner(1, x_.cols());
        for (Index d = 0; d < x_.cols(); ++d)
            corner(0, d) = coef(worst, d) > 0 ? box_.upper(0, d) : box_.lower(0, d);
        if (misclassifies(corner)) {
            cex = corner;
            return Outcome::counterexample;
        }
        if (node.score < 0) return Outcome::pruned;
        if (!leaf(node)) return Outcome::open;
        return solve_leaf(g, boxes, node, lb, cex);
    }

    // Every unstable neuron is fixed: the network is affine on the region
    // cut out by the sign constraints, so one LP per class is exact.
    Outcome solve_leaf(const Graph<double>& g, const LayerBoxes<double>& boxes, const Node& node,
                       const LinearBound<double>& lb, Mat<double>& cex) const {
        Tape<double>& tape = g.tape();
        const Index dim = x_.cols();
        std::vector<RowVec<double>> rows;
        std::vector<double> rhs;
        for (Index layer : net_.relu_layers()) {
            std::vector<Index> idx;
            for (const auto& [l, j] : unstable_)
                if (l == layer) idx.push_back(j);
            if (idx.empty()) continue;
            const Index width = boxes_[static_cast<std::size_t>(layer)].lower.cols();
            Mat<double> sel = Mat<double>::Zero(static_cast<Index>(idx.size()), width);
            for (std::size_t r = 0; r < idx.size(); ++r) sel(static_cast<Index>(r), idx[r]) = 1;
            const std::vector<Index> sample(idx.size(), 0);
            const auto pre = backsubstitute_upper(g, boxes, tape.constant(sel), sample, layer, &node.masks);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const RowVec<double> a = pre.coef.value().row(static_cast<Index>(r));
                const double c = pre.offset.value()(static_cast<Index>(r), 0);
                if (node.masks[static_cast<std::size_t>(layer)][static_cast<std::size_t>(idx[r])] == NeuronFix::active) {
                    rows.push_back(-a);
                    rhs.push_back(c);
                } else {
                    rows.push_back(a);
                    rhs.push_back(-c);
                }
            }
        }
        Mat<double> A(static_cast<Index>(rows.size()), dim);
        Vec<double> b(static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            A.row(static_cast<Index>(r)) = rows[r];
            b(static_cast<Index>(r)) = rhs[r];
        }
        const Vec<double> lo = box_.lower.row(0).transpose(), hi = box_.upper.row(0).transpose();
        bool inexact = false;
        for (Index i = 0; i < net_.num_classes; ++i) {
            if (i == y_) continue;
            const Vec<double> c = lb.coef.value().row(i).transpose();
            const LpResult lp = maximize_box_lp(A, b, c, lo, hi);
            if (lp.status == LpStatus::infeasible) return Outcome::pruned;
            if (lp.status != LpStatus::optimal) {
                inexact = true;
                continue;
            }
            const double value = lp.value + lb.offset.value()(i, 0);
            if (value < -1e-9) continue;
            const Mat<double> point = lp.x.transpose();
            if (value >= 0 && misclassifies(point)) {
                cex = point;
                return Outcome::counterexample;
            }
            inexact = true;
        }
        return inexact ? Outcome::inexact : Outcome::pruned;
    }

    const Network<double>& net_;
    Mat<double> x_;
    int y_;
    CertifyConfig cfg_;
    BnStats<double> stats_;
    IntervalBox<double> box_;
    std::vector<IntervalBox<double>> boxes_;
    Mat<double> ibp_margin_;
    std::vector<std::pair<Index, Index>> unstable_;
    std::uint64_t seq_ = 0;
};

}  // namespace

const char* to_string(CertStatus s) {
    switch (s) {
        case CertStatus::certified: return "certified";
        case CertStatus::falsified: return "falsified";
        case CertStatus::unknown: return "unknown";
    }
    return "?";
}

const char* to_string(CertMethod m) {
    switch (m) {
        case CertMethod::none: return "none";
        case CertMethod::ibp: return "ibp";
        case CertMethod::crown_ibp: return "crown_ibp";
        case CertMethod::attack: return "attack";
        case CertMethod::bab: return "bab";
    }
    return "?";
}

void CertifyConfig::validate() const {
    if (!(budget_seconds > 0)) throw Error("bad_range", "certify.budget_seconds must be positive");
    if (max_nodes < 0) throw Error("bad_range", "certify.max_nodes must be >= 0");
    if (unstable_cap < 0) throw Error("bad_range", "certify.unstable_cap must be >= 0");
    if (threads < 1) throw Error("bad_range", "certify.threads must be >= 1");
    attack.validate();
}

std::vector<std::pair<Index, Index>> unstable_neurons(const Network<double>& net, const IntervalBox<double>& box) {
    Tape<double> tape;
    Graph<double> g(tape, net, net.population_stats(), false);
    const auto boxes = ibp_propagate(g, constant_box(tape, box));
    std::vector<std::pair<Index, Index>> out;
    for (Index i : net.relu_layers()) {
        const auto& b = boxes[static_cast<std::size_t>(i)];
        for (Index j = 0; j < b.lower.cols(); ++j)
            if (b.lower.value()(0, j) < 0 && b.upper.value()(0, j) > 0) out.push_back({i, j});
    }
    return out;
}

BabResult bab(const Network<double>& net, const Mat<double>& x, int y, double eps, const CertifyConfig& cfg,
              InputDomain domain) {
    if (x.rows() != 1) throw Error("shape_mismatch", "bab certifies one sample at a time");
    return Bab(net, x, y, eps, cfg, domain).run();
}

CertResult certify_sample(const Network<double>& net, const Mat<double>& x, int y, double eps,
                          const CertifyConfig& cfg, std::uint64_t id, InputDomain domain) {
    const auto t0 = Clock::now();
    CertResult r;
    r.id = id;
    auto done = [&](CertStatus s, CertMethod m) {
        r.status = s;
        r.method = m;
        r.elapsed = seconds_since(t0);
        return r;
    };

    r.correct = robust_row(clean_margins(net, x, y), y);
    if (!r.correct) {
        r.counterexample = x;
        return done(CertStatus::falsified, CertMethod::attack);
    }
    const BnStats<double> stats = net.population_stats();
    const IntervalBox<double> box = input_box(x, eps, domain);
    const Labels labels{y};
    if (robust_row(ibp_margins(net, stats, box, labels), y)) return done(CertStatus::certified, CertMethod::ibp);
    if (cfg.use_crown && robust_row(crown_ibp_margins(net, stats, box, labels), y))
        return done(CertStatus::certified, CertMethod::crown_ibp);
    if (cfg.use_attack) {
        const auto adv = pgd_attack(net, stats, x, labels, box, eps, cfg.attack, {id});
        if (!robust_row(clean_margins(net, adv.x_adv, y), y)) {
            r.counterexample = adv.x_adv;
            return done(CertStatus::falsified, CertMethod::attack);
        }
    }
    if (cfg.use_bab) {
        const BabResult b = bab(net, x, y, eps, cfg, domain);
        r.nodes = b.nodes;
        if (b.status != CertStatus::unknown) {
            r.counterexample = b.counterexample;
            return done(b.status, CertMethod::bab);
        }
    }
    return done(CertStatus::unknown, CertMethod::none);
}

CertSummary summarize(const std::vector<CertResult>& results) {
    CertSummary s;
    s.n = static_cast<Index>(results.size());
    for (const char* m : {"none", "ibp", "crown_ibp", "attack", "bab"}) s.decided_by[m] = 0;
    if (s.n == 0) return s;
    Index nat = 0, cert = 0, falsified = 0, ibp = 0;
    for (const auto& r : results) {
        nat += r.correct;
        cert += r.status == CertStatus::certified;
        falsified += r.status == CertStatus::falsified;
        ibp += r.status == CertStatus::certified && r.method == CertMethod::ibp;
        ++s.decided_by[to_string(r.method)];
    }
    const double n = static_cast<double>(s.n);
    s.nat_acc = nat / n;
    s.cert_acc = cert / n;
    s.adv_acc = (s.n - falsified) / n;
    s.cert_acc_ibp = ibp / n;
    return s;
}

std::vector<CertResult> certify_dataset(const Network<double>& net, const Dataset& data, double eps,
                                        const CertifyConfig& cfg) {
    cfg.validate();
    const Index n = data.size();
    std::vector<CertResult> out(static_cast<std::size_t>(n));
    std::atomic<Index> next{0};
    auto worker = [&] {
        for (Index i = next++; i < n; i = next++) {
            const Mat<double> x = data.images.row(i);
            out[static_cast<std::size_t>(i)] =
                certify_sample(net, x, data.labels[static_cast<std::size_t>(i)], eps, cfg, static_cast<std::uint64_t>(i));
        }
    };
    const int threads = static_cast<int>(std::min<Index>(cfg.threads, std::max<Index>(n, 1)));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return out;
}

std::string cert_csv(const std::vector<CertResult>& results) {
    std::string s = "sample_id,status,method,nodes\n";
    for (const auto& r : results)
        s += std::to_string(r.id) + "," + to_string(r.status) + "," + to_string(r.method) + "," +
             std::to_string(r.nodes) + "\n";
    return s;
}

std::string timing_csv(const std::vector<CertResult>& results) {
    std::string s = "sample_id,elapsed_s\n";
    char buf[64];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%llu,%.6f\n", static_cast<unsigned long long>(r.id), r.elapsed);
        s += buf;
    }
    return s;
}

std::string summary_json(const CertSummary& s, double eps) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["eps"] = eps;
    j["n"] = s.n;
    j["nat_acc"] = opt(s.nat_acc);
    j["adv_acc"] = opt(s.adv_acc);
    j["cert_acc"] = opt(s.cert_acc);
    j["cert_acc_ibp"] = opt(s.cert_acc_ibp);
    j["decided_by"] = s.decided_by;
    return j.dump(2) + "\n";
}

}  // namespace certkit
