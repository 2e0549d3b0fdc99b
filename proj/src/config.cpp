#include "certkit/config.hpp"

#include "json.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace certkit {

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& msg) {
    throw Error("bad_config", key + ": " + msg);
}

// Reads one mapping, remembering which keys were consumed.
class Section {
public:
    Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) fail(name_, "expected a mapping");
    }

    template <class F>
    void read(const std::string& key, F&& parse) {
        seen_.insert(key);
        if (!node_ || node_.IsNull()) return;
        const YAML::Node v = node_[key];
        if (!v) return;
        if (!v.IsScalar() && !v.IsSequence()) fail(path(key), "expected a scalar or list");
        parse(v, path(key));
    }

    void number(const std::string& key, double& out) {
        read(key, [&](const YAML::Node& v, const std::string& p) { out = as_double(v, p); });
    }
    template <class I>
    void integer(const std::string& key, I& out) {
        read(key, [&](const YAML::Node& v, const std::string& p) { out = static_cast<I>(as_int(v, p)); });
    }
    void flag(const std::string& key, bool& out) {
        read(key, [&](const YAML::Node& v, const std::string& p) {
            const std::string s = scalar(v, p);
            if (s == "true") out = true;
            else if (s == "false") out = false;
            else fail(p, "expected true or false, got '" + s + "'");
        });
    }
    void text(const std::string& key, std::string& out) {
        read(key, [&](const YAML::Node& v, const std::string& p) { out = scalar(v, p); });
    }
    template <class E, class F>
    void choice(const std::string& key, E& out, F&& from_string) {
        read(key, [&](const YAML::Node& v, const std::string& p) {
            const std::string s = scalar(v, p);
            try {
                out = from_string(s);
            } catch (const Error&) {
                fail(p, "unknown value '" + s + "'");
            }
        });
    }

    void finish() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const std::string k = kv.first.as<std::string>();
            if (!seen_.count(k)) fail(path(k), "unknown key");
        }
    }

    static std::string scalar(const YAML::Node& v, const std::string& p) {
        if (!v.IsScalar()) fail(p, "expected a scalar");
        return v.Scalar();
    }

    static double as_double(const YAML::Node& v, const std::string& p) {
        const std::string s = scalar(v, p);
        // "a/b" is accepted for radii such as 2/255.
        const auto slash = s.find('/');
        if (slash != std::string::npos)
            return parse_double(s.substr(0, slash), p) / parse_double(s.substr(slash + 1), p);
        return parse_double(s, p);
    }

    static long long as_int(const YAML::Node& v, const std::string& p) {
        const std::string s = scalar(v, p);
        long long out = 0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc() || end != s.data() + s.size()) fail(p, "expected an integer, got '" + s + "'");
        return out;
    }

private:
    static double parse_double(const std::string& s, const std::string& p) {
        double out = 0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(out))
            fail(p, "expected a number, got '" + s + "'");
        return out;
    }

    std::string path(const std::string& key) const { return name_ + "." + key; }

    YAML::Node node_;
    std::string name_;
    std::set<std::string> seen_;
};

const std::vector<std::string> kSections{"dataset", "model", "loss", "schedule",
                                         "attack",  "certify", "analysis", "output"};

const std::vector<std::string> kDatasets{"mnist", "cifar10", "tinyimagenet"};

void check(bool ok, const std::string& key, const std::string& msg) {
    if (!ok) fail(key, msg);
}

void check_fields(const Config& c) {
    const TrainConfig& t = c.train;
    const LossSpec& l = t.loss;
    check(t.train_subset >= -1, "dataset.train_subset", "must be >= -1");
    check(c.test_subset >= -1, "dataset.test_subset", "must be >= -1");
    check(l.w_rob >= 0 && l.w_rob <= 1, "loss.w_rob", "must lie in [0, 1]");
    check(l.train_eps >= 0, "loss.train_eps", "must be >= 0");
    check(l.sabr_lambda > 0 && l.sabr_lambda <= 1, "loss.sabr_lambda", "must lie in (0, 1]");
    check(l.relu_shrink > 0 && l.relu_shrink <= 1, "loss.relu_shrink", "must lie in (0, 1]");
    check(l.taps_classifier_size >= 0, "loss.taps_classifier_size", "must be >= 0");
    check(l.taps_split >= -1, "loss.taps_split", "must be >= -1");
    check(l.taps_grad_scale > 0, "loss.taps_grad_scale", "must be positive");
    check(l.mtl_tau >= 0 && l.mtl_tau <= 1, "loss.mtl_tau", "must lie in [0, 1]");
    check(l.attack_eps_scale >= 1, "loss.attack_eps_scale", "must be >= 1");
    check(l.l1_weight >= 0, "loss.l1_weight", "must be >= 0");
    check(l.warmup_reg_weight >= 0, "loss.warmup_reg_weight", "must be >= 0");
    check(t.total_epochs >= 1, "schedule.total_epochs", "must be >= 1");
    check(t.warmup_epochs >= 0 && t.warmup_epochs < t.total_epochs, "schedule.warmup_epochs",
          "must lie in [0, total_epochs)");
    check(t.std_pretrain_epochs == 0 || t.std_pretrain_epochs == 1, "schedule.std_pretrain_epochs", "must be 0 or 1");
    check(t.lr > 0, "schedule.lr", "must be positive");
    for (std::size_t i = 0; i < t.lr_decay_epochs.size(); ++i) {
        check(t.lr_decay_epochs[i] >= 0 && t.lr_decay_epochs[i] < t.total_epochs, "schedule.lr_decay_epochs",
              "entries must lie in [0, total_epochs)");
        check(i == 0 || t.lr_decay_epochs[i] > t.lr_decay_epochs[i - 1], "schedule.lr_decay_epochs",
              "entries must be strictly increasing");
    }
    check(t.lr_decay_factor > 0 && t.lr_decay_factor <= 1, "schedule.lr_decay_factor", "must lie in (0, 1]");
    check(t.batch_size >= 1, "schedule.batch_size", "must be >= 1");
    check(t.grad_accum_factor >= 1 && t.grad_accum_factor <= t.batch_size, "schedule.grad_accum_factor",
          "must lie in [1, batch_size]");
    check(t.grad_clip_l2 > 0, "schedule.grad_clip_l2", "must be positive");
    check(t.eval_eps >= 0, "schedule.eval_eps", "must be >= 0");
    check(t.swa.start_epoch >= 0 && (!t.swa.enabled || t.swa.start_epoch < t.total_epochs), "schedule.swa_start_epoch",
          "must lie in [0, total_epochs)");
    check(l.attack.steps >= 1, "attack.steps", "must be >= 1");
    check(l.attack.restarts >= 1, "attack.restarts", "must be >= 1");
    check(l.attack.step_size > 0, "attack.step_size", "must be positive");
    check(l.attack.objective != AttackObjective::margin || l.attack.target_class >= 0, "attack.target_class",
          "margin objective needs a target class");
    check(c.certify.budget_seconds > 0, "certify.budget_seconds", "must be positive");
    check(c.certify.max_nodes >= 0, "certify.max_nodes", "must be >= 0");
    check(c.certify.unstable_cap >= 0, "certify.unstable_cap", "must be >= 0");
    check(c.certify.threads >= 1, "certify.threads", "must be >= 1");
    check(c.certify.attack.steps >= 1, "certify.attack_steps", "must be >= 1");
    check(c.certify.attack.restarts >= 1, "certify.attack_restarts", "must be >= 1");
    check(c.certify.attack.step_size > 0, "certify.attack_step_size", "must be positive");
    check(c.analysis.samples >= 1, "analysis.samples", "must be >= 1");
    check(c.analysis.probe_inputs >= 1, "analysis.probe_inputs", "must be >= 1");
    check(c.analysis.severity >= 0 && c.analysis.severity <= 1, "analysis.severity", "must lie in [0, 1]");
    check(!c.output.name.empty() && c.output.name.find('/') == std::string::npos && c.output.name != "." &&
              c.output.name != "..",
          "output.name", "must be a plain non-empty file name");
    check(!c.output.dir.empty(), "output.dir", "must be non-empty");
}

std::string num(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    return s;
}

template <class I>
std::string num_int(I v) {
    return std::to_string(v);
}

std::string str(const std::string& s) { return nlohmann::json(s).dump(); }

std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace

void Config::validate() const {
    check_fields(*this);
    train.validate();
    certify.validate();
}

Config parse_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw Error("bad_config", std::string("yaml: ") + e.what());
    }
    Config c;
    if (!root || root.IsNull()) {
        c.validate();
        return c;
    }
    if (!root.IsMap()) throw Error("bad_config", "config: expected a mapping of sections");
    for (const auto& kv : root) {
        const std::string k = kv.first.as<std::string>();
        if (std::find(kSections.begin(), kSections.end(), k) == kSections.end()) fail(k, "unknown section");
    }
    TrainConfig& t = c.train;
    LossSpec& l = t.loss;

    Section ds(root["dataset"], "dataset");
    ds.read("name", [&](const YAML::Node& v, const std::string& p) {
        const std::string s = Section::scalar(v, p);
        if (std::find(kDatasets.begin(), kDatasets.end(), s) == kDatasets.end()) fail(p, "unknown value '" + s + "'");
        t.dataset = s;
    });
    ds.text("path", t.data_path);
    ds.integer("train_subset", t.train_subset);
    ds.integer("test_subset", c.test_subset);
    ds.flag("augment", t.augment);
    ds.flag("normalize", t.normalize_input);
    ds.finish();

    Section model(root["model"], "model");
    model.read("architecture", [&](const YAML::Node& v, const std::string& p) {
        const std::string s = Section::scalar(v, p);
        const auto names = architecture_names();
        if (std::find(names.begin(), names.end(), s) == names.end()) fail(p, "unknown value '" + s + "'");
        t.architecture = s;
    });
    model.flag("batchnorm", t.batchnorm);
    model.read("precision", [&](const YAML::Node& v, const std::string& p) {
        const std::string s = Section::scalar(v, p);
        if (s == "float") t.use_double = false;
        else if (s == "double") t.use_double = true;
        else fail(p, "unknown value '" + s + "'");
    });
    model.finish();

    Section loss(root["loss"], "loss");
    loss.choice("method", l.method, loss_method_from_string);
    loss.number("w_rob", l.w_rob);
    loss.number("train_eps", l.train_eps);
    loss.number("sabr_lambda", l.sabr_lambda);
    loss.number("relu_shrink", l.relu_shrink);
    loss.integer("taps_classifier_size", l.taps_classifier_size);
    loss.integer("taps_split", l.taps_split);
    loss.number("taps_grad_scale", l.taps_grad_scale);
    loss.number("mtl_tau", l.mtl_tau);
    loss.number("attack_eps_scale", l.attack_eps_scale);
    loss.number("l1_weight", l.l1_weight);
    loss.number("warmup_reg_weight", l.warmup_reg_weight);
    loss.finish();

    Section sched(root["schedule"], "schedule");
    sched.integer("total_epochs", t.total_epochs);
    sched.integer("warmup_epochs", t.warmup_epochs);
    sched.integer("std_pretrain_epochs", t.std_pretrain_epochs);
    sched.number("lr", t.lr);
    sched.read("lr_decay_epochs", [&](const YAML::Node& v, const std::string& p) {
        if (!v.IsSequence()) fail(p, "expected a list of epochs");
        t.lr_decay_epochs.clear();
        for (const auto& e : v) t.lr_decay_epochs.push_back(static_cast<int>(Section::as_int(e, p)));
    });
    sched.number("lr_decay_factor", t.lr_decay_factor);
    sched.integer("batch_size", t.batch_size);
    sched.integer("grad_accum_factor", t.grad_accum_factor);
    sched.number("grad_clip_l2", t.grad_clip_l2);
    sched.integer("seed", t.seed);
    sched.choice("ramp", t.ramp, ramp_shape_from_string);
    sched.flag("swa", t.swa.enabled);
    sched.integer("swa_start_epoch", t.swa.start_epoch);
    sched.number("eval_eps", t.eval_eps);
    sched.finish();

    Section attack(root["attack"], "attack");
    attack.integer("steps", l.attack.steps);
    attack.integer("restarts", l.attack.restarts);
    attack.number("step_size", l.attack.step_size);
    attack.choice("objective", l.attack.objective, attack_objective_from_string);
    attack.integer("target_class", l.attack.target_class);
    attack.flag("random_init", l.attack.random_init);
    attack.finish();

    Section cert(root["certify"], "certify");
    cert.number("budget_seconds", c.certify.budget_seconds);
    cert.integer("max_nodes", c.certify.max_nodes);
    cert.integer("unstable_cap", c.certify.unstable_cap);
    cert.integer("attack_steps", c.certify.attack.steps);
    cert.integer("attack_restarts", c.certify.attack.restarts);
    cert.number("attack_step_size", c.certify.attack.step_size);
    cert.flag("use_crown", c.certify.use_crown);
    cert.flag("use_attack", c.certify.use_attack);
    cert.flag("use_bab", c.certify.use_bab);
    cert.integer("threads", c.certify.threads);
    cert.finish();

    Section an(root["analysis"], "analysis");
    an.integer("samples", c.analysis.samples);
    an.integer("probe_inputs", c.analysis.probe_inputs);
    an.integer("seed", c.analysis.seed);
    an.read("corruptions", [&](const YAML::Node& v, const std::string& p) {
        if (!v.IsSequence()) fail(p, "expected a list of corruption names");
        c.analysis.corruptions.clear();
        for (const auto& e : v) {
            const std::string s = Section::scalar(e, p);
            try {
                c.analysis.corruptions.push_back(corruption_from_string(s));
            } catch (const Error&) {
                fail(p, "unknown corruption '" + s + "'");
            }
        }
    });
    an.number("severity", c.analysis.severity);
    an.finish();

    Section out(root["output"], "output");
    out.text("name", c.output.name);
    out.text("dir", c.output.dir);
    out.finish();

    c.validate();
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("io_error", "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string canonical(const Config& c) {
    const TrainConfig& t = c.train;
    const LossSpec& l = t.loss;
    std::ostringstream o;
    auto kv = [&](const std::string& k, const std::string& v) { o << "  " << k << ": " << v << "\n"; };
    o << "dataset:\n";
    kv("name", str(t.dataset));
    kv("path", str(t.data_path));
    kv("train_subset", num_int(t.train_subset));
    kv("test_subset", num_int(c.test_subset));
    kv("augment", flag(t.augment));
    kv("normalize", flag(t.normalize_input));
    o << "model:\n";
    kv("architecture", str(t.architecture));
    kv("batchnorm", flag(t.batchnorm));
    kv("precision", t.use_double ? "double" : "float");
    o << "loss:\n";
    kv("method", to_string(l.method));
    kv("w_rob", num(l.w_rob));
    kv("train_eps", num(l.train_eps));
    kv("sabr_lambda", num(l.sabr_lambda));
    kv("relu_shrink", num(l.relu_shrink));
    kv("taps_classifier_size", num_int(l.taps_classifier_size));
    kv("taps_split", num_int(l.taps_split));
    kv("taps_grad_scale", num(l.taps_grad_scale));
    kv("mtl_tau", num(l.mtl_tau));
    kv("attack_eps_scale", num(l.attack_eps_scale));
    kv("l1_weight", num(l.l1_weight));
    kv("warmup_reg_weight", num(l.warmup_reg_weight));
    o << "schedule:\n";
    kv("total_epochs", num_int(t.total_epochs));
    kv("warmup_epochs", num_int(t.warmup_epochs));
    kv("std_pretrain_epochs", num_int(t.std_pretrain_epochs));
    kv("lr", num(t.lr));
    std::string decay = "[";
    for (std::size_t i = 0; i < t.lr_decay_epochs.size(); ++i)
        decay += (i ? ", " : "") + std::to_string(t.lr_decay_epochs[i]);
    kv("lr_decay_epochs", decay + "]");
    kv("lr_decay_factor", num(t.lr_decay_factor));
    kv("batch_size", num_int(t.batch_size));
    kv("grad_accum_factor", num_int(t.grad_accum_factor));
    kv("grad_clip_l2", num(t.grad_clip_l2));
    kv("seed", num_int(t.seed));
    kv("ramp", to_string(t.ramp));
    kv("swa", flag(t.swa.enabled));
    kv("swa_start_epoch", num_int(t.swa.start_epoch));
    kv("eval_eps", num(t.eval_eps));
    o << "attack:\n";
    kv("steps", num_int(l.attack.steps));
    kv("restarts", num_int(l.attack.restarts));
    kv("step_size", num(l.attack.step_size));
    kv("objective", to_string(l.attack.objective));
    kv("target_class", num_int(l.attack.target_class));
    kv("random_init", flag(l.attack.random_init));
    o << "certify:\n";
    kv("budget_seconds", num(c.certify.budget_seconds));
    kv("max_nodes", num_int(c.certify.max_nodes));
    kv("unstable_cap", num_int(c.certify.unstable_cap));
    kv("attack_steps", num_int(c.certify.attack.steps));
    kv("attack_restarts", num_int(c.certify.attack.restarts));
    kv("attack_step_size", num(c.certify.attack.step_size));
    kv("use_crown", flag(c.certify.use_crown));
    kv("use_attack", flag(c.certify.use_attack));
    kv("use_bab", flag(c.certify.use_bab));
    kv("threads", num_int(c.certify.threads));
    o << "analysis:\n";
    kv("samples", num_int(c.analysis.samples));
    kv("probe_inputs", num_int(c.analysis.probe_inputs));
    kv("seed", num_int(c.analysis.seed));
    std::string corr = "[";
    for (std::size_t i = 0; i < c.analysis.corruptions.size(); ++i)
        corr += (i ? ", " : "") + std::string(to_string(c.analysis.corruptions[i]));
    kv("corruptions", corr + "]");
    kv("severity", num(c.analysis.severity));
    o << "output:\n";
    kv("name", str(c.output.name));
    kv("dir", str(c.output.dir));
    return o.str();
}

std::uint64_t config_hash(const Config& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

struct Cell {
    double l1 = 0, w_rob = 1, train_eps = 0;
    double lambda = 1;  // eps shrink ratio
    int classifier = 1;
    double grad_scale = 1, relu_shrink = 1, tau = 1;
};

struct Table {
    const char* name;
    std::string dataset;
    double eps;
    int total, warmup, pretrain;
    std::vector<int> decay;
    Index batch;
    double warmup_reg;
    int attack_steps, mtl_attack_steps;
    double mtl_attack_scale;
    std::map<LossMethod, Cell> cells;
};

const std::vector<Table>& tables() {
    using M = LossMethod;
    static const std::vector<Table> t = [] {
        const double c2 = 2.0 / 255, c3 = 3.0 / 255, c8 = 8.0 / 255, t1 = 1.0 / 255;
        std::vector<Table> v;
        v.push_back({"mnist_0.1", "mnist", 0.1, 70, 20, 0, {50, 60}, 256, 0.5, 10, 1, 1,
                     {{M::pgd, {1e-5, 1.0, 0.2}},
                      {M::ibp, {2e-6, 1.0, 0.2}},
                      {M::crown_ibp, {2e-6, 1.0, 0.2}},
                      {M::sabr, {1e-6, 0.7, 0.2, 0.4}},
                      {M::taps, {1e-6, 0.7, 0.2, 1, 3, 4}},
                      {M::staps, {1e-6, 0.7, 0.2, 0.4, 1, 4}},
                      {M::mtl_ibp, {1e-5, 0.7, 0.2, 1, 1, 1, 1, 0.02}}}});
        v.push_back({"mnist_0.3", "mnist", 0.3, 70, 20, 0, {50, 60}, 256, 0.5, 5, 1, 1,
                     {{M::pgd, {5e-6, 1.0, 0.3}},
                      {M::ibp, {1e-6, 1.0, 0.3}},
                      {M::crown_ibp, {1e-6, 1.0, 0.3}},
                      {M::sabr, {2e-6, 1.0, 0.3, 0.8}},
                      {M::taps, {2e-6, 1.0, 0.3, 1, 1, 3}},
                      {M::staps, {2e-6, 1.0, 0.3, 0.8, 1, 1}},
                      {M::mtl_ibp, {1e-6, 1.0, 0.3, 1, 1, 1, 1, 0.5}}}});
        v.push_back({"cifar_2.255", "cifar10", c2, 160, 80, 1, {120, 140}, 128, 0.5, 8, 8, 2,
                     {{M::pgd, {2e-5, 1.0, c2}},
                      {M::ibp, {1e-6, 1.0, c2}},
                      {M::crown_ibp, {1e-6, 1.0, c2}},
                      {M::sabr, {1e-6, 0.7, c3, 0.1, 1, 1, 0.8}},
                      {M::taps, {2e-6, 1.0, c2, 1, 5, 5}},
                      {M::staps, {5e-6, 1.0, c3, 0.1, 1, 5, 0.8}},
                      {M::mtl_ibp, {3e-6, 0.9, c2, 1, 1, 1, 1, 0.01}}}});
        v.push_back({"cifar_8.255", "cifar10", c8, 240, 120, 1, {200, 220}, 128, 0.5, 10, 1, 1,
                     {{M::pgd, {1e-6, 1.0, c8}},
                      {M::ibp, {0, 1.0, c8}},
                      {M::crown_ibp, {0, 1.0, c8}},
                      {M::sabr, {0, 1.0, c8, 0.7}},
                      {M::taps, {0, 1.0, c8, 1, 1, 2}},
                      {M::staps, {0, 1.0, c8, 0.9, 1, 2}},
                      {M::mtl_ibp, {0, 1.0, c8, 1, 1, 1, 1, 0.5}}}});
        v.push_back({"tin_1.255", "tinyimagenet", t1, 160, 80, 1, {120, 140}, 128, 0.2, 1, 1, 1,
                     {{M::pgd, {5e-5, 1.0, t1}},
                      {M::ibp, {1e-5, 1.0, t1}},
                      {M::crown_ibp, {1e-5, 1.0, t1}},
                      {M::sabr, {1e-5, 1.0, t1, 0.4}},
                      {M::taps, {1e-5, 1.0, t1, 1, 1, 8}},
                      {M::staps, {1e-5, 1.0, t1, 0.6, 1, 4}},
                      {M::mtl_ibp, {5e-5, 0.7, t1, 1, 1, 1, 1, 0.05}}}});
        return v;
    }();
    return t;
}

Config from_cell(const Table& tb, LossMethod m, const Cell& cell) {
    Config c;
    TrainConfig& t = c.train;
    t.dataset = tb.dataset;
    t.data_path = tb.dataset == "mnist" ? "mnist" : tb.dataset;
    const bool cifar_like = tb.dataset != "mnist";
    t.augment = cifar_like;
    t.normalize_input = cifar_like;
    t.architecture = "cnn7";
    t.batchnorm = true;
    t.total_epochs = tb.total;
    t.warmup_epochs = tb.warmup;
    t.std_pretrain_epochs = tb.pretrain;
    t.lr = 5e-4;
    t.lr_decay_epochs = tb.decay;
    t.lr_decay_factor = 0.2;
    t.batch_size = tb.batch;
    t.grad_clip_l2 = 10;
    t.eval_eps = tb.eps;

    LossSpec& l = t.loss;
    l.method = m;
    l.l1_weight = cell.l1;
    l.w_rob = cell.w_rob;
    l.train_eps = cell.train_eps;
    if (m == LossMethod::sabr || m == LossMethod::staps) {
        l.sabr_lambda = cell.lambda;
        l.relu_shrink = cell.relu_shrink;
    }
    if (m == LossMethod::taps || m == LossMethod::staps) {
        l.taps_classifier_size = cell.classifier;
        l.taps_grad_scale = cell.grad_scale;
    }
    if (m == LossMethod::mtl_ibp) {
        l.mtl_tau = cell.tau;
        l.attack_eps_scale = tb.mtl_attack_scale;
    }
    l.warmup_reg_weight = is_certified_method(m) ? tb.warmup_reg : 0.0;
    l.attack.restarts = 3;
    l.attack.steps = m == LossMethod::mtl_ibp ? tb.mtl_attack_steps : tb.attack_steps;

    c.certify.budget_seconds = 1000;
    c.output.name = std::string(tb.name) + "_" + to_string(m);
    return c;
}

int rescale(int epoch, int from, int to) {
    return static_cast<int>(std::lround(static_cast<double>(epoch) * to / from));
}

}  // namespace

Config desk_scale(Config c) {
    TrainConfig& t = c.train;
    const int from = t.total_epochs, to = 10;
    t.architecture = "cnn3";
    if (t.dataset == "mnist") t.data_path = "mnist5k";
    t.train_subset = 2000;
    c.test_subset = 200;
    t.warmup_epochs = std::clamp(rescale(t.warmup_epochs, from, to), 4, to - 1);
    for (int& d : t.lr_decay_epochs) d = std::min(rescale(d, from, to), to - 1);
    std::vector<int> decay;
    for (int d : t.lr_decay_epochs)
        if (decay.empty() || d > decay.back()) decay.push_back(d);
    t.lr_decay_epochs = decay;
    t.total_epochs = to;
    t.batch_size = 16;
    t.lr = 1e-3;
    c.certify.budget_seconds = 10;
    c.output.name = "desk_" + c.output.name;
    return c;
}

Config preset(const std::string& name) {
    std::string rest = name;
    bool desk = false;
    if (rest.rfind("desk_", 0) == 0) {
        desk = true;
        rest = rest.substr(5);
    }
    for (const Table& tb : tables()) {
        const std::string prefix = std::string(tb.name) + "_";
        if (rest.rfind(prefix, 0) != 0) continue;
        const std::string method = rest.substr(prefix.size());
        for (const auto& [m, cell] : tb.cells)
            if (method == to_string(m)) {
                Config c = from_cell(tb, m, cell);
                if (desk) c = desk_scale(c);
                c.validate();
                return c;
            }
    }
    throw Error("unknown_preset", "unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const char* scale : {"", "desk_"})
        for (const Table& tb : tables())
            for (const auto& kv : tb.cells) out.push_back(scale + std::string(tb.name) + "_" + to_string(kv.first));
    return out;
}

}  // namespace certkit
