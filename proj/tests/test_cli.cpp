#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "certkit/config.hpp"
#include "cli.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace certkit;
namespace fs = std::filesystem;

namespace {

// table method l1 w_rob train_eps lambda classifier grad_scale relu_shrink tau
// "-" means the column does not apply to the method.
const char* kFixture = R"(
mnist_0.1 pgd       1e-5 1.0 0.2   - - - - -
mnist_0.1 ibp       2e-6 1.0 0.2   - - - - -
mnist_0.1 crown_ibp 2e-6 1.0 0.2   - - - - -
mnist_0.1 sabr      1e-6 0.7 0.2   0.4 - - - -
mnist_0.1 taps      1e-6 0.7 0.2   - 3 4 - -
mnist_0.1 staps     1e-6 0.7 0.2   0.4 1 4 - -
mnist_0.1 mtl_ibp   1e-5 0.7 0.2   - - - - 0.02
mnist_0.3 pgd       5e-6 1.0 0.3   - - - - -
mnist_0.3 ibp       1e-6 1.0 0.3   - - - - -
mnist_0.3 crown_ibp 1e-6 1.0 0.3   - - - - -
mnist_0.3 sabr      2e-6 1.0 0.3   0.8 - - - -
mnist_0.3 taps      2e-6 1.0 0.3   - 1 3 - -
mnist_0.3 staps     2e-6 1.0 0.3   0.8 1 1 - -
mnist_0.3 mtl_ibp   1e-6 1.0 0.3   - - - - 0.5
cifar_2.255 pgd       2e-5 1.0 2/255 - - - - -
cifar_2.255 ibp       1e-6 1.0 2/255 - - - - -
cifar_2.255 crown_ibp 1e-6 1.0 2/255 - - - - -
cifar_2.255 sabr      1e-6 0.7 3/255 0.1 - - 0.8 -
cifar_2.255 taps      2e-6 1.0 2/255 - 5 5 - -
cifar_2.255 staps     5e-6 1.0 3/255 0.1 1 5 0.8 -
cifar_2.255 mtl_ibp   3e-6 0.9 2/255 - - - - 0.01
cifar_8.255 pgd       1e-6 1.0 8/255 - - - - -
cifar_8.255 ibp       0    1.0 8/255 - - - - -
cifar_8.255 crown_ibp 0    1.0 8/255 - - - - -
cifar_8.255 sabr      0    1.0 8/255 0.7 - - - -
cifar_8.255 taps      0    1.0 8/255 - 1 2 - -
cifar_8.255 staps     0    1.0 8/255 0.9 1 2 - -
cifar_8.255 mtl_ibp   0    1.0 8/255 - - - - 0.5
tin_1.255 pgd       5e-5 1.0 1/255 - - - - -
tin_1.255 ibp       1e-5 1.0 1/255 - - - - -
tin_1.255 crown_ibp 1e-5 1.0 1/255 - - - - -
tin_1.255 sabr      1e-5 1.0 1/255 0.4 - - - -
tin_1.255 taps      1e-5 1.0 1/255 - 1 8 - -
tin_1.255 staps     1e-5 1.0 1/255 0.6 1 4 - -
tin_1.255 mtl_ibp   5e-5 0.7 1/255 - - - - 0.05
)";

double value(const std::string& s, double fallback) {
    if (s == "-") return fallback;
    const auto slash = s.find('/');
    if (slash != std::string::npos) return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    return std::stod(s);
}

// Test eps, epochs, warmup, decays, batch, pretrain, warmup reg, attack steps.
struct Schedule {
    double eps;
    int total, warmup;
    std::vector<int> decay;
    Index batch;
    int pretrain;
    double reg;
    int steps;
};

const std::map<std::string, Schedule> kSchedules{
    {"mnist_0.1", {0.1, 70, 20, {50, 60}, 256, 0, 0.5, 10}},
    {"mnist_0.3", {0.3, 70, 20, {50, 60}, 256, 0, 0.5, 5}},
    {"cifar_2.255", {2.0 / 255, 160, 80, {120, 140}, 128, 1, 0.5, 8}},
    {"cifar_8.255", {8.0 / 255, 240, 120, {200, 220}, 128, 1, 0.5, 10}},
    {"tin_1.255", {1.0 / 255, 160, 80, {120, 140}, 128, 1, 0.2, 1}},
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct CliRun {
    int code;
    std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("certkit_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void use_bundled_data() { setenv("CERTKIT_DATA", CERTKIT_SOURCE_DIR "/data", 1); }

const char* kToyConfig = R"(dataset:
  name: mnist
  path: toy
  test_subset: 40
model:
  architecture: mlp3
loss:
  method: ibp
  train_eps: 0.05
schedule:
  total_epochs: 3
  warmup_epochs: 1
  lr_decay_epochs: [2]
  batch_size: 20
  lr: 1e-3
certify:
  max_nodes: 100
  budget_seconds: 1000
analysis:
  probe_inputs: 16
  samples: 8
  corruptions: [gaussian_noise, contrast]
output:
  name: toy
)";

}  // namespace

TEST_CASE("presets transcribe every table cell") {
    std::istringstream in(kFixture);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string table, method, l1, w, eps, lambda, cls, scale, shrink, tau;
        if (!(ls >> table >> method >> l1 >> w >> eps >> lambda >> cls >> scale >> shrink >> tau)) continue;
        const std::string name = table + "_" + method;
        CAPTURE(name);
        const Config c = preset(name);
        const LossSpec& l = c.train.loss;
        CHECK(to_string(l.method) == method);
        CHECK(l.l1_weight == value(l1, 0));
        CHECK(l.w_rob == value(w, 0));
        CHECK(l.train_eps == value(eps, 0));
        CHECK(l.sabr_lambda == value(lambda, 1));
        CHECK(l.taps_classifier_size == static_cast<int>(value(cls, 1)));
        CHECK(l.taps_grad_scale == value(scale, 1));
        CHECK(l.relu_shrink == value(shrink, 1));
        CHECK(l.mtl_tau == value(tau, 1));

        const Schedule& s = kSchedules.at(table);
        const TrainConfig& t = c.train;
        CHECK(t.eval_eps == s.eps);
        CHECK(t.total_epochs == s.total);
        CHECK(t.warmup_epochs == s.warmup);
        CHECK(t.lr_decay_epochs == s.decay);
        CHECK(t.batch_size == s.batch);
        CHECK(t.std_pretrain_epochs == s.pretrain);
        CHECK(t.lr == 5e-4);
        CHECK(t.lr_decay_factor == 0.2);
        CHECK(t.grad_clip_l2 == 10);
        CHECK(t.architecture == "cnn7");
        CHECK(l.warmup_reg_weight == (method == "pgd" ? 0.0 : s.reg));
        CHECK(l.attack.restarts == 3);
        const bool cifar_small = table == "cifar_2.255";
        if (method == "mtl_ibp") {
            CHECK(l.attack.steps == (cifar_small ? s.steps : 1));
            CHECK(l.attack_eps_scale == (cifar_small ? 2.0 : 1.0));
        } else {
            CHECK(l.attack.steps == s.steps);
            CHECK(l.attack_eps_scale == 1.0);
        }
        CHECK(t.augment == (table != "mnist_0.1" && table != "mnist_0.3"));
        CHECK(c.certify.budget_seconds == 1000);
        ++rows;
    }
    CHECK(rows == 35);
    CHECK(preset_names().size() == 70);
}

TEST_CASE("mnist 0.1 ibp preset") {
    const Config c = preset("mnist_0.1_ibp");
    CHECK(c.train.loss.w_rob == 1.0);
    CHECK(c.train.loss.train_eps == 0.2);
    CHECK(c.train.loss.l1_weight == 2e-6);
    CHECK(c.test_eps() == 0.1);
    CHECK(learning_rate(c.train, 49) == doctest::Approx(5e-4));
    CHECK(learning_rate(c.train, 50) == doctest::Approx(1e-4));
    CHECK(learning_rate(c.train, 60) == doctest::Approx(2e-5));
}

TEST_CASE("desk presets keep the loss hyperparameters") {
    for (const auto& name : preset_names()) {
        if (name.rfind("desk_", 0) == 0) continue;
        const Config full = preset(name), desk = preset("desk_" + name);
        CAPTURE(name);
        CHECK(desk.train.architecture == "cnn3");
        CHECK(desk.train.total_epochs == 10);
        CHECK(desk.train.warmup_epochs < 10);
        CHECK(desk.certify.budget_seconds == 10);
        const LossSpec &a = full.train.loss, &b = desk.train.loss;
        CHECK(a.method == b.method);
        CHECK(a.w_rob == b.w_rob);
        CHECK(a.train_eps == b.train_eps);
        CHECK(a.l1_weight == b.l1_weight);
        CHECK(a.sabr_lambda == b.sabr_lambda);
        CHECK(a.mtl_tau == b.mtl_tau);
        CHECK(full.test_eps() == desk.test_eps());
    }
    CHECK_THROWS_WITH_AS(preset("mnist_0.1_edac"), "unknown preset 'mnist_0.1_edac'", Error);
}

TEST_CASE("canonical form round-trips") {
    for (const auto& name : preset_names()) {
        const std::string text = canonical(preset(name));
        CAPTURE(name);
        const Config back = parse_config(text);
        CHECK(canonical(back) == text);
        CHECK(config_hash(back) == config_hash(preset(name)));
    }
    const Config toy = parse_config(kToyConfig);
    CHECK(toy.train.architecture == "mlp3");
    CHECK(toy.train.lr_decay_epochs == std::vector<int>{2});
    CHECK(toy.analysis.corruptions.size() == 2);
    CHECK(canonical(parse_config(canonical(toy))) == canonical(toy));

    const Config frac = parse_config("loss: {train_eps: 2/255}\n");
    CHECK(frac.train.loss.train_eps == 2.0 / 255);
    CHECK(canonical(parse_config("")) == canonical(Config{}));
}

TEST_CASE("invalid configs fail with distinct messages") {
    const std::vector<std::string> bad{
        "datset: {name: mnist}",                       // unknown section
        "dataset: {nam: mnist}",                       // unknown key
        "dataset: {name: svhn}",                       // bad enum
        "dataset: {train_subset: -5}",                 // bad range
        "model: {architecture: resnet}",               // bad enum
        "model: {precision: half}",                    // bad enum
        "model: {batchnorm: maybe}",                   // bad bool
        "loss: {method: diffai}",                      // bad enum
        "loss: {w_rob: 1.5}",                          // bad range
        "loss: {sabr_lambda: 0}",                      // bad range
        "loss: {mtl_tau: -0.1}",                       // bad range
        "loss: {attack_eps_scale: 0.5}",               // bad range
        "loss: {train_eps: abc}",                      // not a number
        "schedule: {warmup_epochs: 80}",               // bad range
        "schedule: {lr_decay_epochs: [60, 50]}",       // bad order
        "schedule: {ramp: cosine}",                    // bad enum
        "schedule: {batch_size: 2.5}",                 // not an integer
        "attack: {objective: hinge}",                  // bad enum
        "certify: {budget_seconds: 0}",                // bad range
        "analysis: {corruptions: [fog]}",              // bad enum
        "analysis: {severity: 2}",                     // bad range
        "output: {name: a/b}",                         // bad name
        "certify: {use_bab: yes, extra: 1}",           // unknown key after a bad bool
        "schedule: [1, 2]",                            // wrong shape
    };
    std::set<std::string> messages;
    for (const auto& text : bad) {
        CAPTURE(text);
        std::string msg;
        try {
            parse_config(text);
        } catch (const Error& e) {
            CHECK(e.code() == "bad_config");
            msg = e.what();
        }
        CHECK(!msg.empty());
        messages.insert(msg);
    }
    CHECK(bad.size() >= 20);
    CHECK(messages.size() == bad.size());
}

TEST_CASE("cli toy pipeline end to end") {
    use_bundled_data();
    const fs::path dir = scratch("pipeline");
    const fs::path cfg = dir / "toy.yaml";
    std::ofstream(cfg) << kToyConfig;
    const std::string out = (dir / "runs").string();
    const std::vector<std::string> base{"--config", cfg.string(), "--out", out};
    for (const char* cmd : {"train", "certify", "attack", "analyze"}) {
        std::vector<std::string> args{cmd};
        args.insert(args.end(), base.begin(), base.end());
        const CliRun r = cli(args);
        CAPTURE(cmd);
        CAPTURE(r.err);
        REQUIRE(r.code == 0);
    }
    const fs::path run = dir / "runs" / "toy";
    for (const char* f : {"config.canonical", "checkpoint.bin", "metrics.csv", "certify.csv", "summary.json",
                          "analysis.json", "mistakes.csv", "certify_timing.csv"})
        CHECK(fs::exists(run / f));
    CHECK(slurp(run / "config.canonical") == canonical(parse_config(slurp(run / "config.canonical"))));

    const auto summary = nlohmann::json::parse(slurp(run / "summary.json"));
    CHECK(summary["n"] == 40);
    CHECK(summary["cert_acc"].get<double>() <= summary["adv_acc"].get<double>());
    CHECK(summary["adv_acc"].get<double>() <= summary["nat_acc"].get<double>());
    const auto analysis = nlohmann::json::parse(slurp(run / "analysis.json"));
    REQUIRE(analysis.contains("toy"));
    for (const char* k : {"unstable_sampled", "unstable_ibp", "utilization", "tightness", "cert_acc", "nat_acc",
                          "adv_acc", "ood"})
        CHECK(analysis["toy"].contains(k));
    CHECK(analysis["toy"]["ood"].size() == 2);

    const CliRun report = cli({"report", "--dir", out});
    CHECK(report.code == 0);
    CHECK(report.out.find("toy,ibp,") != std::string::npos);
}

TEST_CASE("cli runs are byte-identical") {
    use_bundled_data();
    const fs::path dir = scratch("determinism");
    const fs::path cfg = dir / "toy.yaml";
    std::ofstream(cfg) << kToyConfig;
    const std::vector<std::string> files{"config.canonical", "checkpoint.bin", "metrics.csv", "certify.csv",
                                         "summary.json",     "analysis.json",  "mistakes.csv"};
    const std::string out = (dir / "a").string();
    std::map<std::string, std::string> first;
    for (int rep = 0; rep < 2; ++rep) {
        fs::remove_all(dir / "a");
        for (const char* cmd : {"train", "certify", "analyze"})
            REQUIRE(cli({cmd, "--config", cfg.string(), "--out", out, "--seed", "7"}).code == 0);
        for (const auto& f : files) {
            CAPTURE(f);
            const std::string bytes = slurp(dir / "a" / "toy" / f);
            CHECK(!bytes.empty());
            if (rep == 0)
                first[f] = bytes;
            else
                CHECK(bytes == first[f]);
        }
    }
    REQUIRE(cli({"train", "--config", cfg.string(), "--out", out, "--seed", "8"}).code == 0);
    CHECK(slurp(dir / "a" / "toy" / "checkpoint.bin") != first["checkpoint.bin"]);
}

TEST_CASE("cli errors are machine-readable") {
    use_bundled_data();
    const fs::path empty = scratch("empty");
    CliRun r = cli({"report", "--dir", empty.string()});
    CHECK(r.code != 0);
    auto j = nlohmann::json::parse(r.err);
    CHECK(j["error"]["code"] == "no_results");
    CHECK(j["error"]["message"].get<std::string>().find("no results") != std::string::npos);

    r = cli({"train", "--preset", "nope"});
    CHECK(r.code != 0);
    CHECK(nlohmann::json::parse(r.err)["error"]["code"] == "unknown_preset");

    r = cli({"certify", "--preset", "desk_mnist_0.1_ibp", "--checkpoint", (empty / "missing.bin").string()});
    CHECK(r.code != 0);
    CHECK(nlohmann::json::parse(r.err).contains("error"));

    r = cli({"train"});
    CHECK(r.code != 0);
    CHECK(nlohmann::json::parse(r.err)["error"]["code"] == "usage");

    r = cli({"frobnicate"});
    CHECK(r.code != 0);
    CHECK(nlohmann::json::parse(r.err)["error"]["code"] == "usage");

    const fs::path bad = empty / "bad.yaml";
    std::ofstream(bad) << "loss: {w_rob: 3}\n";
    r = cli({"train", "--config", bad.string()});
    CHECK(r.code != 0);
    CHECK(nlohmann::json::parse(r.err)["error"]["message"] == "loss.w_rob: must lie in [0, 1]");
}

TEST_CASE("flags override the config") {
    use_bundled_data();
    const fs::path dir = scratch("flags");
    const fs::path cfg = dir / "toy.yaml";
    std::ofstream(cfg) << kToyConfig;
    const std::string out = (dir / "runs").string();
    REQUIRE(cli({"train", "--config", cfg.string(), "--out", out, "--seed", "3", "--subset", "100"}).code == 0);
    const Config c = parse_config(slurp(dir / "runs" / "toy" / "config.canonical"));
    CHECK(c.train.seed == 3);
    CHECK(c.train.train_subset == 100);
    CHECK(c.output.dir == out);
    const CliRun r = cli({"certify", "--config", cfg.string(), "--out", out, "--subset", "5", "--threads", "2",
                          "--budget-seconds", "50"});
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out)["n"] == 5);
}
