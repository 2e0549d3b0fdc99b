#include "cli.hpp"

#include "certkit/analysis.hpp"
#include "certkit/checkpoint.hpp"
#include "certkit/config.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace certkit {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path, preset_name;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<double> budget;
    std::optional<Index> subset;
    std::optional<std::string> out_dir;
    std::string checkpoint;
    std::vector<std::string> checkpoints;
    std::string results_dir = "runs";
};

enum class Command { train, certify, attack, analyze };

Config resolve_config(const Options& o, Command cmd) {
    if (!o.config_path.empty() && !o.preset_name.empty())
        throw Error("usage", "--config and --preset are mutually exclusive");
    Config c;
    if (!o.config_path.empty())
        c = load_config(o.config_path);
    else if (!o.preset_name.empty())
        c = preset(o.preset_name);
    else
        throw Error("usage", "one of --config or --preset is required");
    if (o.seed) c.train.seed = *o.seed;
    if (o.threads) c.certify.threads = *o.threads;
    if (o.budget) c.certify.budget_seconds = *o.budget;
    if (o.subset) (cmd == Command::train ? c.train.train_subset : c.test_subset) = *o.subset;
    if (o.out_dir) c.output.dir = *o.out_dir;
    c.validate();
    return c;
}

fs::path run_dir(const Config& c) { return fs::path(c.output.dir) / c.output.name; }

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("io_error", "cannot write '" + p.string() + "'");
    f << text;
    if (!f) throw Error("io_error", "write failed for '" + p.string() + "'");
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("io_error", "cannot read '" + p.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path data_dir(const TrainConfig& t) {
    const fs::path p = t.data_path.empty() ? fs::path(t.dataset) : fs::path(t.data_path);
    if (p.is_absolute()) return p;
    const char* root = std::getenv("CERTKIT_DATA");
    return fs::path(root && *root ? root : "data") / p;
}

// Train split first, test split second.
std::pair<Dataset, Dataset> load_splits(const TrainConfig& t) {
    const fs::path dir = data_dir(t);
    if (t.dataset == "mnist") {
        return {load_mnist_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string()),
                load_mnist_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string())};
    }
    if (t.dataset == "cifar10") {
        std::vector<std::string> train;
        for (int i = 1; i <= 5; ++i) train.push_back((dir / ("data_batch_" + std::to_string(i) + ".bin")).string());
        return {load_cifar_binary(train), load_cifar_binary({(dir / "test_batch.bin").string()})};
    }
    throw Error("unsupported_dataset", "no loader for dataset '" + t.dataset + "'");
}

// Test samples are drawn with a fixed seed so runs share one evaluation set.
Dataset test_set(const Config& c) { return subset(load_splits(c.train).second, c.test_subset, 0); }

fs::path checkpoint_path(const Options& o, const Config& c) {
    return o.checkpoint.empty() ? run_dir(c) / "checkpoint.bin" : fs::path(o.checkpoint);
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

template <class T>
void train_and_save(const Config& c, const Dataset& train_data, const Dataset& val, std::ostream& log) {
    const fs::path dir = run_dir(c);
    std::string timing = "epoch,elapsed_s\n";
    const auto start = std::chrono::steady_clock::now();
    auto on_epoch = [&](const EpochMetrics& m) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %d eps %.4f loss %.4f nat %.4f cert_ibp %.4f (%.1fs)\n", m.epoch, m.eps,
                      m.loss_total, m.nat_acc, m.cert_acc_ibp, s);
        log << buf << std::flush;
        std::snprintf(buf, sizeof buf, "%d,%.3f\n", m.epoch, s);
        timing += buf;
    };
    TrainResult<T> res = train<T>(c.train, train_data, val, on_epoch);
    Metadata meta{{"config_hash", hex(config_hash(c))},
                  {"epochs", std::to_string(c.train.std_pretrain_epochs + c.train.total_epochs)},
                  {"seed", std::to_string(c.train.seed)},
                  {"method", to_string(c.train.loss.method)}};
    save_checkpoint((dir / "checkpoint.bin").string(), res.net, meta);
    write_file(dir / "metrics.csv", metrics_csv(res.metrics));
    write_file(dir / "train_timing.csv", timing);
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& log) {
    const Config c = resolve_config(o, Command::train);
    auto [train_full, test_full] = load_splits(c.train);
    const Dataset train_data = subset(train_full, c.train.train_subset, c.train.seed);
    const Dataset val = subset(test_full, c.test_subset, 0);
    const fs::path dir = run_dir(c);
    write_file(dir / "config.canonical", canonical(c));
    if (c.train.use_double)
        train_and_save<double>(c, train_data, val, log);
    else
        train_and_save<float>(c, train_data, val, log);
    out << (dir / "checkpoint.bin").string() << "\n";
    return 0;
}

int cmd_certify(const Options& o, std::ostream& out, std::ostream&) {
    const Config c = resolve_config(o, Command::certify);
    const Network<double> net = load_checkpoint<double>(checkpoint_path(o, c).string());
    const Dataset data = test_set(c);
    const double eps = c.test_eps();
    const auto results = certify_dataset(net, data, eps, c.certify);
    const fs::path dir = run_dir(c);
    write_file(dir / "certify.csv", cert_csv(results));
    write_file(dir / "certify_timing.csv", timing_csv(results));
    const std::string summary = summary_json(summarize(results), eps);
    write_file(dir / "summary.json", summary);
    out << summary;
    return 0;
}

int cmd_attack(const Options& o, std::ostream& out, std::ostream&) {
    const Config c = resolve_config(o, Command::attack);
    const Network<double> net = load_checkpoint<double>(checkpoint_path(o, c).string());
    const Dataset data = test_set(c);
    const double eps = c.test_eps();
    const BnStats<double> stats = net.population_stats();
    std::string csv = "sample_id,label,clean_pred,adv_pred\n";
    Index nat = 0, adv = 0;
    constexpr Index batch = 256;
    for (Index start = 0; start < data.size(); start += batch) {
        const Index rows = std::min(batch, data.size() - start);
        const Mat<double> x = data.images.middleRows(start, rows);
        const Labels y(data.labels.begin() + start, data.labels.begin() + start + rows);
        std::vector<std::uint64_t> ids;
        for (Index r = 0; r < rows; ++r) ids.push_back(static_cast<std::uint64_t>(start + r));
        const auto res = pgd_attack(net, stats, x, y, input_box(x, eps), eps, c.certify.attack, ids);
        const Mat<double> z0 = forward(net, x, BnMode::population);
        const Mat<double> z1 = forward(net, res.x_adv, BnMode::population);
        for (Index r = 0; r < rows; ++r) {
            Index p0 = 0, p1 = 0;
            z0.row(r).maxCoeff(&p0);
            z1.row(r).maxCoeff(&p1);
            const int label = y[static_cast<std::size_t>(r)];
            nat += p0 == label;
            adv += p0 == label && p1 == label;
            csv += std::to_string(start + r) + "," + std::to_string(label) + "," + std::to_string(p0) + "," +
                   std::to_string(p1) + "\n";
        }
    }
    const double n = static_cast<double>(data.size());
    nlohmann::json j{{"eps", eps},
                     {"n", data.size()},
                     {"nat_acc", data.empty() ? nlohmann::json(nullptr) : nlohmann::json(nat / n)},
                     {"adv_acc", data.empty() ? nlohmann::json(nullptr) : nlohmann::json(adv / n)}};
    const fs::path dir = run_dir(c);
    write_file(dir / "attack.csv", csv);
    write_file(dir / "attack.json", j.dump(2) + "\n");
    out << j.dump(2) << "\n";
    return 0;
}

// Per-sample certified flags from a run's certify.csv.
std::optional<std::vector<bool>> certified_flags(const fs::path& dir) {
    const fs::path p = dir / "certify.csv";
    if (!fs::exists(p)) return std::nullopt;
    std::istringstream in(read_file(p));
    std::string line;
    std::getline(in, line);
    std::vector<bool> flags;
    while (std::getline(in, line)) {
        const auto a = line.find(','), b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) throw Error("bad_results", "malformed " + p.string());
        flags.push_back(line.substr(a + 1, b - a - 1) == "certified");
    }
    return flags;
}

int cmd_analyze(const Options& o, std::ostream& out, std::ostream& log) {
    const Config c = resolve_config(o, Command::analyze);
    std::vector<fs::path> paths;
    for (const auto& p : o.checkpoints) paths.emplace_back(p);
    if (paths.empty()) paths.push_back(checkpoint_path(o, c));
    const Dataset data = test_set(c);
    if (data.empty()) throw Error("empty_dataset", "no test samples to analyze");
    const double eps = c.test_eps();
    const Index probes = std::min(c.analysis.probe_inputs, data.size());
    const Mat<double> x = data.images.topRows(probes);

    std::map<std::string, ModelReport> reports;
    std::vector<std::vector<bool>> certified;
    bool all_certified = true;
    for (const auto& path : paths) {
        const fs::path dir = path.parent_path();
        std::string name = dir.filename().string();
        if (name.empty() || reports.count(name)) name = path.string();
        log << "analyzing " << name << "\n" << std::flush;
        const Network<double> net = load_checkpoint<double>(path.string());
        ModelReport r;
        r.unstable_sampled = unstable_ratio_sampled(net, x, eps, c.analysis.samples, c.analysis.seed);
        r.unstable_ibp = unstable_ratio_ibp(net, x, eps);
        r.utilization = utilization(net, x);
        r.tightness = propagation_tightness(net, x, eps).mean;
        r.nat_acc = accuracy(net, data);
        if (fs::exists(dir / "summary.json")) {
            const auto s = nlohmann::json::parse(read_file(dir / "summary.json"));
            if (!s["cert_acc"].is_null()) r.cert_acc = s["cert_acc"].get<double>();
            if (!s["adv_acc"].is_null()) r.adv_acc = s["adv_acc"].get<double>();
        }
        for (Corruption k : c.analysis.corruptions)
            r.ood[to_string(k)] = ood_generalization(net, data, corrupt(data, k, c.analysis.severity, c.analysis.seed));
        reports[name] = r;
        if (auto flags = certified_flags(dir))
            certified.push_back(*flags);
        else
            all_certified = false;
    }
    const fs::path dir = run_dir(c);
    const std::string report = report_json(reports);
    write_file(dir / "analysis.json", report);
    if (all_certified && !certified.empty()) write_file(dir / "mistakes.csv", mistakes_csv(shared_mistakes(certified)));
    out << report;
    return 0;
}

std::string fmt(const nlohmann::json& v) {
    if (v.is_null()) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
    return buf;
}

int cmd_report(const Options& o, std::ostream& out) {
    const fs::path root(o.results_dir);
    if (!fs::is_directory(root)) throw Error("no_results", "no results: '" + root.string() + "' is not a directory");
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "summary.json")) runs.push_back(e.path());
    if (runs.empty()) throw Error("no_results", "no results under '" + root.string() + "'");
    std::sort(runs.begin(), runs.end());
    std::string csv = "run,method,eps,nat_acc,adv_acc,cert_acc,cert_acc_ibp\n";
    for (const auto& dir : runs) {
        const auto s = nlohmann::json::parse(read_file(dir / "summary.json"));
        std::string method;
        if (fs::exists(dir / "config.canonical"))
            method = to_string(parse_config(read_file(dir / "config.canonical")).train.loss.method);
        csv += dir.filename().string() + "," + method + "," + fmt(s["eps"]) + "," + fmt(s["nat_acc"]) + "," +
               fmt(s["adv_acc"]) + "," + fmt(s["cert_acc"]) + "," + fmt(s["cert_acc_ibp"]) + "\n";
    }
    write_file(root / "report.csv", csv);
    out << csv;
    return 0;
}

void error_json(std::ostream& err, const std::string& code, const std::string& message) {
    err << nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"certified training toolkit", "certkit"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "YAML config file");
        sub->add_option("--preset", o.preset_name, "named preset");
        sub->add_option("--seed", o.seed, "training seed");
        sub->add_option("--threads", o.threads, "certification threads");
        sub->add_option("--budget-seconds", o.budget, "per-sample certification budget");
        sub->add_option("--subset", o.subset, "number of samples used by the command");
        sub->add_option("--out", o.out_dir, "output root; results go to <out>/<name>");
    };
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    CLI::App* certify_cmd = app.add_subcommand("certify", "run the certification cascade");
    CLI::App* attack_cmd = app.add_subcommand("attack", "PGD evaluation");
    CLI::App* analyze_cmd = app.add_subcommand("analyze", "neuron, tightness, mistake and corruption analysis");
    CLI::App* report_cmd = app.add_subcommand("report", "merge run summaries into one table");
    for (CLI::App* sub : {train_cmd, certify_cmd, attack_cmd, analyze_cmd}) common(sub);
    for (CLI::App* sub : {certify_cmd, attack_cmd})
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out>/<name>/checkpoint.bin)");
    analyze_cmd->add_option("--checkpoint", o.checkpoints, "checkpoints to analyze, repeatable");
    report_cmd->add_option("--dir", o.results_dir, "results directory");
    report_cmd->add_option("--out", o.results_dir, "alias of --dir");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        error_json(err, "usage", e.what());
        return 2;
    }
    try {
        if (train_cmd->parsed()) return cmd_train(o, out, err);
        if (certify_cmd->parsed()) return cmd_certify(o, out, err);
        if (attack_cmd->parsed()) return cmd_attack(o, out, err);
        if (analyze_cmd->parsed()) return cmd_analyze(o, out, err);
        return cmd_report(o, out);
    } catch (const Error& e) {
        error_json(err, e.code(), e.what());
    } catch (const std::exception& e) {
        error_json(err, "internal", e.what());
    }
    return 1;
}

}  // namespace certkit
