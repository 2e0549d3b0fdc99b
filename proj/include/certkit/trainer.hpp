#pragma once

// Training engine: schedules, initialization, the per-step statistics
// protocol, Adam, SWA and evaluation.

#include "certkit/data.hpp"
#include "certkit/losses.hpp"

#include <functional>

namespace certkit {

enum class RampShape { linear, smooth };

const char* to_string(RampShape r);
RampShape ramp_shape_from_string(const std::string& name);

struct EpsSchedule {
    double target = 0;
    std::uint64_t warmup_start = 0;  // first ramp step
    std::uint64_t warmup_end = 0;    // eps == target from here on
    RampShape shape = RampShape::linear;

    double eps(std::uint64_t step) const;
    /// Fraction of the ramp completed, in [0, 1].
    double progress(std::uint64_t step) const;
};

struct SwaConfig {
    bool enabled = false;
    int start_epoch = 0;
};

struct TrainConfig {
    std::string dataset = "mnist";
    std::string data_path;
    Index train_subset = -1;
    Index val_subset = -1;
    std::string architecture = "cnn3";
    bool batchnorm = true;
    bool normalize_input = false;
    LossSpec loss;
    int total_epochs = 70;
    int warmup_epochs = 20;
    int std_pretrain_epochs = 0;
    double lr = 5e-4;
    std::vector<int> lr_decay_epochs{50, 60};
    double lr_decay_factor = 0.2;
    Index batch_size = 256;
    int grad_accum_factor = 1;
    double grad_clip_l2 = 10;
    std::uint64_t seed = 0;
    SwaConfig swa;
    double eval_eps = 0;
    RampShape ramp = RampShape::linear;
    bool augment = false;
    bool use_double = false;

    void validate() const;
};

/// Learning rate for a training epoch counted after pretraining.
double learning_rate(const TrainConfig& cfg, int epoch);

/// Scaled-normal init keeping IBP widths from growing with depth; biases 0.
template <class T>
void ibp_init(Network<T>& net, std::uint64_t seed);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
template <class T>
void fan_in_init(Network<T>& net, std::uint64_t seed);

/// Per-layer IBP width ratios mean(out width)/mean(in width) across
/// consecutive affine+relu blocks, measured with batch statistics.
template <class T>
std::vector<double> ibp_growth_ratios(const Network<T>& net, const Mat<T>& x, double eps);

template <class T>
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    std::uint64_t t = 0;
    std::vector<Mat<T>> m, v;

    void step(std::vector<Mat<T>*> params, const std::vector<Mat<T>>& grads, double lr);
};

/// Rescales grads in place to L2 norm <= max_norm; returns the original norm.
template <class T>
double clip_grad_norm(std::vector<Mat<T>>& grads, double max_norm);

struct StepReport {
    double loss = 0, nat = 0, rob = 0, reg = 0;
    double grad_norm = 0;
};

/// One optimizer step: statistics fixed once on the full batch, k sub-batches
/// accumulated with weights n_i / B, clip, Adam, one running-statistics update.
template <class T>
StepReport train_step(Network<T>& net, Adam<T>& opt, const Mat<T>& x, const Labels& y,
                      const std::vector<std::uint64_t>& ids, const LossSpec& spec, const ScheduleState& state,
                      double lr, int accum, double clip, std::uint64_t seed);

/// Running equal-weight parameter average.
template <class T>
struct Swa {
    std::vector<Mat<T>> average;
    Index count = 0;

    void update(const Network<T>& net);
    /// Copies the average into net.
    void apply(Network<T>& net) const;
};

/// Replaces running statistics with exact statistics of `x` (one pass).
template <class T>
void recompute_population_stats(Network<T>& net, const Mat<T>& x);

struct EvalResult {
    Index n = 0;
    double nat_acc = 0, adv_acc = 0, cert_acc_ibp = 0;
};

/// Population statistics; cert <= adv <= nat by construction.
template <class T>
EvalResult evaluate(const Network<T>& net, const Dataset& data, double eps, const AttackConfig& attack,
                    Index batch = 256);

struct EpochMetrics {
    int epoch = 0;  // 0 is the pretrain epoch when present
    double eps = 0, lr = 0;
    double loss_nat = 0, loss_rob = 0, loss_reg = 0, loss_total = 0;
    double nat_acc = 0, cert_acc_ibp = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

template <class T>
struct TrainResult {
    Network<T> net;
    std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Network built from cfg.architecture for the dataset's shape and classes.
template <class T>
Network<T> build_network(const TrainConfig& cfg, const Dataset& train);

template <class T>
TrainResult<T> train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                     const EpochCallback& on_epoch = {});

}  // namespace certkit
