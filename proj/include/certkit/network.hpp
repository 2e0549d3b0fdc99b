#pragma once

// Layer-sequence networks and their binding to an autodiff tape.
//
// Activations are B x (C*H*W) rows in channel-major order. Batch norm is an
// affine map once statistics are chosen: the Graph below receives a resolved
// statistics snapshot and never computes statistics itself, which is what lets
// the trainer fix them once per optimizer step.

#include "certkit/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace certkit {

enum class LayerKind { linear, conv2d, relu, batchnorm, flatten };
enum class BnMode { batch, frozen, population };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

template <class T>
struct Layer {
    LayerKind kind = LayerKind::relu;
    Shape in_shape;
    Shape out_shape;

    // linear: out x in; conv2d: out_ch x (in_ch*k*k). bias is 1 x out (or out_ch).
    Mat<T> weight;
    Mat<T> bias;

    // batchnorm, all 1 x C.
    Mat<T> gamma;
    Mat<T> beta;
    Mat<T> running_mean;
    Mat<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    Index kernel = 0;
    Index stride = 1;
    Index padding = 0;
    std::shared_ptr<const ConvGeometry> geometry;

    bool has_weight() const { return kind == LayerKind::linear || kind == LayerKind::conv2d; }
    bool is_affine() const { return has_weight() || kind == LayerKind::batchnorm || kind == LayerKind::flatten; }
};

/// Per-layer batch-norm statistics; entries for other layer kinds are empty.
template <class T>
struct BnStats {
    std::vector<Mat<T>> mean;
    std::vector<Mat<T>> var;
    Index count = 0;  // elements per channel the statistics were computed over
};

/// Global instrumentation of the statistics protocol.
struct BnCounters {
    std::uint64_t batch_stat_computations = 0;
    std::uint64_t running_updates = 0;
};
BnCounters& bn_counters();
void reset_bn_counters();

/// Per-channel input normalization folded into the network; empty means identity.
struct InputNorm {
    std::vector<double> mean;
    std::vector<double> std;
    bool identity() const { return mean.empty(); }
};

template <class T>
class Network {
public:
    Network() = default;
    Network(Shape input, Index num_classes) : input_shape(input), num_classes(num_classes) {}

    std::vector<Layer<T>> layers;
    Shape input_shape;
    Index num_classes = 0;
    InputNorm norm;
    std::string architecture = "custom";

    /// Statistics fixed for the current optimizer step (BnMode::frozen).
    std::optional<BnStats<T>> fixed_stats;

    Network& linear(Index out);
    Network& conv2d(Index out_channels, Index kernel, Index stride, Index padding);
    Network& relu();
    Network& batchnorm();
    Network& flatten();

    Shape output_shape() const { return layers.empty() ? input_shape : layers.back().out_shape; }
    Index size() const { return static_cast<Index>(layers.size()); }
    std::vector<Index> relu_layers() const;
    Index relu_count() const;
    bool has_batchnorm() const;

    /// Throws unless shapes compose, the last layer is linear with num_classes outputs.
    void validate() const;

    BnStats<T> population_stats() const;
    BnStats<T> resolve_stats(BnMode mode, const Mat<T>& x) const;

    /// Parameters in canonical order: per layer weight, bias, gamma, beta.
    std::vector<Mat<T>*> parameters();
    std::vector<const Mat<T>*> parameters() const;
    /// Parameters plus batch-norm running statistics (checkpoint order).
    std::vector<const Mat<T>*> state() const;
    std::vector<Mat<T>*> state();

    template <class U>
    Network<U> cast() const;

    void rebuild_geometry();
};

/// Computes per-channel batch statistics of every batchnorm layer for input x
/// (one forward pass); increments the batch-statistics counter.
template <class T>
BnStats<T> compute_batch_stats(const Network<T>& net, const Mat<T>& x);

/// running <- (1-m) running + m batch, unbiased variance; increments the counter.
template <class T>
void update_running_stats(Network<T>& net, const BnStats<T>& stats);

/// Binds one network and one statistics snapshot to a tape.
template <class T>
class Graph {
public:
    Graph(Tape<T>& tape, const Network<T>& net, BnStats<T> stats, bool trainable);

    Tape<T>& tape() const { return tape_; }
    const Network<T>& net() const { return net_; }
    const BnStats<T>& stats() const { return stats_; }

    /// x is raw input when begin == 0 (normalization is applied first).
    Var<T> forward(const Var<T>& x, Index begin = 0, Index end = -1) const;
    Var<T> apply(Index layer, const Var<T>& x) const;
    Var<T> normalize(const Var<T>& x) const;

    /// Affine part of layer l on a center: W c + b.
    Var<T> affine_center(Index layer, const Var<T>& c) const;
    /// Absolute linear part on a radius: |W| r.
    Var<T> affine_radius(Index layer, const Var<T>& r) const;
    /// Rows of lam over the layer output, pulled back through the linear part.
    Var<T> pullback(Index layer, const Var<T>& lam) const;
    /// Offset picked up by that pull-back: lam . b, R x 1.
    Var<T> pullback_offset(Index layer, const Var<T>& lam) const;

    Var<T> norm_center(const Var<T>& c) const;
    Var<T> norm_radius(const Var<T>& r) const;
    Var<T> norm_pullback(const Var<T>& lam) const;
    Var<T> norm_pullback_offset(const Var<T>& lam) const;

    const Var<T>& weight(Index layer) const { return weight_[static_cast<std::size_t>(layer)]; }
    const Var<T>& abs_weight(Index layer) const;
    const Var<T>& bias(Index layer) const { return bias_[static_cast<std::size_t>(layer)]; }
    const Var<T>& bn_scale(Index layer) const { return scale_[static_cast<std::size_t>(layer)]; }
    const Var<T>& bn_shift(Index layer) const { return shift_[static_cast<std::size_t>(layer)]; }

    /// Parameter variables in Network::parameters() order.
    std::vector<Var<T>> parameter_vars() const;
    /// Gradients in Network::parameters() order after tape.backward().
    std::vector<Mat<T>> gradients() const;

private:
    Tape<T>& tape_;
    const Network<T>& net_;
    BnStats<T> stats_;
    std::vector<Var<T>> weight_, bias_, gamma_, beta_, scale_, shift_;
    mutable std::vector<Var<T>> abs_weight_;
    Var<T> norm_scale_, norm_shift_;
    Index norm_spatial_ = 1;
};

/// Plain forward pass; returns logits.
template <class T>
Mat<T> forward(const Network<T>& net, const Mat<T>& x, BnMode mode);

/// Forward pass recording every layer output (index 0 is the raw input).
template <class T>
std::vector<Mat<T>> forward_trace(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x);

/// "mlp3", "cnn3", "cnn7" or "linear"; weights zero until initialized.
template <class T>
Network<T> make_architecture(const std::string& name, Shape input, Index num_classes, bool batchnorm = true);

std::vector<std::string> architecture_names();

/// Hash of all parameters and running statistics (FNV-1a over raw bytes).
template <class T>
std::uint64_t parameter_hash(const Network<T>& net);

}  // namespace certkit
