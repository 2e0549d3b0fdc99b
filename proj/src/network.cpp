#include "certkit/network.hpp"

#include <cmath>
#include <cstring>

namespace certkit {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::flatten: return "flatten";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    if (name == "linear") return LayerKind::linear;
    if (name == "conv2d") return LayerKind::conv2d;
    if (name == "relu") return LayerKind::relu;
    if (name == "batchnorm") return LayerKind::batchnorm;
    if (name == "flatten") return LayerKind::flatten;
    throw Error("bad_layer", "unknown layer kind '" + name + "'");
}

BnCounters& bn_counters() {
    static BnCounters counters;
    return counters;
}

void reset_bn_counters() { bn_counters() = BnCounters{}; }

template <class T>
Network<T>& Network<T>::linear(Index out) {
    Layer<T> l;
    l.kind = LayerKind::linear;
    l.in_shape = output_shape();
    l.out_shape = Shape{out, 1, 1};
    l.weight = Mat<T>::Zero(out, l.in_shape.size());
    l.bias = Mat<T>::Zero(1, out);
    layers.push_back(std::move(l));
    return *this;
}

template <class T>
Network<T>& Network<T>::conv2d(Index out_channels, Index kernel, Index stride, Index padding) {
    Layer<T> l;
    l.kind = LayerKind::conv2d;
    l.in_shape = output_shape();
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.geometry = ConvGeometry::make(l.in_shape, out_channels, kernel, stride, padding);
    l.out_shape = l.geometry->output;
    l.weight = Mat<T>::Zero(out_channels, l.geometry->patch_size());
    l.bias = Mat<T>::Zero(1, out_channels);
    layers.push_back(std::move(l));
    return *this;
}

template <class T>
Network<T>& Network<T>::relu() {
    Layer<T> l;
    l.kind = LayerKind::relu;
    l.in_shape = l.out_shape = output_shape();
    layers.push_back(std::move(l));
    return *this;
}

template <class T>
Network<T>& Network<T>::batchnorm() {
    Layer<T> l;
    l.kind = LayerKind::batchnorm;
    l.in_shape = l.out_shape = output_shape();
    const Index c = l.in_shape.channels;
    l.gamma = Mat<T>::Ones(1, c);
    l.beta = Mat<T>::Zero(1, c);
    l.running_mean = Mat<T>::Zero(1, c);
    l.running_var = Mat<T>::Ones(1, c);
    layers.push_back(std::move(l));
    return *this;
}

template <class T>
Network<T>& Network<T>::flatten() {
    Layer<T> l;
    l.kind = LayerKind::flatten;
    l.in_shape = output_shape();
    l.out_shape = Shape{l.in_shape.size(), 1, 1};
    layers.push_back(std::move(l));
    return *this;
}

template <class T>
std::vector<Index> Network<T>::relu_layers() const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i)
        if (layers[static_cast<std::size_t>(i)].kind == LayerKind::relu) out.push_back(i);
    return out;
}

template <class T>
Index Network<T>::relu_count() const {
    Index n = 0;
    for (const auto& l : layers)
        if (l.kind == LayerKind::relu) n += l.in_shape.size();
    return n;
}

template <class T>
bool Network<T>::has_batchnorm() const {
    for (const auto& l : layers)
        if (l.kind == LayerKind::batchnorm) return true;
    return false;
}

template <class T>
void Network<T>::validate() const {
    if (layers.empty()) throw Error("bad_network", "network has no layers");
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.in_shape.size() != cur.size())
            throw Error("shape_mismatch", "layer " + std::to_string(i) + " input does not match previous output");
        if (l.kind == LayerKind::linear) {
            if (l.weight.rows() != l.out_shape.size() || l.weight.cols() != l.in_shape.size() ||
                l.bias.cols() != l.out_shape.size())
                throw Error("shape_mismatch", "linear layer " + std::to_string(i) + " parameter shapes");
        } else if (l.kind == LayerKind::conv2d) {
            if (!l.geometry || l.weight.cols() != l.geometry->patch_size() || l.weight.rows() != l.out_shape.channels)
                throw Error("shape_mismatch", "conv2d layer " + std::to_string(i) + " parameter shapes");
        } else if (l.kind == LayerKind::batchnorm) {
            if (!(l.epsilon > T(0))) throw Error("bad_layer", "batchnorm epsilon must be positive");
            if ((l.running_var.array() < T(0)).any()) throw Error("bad_layer", "batchnorm running_var negative");
        }
        cur = l.out_shape;
    }
    if (layers.back().kind != LayerKind::linear)
        throw Error("bad_network", "the final layer must be linear");
    if (cur.size() != num_classes) throw Error("shape_mismatch", "final layer width differs from num_classes");
    if (!norm.identity() &&
        (static_cast<Index>(norm.mean.size()) != input_shape.channels || norm.std.size() != norm.mean.size()))
        throw Error("shape_mismatch", "input normalization needs one mean/std per channel");
}

template <class T>
BnStats<T> Network<T>::population_stats() const {
    BnStats<T> s;
    s.mean.resize(layers.size());
    s.var.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind != LayerKind::batchnorm) continue;
        s.mean[i] = layers[i].running_mean;
        s.var[i] = layers[i].running_var;
    }
    return s;
}

template <class T>
BnStats<T> Network<T>::resolve_stats(BnMode mode, const Mat<T>& x) const {
    switch (mode) {
        case BnMode::batch: return compute_batch_stats(*this, x);
        case BnMode::frozen:
            if (!fixed_stats) throw Error("missing_stats", "frozen batch-norm mode requested with no fixed statistics");
            return *fixed_stats;
        case BnMode::population: return population_stats();
    }
    return population_stats();
}

template <class T>
std::vector<Mat<T>*> Network<T>::parameters() {
    std::vector<Mat<T>*> out;
    for (auto& l : layers) {
        if (l.has_weight()) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        } else if (l.kind == LayerKind::batchnorm) {
            out.push_back(&l.gamma);
            out.push_back(&l.beta);
        }
    }
    return out;
}

template <class T>
std::vector<const Mat<T>*> Network<T>::parameters() const {
    std::vector<const Mat<T>*> out;
    for (auto* p : const_cast<Network*>(this)->parameters()) out.push_back(p);
    return out;
}

template <class T>
std::vector<Mat<T>*> Network<T>::state() {
    std::vector<Mat<T>*> out;
    for (auto& l : layers) {
        if (l.has_weight()) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        } else if (l.kind == LayerKind::batchnorm) {
            out.push_back(&l.gamma);
            out.push_back(&l.beta);
            out.push_back(&l.running_mean);
            out.push_back(&l.running_var);
        }
    }
    return out;
}

template <class T>
std::vector<const Mat<T>*> Network<T>::state() const {
    std::vector<const Mat<T>*> out;
    for (auto* p : const_cast<Network*>(this)->state()) out.push_back(p);
    return out;
}

template <class T>
template <class U>
Network<U> Network<T>::cast() const {
    Network<U> out(input_shape, num_classes);
    out.norm = norm;
    out.architecture = architecture;
    for (const auto& l : layers) {
        Layer<U> c;
        c.kind = l.kind;
        c.in_shape = l.in_shape;
        c.out_shape = l.out_shape;
        c.weight = l.weight.template cast<U>();
        c.bias = l.bias.template cast<U>();
        c.gamma = l.gamma.template cast<U>();
        c.beta = l.beta.template cast<U>();
        c.running_mean = l.running_mean.template cast<U>();
        c.running_var = l.running_var.template cast<U>();
        c.momentum = static_cast<U>(l.momentum);
        c.epsilon = static_cast<U>(l.epsilon);
        c.kernel = l.kernel;
        c.stride = l.stride;
        c.padding = l.padding;
        c.geometry = l.geometry;
        out.layers.push_back(std::move(c));
    }
    return out;
}

template <class T>
void Network<T>::rebuild_geometry() {
    for (auto& l : layers)
        if (l.kind == LayerKind::conv2d)
            l.geometry = ConvGeometry::make(l.in_shape, l.out_shape.channels, l.kernel, l.stride, l.padding);
}

namespace {

template <class T>
void channel_moments(const Mat<T>& h, Index channels, Index spatial, Mat<T>& mean, Mat<T>& var) {
    mean.resize(1, channels);
    var.resize(1, channels);
    const T n = static_cast<T>(h.rows() * spatial);
    for (Index c = 0; c < channels; ++c) {
        const auto block = h.middleCols(c * spatial, spatial);
        const T m = block.sum() / n;
        mean(0, c) = m;
        var(0, c) = (block.array() - m).square().sum() / n;
    }
}

}  // namespace

template <class T>
BnStats<T> compute_batch_stats(const Network<T>& net, const Mat<T>& x) {
    if (x.rows() == 0) throw Error("empty_batch", "batch statistics need at least one sample");
    BnStats<T> stats;
    stats.mean.resize(net.layers.size());
    stats.var.resize(net.layers.size());
    ++bn_counters().batch_stat_computations;
    if (!net.has_batchnorm()) return stats;

    Mat<T> h = x;
    if (!net.norm.identity()) {
        const Index spatial = net.input_shape.spatial();
        for (Index c = 0; c < net.input_shape.channels; ++c) {
            const auto k = static_cast<std::size_t>(c);
            h.middleCols(c * spatial, spatial) =
                ((h.middleCols(c * spatial, spatial).array() - static_cast<T>(net.norm.mean[k])) /
                 static_cast<T>(net.norm.std[k])).matrix();
        }
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        switch (l.kind) {
            case LayerKind::linear:
                h = (h * l.weight.transpose()).rowwise() + l.bias.row(0);
                break;
            case LayerKind::conv2d: {
                h = conv2d_forward(h, l.weight, *l.geometry);
                const Index p = l.out_shape.spatial();
                for (Index c = 0; c < l.out_shape.channels; ++c) h.middleCols(c * p, p).array() += l.bias(0, c);
                break;
            }
            case LayerKind::relu: h = h.cwiseMax(T(0)); break;
            case LayerKind::flatten: break;
            case LayerKind::batchnorm: {
                const Index channels = l.in_shape.channels, spatial = l.in_shape.spatial();
                channel_moments(h, channels, spatial, stats.mean[i], stats.var[i]);
                for (Index c = 0; c < channels; ++c) {
                    const T sc = l.gamma(0, c) / std::sqrt(stats.var[i](0, c) + l.epsilon);
                    const T sh = l.beta(0, c) - stats.mean[i](0, c) * sc;
                    h.middleCols(c * spatial, spatial) = (h.middleCols(c * spatial, spatial).array() * sc + sh).matrix();
                }
                stats.count = h.rows() * spatial;
                break;
            }
        }
    }
    return stats;
}

template <class T>
void update_running_stats(Network<T>& net, const BnStats<T>& stats) {
    ++bn_counters().running_updates;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& l = net.layers[i];
        if (l.kind != LayerKind::batchnorm) continue;
        const Index n = stats.count;
        const T correction = n > 1 ? static_cast<T>(n) / static_cast<T>(n - 1) : T(1);
        l.running_mean = (T(1) - l.momentum) * l.running_mean + l.momentum * stats.mean[i];
        l.running_var = (T(1) - l.momentum) * l.running_var + l.momentum * correction * stats.var[i];
    }
}

template <class T>
Graph<T>::Graph(Tape<T>& tape, const Network<T>& net, BnStats<T> stats, bool trainable)
    : tape_(tape), net_(net), stats_(std::move(stats)) {
    const std::size_t n = net.layers.size();
    weight_.resize(n);
    bias_.resize(n);
    gamma_.resize(n);
    beta_.resize(n);
    scale_.resize(n);
    shift_.resize(n);
    abs_weight_.resize(n);
    auto bind = [&](const Mat<T>& m) { return trainable ? tape.variable(m) : tape.constant(m); };
    for (std::size_t i = 0; i < n; ++i) {
        const auto& l = net.layers[i];
        if (l.has_weight()) {
            weight_[i] = bind(l.weight);
            bias_[i] = bind(l.bias);
        } else if (l.kind == LayerKind::batchnorm) {
            if (stats_.mean.size() != n || stats_.mean[i].size() == 0)
                throw Error("missing_stats", "no batch-norm statistics for layer " + std::to_string(i));
            gamma_[i] = bind(l.gamma);
            beta_[i] = bind(l.beta);
            const Mat<T> invstd = (stats_.var[i].array() + l.epsilon).rsqrt().matrix();
            scale_[i] = ad::mul(gamma_[i], tape.constant(invstd));
            shift_[i] = ad::sub(beta_[i], ad::mul(tape.constant(stats_.mean[i]), scale_[i]));
        }
    }
    if (!net.norm.identity()) {
        const Index c = net.input_shape.channels;
        Mat<T> sc(1, c), sh(1, c);
        for (Index k = 0; k < c; ++k) {
            sc(0, k) = static_cast<T>(1.0 / net.norm.std[static_cast<std::size_t>(k)]);
            sh(0, k) = static_cast<T>(-net.norm.mean[static_cast<std::size_t>(k)] / net.norm.std[static_cast<std::size_t>(k)]);
        }
        norm_scale_ = tape.constant(sc);
        norm_shift_ = tape.constant(sh);
        norm_spatial_ = net.input_shape.spatial();
    }
}

template <class T>
const Var<T>& Graph<T>::abs_weight(Index layer) const {
    auto& slot = abs_weight_[static_cast<std::size_t>(layer)];
    if (!slot.valid()) slot = ad::abs(weight(layer));
    return slot;
}

template <class T>
Var<T> Graph<T>::normalize(const Var<T>& x) const { return norm_center(x); }

template <class T>
Var<T> Graph<T>::norm_center(const Var<T>& c) const {
    if (!norm_scale_.valid()) return c;
    return ad::channel_add(ad::channel_mul(c, norm_scale_, norm_spatial_), norm_shift_, norm_spatial_);
}

template <class T>
Var<T> Graph<T>::norm_radius(const Var<T>& r) const {
    if (!norm_scale_.valid()) return r;
    return ad::channel_mul(r, norm_scale_, norm_spatial_);
}

template <class T>
Var<T> Graph<T>::norm_pullback(const Var<T>& lam) const {
    if (!norm_scale_.valid()) return lam;
    return ad::channel_mul(lam, norm_scale_, norm_spatial_);
}

template <class T>
Var<T> Graph<T>::norm_pullback_offset(const Var<T>& lam) const {
    if (!norm_scale_.valid()) return tape_.constant(Mat<T>::Zero(lam.rows(), 1));
    return ad::matmul_nt(ad::channel_sum(lam, norm_spatial_), norm_shift_);
}

template <class T>
Var<T> Graph<T>::apply(Index layer, const Var<T>& x) const {
    const auto& l = net_.layers[static_cast<std::size_t>(layer)];
    switch (l.kind) {
        case LayerKind::relu: return ad::relu(x);
        case LayerKind::flatten: return x;
        default: return affine_center(layer, x);
    }
}

template <class T>
Var<T> Graph<T>::affine_center(Index layer, const Var<T>& c) const {
    const auto& l = net_.layers[static_cast<std::size_t>(layer)];
    switch (l.kind) {
        case LayerKind::linear: return ad::add_row(ad::matmul_nt(c, weight(layer)), bias(layer));
        case LayerKind::conv2d:
            return ad::channel_add(ad::conv2d(c, weight(layer), *l.geometry), bias(layer), l.out_shape.spatial());
        case LayerKind::batchnorm: {
            const Index s = l.in_shape.spatial();
            return ad::channel_add(ad::channel_mul(c, bn_scale(layer), s), bn_shift(layer), s);
        }
        case LayerKind::flatten: return c;
        case LayerKind::relu: break;
    }
    throw Error("bad_layer", "affine_center on a relu layer");
}

template <class T>
Var<T> Graph<T>::affine_radius(Index layer, const Var<T>& r) const {
    const auto& l = net_.layers[static_cast<std::size_t>(layer)];
    switch (l.kind) {
        case LayerKind::linear: return ad::matmul_nt(r, abs_weight(layer));
        case LayerKind::conv2d: return ad::conv2d(r, abs_weight(layer), *l.geometry);
        case LayerKind::batchnorm: return ad::channel_mul(r, ad::abs(bn_scale(layer)), l.in_shape.spatial());
        case LayerKind::flatten: return r;
        case LayerKind::relu: break;
    }
    throw Error("bad_layer", "affine_radius on a relu layer");
}

template <class T>
Var<T> Graph<T>::pullback(Index layer, const Var<T>& lam) const {
    const auto& l = net_.layers[static_cast<std::size_t>(layer)];
    switch (l.kind) {
        case LayerKind::linear: return ad::matmul(lam, weight(layer));
        case LayerKind::conv2d: return ad::conv2d_transpose(lam, weight(layer), *l.geometry);
        case LayerKind::batchnorm: return ad::channel_mul(lam, bn_scale(layer), l.in_shape.spatial());
        case LayerKind::flatten: return lam;
        case LayerKind::relu: break;
    }
    throw Error("bad_layer", "pullback on a relu layer");
}

template <class T>
Var<T> Graph<T>::pullback_offset(Index layer, const Var<T>& lam) const {
    const auto& l = net_.layers[static_cast<std::size_t>(layer)];
    switch (l.kind) {
        case LayerKind::linear: return ad::matmul_nt(lam, bias(layer));
        case LayerKind::conv2d: return ad::matmul_nt(ad::channel_sum(lam, l.out_shape.spatial()), bias(layer));
        case LayerKind::batchnorm:
            return ad::matmul_nt(ad::channel_sum(lam, l.in_shape.spatial()), bn_shift(layer));
        case LayerKind::flatten: return tape_.constant(Mat<T>::Zero(lam.rows(), 1));
        case LayerKind::relu: break;
    }
    throw Error("bad_layer", "pullback_offset on a relu layer");
}

template <class T>
Var<T> Graph<T>::forward(const Var<T>& x, Index begin, Index end) const {
    if (end < 0) end = net_.size();
    Var<T> h = x;
    if (begin == 0) {
        if (x.cols() != net_.input_shape.size())
            throw Error("shape_mismatch", "input has " + std::to_string(x.cols()) + " features, network expects " +
                                              std::to_string(net_.input_shape.size()));
        h = normalize(h);
    }
    for (Index i = begin; i < end; ++i) h = apply(i, h);
    return h;
}

template <class T>
std::vector<Var<T>> Graph<T>::parameter_vars() const {
    std::vector<Var<T>> out;
    for (std::size_t i = 0; i < net_.layers.size(); ++i) {
        const auto& l = net_.layers[i];
        if (l.has_weight()) {
            out.push_back(weight_[i]);
            out.push_back(bias_[i]);
        } else if (l.kind == LayerKind::batchnorm) {
            out.push_back(gamma_[i]);
            out.push_back(beta_[i]);
        }
    }
    return out;
}

template <class T>
std::vector<Mat<T>> Graph<T>::gradients() const {
    std::vector<Mat<T>> out;
    for (const auto& v : parameter_vars()) out.push_back(tape_.grad(v));
    return out;
}

template <class T>
Mat<T> forward(const Network<T>& net, const Mat<T>& x, BnMode mode) {
    Tape<T> tape;
    Graph<T> g(tape, net, net.resolve_stats(mode, x), false);
    return g.forward(tape.constant(x)).value();
}

template <class T>
std::vector<Mat<T>> forward_trace(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x) {
    Tape<T> tape;
    Graph<T> g(tape, net, stats, false);
    std::vector<Mat<T>> out;
    out.push_back(x);
    Var<T> h = g.normalize(tape.constant(x));
    for (Index i = 0; i < net.size(); ++i) {
        h = g.apply(i, h);
        out.push_back(h.value());
    }
    return out;
}

template <class T>
Network<T> make_architecture(const std::string& name, Shape input, Index num_classes, bool batchnorm) {
    Network<T> net(input, num_classes);
    net.architecture = name;
    auto block = [&](auto&& add_layer) {
        add_layer();
        if (batchnorm) net.batchnorm();
        net.relu();
    };
    if (name == "linear") {
        net.flatten().linear(num_classes);
    } else if (name == "mlp3") {
        net.flatten();
        block([&] { net.linear(256); });
        block([&] { net.linear(256); });
        net.linear(num_classes);
    } else if (name == "cnn3") {
        block([&] { net.conv2d(16, 4, 2, 1); });
        block([&] { net.conv2d(32, 4, 2, 1); });
        net.flatten().linear(num_classes);
    } else if (name == "cnn7") {
        block([&] { net.conv2d(64, 3, 1, 1); });
        block([&] { net.conv2d(64, 3, 1, 1); });
        block([&] { net.conv2d(128, 3, 2, 1); });
        block([&] { net.conv2d(128, 3, 1, 1); });
        block([&] { net.conv2d(128, 3, 1, 1); });
        net.flatten();
        block([&] { net.linear(512); });
        net.linear(num_classes);
    } else {
        throw Error("bad_architecture", "unknown architecture '" + name + "'");
    }
    return net;
}

std::vector<std::string> architecture_names() { return {"linear", "mlp3", "cnn3", "cnn7"}; }

template <class T>
std::uint64_t parameter_hash(const Network<T>& net) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const Mat<T>* m : net.state()) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(m->data());
        for (std::size_t i = 0; i < static_cast<std::size_t>(m->size()) * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

#define CERTKIT_INSTANTIATE_NET(T)                                                                   \
    template class Network<T>;                                                                      \
    template class Graph<T>;                                                                        \
    template BnStats<T> compute_batch_stats<T>(const Network<T>&, const Mat<T>&);                   \
    template void update_running_stats<T>(Network<T>&, const BnStats<T>&);                          \
    template Mat<T> forward<T>(const Network<T>&, const Mat<T>&, BnMode);                           \
    template std::vector<Mat<T>> forward_trace<T>(const Network<T>&, const BnStats<T>&, const Mat<T>&); \
    template Network<T> make_architecture<T>(const std::string&, Shape, Index, bool);                \
    template std::uint64_t parameter_hash<T>(const Network<T>&);

CERTKIT_INSTANTIATE_NET(float)
CERTKIT_INSTANTIATE_NET(double)

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

}  // namespace certkit
