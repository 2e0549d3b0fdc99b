#pragma once

// Certified-training loss family and its composition with the natural loss,
// L1 and warmup regularizers.

#include "certkit/attacks.hpp"
#include "certkit/crown.hpp"

#include <optional>

namespace certkit {

enum class LossMethod { natural, pgd, ibp, crown_ibp, sabr, taps, staps, mtl_ibp };

const char* to_string(LossMethod m);
LossMethod loss_method_from_string(const std::string& name);
bool is_certified_method(LossMethod m);

struct LossSpec {
    LossMethod method = LossMethod::ibp;
    double w_rob = 1.0;
    double train_eps = 0.0;
    double sabr_lambda = 1.0;
    double relu_shrink = 1.0;
    int taps_classifier_size = 1;  // relu layers in the tail, 0 leaves only the last affine block
    int taps_split = -1;           // explicit layer index; overrides classifier size when >= 0
    double taps_grad_scale = 1.0;
    double mtl_tau = 1.0;
    double attack_eps_scale = 1.0;
    AttackConfig attack;
    double l1_weight = 0.0;
    double warmup_reg_weight = 0.0;

    void validate() const;
};

struct ScheduleState {
    double eps = 0.0;
    double warmup_progress = 1.0;  // in [0, 1]
    bool warmup_active = false;
    std::uint64_t step = 0;
};

/// First layer of the tail: the layer after the relu that leaves
/// `classifier_size` relu layers behind it (or spec.taps_split if set).
template <class T>
Index taps_split_index(const Network<T>& net, const LossSpec& spec);

/// Record/replay of every data-dependent search a loss performs, so a loss can
/// be re-evaluated as a smooth function of the parameters.
template <class T>
struct FrozenAttackCache {
    enum class Mode { off, record, replay };
    Mode mode = Mode::off;
    std::optional<Mat<T>> x_adv;          // pgd / mtl_ibp attack point
    std::optional<Mat<T>> sabr_center;    // projected small-box center
    std::optional<Mat<T>> taps_fraction;  // (B*K) x D position inside the latent box
};

/// Everything a loss evaluation needs besides the graph.
template <class T>
struct LossInput {
    const Mat<T>& x;
    const Labels& y;
    std::vector<std::uint64_t> sample_ids;
    InputDomain domain;
    FrozenAttackCache<T>* cache = nullptr;
};

template <class T>
struct RobustLoss {
    Var<T> loss;
    LayerBoxes<T> boxes;  // boxes used by the bound (empty for pure attacks)
};

template <class T>
RobustLoss<T> pgd_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                       std::uint64_t seed);
template <class T>
RobustLoss<T> ibp_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec);
template <class T>
RobustLoss<T> crown_ibp_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec);
template <class T>
RobustLoss<T> sabr_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                        std::uint64_t seed);
template <class T>
RobustLoss<T> taps_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                        std::uint64_t seed);
template <class T>
RobustLoss<T> staps_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                         std::uint64_t seed);
template <class T>
RobustLoss<T> mtl_ibp_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                           std::uint64_t seed);

/// Dispatch on spec.method.
template <class T>
RobustLoss<T> robust_loss(const Graph<T>& g, const LossInput<T>& in, double eps, const LossSpec& spec,
                          std::uint64_t seed);

/// Tightness plus relu-balance terms averaged over relu layers and samples,
/// scaled by weight * (1 - progress); zero once warmup is over.
template <class T>
Var<T> warmup_regularizer(const Graph<T>& g, const LayerBoxes<T>& boxes, const ScheduleState& state, double weight);

/// l1 * sum |W| over linear and conv weights.
template <class T>
Var<T> l1_regularizer(const Graph<T>& g, double l1);

template <class T>
struct LossTerms {
    Var<T> total;
    double nat = 0;
    double rob = 0;
    double reg = 0;
};

/// (1 - w_rob) nat + w_rob rob + reg, at the schedule's eps.
template <class T>
LossTerms<T> compose_total_loss(const Graph<T>& g, const LossInput<T>& in, const LossSpec& spec,
                                const ScheduleState& state, std::uint64_t seed);

}  // namespace certkit
