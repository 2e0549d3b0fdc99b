#pragma once

// Signed-gradient PGD in input space and in latent boxes.

#include "certkit/ibp.hpp"

#include <cstdint>
#include <random>

namespace certkit {

enum class AttackObjective { cross_entropy, margin, max_margin };

const char* to_string(AttackObjective o);
AttackObjective attack_objective_from_string(const std::string& name);

struct AttackConfig {
    int steps = 10;
    int restarts = 3;
    double step_size = 0.25;  // fraction of the radius per step
    AttackObjective objective = AttackObjective::cross_entropy;
    int target_class = -1;  // margin objective only
    bool random_init = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Per-sample RNG stream derived from (seed, sample id, stream).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t sample_id, std::uint64_t stream = 0);

template <class T>
struct AttackResult {
    Mat<T> x_adv;
    Mat<T> loss;  // B x 1, best objective over all candidates
};

/// x_adv stays inside `box`; the clean point is always a candidate. Steps are
/// step_size * eps. sample_ids default to row indices.
template <class T>
AttackResult<T> pgd_attack(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x, const Labels& y,
                           const IntervalBox<T>& box, double eps, const AttackConfig& cfg,
                           const std::vector<std::uint64_t>& sample_ids = {});

/// Objective values of each row of x, B x 1.
template <class T>
Mat<T> attack_objective(const Network<T>& net, const BnStats<T>& stats, const Mat<T>& x, const Labels& y,
                        const AttackConfig& cfg);

template <class T>
struct LatentAttackResult {
    Mat<T> z;       // (B*K) x D, row b*K + i maximizes f_i - f_y
    Mat<T> margin;  // B x K estimates, column y is 0
};

/// Per-class PGD through layers [split, L) inside the latent box, starting at
/// its center. Steps are step_size times the per-coordinate latent radius.
template <class T>
LatentAttackResult<T> latent_pgd(const Network<T>& net, const BnStats<T>& stats, Index split,
                                 const IntervalBox<T>& latent_box, const Labels& y, const AttackConfig& cfg,
                                 const std::vector<std::uint64_t>& sample_ids = {});

}  // namespace certkit
