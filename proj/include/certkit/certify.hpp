#pragma once

// Per-sample certification cascade: clean check, IBP, CROWN-IBP, PGD, then a
// best-first branch-and-bound over the unstable relus. Verification runs in
// double precision on population statistics.

#include "certkit/attacks.hpp"
#include "certkit/crown.hpp"
#include "certkit/data.hpp"

#include <map>
#include <optional>

namespace certkit {

enum class CertStatus { certified, falsified, unknown };
enum class CertMethod { none, ibp, crown_ibp, attack, bab };

const char* to_string(CertStatus s);
const char* to_string(CertMethod m);

struct CertifyConfig {
    double budget_seconds = 10;
    Index max_nodes = 0;  // 0: unlimited
    Index unstable_cap = 24;
    AttackConfig attack{20, 5, 0.1, AttackObjective::max_margin, -1, true, 0};
    bool use_crown = true;
    bool use_attack = true;
    bool use_bab = true;
    int threads = 1;

    void validate() const;
};

struct CertResult {
    std::uint64_t id = 0;
    CertStatus status = CertStatus::unknown;
    CertMethod method = CertMethod::none;
    double elapsed = 0;
    Index nodes = 0;  // bab nodes created by branching, root excluded
    bool correct = false;
    std::optional<Mat<double>> counterexample;  // 1 x D, inside the box
};

struct BabResult {
    CertStatus status = CertStatus::unknown;
    Index nodes = 0;
    std::optional<Mat<double>> counterexample;
};

/// Relu neurons with l < 0 < u under IBP on the box, as (layer, neuron).
std::vector<std::pair<Index, Index>> unstable_neurons(const Network<double>& net, const IntervalBox<double>& box);

/// x is 1 x D. Certified means every margin f_i - f_y is strictly negative on
/// the box; a counterexample has some margin >= 0.
BabResult bab(const Network<double>& net, const Mat<double>& x, int y, double eps, const CertifyConfig& cfg,
              InputDomain domain = {});

CertResult certify_sample(const Network<double>& net, const Mat<double>& x, int y, double eps,
                          const CertifyConfig& cfg, std::uint64_t id = 0, InputDomain domain = {});

struct CertSummary {
    Index n = 0;
    std::optional<double> nat_acc, adv_acc, cert_acc;
    std::optional<double> cert_acc_ibp;  // decided by the ibp stage alone
    std::map<std::string, Index> decided_by;
};

CertSummary summarize(const std::vector<CertResult>& results);

std::vector<CertResult> certify_dataset(const Network<double>& net, const Dataset& data, double eps,
                                        const CertifyConfig& cfg);

/// sample_id,status,method,nodes; elapsed times go to timing_csv.
std::string cert_csv(const std::vector<CertResult>& results);
std::string timing_csv(const std::vector<CertResult>& results);
std::string summary_json(const CertSummary& s, double eps);

}  // namespace certkit
