#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "certkit/attacks.hpp"
#include "test_util.hpp"

using namespace certkit;
using certkit::testing::random_labels;
using certkit::testing::random_mlp;
using certkit::testing::uniform;

namespace {

Mat<double> ce_rows(const Mat<double>& logits, const Labels& y) {
    Mat<double> out(logits.rows(), 1);
    for (Index b = 0; b < logits.rows(); ++b) {
        const double m = logits.row(b).maxCoeff();
        out(b, 0) = m + std::log((logits.row(b).array() - m).exp().sum()) - logits(b, y[static_cast<std::size_t>(b)]);
    }
    return out;
}

Mat<double> ibp_ce_rows(const Network<double>& net, const IntervalBox<double>& box, const Labels& y) {
    return ce_rows(ibp_margins(net, BnStats<double>{}, box, y), y);
}

}  // namespace

TEST_CASE("pgd with eps 0 returns the clean point") {
    auto& gen = certkit::testing::rng();
    auto net = random_mlp<double>({4, 6, 3}, gen);
    const Mat<double> x = uniform<double>(5, 4, 0, 1, gen);
    const Labels y = random_labels(5, 3, gen);
    const auto box = input_box(x, 0.0);
    const auto res = pgd_attack(net, BnStats<double>{}, x, y, box, 0.0, AttackConfig{});
    CHECK(res.x_adv == x);
    const Mat<double> clean = ce_rows(forward(net, x, BnMode::population), y);
    CHECK((res.loss - clean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pgd on a linear model reaches the sign-aligned corner in one step") {
    auto& gen = certkit::testing::rng();
    auto net = random_mlp<double>({5, 2}, gen);
    const Mat<double> x = uniform<double>(3, 5, 0.3, 0.7, gen);
    const Labels y{0, 1, 0};
    const double eps = 0.1;
    AttackConfig cfg;
    cfg.steps = 1;
    cfg.restarts = 1;
    cfg.step_size = 1.0;
    cfg.random_init = false;
    const auto res = pgd_attack(net, BnStats<double>{}, x, y, input_box(x, eps), eps, cfg);
    const Mat<double>& w = net.layers[0].weight;
    for (Index b = 0; b < 3; ++b) {
        const int yb = y[static_cast<std::size_t>(b)];
        for (Index j = 0; j < 5; ++j) {
            const double dir = w(1 - yb, j) - w(yb, j);
            CHECK(res.x_adv(b, j) == doctest::Approx(x(b, j) + (dir > 0 ? eps : -eps)).epsilon(1e-12));
        }
    }
}

TEST_CASE("pgd stays feasible, beats the clean point and stays below ibp") {
    auto& gen = certkit::testing::rng();
    for (int trial = 0; trial < 30; ++trial) {
        auto net = random_mlp<double>({6, 8, 8, 4}, gen);
        const Mat<double> x = uniform<double>(4, 6, 0, 1, gen);
        const Labels y = random_labels(4, 4, gen);
        const double eps = 0.02 + 0.1 * (trial % 5);
        const auto box = input_box(x, eps);
        AttackConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto res = pgd_attack(net, BnStats<double>{}, x, y, box, eps, cfg);
        CHECK(box.contains(res.x_adv));
        const Mat<double> clean = ce_rows(forward(net, x, BnMode::population), y);
        CHECK((res.loss.array() >= clean.array()).all());
        CHECK((res.loss.array() <= ibp_ce_rows(net, box, y).array() + 1e-9).all());
        const Mat<double> again = ce_rows(forward(net, res.x_adv, BnMode::population), y);
        CHECK((again - res.loss).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("pgd is deterministic per sample id") {
    auto& gen = certkit::testing::rng();
    auto net = random_mlp<double>({4, 8, 3}, gen);
    const Mat<double> x = uniform<double>(6, 4, 0, 1, gen);
    const Labels y = random_labels(6, 3, gen);
    AttackConfig cfg;
    cfg.seed = 7;
    const auto box = input_box(x, 0.2);
    const auto a = pgd_attack(net, BnStats<double>{}, x, y, box, 0.2, cfg);
    const auto b = pgd_attack(net, BnStats<double>{}, x, y, box, 0.2, cfg);
    CHECK(a.x_adv == b.x_adv);

    // Sample 3 alone with id 3 sees the same RNG stream as inside the batch.
    const Mat<double> x3 = x.row(3);
    const auto c = pgd_attack(net, BnStats<double>{}, x3, Labels{y[3]}, input_box(x3, 0.2), 0.2, cfg, {3});
    CHECK(c.x_adv == a.x_adv.row(3));
}

TEST_CASE("margin objectives") {
    auto& gen = certkit::testing::rng();
    auto net = random_mlp<double>({4, 6, 3}, gen);
    const Mat<double> x = uniform<double>(2, 4, 0, 1, gen);
    const Labels y{0, 2};
    AttackConfig cfg;
    cfg.objective = AttackObjective::margin;
    cfg.target_class = 1;
    const Mat<double> z = forward(net, x, BnMode::population);
    const Mat<double> m = attack_objective(net, BnStats<double>{}, x, y, cfg);
    CHECK(m(0, 0) == doctest::Approx(z(0, 1) - z(0, 0)));
    CHECK(m(1, 0) == doctest::Approx(z(1, 1) - z(1, 2)));
    cfg.objective = AttackObjective::max_margin;
    const Mat<double> mm = attack_objective(net, BnStats<double>{}, x, y, cfg);
    CHECK(mm(0, 0) == doctest::Approx(std::max(z(0, 1), z(0, 2)) - z(0, 0)));

    AttackConfig bad;
    bad.objective = AttackObjective::margin;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = AttackConfig{};
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("latent pgd through a linear tail is exact") {
    auto& gen = certkit::testing::rng();
    auto net = random_mlp<double>({5, 7, 4}, gen);
    const Index split = 2;  // after the relu, tail = final linear
    const Mat<double> lo = uniform<double>(3, 7, -1, 0.5, gen);
    IntervalBox<double> box{lo, lo + uniform<double>(3, 7, 0, 1, gen)};
    const Labels y = random_labels(3, 4, gen);
    AttackConfig cfg;
    cfg.restarts = 1;
    const auto res = latent_pgd(net, BnStats<double>{}, split, box, y, cfg);

    Tape<double> tape;
    Graph<double> g(tape, net, BnStats<double>{}, false);
    const Mat<double> exact = ibp_margin_upper(g, constant_box(tape, box), y).value();
    CHECK((res.margin - exact).cwiseAbs().maxCoeff() < 1e-12);
    for (Index r = 0; r < res.z.rows(); ++r) {
        const Index b = r / 4;
        CHECK(((res.z.row(r).array() >= box.lower.row(b).array()) && (res.z.row(r).array() <= box.upper.row(b).array()))
                  .all());
    }
}

TEST_CASE("latent pgd on a degenerate box and below the ibp tail bound") {
    auto& gen = certkit::testing::rng();
    auto net = random_mlp<double>({5, 6, 6, 6, 3}, gen);
    const Index split = 2;
    const Mat<double> z0 = uniform<double>(2, 6, 0, 1, gen);
    const Labels y{1, 2};
    const auto flat = latent_pgd(net, BnStats<double>{}, split, IntervalBox<double>{z0, z0}, y, AttackConfig{});
    Tape<double> tape;
    Graph<double> g(tape, net, BnStats<double>{}, false);
    const Mat<double> logits = g.forward(tape.constant(z0), split, net.size()).value();
    for (Index b = 0; b < 2; ++b)
        for (Index i = 0; i < 3; ++i)
            CHECK(flat.margin(b, i) == doctest::Approx(logits(b, i) - logits(b, y[static_cast<std::size_t>(b)])));

    for (int trial = 0; trial < 20; ++trial) {
        const Mat<double> lo = uniform<double>(2, 6, -0.5, 1, gen);
        IntervalBox<double> box{lo, lo + uniform<double>(2, 6, 0, 0.8, gen)};
        const auto res = latent_pgd(net, BnStats<double>{}, split, box, y, AttackConfig{});
        const auto boxes = ibp_propagate(g, constant_box(tape, box), split, net.size() - 1);
        const Mat<double> ub = ibp_margin_upper(g, boxes.back(), y).value();
        CHECK((res.margin.array() <= ub.array() + 1e-9).all());
    }
    CHECK_THROWS_AS(latent_pgd(net, BnStats<double>{}, 0, IntervalBox<double>{z0, z0}, y, AttackConfig{}), Error);
}
