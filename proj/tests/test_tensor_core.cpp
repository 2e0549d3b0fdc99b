#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "certkit/autodiff.hpp"
#include "certkit/network.hpp"
#include "test_util.hpp"

#include <cstring>

using namespace certkit;
using certkit::testing::randn;

namespace {

// Direct six-nested-loop convolution.
Mat<double> conv_reference(const Mat<double>& x, const Mat<double>& w, Shape in, Index out_ch, Index k, Index s,
                           Index p) {
    const Index oh = (in.height + 2 * p - k) / s + 1, ow = (in.width + 2 * p - k) / s + 1;
    Mat<double> out = Mat<double>::Zero(x.rows(), out_ch * oh * ow);
    for (Index b = 0; b < x.rows(); ++b)
        for (Index o = 0; o < out_ch; ++o)
            for (Index i = 0; i < oh; ++i)
                for (Index j = 0; j < ow; ++j)
                    for (Index c = 0; c < in.channels; ++c)
                        for (Index u = 0; u < k; ++u)
                            for (Index v = 0; v < k; ++v) {
                                const Index r = i * s - p + u, q = j * s - p + v;
                                if (r < 0 || q < 0 || r >= in.height || q >= in.width) continue;
                                out(b, (o * oh + i) * ow + j) +=
                                    w(o, (c * k + u) * k + v) * x(b, (c * in.height + r) * in.width + q);
                            }
    return out;
}

template <class F>
double fd_rel_error(Mat<double>& param, F&& loss, const Mat<double>& analytic, double step = 1e-5) {
    double worst = 0;
    for (Index i = 0; i < param.size(); ++i) {
        const double keep = param.data()[i];
        param.data()[i] = keep + step;
        const double fp = loss();
        param.data()[i] = keep - step;
        const double fm = loss();
        param.data()[i] = keep;
        const double num = (fp - fm) / (2 * step);
        const double a = analytic.data()[i];
        worst = std::max(worst, std::abs(num - a) / std::max(1e-8, std::abs(num) + std::abs(a)));
    }
    return worst;
}

}  // namespace

TEST_CASE("identity linear layer") {
    Network<double> net(Shape{2, 1, 1}, 2);
    net.linear(2);
    net.layers[0].weight = Mat<double>::Identity(2, 2);
    Mat<double> x(1, 2);
    x << 1, 2;
    CHECK(forward(net, x, BnMode::population).isApprox(x));
}

TEST_CASE("toy network 2 - relu(x1 + x2)") {
    Network<double> net(Shape{2, 1, 1}, 1);
    net.linear(1).relu().linear(1);
    net.layers[0].weight << 1, 1;
    net.layers[2].weight << -1;
    net.layers[2].bias << 2;
    Mat<double> x(1, 2);
    x << 0.5, 0.5;
    CHECK(forward(net, x, BnMode::population)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("all-ones 3x3 kernel on all-ones 4x4 image") {
    auto g = ConvGeometry::make(Shape{1, 4, 4}, 1, 3, 1, 0);
    const Mat<double> out = conv2d_forward<double>(Mat<double>::Ones(1, 16), Mat<double>::Ones(1, 9), *g);
    REQUIRE(out.cols() == 4);
    CHECK((out.array() == 9.0).all());
}

TEST_CASE("conv2d matches the direct loop on random 8x8 inputs") {
    auto& gen = certkit::testing::rng();
    for (auto [k, s, p] : {std::tuple<Index, Index, Index>{3, 1, 1}, {4, 2, 1}, {3, 2, 0}, {1, 1, 0}}) {
        Shape in{2, 8, 8};
        auto g = ConvGeometry::make(in, 3, k, s, p);
        const Mat<double> x = randn<double>(2, in.size(), 1.0, gen);
        const Mat<double> w = randn<double>(3, g->patch_size(), 1.0, gen);
        const Mat<double> ref = conv_reference(x, w, in, 3, k, s, p);
        CHECK((conv2d_forward(x, w, *g) - ref).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
    auto& gen = certkit::testing::rng();
    Shape in{2, 7, 7};
    auto g = ConvGeometry::make(in, 3, 3, 2, 1);
    const Mat<double> x = randn<double>(1, in.size(), 1.0, gen);
    const Mat<double> w = randn<double>(3, g->patch_size(), 1.0, gen);
    const Mat<double> a = randn<double>(1, g->output.size(), 1.0, gen);
    Tape<double> tape;
    const auto back = ad::conv2d_transpose(tape.constant(a), tape.constant(w), *g).value();
    CHECK((a.cwiseProduct(conv2d_forward(x, w, *g))).sum() == doctest::Approx((back.cwiseProduct(x)).sum()));
}

TEST_CASE("quadratic loss at its minimizer has zero gradient") {
    Tape<double> tape;
    auto w = tape.variable(Mat<double>::Constant(2, 2, 3.0));
    auto loss = ad::sum(ad::square(ad::add_scalar(w, -3.0)));
    tape.backward(loss);
    CHECK(tape.grad(w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linear net cross-entropy gradient matches central differences") {
    auto& gen = certkit::testing::rng();
    auto net = certkit::testing::random_mlp<double>({5, 4}, gen);
    const Mat<double> x = randn<double>(6, 5, 1.0, gen);
    const Labels y = certkit::testing::random_labels(6, 4, gen);
    auto eval = [&](bool grad, std::vector<Mat<double>>* out) {
        Tape<double> tape;
        Graph<double> g(tape, net, net.population_stats(), grad);
        auto loss = ad::cross_entropy(g.forward(tape.constant(x)), y);
        if (grad) {
            tape.backward(loss);
            *out = g.gradients();
        }
        return loss.value()(0, 0);
    };
    std::vector<Mat<double>> grads;
    eval(true, &grads);
    auto f = [&] { return eval(false, nullptr); };
    CHECK(fd_rel_error(net.layers[0].weight, f, grads[0]) < 1e-6);
    CHECK(fd_rel_error(net.layers[0].bias, f, grads[1]) < 1e-6);
}

TEST_CASE("cnn with batchnorm: gradients match central differences") {
    auto& gen = certkit::testing::rng();
    auto net = certkit::testing::random_cnn<double>(gen);
    const Mat<double> x = certkit::testing::uniform<double>(4, 36, 0, 1, gen);
    const Labels y = certkit::testing::random_labels(4, 3, gen);
    const auto stats = compute_batch_stats(net, x);
    auto eval = [&](bool grad, std::vector<Mat<double>>* out) {
        Tape<double> tape;
        Graph<double> g(tape, net, stats, grad);
        auto loss = ad::cross_entropy(g.forward(tape.constant(x)), y);
        if (grad) {
            tape.backward(loss);
            *out = g.gradients();
        }
        return loss.value()(0, 0);
    };
    std::vector<Mat<double>> grads;
    eval(true, &grads);
    auto params = net.parameters();
    auto f = [&] { return eval(false, nullptr); };
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(fd_rel_error(*params[i], f, grads[i]) < 1e-5);
}

TEST_CASE("relu at negative pre-activation passes no gradient") {
    Network<double> net(Shape{1, 1, 1}, 1);
    net.linear(2).relu().linear(1);
    net.layers[0].weight << 1, -1;
    net.layers[2].weight << 1, 1;
    Tape<double> tape;
    Graph<double> g(tape, net, net.population_stats(), true);
    Mat<double> x(1, 1);
    x << 2.0;
    auto out = ad::sum(g.forward(tape.constant(x)));
    tape.backward(out);
    const auto grads = g.gradients();
    CHECK(grads[0](1, 0) == 0.0);
    CHECK(grads[0](0, 0) == 2.0);
}

TEST_CASE("batch mode normalizes each channel") {
    auto& gen = certkit::testing::rng();
    Network<double> net(Shape{2, 5, 5}, 2);
    net.conv2d(3, 3, 1, 1).batchnorm().flatten().linear(2);
    certkit::testing::randomize(net, gen);
    net.layers[1].gamma.setOnes();
    net.layers[1].beta.setZero();
    const Mat<double> x = randn<double>(8, 50, 2.0, gen);
    const auto stats = compute_batch_stats(net, x);
    const auto trace = forward_trace(net, stats, x);
    const Mat<double>& h = trace[2];
    for (Index c = 0; c < 3; ++c) {
        const auto block = h.middleCols(c * 25, 25);
        const double m = block.mean();
        const double v = (block.array() - m).square().mean();
        CHECK(std::abs(m) <= 1e-5);
        CHECK(std::abs(v - 1) <= 1e-4);
    }
}

TEST_CASE("frozen mode without fixed statistics is an error") {
    auto& gen = certkit::testing::rng();
    auto net = certkit::testing::random_mlp<double>({3, 4, 2}, gen, true);
    CHECK_THROWS_AS(forward(net, Mat<double>(Mat<double>::Zero(1, 3)), BnMode::frozen), Error);
    CHECK_THROWS_AS(forward(net, Mat<double>(Mat<double>::Zero(1, 4)), BnMode::population), Error);
}

TEST_CASE("forward is deterministic") {
    auto& gen = certkit::testing::rng();
    auto net = certkit::testing::random_cnn<float>(gen);
    const Mat<float> x = certkit::testing::uniform<float>(3, 36, 0, 1, gen);
    const Mat<float> a = forward(net, x, BnMode::batch), b = forward(net, x, BnMode::batch);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
}

TEST_CASE("architectures validate") {
    for (const auto& name : architecture_names()) {
        auto net = make_architecture<float>(name, Shape{1, 28, 28}, 10);
        CHECK_NOTHROW(net.validate());
        CHECK(forward(net, Mat<float>(Mat<float>::Zero(2, 784)), BnMode::batch).cols() == 10);
    }
}
