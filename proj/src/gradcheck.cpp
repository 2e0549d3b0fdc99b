#include "certkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace certkit {

namespace {

template <class T>
double evaluate(const Network<T>& net, const BnStats<T>& stats, const GraphLoss<T>& loss) {
    Tape<T> tape;
    Graph<T> g(tape, net, stats, false);
    const Var<T> v = loss(g);
    if (v.value().size() != 1) throw Error("non_scalar", "loss must be a scalar");
    return static_cast<double>(v.value()(0, 0));
}

}  // namespace

template <class T>
GradCheckReport finite_diff_check(const Network<T>& net, const BnStats<T>& stats, const GraphLoss<T>& loss,
                                  const GradCheckOptions& opt) {
    std::vector<Mat<T>> analytic;
    {
        Tape<T> tape;
        Graph<T> g(tape, net, stats, true);
        const Var<T> v = loss(g);
        if (v.value().size() != 1) throw Error("non_scalar", "loss must be a scalar");
        tape.backward(v);
        analytic = g.gradients();
    }

    std::vector<std::pair<Index, Index>> coords;
    for (std::size_t p = 0; p < analytic.size(); ++p)
        for (Index i = 0; i < analytic[p].size(); ++i) coords.emplace_back(static_cast<Index>(p), i);
    if (opt.max_coords > 0 && static_cast<Index>(coords.size()) > opt.max_coords) {
        std::mt19937_64 gen(opt.seed);
        std::shuffle(coords.begin(), coords.end(), gen);
        coords.resize(static_cast<std::size_t>(opt.max_coords));
        std::sort(coords.begin(), coords.end());
    }

    Network<T> work = net;
    auto params = work.parameters();
    const double h = opt.step;
    const double f0 = evaluate(work, stats, loss);
    GradCheckReport rep;
    for (const auto& [p, i] : coords) {
        T& w = params[static_cast<std::size_t>(p)]->data()[i];
        const T saved = w;
        w = static_cast<T>(saved + h);
        const double fp = evaluate(work, stats, loss);
        w = static_cast<T>(saved - h);
        const double fm = evaluate(work, stats, loss);
        w = saved;
        ++rep.checked;

        const double a = static_cast<double>(analytic[static_cast<std::size_t>(p)].data()[i]);
        const double central = (fp - fm) / (2 * h);
        const double left = (f0 - fm) / h, right = (fp - f0) / h;
        if (!std::isfinite(a) || !std::isfinite(central)) {
            ++rep.failures;
            rep.max_rel_error = std::numeric_limits<double>::infinity();
            rep.worst_param = p;
            rep.worst_index = i;
            continue;
        }
        const double scale = std::max({std::abs(left), std::abs(right), opt.floor});
        if (std::abs(left - right) > opt.kink_tolerance * scale) {
            ++rep.kinks;
            continue;
        }
        const double rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), opt.floor});
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_param = p;
            rep.worst_index = i;
        }
        if (rel > opt.tolerance) ++rep.failures;
    }
    return rep;
}

template GradCheckReport finite_diff_check<float>(const Network<float>&, const BnStats<float>&,
                                                  const GraphLoss<float>&, const GradCheckOptions&);
template GradCheckReport finite_diff_check<double>(const Network<double>&, const BnStats<double>&,
                                                   const GraphLoss<double>&, const GradCheckOptions&);

}  // namespace certkit
