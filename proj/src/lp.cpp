#include "certkit/lp.hpp"

#include <cmath>
#include <limits>

namespace certkit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Simplex {
    Mat<double> M;  // m x N
    Vec<double> rhs;
    Vec<double> ub;  // lower bounds are all 0
    std::vector<Index> basis;
    std::vector<bool> at_upper;
    std::vector<bool> is_basic;
    Vec<double> v;
    double tol;

    Index rows() const { return M.rows(); }
    Index cols() const { return M.cols(); }

    Mat<double> basis_matrix() const {
        Mat<double> B(rows(), rows());
        for (Index i = 0; i < rows(); ++i) B.col(i) = M.col(basis[static_cast<std::size_t>(i)]);
        return B;
    }

    // Returns false when the iteration limit is hit.
    bool run(const Vec<double>& c, int max_iter, int& iterations) {
        bool bland = false;
        for (; iterations < max_iter; ++iterations) {
            const Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis_matrix());
            Vec<double> r = rhs;
            for (Index j = 0; j < cols(); ++j)
                if (!is_basic[static_cast<std::size_t>(j)] && v(j) != 0) r -= M.col(j) * v(j);
            const Vec<double> xb = lu.solve(r);
            for (Index i = 0; i < rows(); ++i) {
                const Index j = basis[static_cast<std::size_t>(i)];
                v(j) = std::clamp(xb(i), 0.0, ub(j));
            }
            Vec<double> cb(rows());
            for (Index i = 0; i < rows(); ++i) cb(i) = c(basis[static_cast<std::size_t>(i)]);
            const Vec<double> pi = lu.transpose().solve(cb);
            const Vec<double> d = c - M.transpose() * pi;

            Index enter = -1;
            double best = 0;
            for (Index j = 0; j < cols(); ++j) {
                const auto sj = static_cast<std::size_t>(j);
                if (is_basic[sj]) continue;
                const bool up = !at_upper[sj] && ub(j) > 0 && d(j) > tol;
                const bool down = at_upper[sj] && d(j) < -tol;
                if (!up && !down) continue;
                if (bland) {
                    enter = j;
                    break;
                }
                if (std::abs(d(j)) > best) {
                    best = std::abs(d(j));
                    enter = j;
                }
            }
            if (enter < 0) return true;

            const double dir = at_upper[static_cast<std::size_t>(enter)] ? -1.0 : 1.0;
            const Vec<double> alpha = lu.solve(Vec<double>(M.col(enter)));
            double t = ub(enter);
            Index leave = -1;  // row in the basis
            bool leave_upper = false;
            for (Index i = 0; i < rows(); ++i) {
                const double delta = dir * alpha(i);
                const Index bj = basis[static_cast<std::size_t>(i)];
                double limit = kInf;
                bool to_upper = false;
                if (delta > tol) {
                    limit = std::max(v(bj), 0.0) / delta;
                } else if (delta < -tol && std::isfinite(ub(bj))) {
                    limit = std::max(ub(bj) - v(bj), 0.0) / -delta;
                    to_upper = true;
                }
                if (limit < t || (limit == t && leave >= 0 && bj < basis[static_cast<std::size_t>(leave)])) {
                    t = limit;
                    leave = i;
                    leave_upper = to_upper;
                }
            }
            if (!std::isfinite(t)) throw Error("lp_unbounded", "linear program is unbounded");
            if (t <= tol) bland = true;

            v(enter) += dir * t;
            if (leave < 0) {
                at_upper[static_cast<std::size_t>(enter)] = dir > 0;
                v(enter) = dir > 0 ? ub(enter) : 0.0;
                continue;
            }
            const Index out = basis[static_cast<std::size_t>(leave)];
            is_basic[static_cast<std::size_t>(out)] = false;
            at_upper[static_cast<std::size_t>(out)] = leave_upper;
            v(out) = leave_upper ? ub(out) : 0.0;
            basis[static_cast<std::size_t>(leave)] = enter;
            is_basic[static_cast<std::size_t>(enter)] = true;
            at_upper[static_cast<std::size_t>(enter)] = false;
        }
        return false;
    }
};

}  // namespace

LpResult maximize_box_lp(const Mat<double>& A, const Vec<double>& b, const Vec<double>& c, const Vec<double>& lo,
                         const Vec<double>& hi, const LpOptions& opt) {
    const Index m = A.rows(), n = A.cols();
    if (b.size() != m || c.size() != n || lo.size() != n || hi.size() != n)
        throw Error("shape_mismatch", "linear program dimensions disagree");
    if (!lo.allFinite() || !hi.allFinite() || ((hi - lo).array() < 0).any())
        throw Error("bad_bounds", "linear program needs finite lo <= hi");

    LpResult res;
    const Vec<double> width = hi - lo;
    if (m == 0) {
        res.status = LpStatus::optimal;
        res.x = lo;
        for (Index j = 0; j < n; ++j)
            if (c(j) > 0) res.x(j) = hi(j);
        res.value = c.dot(res.x);
        return res;
    }

    // Columns: shifted structurals, slacks, artificials.
    const Index N = n + 2 * m;
    Simplex s;
    s.tol = opt.tolerance;
    s.M = Mat<double>::Zero(m, N);
    s.ub = Vec<double>::Zero(N);
    s.ub.head(n) = width;
    s.ub.segment(n, m).setConstant(kInf);
    s.v = Vec<double>::Zero(N);
    s.at_upper.assign(static_cast<std::size_t>(N), false);
    s.is_basic.assign(static_cast<std::size_t>(N), false);
    for (Index j = 0; j < n; ++j)
        if (c(j) > 0) {
            s.v(j) = width(j);
            s.at_upper[static_cast<std::size_t>(j)] = true;
        }

    const Vec<double> start = b - A * lo - A * s.v.head(n);
    s.rhs = b - A * lo;
    Vec<double> phase1 = Vec<double>::Zero(N);
    for (Index i = 0; i < m; ++i) {
        const double sign = start(i) < 0 ? -1.0 : 1.0;
        s.M.row(i).head(n) = sign * A.row(i);
        s.M(i, n + i) = sign;
        s.M(i, n + m + i) = 1.0;
        s.rhs(i) *= sign;
        const Index basic = sign < 0 ? n + m + i : n + i;
        if (sign < 0) {
            s.ub(n + m + i) = kInf;
            phase1(n + m + i) = -1.0;
        }
        s.basis.push_back(basic);
        s.is_basic[static_cast<std::size_t>(basic)] = true;
        s.v(basic) = std::abs(start(i));
    }

    if (phase1.minCoeff() < 0) {
        if (!s.run(phase1, opt.max_iterations, res.iterations)) {
            res.status = LpStatus::iteration_limit;
            return res;
        }
        const double scale = 1.0 + s.rhs.cwiseAbs().maxCoeff();
        if (s.v.tail(m).sum() > opt.tolerance * scale) {
            res.status = LpStatus::infeasible;
            return res;
        }
        for (Index i = 0; i < m; ++i) {
            s.ub(n + m + i) = 0;
            if (!s.is_basic[static_cast<std::size_t>(n + m + i)]) s.v(n + m + i) = 0;
        }
    }

    Vec<double> cost = Vec<double>::Zero(N);
    cost.head(n) = c;
    if (!s.run(cost, opt.max_iterations, res.iterations)) {
        res.status = LpStatus::iteration_limit;
        return res;
    }
    res.status = LpStatus::optimal;
    res.x = lo + s.v.head(n).cwiseMin(width).cwiseMax(0.0);
    res.value = c.dot(res.x);
    return res;
}

}  // namespace certkit
