#include "certkit/autodiff.hpp"

#include <cmath>

namespace certkit {

template <class T>
void Tape<T>::backward(const Var<T>& root) {
    if (root.rows() != 1 || root.cols() != 1)
        throw Error("non_scalar_loss", "backward() requires a 1x1 root");
    if (!root.requires_grad()) return;
    nodes_[static_cast<std::size_t>(root.id())].grad = Mat<T>::Ones(1, 1);
    for (int id = root.id(); id >= 0; --id) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad || !node.backward || node.grad.size() == 0) continue;
        node.backward(node.grad);
    }
}

std::shared_ptr<const ConvGeometry> ConvGeometry::make(Shape input, Index out_channels, Index kernel,
                                                       Index stride, Index padding) {
    if (kernel < 1 || stride < 1 || padding < 0)
        throw Error("bad_layer", "conv2d needs kernel >= 1, stride >= 1, padding >= 0");
    const Index out_h = (input.height + 2 * padding - kernel) / stride + 1;
    const Index out_w = (input.width + 2 * padding - kernel) / stride + 1;
    if (out_h < 1 || out_w < 1) throw Error("shape_mismatch", "conv2d kernel larger than padded input");
    auto g = std::make_shared<ConvGeometry>();
    g->input = input;
    g->output = Shape{out_channels, out_h, out_w};
    g->kernel = kernel;
    g->stride = stride;
    g->padding = padding;
    const Index cols = g->patch_size();
    g->gather.assign(static_cast<std::size_t>(out_h * out_w * cols), -1);
    for (Index oh = 0; oh < out_h; ++oh) {
        for (Index ow = 0; ow < out_w; ++ow) {
            const Index p = oh * out_w + ow;
            for (Index c = 0; c < input.channels; ++c) {
                for (Index kh = 0; kh < kernel; ++kh) {
                    for (Index kw = 0; kw < kernel; ++kw) {
                        const Index ih = oh * stride - padding + kh;
                        const Index iw = ow * stride - padding + kw;
                        const Index q = (c * kernel + kh) * kernel + kw;
                        if (ih < 0 || iw < 0 || ih >= input.height || iw >= input.width) continue;
                        g->gather[static_cast<std::size_t>(p * cols + q)] =
                            (c * input.height + ih) * input.width + iw;
                    }
                }
            }
        }
    }
    return g;
}

namespace {

template <class T>
Mat<T> im2col(const Mat<T>& x, const ConvGeometry& g) {
    const Index batch = x.rows();
    const Index positions = g.positions();
    const Index cols = g.patch_size();
    Mat<T> out(batch * positions, cols);
    for (Index b = 0; b < batch; ++b) {
        const T* src = x.row(b).data();
        for (Index p = 0; p < positions; ++p) {
            T* dst = out.row(b * positions + p).data();
            const Index* idx = g.gather.data() + p * cols;
            for (Index q = 0; q < cols; ++q) dst[q] = idx[q] < 0 ? T(0) : src[idx[q]];
        }
    }
    return out;
}

// Scatter-add of patch rows back onto flat inputs (adjoint of im2col).
template <class T>
Mat<T> col2im(const Mat<T>& cols_mat, Index batch, const ConvGeometry& g) {
    const Index positions = g.positions();
    const Index cols = g.patch_size();
    Mat<T> out = Mat<T>::Zero(batch, g.input.size());
    for (Index b = 0; b < batch; ++b) {
        T* dst = out.row(b).data();
        for (Index p = 0; p < positions; ++p) {
            const T* src = cols_mat.row(b * positions + p).data();
            const Index* idx = g.gather.data() + p * cols;
            for (Index q = 0; q < cols; ++q)
                if (idx[q] >= 0) dst[idx[q]] += src[q];
        }
    }
    return out;
}

// (B*P x C) position-major <-> (B x C*P) channel-major.
template <class T>
Mat<T> positions_to_channels(const Mat<T>& y, Index batch, Index positions) {
    const Index channels = y.cols();
    Mat<T> out(batch, channels * positions);
    for (Index b = 0; b < batch; ++b)
        for (Index p = 0; p < positions; ++p)
            for (Index c = 0; c < channels; ++c) out(b, c * positions + p) = y(b * positions + p, c);
    return out;
}

template <class T>
Mat<T> channels_to_positions(const Mat<T>& x, Index positions) {
    const Index batch = x.rows();
    const Index channels = x.cols() / positions;
    Mat<T> out(batch * positions, channels);
    for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < channels; ++c)
            for (Index p = 0; p < positions; ++p) out(b * positions + p, c) = x(b, c * positions + p);
    return out;
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error("shape_mismatch", std::string(op) + ": operand shapes differ");
}

template <class T>
Mat<T> log_softmax(const Mat<T>& z) {
    Mat<T> out(z.rows(), z.cols());
    for (Index r = 0; r < z.rows(); ++r) {
        const T m = z.row(r).maxCoeff();
        const T lse = m + std::log((z.row(r).array() - m).exp().sum());
        out.row(r) = z.row(r).array() - lse;
    }
    return out;
}

}  // namespace

template <class T>
Mat<T> conv2d_forward(const Mat<T>& x, const Mat<T>& w, const ConvGeometry& g) {
    const Mat<T> cols = im2col(x, g);
    const Mat<T> y = cols * w.transpose();
    return positions_to_channels(y, x.rows(), g.positions());
}

namespace ad {

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "add");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    return t->push(a.value() + b.value(), {a, b}, [t, ia, ib](const Mat<T>& g) {
        t->accumulate(ia, g);
        t->accumulate(ib, g);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "sub");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    return t->push(a.value() - b.value(), {a, b}, [t, ia, ib](const Mat<T>& g) {
        t->accumulate(ia, g);
        t->accumulate(ib, -g);
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "mul");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    return t->push(a.value().cwiseProduct(b.value()), {a, b}, [t, ia, ib](const Mat<T>& g) {
        if (t->requires_grad(ia)) t->accumulate(ia, g.cwiseProduct(t->value(ib)));
        if (t->requires_grad(ib)) t->accumulate(ib, g.cwiseProduct(t->value(ia)));
    });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "div");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    return t->push(a.value().cwiseQuotient(b.value()), {a, b}, [t, ia, ib](const Mat<T>& g) {
        const Mat<T>& bv = t->value(ib);
        if (t->requires_grad(ia)) t->accumulate(ia, g.cwiseQuotient(bv));
        if (t->requires_grad(ib)) {
            const Mat<T>& av = t->value(ia);
            t->accumulate(ib, (-g.array() * av.array() / bv.array().square()).matrix());
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push(a.value() * s, {a}, [t, ia, s](const Mat<T>& g) { t->accumulate(ia, g * s); });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push((a.value().array() + s).matrix(), {a}, [t, ia](const Mat<T>& g) { t->accumulate(ia, g); });
}

template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw Error("shape_mismatch", "add_row: bad row shape");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ir = row.id();
    Mat<T> out = a.value().rowwise() + row.value().row(0);
    return t->push(std::move(out), {a, row}, [t, ia, ir](const Mat<T>& g) {
        t->accumulate(ia, g);
        if (t->requires_grad(ir)) t->accumulate(ir, g.colwise().sum());
    });
}

template <class T>
Var<T> add_col(const Var<T>& a, const Var<T>& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw Error("shape_mismatch", "add_col: bad column shape");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ic = col.id();
    Mat<T> out = a.value().colwise() + col.value().col(0);
    return t->push(std::move(out), {a, col}, [t, ia, ic](const Mat<T>& g) {
        t->accumulate(ia, g);
        if (t->requires_grad(ic)) t->accumulate(ic, g.rowwise().sum());
    });
}

template <class T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) throw Error("shape_mismatch", "mul_col: bad column shape");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ic = col.id();
    Mat<T> out = (a.value().array().colwise() * col.value().col(0).array()).matrix();
    return t->push(std::move(out), {a, col}, [t, ia, ic](const Mat<T>& g) {
        if (t->requires_grad(ia))
            t->accumulate(ia, (g.array().colwise() * t->value(ic).col(0).array()).matrix());
        if (t->requires_grad(ic)) t->accumulate(ic, g.cwiseProduct(t->value(ia)).rowwise().sum());
    });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.cols() != b.rows()) throw Error("shape_mismatch", "matmul: inner dimensions differ");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    Mat<T> out = a.value() * b.value();
    return t->push(std::move(out), {a, b}, [t, ia, ib](const Mat<T>& g) {
        if (t->requires_grad(ia)) t->accumulate(ia, g * t->value(ib).transpose());
        if (t->requires_grad(ib)) t->accumulate(ib, t->value(ia).transpose() * g);
    });
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    if (a.cols() != b.cols()) throw Error("shape_mismatch", "matmul_nt: inner dimensions differ");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    Mat<T> out = a.value() * b.value().transpose();
    return t->push(std::move(out), {a, b}, [t, ia, ib](const Mat<T>& g) {
        if (t->requires_grad(ia)) t->accumulate(ia, g * t->value(ib));
        if (t->requires_grad(ib)) t->accumulate(ib, g.transpose() * t->value(ia));
    });
}

template <class T>
Var<T> abs(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push(a.value().cwiseAbs(), {a}, [t, ia](const Mat<T>& g) {
        const Mat<T>& av = t->value(ia);
        Mat<T> d = av.unaryExpr([](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
        t->accumulate(ia, g.cwiseProduct(d));
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push(a.value().cwiseMax(T(0)), {a}, [t, ia](const Mat<T>& g) {
        const Mat<T>& av = t->value(ia);
        t->accumulate(ia, (av.array() > T(0)).select(g, T(0)).matrix());
    });
}

template <class T>
Var<T> exp(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    Mat<T> out = a.value().array().exp().matrix();
    auto held = std::make_shared<Mat<T>>(out);
    return t->push(std::move(out), {a}, [t, ia, held](const Mat<T>& g) { t->accumulate(ia, g.cwiseProduct(*held)); });
}

template <class T>
Var<T> log(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push(a.value().array().log().matrix(), {a},
                   [t, ia](const Mat<T>& g) { t->accumulate(ia, g.cwiseQuotient(t->value(ia))); });
}

template <class T>
Var<T> square(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push(a.value().array().square().matrix(), {a},
                   [t, ia](const Mat<T>& g) { t->accumulate(ia, (g.array() * t->value(ia).array() * T(2)).matrix()); });
}

template <class T>
Var<T> clamp_min(const Var<T>& a, T floor) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    return t->push(a.value().cwiseMax(floor), {a}, [t, ia, floor](const Mat<T>& g) {
        t->accumulate(ia, (t->value(ia).array() >= floor).select(g, T(0)).matrix());
    });
}

template <class T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "minimum");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    return t->push(a.value().cwiseMin(b.value()), {a, b}, [t, ia, ib](const Mat<T>& g) {
        const auto pick_a = (t->value(ia).array() <= t->value(ib).array());
        if (t->requires_grad(ia)) t->accumulate(ia, pick_a.select(g, T(0)).matrix());
        if (t->requires_grad(ib)) t->accumulate(ib, pick_a.select(T(0), g).matrix());
    });
}

template <class T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "maximum");
    Tape<T>* t = a.tape();
    const int ia = a.id(), ib = b.id();
    return t->push(a.value().cwiseMax(b.value()), {a, b}, [t, ia, ib](const Mat<T>& g) {
        const auto pick_a = (t->value(ia).array() >= t->value(ib).array());
        if (t->requires_grad(ia)) t->accumulate(ia, pick_a.select(g, T(0)).matrix());
        if (t->requires_grad(ib)) t->accumulate(ib, pick_a.select(T(0), g).matrix());
    });
}

template <class T>
Var<T> sum(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    const Index r = a.rows(), c = a.cols();
    Mat<T> out(1, 1);
    out(0, 0) = a.value().sum();
    return t->push(std::move(out), {a}, [t, ia, r, c](const Mat<T>& g) {
        t->accumulate(ia, Mat<T>::Constant(r, c, g(0, 0)));
    });
}

template <class T>
Var<T> mean(const Var<T>& a) {
    const T n = static_cast<T>(a.value().size());
    return scale(sum(a), T(1) / n);
}

template <class T>
Var<T> rowsum(const Var<T>& a) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    const Index c = a.cols();
    return t->push(a.value().rowwise().sum(), {a}, [t, ia, c](const Mat<T>& g) {
        t->accumulate(ia, g.col(0).replicate(1, c));
    });
}

template <class T>
Var<T> repeat_rows(const Var<T>& a, Index k) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    const Index r = a.rows(), c = a.cols();
    Mat<T> out(r * k, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < k; ++j) out.row(i * k + j) = a.value().row(i);
    return t->push(std::move(out), {a}, [t, ia, r, c, k](const Mat<T>& g) {
        Mat<T> ga = Mat<T>::Zero(r, c);
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < k; ++j) ga.row(i) += g.row(i * k + j);
        t->accumulate(ia, ga);
    });
}

template <class T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
    if (rows * cols != a.value().size()) throw Error("shape_mismatch", "reshape: element count differs");
    Tape<T>* t = a.tape();
    const int ia = a.id();
    const Index r0 = a.rows(), c0 = a.cols();
    Mat<T> out = Eigen::Map<const Mat<T>>(a.value().data(), rows, cols);
    return t->push(std::move(out), {a}, [t, ia, r0, c0](const Mat<T>& g) {
        t->accumulate(ia, Eigen::Map<const Mat<T>>(g.data(), r0, c0));
    });
}

template <class T>
Var<T> gather_rows(const Var<T>& a, const std::vector<Index>& rows) {
    Tape<T>* t = a.tape();
    const int ia = a.id();
    const Index r = a.rows(), c = a.cols();
    Mat<T> out(static_cast<Index>(rows.size()), c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= r) throw Error("shape_mismatch", "gather_rows: index out of range");
        out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
    }
    return t->push(std::move(out), {a}, [t, ia, r, c, rows](const Mat<T>& g) {
        Mat<T> ga = Mat<T>::Zero(r, c);
        for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
        t->accumulate(ia, ga);
    });
}

template <class T>
Var<T> pick(const Var<T>& a, const std::vector<Index>& cols) {
    if (static_cast<Index>(cols.size()) != a.rows()) throw Error("shape_mismatch", "pick: one column per row");
    Tape<T>* t = a.tape();
    const int ia = a.id();
    const Index r = a.rows(), c = a.cols();
    Mat<T> out(r, 1);
    for (Index i = 0; i < r; ++i) out(i, 0) = a.value()(i, cols[static_cast<std::size_t>(i)]);
    return t->push(std::move(out), {a}, [t, ia, r, c, cols](const Mat<T>& g) {
        Mat<T> ga = Mat<T>::Zero(r, c);
        for (Index i = 0; i < r; ++i) ga(i, cols[static_cast<std::size_t>(i)]) = g(i, 0);
        t->accumulate(ia, ga);
    });
}

template <class T>
Var<T> channel_mul(const Var<T>& x, const Var<T>& s, Index spatial) {
    const Index channels = s.cols();
    if (s.rows() != 1 || channels * spatial != x.cols()) throw Error("shape_mismatch", "channel_mul: bad shapes");
    Tape<T>* t = x.tape();
    const int ix = x.id(), is = s.id();
    const RowVec<T> expanded = s.value().row(0).replicate(spatial, 1).reshaped(1, channels * spatial);
    Mat<T> out = (x.value().array().rowwise() * expanded.array()).matrix();
    return t->push(std::move(out), {x, s}, [t, ix, is, expanded, channels, spatial](const Mat<T>& g) {
        if (t->requires_grad(ix)) t->accumulate(ix, (g.array().rowwise() * expanded.array()).matrix());
        if (t->requires_grad(is)) {
            const RowVec<T> flat = g.cwiseProduct(t->value(ix)).colwise().sum();
            Mat<T> gs(1, channels);
            for (Index c = 0; c < channels; ++c) gs(0, c) = flat.segment(c * spatial, spatial).sum();
            t->accumulate(is, gs);
        }
    });
}

template <class T>
Var<T> channel_add(const Var<T>& x, const Var<T>& s, Index spatial) {
    const Index channels = s.cols();
    if (s.rows() != 1 || channels * spatial != x.cols()) throw Error("shape_mismatch", "channel_add: bad shapes");
    Tape<T>* t = x.tape();
    const int ix = x.id(), is = s.id();
    const RowVec<T> expanded = s.value().row(0).replicate(spatial, 1).reshaped(1, channels * spatial);
    Mat<T> out = x.value().rowwise() + expanded;
    return t->push(std::move(out), {x, s}, [t, ix, is, channels, spatial](const Mat<T>& g) {
        t->accumulate(ix, g);
        if (t->requires_grad(is)) {
            const RowVec<T> flat = g.colwise().sum();
            Mat<T> gs(1, channels);
            for (Index c = 0; c < channels; ++c) gs(0, c) = flat.segment(c * spatial, spatial).sum();
            t->accumulate(is, gs);
        }
    });
}

template <class T>
Var<T> channel_sum(const Var<T>& x, Index spatial) {
    if (x.cols() % spatial != 0) throw Error("shape_mismatch", "channel_sum: bad spatial size");
    const Index channels = x.cols() / spatial;
    Tape<T>* t = x.tape();
    const int ix = x.id();
    const Index rows = x.rows();
    Mat<T> out(rows, channels);
    for (Index c = 0; c < channels; ++c) out.col(c) = x.value().middleCols(c * spatial, spatial).rowwise().sum();
    return t->push(std::move(out), {x}, [t, ix, rows, channels, spatial](const Mat<T>& g) {
        Mat<T> gx(rows, channels * spatial);
        for (Index c = 0; c < channels; ++c) gx.middleCols(c * spatial, spatial) = g.col(c).replicate(1, spatial);
        t->accumulate(ix, gx);
    });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const ConvGeometry& g) {
    if (x.cols() != g.input.size() || w.cols() != g.patch_size() || w.rows() != g.output.channels)
        throw Error("shape_mismatch", "conv2d: input or kernel shape does not match geometry");
    Tape<T>* t = x.tape();
    const int ix = x.id(), iw = w.id();
    const Index batch = x.rows();
    auto cols = std::make_shared<Mat<T>>(im2col(x.value(), g));
    Mat<T> out = positions_to_channels<T>((*cols) * w.value().transpose(), batch, g.positions());
    const ConvGeometry* geom = &g;
    return t->push(std::move(out), {x, w}, [t, ix, iw, cols, geom, batch](const Mat<T>& gout) {
        const Mat<T> dy = channels_to_positions(gout, geom->positions());
        if (t->requires_grad(iw)) t->accumulate(iw, dy.transpose() * (*cols));
        if (t->requires_grad(ix)) t->accumulate(ix, col2im<T>(dy * t->value(iw), batch, *geom));
    });
}

template <class T>
Var<T> conv2d_transpose(const Var<T>& a, const Var<T>& w, const ConvGeometry& g) {
    if (a.cols() != g.output.size() || w.cols() != g.patch_size() || w.rows() != g.output.channels)
        throw Error("shape_mismatch", "conv2d_transpose: shapes do not match geometry");
    Tape<T>* t = a.tape();
    const int ia = a.id(), iw = w.id();
    const Index rows = a.rows();
    auto ya = std::make_shared<Mat<T>>(channels_to_positions(a.value(), g.positions()));
    Mat<T> out = col2im<T>((*ya) * w.value(), rows, g);
    const ConvGeometry* geom = &g;
    return t->push(std::move(out), {a, w}, [t, ia, iw, ya, geom, rows](const Mat<T>& gout) {
        const Mat<T> dg = im2col(gout, *geom);
        if (t->requires_grad(iw)) t->accumulate(iw, ya->transpose() * dg);
        if (t->requires_grad(ia))
            t->accumulate(ia, positions_to_channels<T>(dg * t->value(iw).transpose(), rows, geom->positions()));
    });
}

template <class T>
Var<T> cross_entropy_rows(const Var<T>& logits, const Labels& labels) {
    if (static_cast<Index>(labels.size()) != logits.rows()) throw Error("shape_mismatch", "cross_entropy: label count");
    Tape<T>* t = logits.tape();
    const int il = logits.id();
    const Index rows = logits.rows();
    auto logp = std::make_shared<Mat<T>>(log_softmax(logits.value()));
    Mat<T> out(rows, 1);
    for (Index r = 0; r < rows; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= logits.cols()) throw Error("bad_label", "label out of range");
        out(r, 0) = -(*logp)(r, y);
    }
    return t->push(std::move(out), {logits}, [t, il, logp, labels, rows](const Mat<T>& g) {
        Mat<T> gl = logp->array().exp().matrix();
        for (Index r = 0; r < rows; ++r) {
            gl(r, labels[static_cast<std::size_t>(r)]) -= T(1);
            gl.row(r) *= g(r, 0);
        }
        t->accumulate(il, gl);
    });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, const Labels& labels) {
    return mean(cross_entropy_rows(logits, labels));
}

}  // namespace ad

#define CERTKIT_INSTANTIATE_AD(T)                                                                   \
    template class Tape<T>;                                                                        \
    template Mat<T> conv2d_forward<T>(const Mat<T>&, const Mat<T>&, const ConvGeometry&);          \
    namespace ad {                                                                                 \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> div<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> scale<T>(const Var<T>&, T);                                                    \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                               \
    template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> add_col<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> mul_col<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                       \
    template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                                    \
    template Var<T> abs<T>(const Var<T>&);                                                         \
    template Var<T> relu<T>(const Var<T>&);                                                        \
    template Var<T> exp<T>(const Var<T>&);                                                         \
    template Var<T> log<T>(const Var<T>&);                                                         \
    template Var<T> square<T>(const Var<T>&);                                                      \
    template Var<T> clamp_min<T>(const Var<T>&, T);                                                \
    template Var<T> minimum<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> maximum<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> sum<T>(const Var<T>&);                                                         \
    template Var<T> mean<T>(const Var<T>&);                                                        \
    template Var<T> rowsum<T>(const Var<T>&);                                                      \
    template Var<T> repeat_rows<T>(const Var<T>&, Index);                                          \
    template Var<T> reshape<T>(const Var<T>&, Index, Index);                                       \
    template Var<T> gather_rows<T>(const Var<T>&, const std::vector<Index>&);                    \
    template Var<T> pick<T>(const Var<T>&, const std::vector<Index>&);                             \
    template Var<T> channel_mul<T>(const Var<T>&, const Var<T>&, Index);                           \
    template Var<T> channel_add<T>(const Var<T>&, const Var<T>&, Index);                           \
    template Var<T> channel_sum<T>(const Var<T>&, Index);                                          \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const ConvGeometry&);                  \
    template Var<T> conv2d_transpose<T>(const Var<T>&, const Var<T>&, const ConvGeometry&);        \
    template Var<T> cross_entropy<T>(const Var<T>&, const Labels&);                                \
    template Var<T> cross_entropy_rows<T>(const Var<T>&, const Labels&);                           \
    }

CERTKIT_INSTANTIATE_AD(float)
CERTKIT_INSTANTIATE_AD(double)

}  // namespace certkit
