#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value and a closure that
// pushes the node's gradient to its inputs. Nodes never move once created, so
// references returned by Var::value() stay valid for the lifetime of the tape.
// Closures are only stored when at least one input requires a gradient, which
// makes a tape without variables a plain evaluator.

#include "certkit/types.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>

namespace certkit {

template <class T>
class Tape;

template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

    const Mat<T>& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }

    Tape<T>* tape() const { return tape_; }
    int id() const { return id_; }

private:
    Tape<T>* tape_ = nullptr;
    int id_ = -1;
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(const Mat<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Mat<T> value) { return push(std::move(value), false, nullptr); }
    Var<T> variable(Mat<T> value) { return push(std::move(value), true, nullptr); }

    /// Records an op node. The closure is dropped when no input needs a gradient.
    Var<T> push(Mat<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in.requires_grad();
        return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
    }

    const Mat<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    void accumulate(int id, const Mat<T>& g) {
        auto& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.requires_grad) return;
        if (node.grad.size() == 0)
            node.grad = g;
        else
            node.grad += g;
    }

    /// Reverse sweep from a 1x1 root.
    void backward(const Var<T>& root);

    /// Gradient of a leaf (or any node) after backward(); zeros if nothing flowed in.
    Mat<T> grad(const Var<T>& v) const {
        const auto& node = nodes_[static_cast<std::size_t>(v.id())];
        if (node.grad.size() == 0) return Mat<T>::Zero(node.value.rows(), node.value.cols());
        return node.grad;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat<T> value;
        Mat<T> grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var<T> push(Mat<T> value, bool needs_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Mat<T>(), needs_grad, std::move(backward)});
        return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
    }

    std::deque<Node> nodes_;
};

template <class T>
const Mat<T>& Var<T>::value() const {
    return tape_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
    return tape_ != nullptr && tape_->requires_grad(id_);
}

/// im2col index table for one conv layer. gather[p * cols + q] is the flat
/// input index read by output position p and patch column q, or -1 for padding.
struct ConvGeometry {
    Shape input;
    Shape output;
    Index kernel = 1;
    Index stride = 1;
    Index padding = 0;
    std::vector<Index> gather;

    Index patch_size() const { return input.channels * kernel * kernel; }
    Index positions() const { return output.spatial(); }

    static std::shared_ptr<const ConvGeometry> make(Shape input, Index out_channels, Index kernel,
                                                    Index stride, Index padding);
};

namespace ad {

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> add_scalar(const Var<T>& a, T s);

/// a (R x C) + row (1 x C) broadcast over rows.
template <class T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
/// a (R x C) + col (R x 1) broadcast over columns.
template <class T> Var<T> add_col(const Var<T>& a, const Var<T>& col);
/// a (R x C) * col (R x 1) broadcast over columns.
template <class T> Var<T> mul_col(const Var<T>& a, const Var<T>& col);

template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a * b^T
template <class T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

template <class T> Var<T> abs(const Var<T>& a);
/// relu'(0) = 0.
template <class T> Var<T> relu(const Var<T>& a);
template <class T> Var<T> exp(const Var<T>& a);
template <class T> Var<T> log(const Var<T>& a);
template <class T> Var<T> square(const Var<T>& a);
template <class T> Var<T> clamp_min(const Var<T>& a, T floor);
/// Elementwise min/max; ties route the gradient to the first argument.
template <class T> Var<T> minimum(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> maximum(const Var<T>& a, const Var<T>& b);

template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> mean(const Var<T>& a);
/// R x C -> R x 1
template <class T> Var<T> rowsum(const Var<T>& a);
/// R x C -> (R*k) x C, each row repeated k times consecutively.
template <class T> Var<T> repeat_rows(const Var<T>& a, Index k);
template <class T> Var<T> reshape(const Var<T>& a, Index rows, Index cols);
/// out(r, :) = a(rows[r], :); gradients scatter-add back.
template <class T> Var<T> gather_rows(const Var<T>& a, const std::vector<Index>& rows);
/// out(r) = a(r, cols[r])
template <class T> Var<T> pick(const Var<T>& a, const std::vector<Index>& cols);

/// Per-channel ops on channel-major rows; `spatial` = H*W of each channel.
template <class T> Var<T> channel_mul(const Var<T>& x, const Var<T>& s, Index spatial);
template <class T> Var<T> channel_add(const Var<T>& x, const Var<T>& s, Index spatial);
/// R x (C*spatial) -> R x C
template <class T> Var<T> channel_sum(const Var<T>& x, Index spatial);

/// Convolution without bias. x: B x (Cin*H*W); w: Cout x (Cin*k*k).
template <class T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, const ConvGeometry& g);
/// Rows of `a` (over the conv output) multiplied by the conv's linear map:
/// a (R x Cout*P) -> R x (Cin*H*W). Used for back-substitution.
template <class T> Var<T> conv2d_transpose(const Var<T>& a, const Var<T>& w, const ConvGeometry& g);

/// Mean softmax cross-entropy over rows.
template <class T> Var<T> cross_entropy(const Var<T>& logits, const Labels& labels);
/// Per-row softmax cross-entropy, R x 1.
template <class T> Var<T> cross_entropy_rows(const Var<T>& logits, const Labels& labels);

}  // namespace ad

/// Plain (non-recording) helpers shared with the tape ops.
template <class T>
Mat<T> conv2d_forward(const Mat<T>& x, const Mat<T>& w, const ConvGeometry& g);

}  // namespace certkit
