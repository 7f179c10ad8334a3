#pragma once

// Tape-free reverse-mode differentiation: every Var owns a node that records
// its parents and a closure pushing its gradient back into them.

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "tunedetect/nn/tensor.hpp"

namespace tunedetect::nn {

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape);
        return grad;
    }
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
    [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
    [[nodiscard]] Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape; }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }
    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }

    void zero_grad() {
        if (node_->grad.size()) node_->grad.fill(T{0});
    }

    /// Result of an op: records parents and the backward closure when any
    /// parent needs a gradient and recording is enabled.
    static Var from_op(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> bw) {
        Var out(std::move(value));
        if (!detail::grad_mode()) return out;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        for (auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward = std::move(bw);
        return out;
    }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Backpropagate from `root`, seeding its gradient with `seed` (ones when empty).
template <class T>
void backward(const Var<T>& root, const Tensor<T>& seed = {}) {
    if (!root.requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    auto& g = root.node()->grad_buffer();
    if (seed.size()) {
        if (seed.size() != g.size()) throw DomainError("backward: seed shape mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    } else {
        for (auto& v : g.data) v += T{1};
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && n->grad.size()) n->backward(*n);
    }
}

// Gradient slot of parent i, allocated on demand.
template <class T>
Tensor<T>& parent_grad(Node<T>& n, std::size_t i) {
    return n.parents[i]->grad_buffer();
}

template <class T>
bool parent_wants_grad(const Node<T>& n, std::size_t i) {
    return n.parents[i]->requires_grad;
}

}  // namespace tunedetect::nn
