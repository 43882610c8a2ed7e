#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "occluscat/core/tensor.hpp"

namespace occluscat::ag {

// A trainable tensor. Gradients accumulate into `grad` across a backward pass
// and are zeroed by the optimizer step.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape());
    }
    void zero_grad() { grad.fill(0.0f); }
};

// Define-by-run reverse-mode tape. Creation order is a topological order, so
// backward() is a single reverse sweep. Ops are free functions that call
// emit(); closures capture the tape pointer and node ids, never references
// into the node vector (which may reallocate).
class Tape {
  public:
    using Id = int32_t;

    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily, only on the path to the loss
        std::function<void()> backward;
        bool needs_grad = false;
    };

    Id input(Tensor t) {
        nodes_.push_back(Node{std::move(t), Tensor(), nullptr, false});
        return static_cast<Id>(nodes_.size()) - 1;
    }

    Id leaf(Parameter& p) {
        Id id = static_cast<Id>(nodes_.size());
        nodes_.push_back(Node{p.value, Tensor(), nullptr, true});
        Parameter* pp = &p;
        Tape* tp = this;
        nodes_.back().backward = [tp, id, pp]() {
            const Tensor& g = tp->node(id).grad;
            float* dst = pp->grad.data();
            const float* src = g.data();
            for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
        };
        return id;
    }

    Id emit(Tensor value, bool needs_grad, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), needs_grad});
        return static_cast<Id>(nodes_.size()) - 1;
    }

    const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(Id id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }

    // Gradient buffer of a node, allocated on first touch.
    Tensor& grad(Id id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    // Accumulate src into the gradient of `id` if that node wants gradients.
    void add_grad(Id id, const float* src, int64_t n) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (!nd.needs_grad) return;
        Tensor& g = grad(id);
        float* dst = g.data();
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }

    void backward(Id loss) {
        check(val(loss).numel() == 1, "backward: loss must be scalar");
        grad(loss).fill(1.0f);
        for (Id i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad && n.backward && n.grad.defined()) n.backward();
        }
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

  private:
    std::vector<Node> nodes_;
};

using Id = Tape::Id;

}  // namespace occluscat::ag
