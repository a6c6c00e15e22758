#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "evt/errors.hpp"
#include "evt/tensor.hpp"

namespace evt {

// Debug verification mode: when enabled, every value written to a tape is
// checked for NaN/Inf and a NumericError is raised at the op that produced it.
inline bool& debug_checks_flag() {
    static bool flag = false;
    return flag;
}
inline void set_debug_checks(bool on) { debug_checks_flag() = on; }

// Fault injection for the gradcheck harness self-test: scales the input
// gradient of one named backward rule so the finite-difference comparison
// must catch it. Inactive unless a target is set.
namespace fault {
inline std::string& target() {
    static std::string t;
    return t;
}
inline void set(const std::string& op) { target() = op; }
inline void clear() { target().clear(); }
template <typename T>
inline T factor(const char* op) {
    return target() == op ? static_cast<T>(1.0009765625) : static_cast<T>(1);
}
}  // namespace fault

// Reverse-mode tape. One tape per forward pass; nodes are appended in
// evaluation order, so reverse iteration is a valid topological order.
template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Tensor<T>& val() const;
    size_t rows() const { return val().rows(); }
    size_t cols() const { return val().cols(); }
    size_t numel() const { return val().numel(); }
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        Tensor<T> value;
        std::vector<T> grad;  // empty until first contribution
        bool needs_grad = false;
        BackwardFn backward;  // empty for leaves and constants
    };

    Var<T> leaf(Tensor<T> value, bool needs_grad) {
        check_finite(value, "leaf");
        nodes_.push_back(Node{std::move(value), {}, needs_grad, {}});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    Var<T> make(Tensor<T> value, bool needs_grad, BackwardFn fn, const char* op) {
        check_finite(value, op);
        nodes_.push_back(Node{std::move(value), {}, needs_grad, needs_grad ? std::move(fn) : BackwardFn{}});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    // Gradient buffer of a node, allocated (zeroed) on first touch.
    std::vector<T>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad.assign(n.value.numel(), T{0});
        return n.grad;
    }

    bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse.
    void backward(Var<T> root) {
        if (value(root.id).numel() != 1) throw ShapeError("backward root must be a scalar");
        grad(root.id)[0] = T{1};
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.backward && !n.grad.empty()) n.backward(*this, id);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    void check_finite(const Tensor<T>& t, const char* op) const {
        if (debug_checks_flag() && !t.all_finite())
            throw NumericError(std::string("non-finite values produced by op '") + op + "'");
    }

    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::val() const {
    return tape->value(id);
}

}  // namespace evt
