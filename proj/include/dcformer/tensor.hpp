#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "dcformer/common.hpp"

namespace dcformer {

class Tape;
namespace detail {
struct TapeAccess;
}

// Dense row-major tensor of 64-bit floats. Copies share storage; tensors are
// treated as immutable once an op has produced them. A tensor may carry a
// persistent gradient buffer (parameters) and a binding to the tape node that
// produced or watches it.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(numel(shape_), fill)) {}

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
        require_shape(numel(shape_) == values.size(),
                      "Tensor: data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<double>>(std::move(values));
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    const std::vector<double>& values() const { return *data_; }
    std::vector<double>& values() { return *data_; }
    const double* data() const { return data_->data(); }
    double* data() { return data_->data(); }

    double item() const {
        require(size() == 1, "Tensor::item: tensor is not scalar, shape " + shape_str(shape_));
        return (*data_)[0];
    }

    double& at(std::initializer_list<std::size_t> idx) {
        return (*data_)[flat_index(idx)];
    }
    double at(std::initializer_list<std::size_t> idx) const {
        return (*data_)[flat_index(idx)];
    }

    // Deep copy of the data (drops tape binding and gradient).
    Tensor clone() const {
        return defined() ? Tensor(shape_, *data_) : Tensor();
    }

    bool has_grad() const { return static_cast<bool>(grad_); }

    void ensure_grad() {
        if (!grad_) grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
    }

    const std::vector<double>& grad() const {
        require(has_grad(), "Tensor::grad: no gradient buffer; watch the tensor first");
        return *grad_;
    }
    std::vector<double>& grad() {
        require(has_grad(), "Tensor::grad: no gradient buffer; watch the tensor first");
        return *grad_;
    }

    double grad_norm() const {
        double s = 0.0;
        for (double g : grad()) s += g * g;
        return std::sqrt(s);
    }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
    }

    bool all_finite() const {
        for (double v : *data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<Tape> tape() const { return tape_.lock(); }
    int node() const { return node_; }
    bool tracked() const { return node_ >= 0 && !tape_.expired(); }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        require_shape(idx.size() == shape_.size(), "Tensor::at: rank mismatch");
        std::size_t flat = 0;
        std::size_t i = 0;
        for (std::size_t v : idx) {
            require_shape(v < shape_[i], "Tensor::at: index out of range");
            flat = flat * shape_[i] + v;
            ++i;
        }
        return flat;
    }

    Shape shape_{};
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<std::vector<double>> grad_;
    std::weak_ptr<Tape> tape_;
    int node_ = -1;

    friend class Tape;
    friend struct detail::TapeAccess;
};

// Define-by-run gradient tape. Operations are recorded in creation order,
// which is a valid topological order, so the backward sweep is a single
// reverse pass over the op list. Leaf (watched) tensors accumulate gradients
// into their own persistent buffers across backward calls; interior node
// buffers are scratch, refreshed lazily per pass. Confined to one thread.
class Tape : public std::enable_shared_from_this<Tape> {
public:
    static std::shared_ptr<Tape> make() { return std::make_shared<Tape>(); }

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf whose gradient buffer receives d(loss)/d(tensor).
    void watch(Tensor& t) {
        require(t.defined(), "Tape::watch: undefined tensor");
        require(!t.tracked(), "Tape::watch: tensor is already tracked");
        t.ensure_grad();
        Node node;
        node.size = t.size();
        node.buf = t.grad_;
        node.leaf = true;
        node.pass = 0;
        nodes_.push_back(std::move(node));
        t.tape_ = weak_from_this();
        t.node_ = static_cast<int>(nodes_.size()) - 1;
    }

    // Runs the backward sweep from a scalar loss. Repeated calls accumulate
    // into leaf gradients.
    void backward(const Tensor& loss) {
        require(loss.size() == 1, "Tape::backward: loss must be scalar");
        require(loss.tape().get() == this, "Tape::backward: loss was not produced on this tape");
        ++pass_;
        (*grad_sink(loss.node()))[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_ops() const { return ops_.size(); }

private:
    struct Node {
        std::size_t size = 0;
        std::shared_ptr<std::vector<double>> buf;
        bool leaf = false;
        std::uint64_t pass = 0;  // last backward pass that touched a scratch buffer
    };

    int add_interior(const Tensor& out) {
        Node node;
        node.size = out.size();
        node.leaf = false;
        nodes_.push_back(std::move(node));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void record(std::function<void()> rule) { ops_.push_back(std::move(rule)); }

    // Accumulation target for a node's gradient; allocates/zeros scratch for
    // interior nodes on first touch in the current pass. nullptr for
    // untracked inputs (node < 0).
    std::vector<double>* grad_sink(int node) {
        if (node < 0) return nullptr;
        Node& n = nodes_[static_cast<std::size_t>(node)];
        if (n.leaf) return n.buf.get();
        if (!n.buf) n.buf = std::make_shared<std::vector<double>>(n.size, 0.0);
        if (n.pass != pass_) {
            std::fill(n.buf->begin(), n.buf->end(), 0.0);
            n.pass = pass_;
        }
        return n.buf.get();
    }

    // Gradient of an op output; nullptr when nothing downstream contributed
    // in this pass (the op can be skipped).
    const std::vector<double>* grad_source(int node) const {
        const Node& n = nodes_[static_cast<std::size_t>(node)];
        if (!n.buf || n.pass != pass_) return nullptr;
        return n.buf.get();
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
    std::uint64_t pass_ = 0;

    friend struct detail::TapeAccess;
};

namespace detail {

// Internal bridge used by the op implementations (and by tests that build
// deliberately broken ops as negative controls).
struct TapeAccess {
    static void bind(Tensor& t, const std::shared_ptr<Tape>& tape, int node) {
        t.tape_ = tape;
        t.node_ = node;
    }
    static int add_interior(Tape& tape, const Tensor& out) { return tape.add_interior(out); }
    static void record(Tape& tape, std::function<void()> rule) { tape.record(std::move(rule)); }
    static std::vector<double>* grad_sink(Tape& tape, int node) { return tape.grad_sink(node); }
    static const std::vector<double>* grad_source(const Tape& tape, int node) {
        return tape.grad_source(node);
    }
    static std::shared_ptr<std::vector<double>> storage(const Tensor& t) { return t.data_; }

    // A tensor viewing existing storage under a new shape (used by reshape).
    static Tensor alias(Shape shape, std::shared_ptr<std::vector<double>> data) {
        Tensor t;
        require_shape(numel(shape) == data->size(), "alias: shape/storage size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    // Common prologue for op implementations: the shared tape of the inputs.
    static std::shared_ptr<Tape> joint_tape(std::initializer_list<const Tensor*> inputs) {
        std::shared_ptr<Tape> tape;
        for (const Tensor* t : inputs) {
            auto tp = t->tape();
            if (!tp) continue;
            if (!tape) {
                tape = tp;
            } else {
                require(tape == tp, "op: inputs recorded on different tapes");
            }
        }
        return tape;
    }

    // Registers `out` as an interior node; the caller records the backward
    // rule afterwards (it needs out.node()).
    static void attach(const std::shared_ptr<Tape>& tape, Tensor& out) {
        const int id = add_interior(*tape, out);
        bind(out, tape, id);
    }
};

}  // namespace detail

}  // namespace dcformer
