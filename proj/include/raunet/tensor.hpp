#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace raunet {

using Shape = std::vector<std::size_t>;

/// Element count of a shape; rank 0 is a scalar with one element.
inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

template <class T>
class Tape;
template <class T>
class Tensor;

namespace detail {

/// 64-byte aligned allocation. Eigen picks its vectorised loop peeling from
/// pointer alignment, so a fixed alignment keeps results independent of
/// where the heap places a buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <class T>
struct Storage {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;
    bool requires_grad = false;
    std::optional<std::size_t> node_id;
    const Tape<T>* tape = nullptr;
};

template <class T>
Tape<T>*& active_tape_slot() {
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

template <class T>
const std::shared_ptr<Storage<T>>& storage(const Tensor<T>& t);

}  // namespace detail

/// Dense row-major array with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets parameters held by a model receive gradients from the tape. Use
/// clone() for an independent copy.
template <class T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor element type must be floating point");

public:
    using value_type = T;

    /// Undefined handle (no storage). Used for optional operands such as bias.
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<detail::Storage<T>>()) {
        impl_->data.assign(numel(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::Storage<T>>()) {
        if (values.size() != numel(shape)) {
            throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                        " values do not fill shape " + shape_str(shape));
        }
        impl_->shape = std::move(shape);
        impl_->data.assign(values.begin(), values.end());
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(T value) { return Tensor(Shape{}, value); }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return checked().shape; }
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) throw std::out_of_range("Tensor::dim: axis out of range for " + shape_str(shape()));
        return shape()[axis];
    }
    std::size_t size() const { return checked().data.size(); }

    std::span<const T> data() const { return checked().data; }
    std::span<T> data() { return checked().data; }

    T item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item on shape " + shape_str(shape()));
        return checked().data[0];
    }

    /// Element access for rank-4 NCHW tensors.
    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return checked().data[offset4(n, c, h, w)];
    }
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return checked().data[offset4(n, c, h, w)];
    }

    bool requires_grad() const { return checked().requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        checked().requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !checked().grad.empty(); }
    /// Empty span when no gradient has been accumulated.
    std::span<const T> grad() const { return checked().grad; }
    std::span<T> mutable_grad() {
        auto& s = checked();
        if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
        return s.grad;
    }
    void zero_grad() { std::fill(checked().grad.begin(), checked().grad.end(), T(0)); }
    void clear_grad() { checked().grad.clear(); }

    std::optional<std::size_t> node_id() const { return checked().node_id; }

    /// Deep copy of the values; the copy is a leaf with no gradient.
    Tensor clone() const { return Tensor(shape(), std::vector<T>(data().begin(), data().end())); }
    Tensor detach() const { return clone(); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(size());
        std::transform(data().begin(), data().end(), out.begin(), [](T v) { return static_cast<U>(v); });
        Tensor<U> t(shape(), std::move(out));
        t.set_requires_grad(requires_grad());
        return t;
    }

    bool aliases(const Tensor& other) const { return impl_ == other.impl_; }

private:
    friend const std::shared_ptr<detail::Storage<T>>& detail::storage<T>(const Tensor<T>&);

    detail::Storage<T>& checked() const {
        if (!impl_) throw std::logic_error("use of undefined Tensor");
        return *impl_;
    }

    std::size_t offset4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        const Shape& s = shape();
        if (s.size() != 4) throw std::invalid_argument("Tensor::at expects rank 4, got " + shape_str(s));
        return ((n * s[1] + c) * s[2] + h) * s[3] + w;
    }

    std::shared_ptr<detail::Storage<T>> impl_;
};

namespace detail {
template <class T>
const std::shared_ptr<Storage<T>>& storage(const Tensor<T>& t) {
    if (!t.impl_) throw std::logic_error("use of undefined Tensor");
    return t.impl_;
}
}  // namespace detail

/// Recording of differentiable operations in execution order.
///
/// Nodes are appended as operations run, so recording order is a valid
/// topological order. backward() sweeps it once in reverse. Gradients of
/// leaf tensors (requires_grad, not produced on the tape) accumulate across
/// calls; gradients of intermediate results are scratch and reset per call.
template <class T>
class Tape {
    using StoragePtr = std::shared_ptr<detail::Storage<T>>;

public:
    class GradContext {
    public:
        std::span<const T> output_grad() const { return out_->grad; }
        bool needs_grad(std::size_t i) const { return !(*grads_)[i].empty(); }
        /// Empty when input i does not need a gradient.
        std::span<T> input_grad(std::size_t i) const { return (*grads_)[i]; }

    private:
        friend class Tape;
        const detail::Storage<T>* out_ = nullptr;
        const std::vector<std::span<T>>* grads_ = nullptr;
    };
    using BackwardFn = std::function<void(const GradContext&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() { clear(); }

    std::size_t size() const { return nodes_.size(); }

    /// True when the tensor is a leaf requiring grad or a result recorded here.
    bool tracks(const Tensor<T>& t) const {
        const auto& s = detail::storage(t);
        return s->requires_grad || (s->node_id && s->tape == this);
    }

    void record(std::vector<Tensor<T>> inputs, const Tensor<T>& output, BackwardFn fn) {
        Node node;
        node.inputs.reserve(inputs.size());
        for (const auto& in : inputs) node.inputs.push_back(detail::storage(in));
        node.output = detail::storage(output);
        node.output->node_id = nodes_.size();
        node.output->tape = this;
        node.backward = std::move(fn);
        nodes_.push_back(std::move(node));
    }

    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1) {
            throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
        }
        const auto& ls = detail::storage(loss);
        if (!ls->node_id || ls->tape != this) {
            if (ls->requires_grad) {
                Tensor<T> leaf = loss;
                leaf.mutable_grad()[0] += T(1);
                return;
            }
            throw std::invalid_argument("backward: loss is not recorded on this tape");
        }
        const std::size_t last = *ls->node_id;
        for (std::size_t i = 0; i <= last; ++i) {
            auto& out = *nodes_[i].output;
            out.grad.assign(out.data.size(), T(0));
            for (const auto& in : nodes_[i].inputs) {
                if (in->requires_grad && !in->node_id && in->grad.empty()) in->grad.assign(in->data.size(), T(0));
            }
        }
        ls->grad[0] = T(1);

        std::vector<std::span<T>> grads;
        GradContext ctx;
        ctx.grads_ = &grads;
        for (std::size_t i = last + 1; i-- > 0;) {
            Node& node = nodes_[i];
            const auto& og = node.output->grad;
            if (std::all_of(og.begin(), og.end(), [](T v) { return v == T(0); })) continue;
            grads.clear();
            for (const auto& in : node.inputs) {
                const bool needed = in->requires_grad || (in->node_id && in->tape == this);
                grads.push_back(needed ? std::span<T>(in->grad) : std::span<T>());
            }
            ctx.out_ = node.output.get();
            node.backward(ctx);
        }
    }

    /// Drops all nodes and detaches their outputs from this tape.
    void clear() {
        for (auto& node : nodes_) {
            if (node.output->tape == this) {
                node.output->node_id.reset();
                node.output->tape = nullptr;
                node.output->grad.clear();
            }
        }
        nodes_.clear();
    }

private:
    struct Node {
        std::vector<StoragePtr> inputs;
        StoragePtr output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

template <class T>
Tape<T>* active_tape() {
    return detail::active_tape_slot<T>();
}

/// Makes a tape the recording target for operations on this thread.
template <class T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) { detail::active_tape_slot<T>() = &tape; }
    ~TapeScope() { detail::active_tape_slot<T>() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Suspends recording on this thread.
template <class T>
class NoGradScope {
public:
    NoGradScope() : previous_(detail::active_tape_slot<T>()) { detail::active_tape_slot<T>() = nullptr; }
    ~NoGradScope() { detail::active_tape_slot<T>() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* previous_;
};

namespace detail {

/// Records `fn` for `out` if a tape is active and any input is tracked by it.
template <class T>
void record_if_tracked(std::vector<Tensor<T>> inputs, const Tensor<T>& out, typename Tape<T>::BackwardFn fn) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [&](const Tensor<T>& t) { return tape->tracks(t); });
    if (any) tape->record(std::move(inputs), out, std::move(fn));
}

}  // namespace detail

}  // namespace raunet
