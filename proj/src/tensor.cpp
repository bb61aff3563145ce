#include "bgdepth/tensor.hpp"

#include <cmath>

namespace bgdepth {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::int64_t> shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 5) throw std::invalid_argument("tensor rank must be in [1,5]");
    for (std::int64_t d : shape_) {
        if (d < 1) throw std::invalid_argument("tensor extents must be >= 1");
    }
    st_ = std::make_shared<Storage>();
    st_->data.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

Tensor Tensor::from_vector(std::vector<std::int64_t> shape, std::vector<double> values) {
    Tensor t(shape);
    if (static_cast<std::int64_t>(values.size()) != t.numel())
        throw std::invalid_argument("from_vector: value count does not match shape");
    t.st_->data = std::move(values);
    return t;
}

std::int64_t Tensor::numel() const { return shape_numel(shape_); }

double* Tensor::data() {
    if (!st_) throw std::logic_error("undefined tensor");
    return st_->data.data();
}

const double* Tensor::data() const {
    if (!st_) throw std::logic_error("undefined tensor");
    return st_->data.data();
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor");
    return data()[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<Storage>();
    t.st_->data = st_->data;
    t.st_->requires_grad = st_->requires_grad;
    return t;
}

Tensor Tensor::reshape(std::vector<std::int64_t> new_shape) const {
    if (shape_numel(new_shape) != numel()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
}

bool Tensor::requires_grad() const { return st_ && st_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    if (!st_) throw std::logic_error("undefined tensor");
    st_->requires_grad = v;
}

double* Tensor::grad() const {
    if (!st_) throw std::logic_error("undefined tensor");
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
    return st_->grad.data();
}

bool Tensor::grad_allocated() const { return st_ && !st_->grad.empty(); }

void Tensor::zero_grad() const {
    if (st_ && !st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_op) {
    if (used_) throw std::logic_error("tape already consumed by backward()");
    ops_.push_back(std::move(backward_op));
}

void Tape::backward(const Tensor& loss) {
    if (used_) throw std::logic_error("tape already consumed by backward()");
    if (loss.numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
    used_ = true;
    loss.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

}  // namespace bgdepth
