#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace bgdepth {

// Dense float64 N-d array handle. Copies share storage (and the gradient
// buffer), so a Tensor behaves like a reference to a typed buffer; clone()
// makes a deep copy. Rank is 1 to 5, layout row-major, last extent fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, double fill = 0.0);
    static Tensor from_vector(std::vector<std::int64_t> shape, std::vector<double> values);

    bool defined() const { return st_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const;

    double* data();
    const double* data() const;
    double item() const;  // requires numel() == 1

    Tensor clone() const;
    Tensor reshape(std::vector<std::int64_t> new_shape) const;  // shares storage

    bool requires_grad() const;
    void set_requires_grad(bool v);

    // Gradient buffer, lazily allocated (zeros) on first access.
    double* grad() const;
    bool grad_allocated() const;
    void zero_grad() const;

    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

private:
    struct Storage {
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> st_;
    std::vector<std::int64_t> shape_;
};

// Reverse-mode record. Activating a Tape (RAII) makes differentiable ops
// append backward closures; backward(loss) replays them in reverse. A tape
// is single-shot: recording onto or re-running a consumed tape throws.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and accumulates into .grad() of every
    // gradient-requiring tensor reachable from the loss. loss must be scalar.
    void backward(const Tensor& loss);

    static Tape* active();
    void record(std::function<void()> backward_op);
    std::size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
    bool used_ = false;
    Tape* prev_ = nullptr;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

}  // namespace bgdepth
