#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bgdepth/rng.hpp"
#include "bgdepth/tensor.hpp"

namespace bgdepth {

// Named model state: trainable parameters plus non-trainable buffers
// (batch-norm running statistics). Names are hierarchical dotted paths and
// are the checkpoint contract.
struct NamedTensor {
    std::string name;
    Tensor value;
    bool trainable = true;
};

class ParamRegistry {
public:
    // Registers and returns the tensor; trainable tensors get requires_grad.
    Tensor add(const std::string& name, Tensor t, bool trainable = true);

    std::vector<NamedTensor>& items() { return items_; }
    const std::vector<NamedTensor>& items() const { return items_; }
    const Tensor* find(const std::string& name) const;

    std::int64_t count(bool trainable_only) const;
    void zero_grads() const;

    // Rounds every stored value (parameters and buffers) to the nearest
    // float32. Model state lives on the float32 grid between steps, so
    // float32 checkpoints restore it bit-exactly.
    void quantize_f32() const;

private:
    std::vector<NamedTensor> items_;
};

// He-uniform fan-in initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(const std::vector<std::int64_t>& shape, std::int64_t fan_in, Rng& rng);

}  // namespace bgdepth
