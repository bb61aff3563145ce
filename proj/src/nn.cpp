#include "bgdepth/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace bgdepth {

Tensor ParamRegistry::add(const std::string& name, Tensor t, bool trainable) {
    if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
    if (trainable) t.set_requires_grad(true);
    items_.push_back({name, t, trainable});
    return t;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
    for (const auto& it : items_)
        if (it.name == name) return &it.value;
    return nullptr;
}

std::int64_t ParamRegistry::count(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& it : items_)
        if (!trainable_only || it.trainable) n += it.value.numel();
    return n;
}

void ParamRegistry::zero_grads() const {
    for (const auto& it : items_)
        if (it.trainable) it.value.zero_grad();
}

void ParamRegistry::quantize_f32() const {
    for (const auto& it : items_) {
        double* p = const_cast<Tensor&>(it.value).data();
        for (std::int64_t i = 0; i < it.value.numel(); ++i)
            p[i] = static_cast<double>(static_cast<float>(p[i]));
    }
}

Tensor he_uniform(const std::vector<std::int64_t>& shape, std::int64_t fan_in, Rng& rng) {
    if (fan_in < 1) throw std::invalid_argument("he_uniform: fan_in must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace bgdepth
