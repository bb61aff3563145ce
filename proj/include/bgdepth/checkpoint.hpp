#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bgdepth/config.hpp"
#include "bgdepth/tensor.hpp"

namespace bgdepth {

// Serialized training state. Binary format: magic "BGDC", u16 version,
// little-endian payload: config echo, named tensors (float32 data),
// optimizer slots (float64 moments), RNG state and the step counter.
// Model values are kept on the float32 grid during training, so the
// float32 payload restores them bit-exactly.
struct Checkpoint {
    Config config;

    struct TensorEntry {
        std::string name;
        std::vector<std::int64_t> shape;
        std::vector<float> data;
        bool trainable = true;
    };
    std::vector<TensorEntry> tensors;

    struct AdamSlot {
        std::string name;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::uint64_t adam_step = 0;
    std::vector<AdamSlot> adam_slots;

    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
    std::uint64_t step = 0;

    const TensorEntry* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bgdepth
