#include "bgdepth/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "bgdepth/image.hpp"  // I/O error types

namespace bgdepth {

namespace {

constexpr char kMagic[4] = {'B', 'G', 'D', 'C'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    out.write(bytes, sizeof(T));
}

template <typename T>
T take(std::ifstream& in) {
    char bytes[sizeof(T)];
    in.read(bytes, sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::ifstream& in) {
    const auto n = take<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

}  // namespace

const Checkpoint::TensorEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put<std::uint16_t>(out, kVersion);
    put_string(out, ckpt.config.canonical());

    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        put_string(out, t.name);
        put<std::uint8_t>(out, t.trainable ? 1 : 0);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
        for (std::int64_t d : t.shape) put<std::int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }

    put<std::uint64_t>(out, ckpt.adam_step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.adam_slots.size()));
    for (const auto& slot : ckpt.adam_slots) {
        put_string(out, slot.name);
        put<std::uint64_t>(out, slot.m.size());
        out.write(reinterpret_cast<const char*>(slot.m.data()),
                  static_cast<std::streamsize>(slot.m.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(slot.v.data()),
                  static_cast<std::streamsize>(slot.v.size() * sizeof(double)));
    }

    put<std::uint64_t>(out, ckpt.rng_key);
    put<std::uint64_t>(out, ckpt.rng_counter);
    put<std::uint64_t>(out, ckpt.step);
    if (!out) throw IoError("checkpoint write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw UnsupportedMagicError("not a checkpoint: " + path.string());
    const auto version = take<std::uint16_t>(in);
    if (version != kVersion)
        throw MalformedHeaderError("unknown checkpoint version " + std::to_string(version) + " in " +
                                   path.string());
    Checkpoint ckpt;
    ckpt.config = Config::from_string(take_string(in));

    const auto n_tensors = take<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        Checkpoint::TensorEntry t;
        t.name = take_string(in);
        t.trainable = take<std::uint8_t>(in) != 0;
        const auto rank = take<std::uint8_t>(in);
        std::int64_t numel = 1;
        for (int r = 0; r < rank; ++r) {
            t.shape.push_back(take<std::int64_t>(in));
            numel *= t.shape.back();
        }
        if (!in || numel < 1) throw TruncatedPayloadError("corrupt tensor entry in " + path.string());
        t.data.resize(static_cast<std::size_t>(numel));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        ckpt.tensors.push_back(std::move(t));
    }

    ckpt.adam_step = take<std::uint64_t>(in);
    const auto n_slots = take<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_slots; ++i) {
        Checkpoint::AdamSlot slot;
        slot.name = take_string(in);
        const auto numel = take<std::uint64_t>(in);
        slot.m.resize(numel);
        in.read(reinterpret_cast<char*>(slot.m.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        slot.v.resize(numel);
        in.read(reinterpret_cast<char*>(slot.v.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        ckpt.adam_slots.push_back(std::move(slot));
    }

    ckpt.rng_key = take<std::uint64_t>(in);
    ckpt.rng_counter = take<std::uint64_t>(in);
    ckpt.step = take<std::uint64_t>(in);
    if (!in) throw TruncatedPayloadError("truncated checkpoint " + path.string());
    return ckpt;
}

}  // namespace bgdepth
