#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace bgdepth {

// Flat key=value configuration with dotted section prefixes. Lines starting
// with '#' and blank lines are ignored; whitespace around keys and values is
// trimmed. canonical() renders sorted lines and is the checkpoint echo.
class Config {
public:
    Config() = default;
    static Config from_file(const std::filesystem::path& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    std::string canonical() const;
    bool operator==(const Config& other) const { return values_ == other.values_; }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace bgdepth
