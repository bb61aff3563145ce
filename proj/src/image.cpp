#include "bgdepth/image.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace bgdepth {

namespace {

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(const std::vector<char>& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) && buf[pos] != '#') {
        tok.push_back(buf[pos++]);
    }
    return tok;
}

long parse_header_int(const std::vector<char>& buf, std::size_t& pos, const char* what) {
    std::string tok = next_token(buf, pos);
    if (tok.empty()) throw MalformedHeaderError(std::string("missing ") + what + " in Netpbm header");
    for (char c : tok) {
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw MalformedHeaderError(std::string("non-numeric ") + what + " '" + tok + "' in Netpbm header");
    }
    errno = 0;
    long v = std::strtol(tok.c_str(), nullptr, 10);
    if (errno != 0) throw MalformedHeaderError(std::string("out-of-range ") + what + " in Netpbm header");
    return v;
}

struct PnmHeader {
    int channels = 0;  // 1 for P5, 3 for P6
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t payload_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<char>& buf, const std::filesystem::path& path) {
    if (buf.size() < 2) throw MalformedHeaderError("file too short for a Netpbm header: " + path.string());
    std::string magic{buf[0], buf[1]};
    PnmHeader h;
    if (magic == "P5") {
        h.channels = 1;
    } else if (magic == "P6") {
        h.channels = 3;
    } else {
        throw UnsupportedMagicError("unsupported Netpbm magic '" + magic + "' in " + path.string());
    }
    std::size_t pos = 2;
    long w = parse_header_int(buf, pos, "width");
    long hgt = parse_header_int(buf, pos, "height");
    long maxval = parse_header_int(buf, pos, "maxval");
    if (w < 1 || hgt < 1) throw MalformedHeaderError("non-positive dimensions in " + path.string());
    if (maxval < 1 || maxval > 65535) throw MalformedHeaderError("maxval out of range in " + path.string());
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        throw MalformedHeaderError("missing whitespace before payload in " + path.string());
    ++pos;  // exactly one whitespace byte separates header and payload
    h.width = static_cast<int>(w);
    h.height = static_cast<int>(hgt);
    h.maxval = static_cast<int>(maxval);
    h.payload_offset = pos;
    return h;
}

// Raw samples in file order; two-byte samples are big-endian.
std::vector<double> decode_samples(const std::vector<char>& buf, const PnmHeader& h,
                                   const std::filesystem::path& path) {
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height * h.channels;
    const int bytes = h.maxval > 255 ? 2 : 1;
    if (buf.size() < h.payload_offset + n * bytes)
        throw TruncatedPayloadError("truncated payload in " + path.string());
    std::vector<double> out(n);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + h.payload_offset;
    const double inv = 1.0 / h.maxval;
    if (bytes == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = p[i] * inv;
    } else {
        for (std::size_t i = 0; i < n; ++i)
            out[i] = (static_cast<unsigned>(p[2 * i]) << 8 | p[2 * i + 1]) * inv;
    }
    return out;
}

std::uint16_t quantize(double v, int maxval) {
    long q = std::lround(v * maxval);
    if (q < 0) q = 0;
    if (q > maxval) q = maxval;
    return static_cast<std::uint16_t>(q);
}

void write_pnm(const std::filesystem::path& path, const char* magic, int width, int height,
               int maxval, const std::vector<std::uint16_t>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << magic << "\n" << width << " " << height << "\n" << maxval << "\n";
    if (maxval > 255) {
        std::vector<unsigned char> bytes(samples.size() * 2);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            bytes[2 * i] = static_cast<unsigned char>(samples[i] >> 8);
            bytes[2 * i + 1] = static_cast<unsigned char>(samples[i] & 0xFF);
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    } else {
        std::vector<unsigned char> bytes(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) bytes[i] = static_cast<unsigned char>(samples[i]);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

void check_range(const std::vector<double>& data, const char* what) {
    for (double v : data) {
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument(std::string(what) + " value outside [0,1]");
    }
}

}  // namespace

ImageGray ImageRGB::channel(int c) const {
    ImageGray out(width, height);
    for (std::size_t i = 0; i < pixel_count(); ++i) out.data[i] = data[i * 3 + c];
    return out;
}

ImageRGB load_image(const std::filesystem::path& path) {
    std::vector<char> buf = read_file(path);
    PnmHeader h = parse_pnm_header(buf, path);
    std::vector<double> samples = decode_samples(buf, h, path);
    ImageRGB img(h.width, h.height);
    if (h.channels == 3) {
        img.data = std::move(samples);
    } else {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            img.data[i * 3 + 0] = samples[i];
            img.data[i * 3 + 1] = samples[i];
            img.data[i * 3 + 2] = samples[i];
        }
    }
    return img;
}

void save_image(const ImageGray& img, const std::filesystem::path& path, int maxval) {
    check_range(img.data, "gray");
    std::vector<std::uint16_t> samples(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) samples[i] = quantize(img.data[i], maxval);
    write_pnm(path, "P5", img.width, img.height, maxval, samples);
}

void save_image(const ImageRGB& img, const std::filesystem::path& path, int maxval) {
    check_range(img.data, "rgb");
    std::vector<std::uint16_t> samples(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) samples[i] = quantize(img.data[i], maxval);
    write_pnm(path, "P6", img.width, img.height, maxval, samples);
}

ImageGray to_gray(const ImageRGB& img) {
    ImageGray out(img.width, img.height);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        out.data[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
    }
    return out;
}

std::filesystem::path depth_sidecar_path(const std::filesystem::path& depth_path) {
    std::filesystem::path p = depth_path;
    p.replace_extension(".scale");
    return p;
}

namespace {

double read_scale_sidecar(const std::filesystem::path& depth_path) {
    const std::filesystem::path side = depth_sidecar_path(depth_path);
    if (!std::filesystem::exists(side)) return 0.001;
    std::ifstream in(side);
    if (!in) throw IoError("cannot open sidecar " + side.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
        if (key == "scale") {
            double s = 0.0;
            try {
                s = std::stod(line.substr(eq + 1));
            } catch (const std::exception&) {
                throw MalformedHeaderError("unparsable scale in " + side.string());
            }
            if (s <= 0.0) throw MalformedHeaderError("non-positive scale in " + side.string());
            return s;
        }
    }
    throw MalformedHeaderError("sidecar " + side.string() + " has no scale key");
}

}  // namespace

DepthMap load_depth(const std::filesystem::path& path) {
    std::vector<char> buf = read_file(path);
    PnmHeader h = parse_pnm_header(buf, path);
    if (h.channels != 1) throw MalformedHeaderError("depth map must be PGM (P5): " + path.string());
    if (h.maxval < 256) throw MalformedHeaderError("depth map must be 16-bit: " + path.string());
    const double scale = read_scale_sidecar(path);
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (buf.size() < h.payload_offset + n * 2)
        throw TruncatedPayloadError("truncated depth payload in " + path.string());
    DepthMap depth(h.width, h.height);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + h.payload_offset;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned raw = static_cast<unsigned>(p[2 * i]) << 8 | p[2 * i + 1];
        if (raw == 0) continue;  // invalid pixel sentinel
        depth.data[i] = raw * scale;
        depth.mask[i] = 1;
    }
    return depth;
}

void save_depth(const DepthMap& depth, const std::filesystem::path& path, double scale) {
    if (scale <= 0.0) throw std::invalid_argument("depth scale must be positive");
    const std::size_t n = depth.pixel_count();
    std::vector<std::uint16_t> samples(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!depth.mask[i]) continue;
        long q = std::lround(depth.data[i] / scale);
        if (q < 1) q = 1;  // keep valid pixels distinguishable from the 0 sentinel
        if (q > 65535) q = 65535;
        samples[i] = static_cast<std::uint16_t>(q);
    }
    write_pnm(path, "P5", depth.width, depth.height, 65535, samples);
    std::ofstream side(depth_sidecar_path(path));
    if (!side) throw IoError("cannot write sidecar for " + path.string());
    char buf[64];
    std::snprintf(buf, sizeof(buf), "scale=%.12g\n", scale);
    side << buf;
    if (!side) throw IoError("sidecar write failed for " + path.string());
}

}  // namespace bgdepth
