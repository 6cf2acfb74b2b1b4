#include "pdml/hsi_cube.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pdml/errors.hpp"

namespace pdml {

namespace {

constexpr std::size_t kHeaderBytes = 16;  // magic + three u32 dims

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const auto len = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(len);
    if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(len));
    if (!in) throw IoError("read failed: " + path);
    return buf;
}

void check_header(const std::vector<unsigned char>& buf, const char* magic,
                  const std::string& path) {
    if (buf.size() < kHeaderBytes || std::memcmp(buf.data(), magic, 4) != 0) {
        throw IoError(path + ": bad magic at byte offset 0 (expected \"" +
                      std::string(magic) + "\")");
    }
}

float f32_from_le(const unsigned char* p) {
    std::uint32_t bits = read_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

void f32_to_le(float f, unsigned char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    p[0] = static_cast<unsigned char>(bits & 0xff);
    p[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    p[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    p[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
}

}  // namespace

HsiCube load_cube(const std::string& path) {
    auto buf = read_file(path);
    check_header(buf, "HSC1", path);
    HsiCube cube;
    cube.height = read_u32(buf.data() + 4);
    cube.width = read_u32(buf.data() + 8);
    cube.bands = read_u32(buf.data() + 12);
    const std::size_t n = cube.height * cube.width * cube.bands;
    const std::size_t want = kHeaderBytes + n * 4;
    if (buf.size() < want) {
        throw IoError(path + ": truncated payload, file ends at byte offset " +
                      std::to_string(buf.size()) + " but " + std::to_string(want) +
                      " bytes are required");
    }
    cube.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = f32_from_le(buf.data() + kHeaderBytes + i * 4);
        if (!std::isfinite(v)) {
            throw IoError(path + ": non-finite value at byte offset " +
                          std::to_string(kHeaderBytes + i * 4));
        }
        cube.data[i] = v;
    }
    cube.standardized = false;
    return cube;
}

void save_cube(const HsiCube& cube, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write("HSC1", 4);
    write_u32(out, static_cast<std::uint32_t>(cube.height));
    write_u32(out, static_cast<std::uint32_t>(cube.width));
    write_u32(out, static_cast<std::uint32_t>(cube.bands));
    std::vector<unsigned char> payload(cube.data.size() * 4);
    for (std::size_t i = 0; i < cube.data.size(); ++i) {
        f32_to_le(static_cast<float>(cube.data[i]), payload.data() + i * 4);
    }
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("write failed: " + path);
}

LabelMap load_labels(const std::string& path) {
    auto buf = read_file(path);
    check_header(buf, "HSL1", path);
    LabelMap lm;
    lm.height = read_u32(buf.data() + 4);
    lm.width = read_u32(buf.data() + 8);
    lm.num_classes = read_u32(buf.data() + 12);
    const std::size_t n = lm.height * lm.width;
    const std::size_t want = kHeaderBytes + n * 2;
    if (buf.size() < want) {
        throw IoError(path + ": truncated payload, file ends at byte offset " +
                      std::to_string(buf.size()) + " but " + std::to_string(want) +
                      " bytes are required");
    }
    lm.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* p = buf.data() + kHeaderBytes + i * 2;
        const std::uint16_t v = static_cast<std::uint16_t>(
            static_cast<std::uint16_t>(p[0]) | (static_cast<std::uint16_t>(p[1]) << 8));
        if (v > lm.num_classes) {
            throw IoError(path + ": label " + std::to_string(v) +
                          " exceeds class count at byte offset " +
                          std::to_string(kHeaderBytes + i * 2));
        }
        lm.labels[i] = v;
    }
    return lm;
}

void save_labels(const LabelMap& labels, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write("HSL1", 4);
    write_u32(out, static_cast<std::uint32_t>(labels.height));
    write_u32(out, static_cast<std::uint32_t>(labels.width));
    write_u32(out, labels.num_classes);
    std::vector<unsigned char> payload(labels.labels.size() * 2);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        payload[i * 2] = static_cast<unsigned char>(labels.labels[i] & 0xff);
        payload[i * 2 + 1] = static_cast<unsigned char>(labels.labels[i] >> 8);
    }
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("write failed: " + path);
}

HsiCube standardize(const HsiCube& cube) {
    if (cube.standardized) {
        throw ArgumentError("standardize: cube is already standardized");
    }
    const std::size_t n = cube.pixel_count();
    if (n == 0 || cube.bands == 0) {
        throw ArgumentError("standardize: empty cube");
    }
    HsiCube out = cube;
    for (std::size_t b = 0; b < cube.bands; ++b) {
        double mean = 0.0;
        for (std::size_t p = 0; p < n; ++p) mean += cube.data[p * cube.bands + b];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const double d = cube.data[p * cube.bands + b] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        if (var <= 0.0) {
            throw ArgumentError("standardize: zero-variance band " + std::to_string(b));
        }
        const double inv_std = 1.0 / std::sqrt(var);
        for (std::size_t p = 0; p < n; ++p) {
            out.data[p * cube.bands + b] = (cube.data[p * cube.bands + b] - mean) * inv_std;
        }
    }
    out.standardized = true;
    return out;
}

}  // namespace pdml
