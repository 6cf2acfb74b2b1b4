#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdml/errors.hpp"
#include "pdml/run_config.hpp"
#include "pdml/trainer.hpp"

namespace pdml {

namespace {

using nlohmann::json;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void put_f64(std::vector<unsigned char>& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
    }
}

double take_f64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json manifest;
    manifest["version"] = 1;
    json params = json::array();
    ckpt.params.for_each([&](const std::string& name, const Param& p) {
        json entry;
        entry["name"] = name;
        entry["shape"] = p.value.shape();
        entry["tag"] = tag_name(p.tag);
        params.push_back(std::move(entry));
    });
    manifest["params"] = std::move(params);
    manifest["hyper"] = train_config_to_json(ckpt.cfg);
    // 64-bit generator words exceed JSON's exact double range, so they are
    // serialized as decimal strings.
    json rng = json::array();
    for (std::uint64_t w : ckpt.noise_state) rng.push_back(std::to_string(w));
    manifest["rng"] = std::move(rng);
    manifest["epochs_done"] = ckpt.epochs_done;
    manifest["best_epoch"] = ckpt.best_epoch;
    manifest["best_val_oa"] = ckpt.best_val_oa;

    const std::string text = manifest.dump();
    std::vector<unsigned char> out;
    out.push_back('P');
    out.push_back('D');
    out.push_back('C');
    out.push_back('1');
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    ckpt.params.for_each([&](const std::string& name, const Param& p) {
        for (double d : p.value.values()) put_f64(out, d);
        auto it = ckpt.rms.s.find(name);
        if (it == ckpt.rms.s.end() || !it->second.same_shape(p.value)) {
            throw ArgumentError("save_checkpoint: missing rms state for " + name);
        }
        for (double d : it->second.values()) put_f64(out, d);
    });

    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open file for writing: " + path);
    file.write(reinterpret_cast<const char*>(out.data()),
               static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open file: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(file)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), "PDC1", 4) != 0) {
        throw IoError(path + ": not a PDC1 checkpoint (magic mismatch)");
    }
    const std::uint32_t mlen = static_cast<std::uint32_t>(buf[4]) |
                               (static_cast<std::uint32_t>(buf[5]) << 8) |
                               (static_cast<std::uint32_t>(buf[6]) << 16) |
                               (static_cast<std::uint32_t>(buf[7]) << 24);
    if (buf.size() < 8 + static_cast<std::size_t>(mlen)) {
        throw IoError(path + ": truncated manifest");
    }

    json manifest;
    try {
        manifest = json::parse(buf.begin() + 8, buf.begin() + 8 + mlen);
    } catch (const json::parse_error& e) {
        throw IoError(path + ": bad manifest: " + e.what());
    }

    Checkpoint ckpt;
    try {
        if (manifest.at("version").get<int>() != 1) {
            throw IoError(path + ": unsupported checkpoint version");
        }
        ckpt.cfg = train_config_from_json(manifest.at("hyper"));
        const auto& rng = manifest.at("rng");
        for (std::size_t i = 0; i < 4; ++i) {
            ckpt.noise_state[i] = std::stoull(rng.at(i).get<std::string>());
        }
        ckpt.epochs_done = manifest.at("epochs_done").get<std::size_t>();
        ckpt.best_epoch = manifest.at("best_epoch").get<std::size_t>();
        ckpt.best_val_oa = manifest.at("best_val_oa").get<double>();

        std::size_t offset = 8 + mlen;
        for (const auto& entry : manifest.at("params")) {
            const std::string name = entry.at("name").get<std::string>();
            const std::vector<std::size_t> shape =
                entry.at("shape").get<std::vector<std::size_t>>();
            const ParamTag tag = tag_from_name(entry.at("tag").get<std::string>());
            const std::size_t count = Tensor::count_of(shape);
            if (buf.size() < offset + count * 16) {
                throw IoError(path + ": truncated payload at parameter " + name);
            }
            Tensor value(shape);
            for (std::size_t i = 0; i < count; ++i) {
                value[i] = take_f64(buf.data() + offset + i * 8);
            }
            offset += count * 8;
            Tensor rms_s(shape);
            for (std::size_t i = 0; i < count; ++i) {
                rms_s[i] = take_f64(buf.data() + offset + i * 8);
            }
            offset += count * 8;
            ckpt.params.add(name, std::move(value), tag);
            ckpt.rms.s.emplace(name, std::move(rms_s));
        }
        if (offset != buf.size()) {
            throw IoError(path + ": trailing bytes after payload");
        }
    } catch (const json::exception& e) {
        throw IoError(path + ": bad manifest: " + e.what());
    } catch (const ArgumentError& e) {
        throw IoError(path + ": bad manifest: " + e.what());
    } catch (const std::invalid_argument&) {
        throw IoError(path + ": bad rng state in manifest");
    } catch (const std::out_of_range&) {
        throw IoError(path + ": bad rng state in manifest");
    }
    return ckpt;
}

}  // namespace pdml
