#include "safd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "safd/config.hpp"
#include "safd/errors.hpp"
#include "safd/rng.hpp"

namespace safd {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

template <class S>
using Uint = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;

template <class S>
void put(std::string& blob, S value) {
    const auto bits = std::bit_cast<Uint<S>>(value);
    for (std::size_t b = 0; b < sizeof(S); ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <class S>
S get(const std::string& blob, std::size_t at) {
    Uint<S> bits = 0;
    for (std::size_t b = 0; b < sizeof(S); ++b) {
        bits |= static_cast<Uint<S>>(static_cast<unsigned char>(blob[at + b])) << (8 * b);
    }
    return std::bit_cast<S>(bits);
}

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << v;
    return out.str();
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptCheckpoint("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

template <class S>
void save_checkpoint(const ModelParams<S>& params, const fs::path& dir, std::uint64_t seed, double dev_metric,
                     int best_epoch) {
    fs::create_directories(dir);
    std::string blob;
    Json tensors = Json::array();
    auto emit = [&](const std::string& name, const Matrix<S>& m) {
        if (!all_finite(m)) throw NumericalError("checkpoint: tensor " + name + " is not finite");
        tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", blob.size()}});
        for (Eigen::Index i = 0; i < m.size(); ++i) put<S>(blob, m.data()[i]);
    };
    emit("input.offset", Matrix<S>(params.input_offset));
    emit("input.scale", Matrix<S>(params.input_scale));
    params.for_each(emit);

    Json manifest;
    manifest["format"] = "safdnet-checkpoint";
    manifest["version"] = kFormatVersion;
    manifest["dtype"] = std::is_same_v<S, float> ? "f32" : "f64";
    manifest["ablation"] = to_string(params.ablation);
    manifest["hyper"] = to_json(params.hyper);
    manifest["rng_seed"] = seed;
    manifest["dev_metric"] = dev_metric;
    manifest["best_epoch"] = best_epoch;
    manifest["tensors"] = tensors;
    manifest["blob_bytes"] = blob.size();
    manifest["checksum_fnv1a64"] = hex64(fnv1a64(blob));

    write_atomic(dir / "checkpoint.bin", blob);
    write_atomic(dir / "checkpoint.json", manifest.dump(2) + "\n");
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
    const std::string text = read_bytes(dir / "checkpoint.json");
    try {
        const Json j = Json::parse(text);
        if (j.at("format").get<std::string>() != "safdnet-checkpoint" || j.at("version").get<int>() != kFormatVersion) {
            throw CorruptCheckpoint("checkpoint: unsupported format or version");
        }
        CheckpointInfo info;
        info.dtype = parse_precision(j.at("dtype").get<std::string>());
        info.hyper = hyper_from_json(j.at("hyper"));
        info.ablation = parse_ablation(j.at("ablation").get<std::string>());
        info.seed = j.at("rng_seed").get<std::uint64_t>();
        info.dev_metric = j.at("dev_metric").get<double>();
        info.best_epoch = j.at("best_epoch").get<int>();
        return info;
    } catch (const CorruptCheckpoint&) {
        throw;
    } catch (const std::exception& e) {
        throw CorruptCheckpoint(std::string("checkpoint manifest: ") + e.what());
    }
}

template <class S>
ModelParams<S> load_checkpoint(const fs::path& dir, CheckpointInfo* info_out) {
    const CheckpointInfo info = read_checkpoint_info(dir);
    const Json manifest = Json::parse(read_bytes(dir / "checkpoint.json"));
    const std::string blob = read_bytes(dir / "checkpoint.bin");

    std::size_t declared = 0;
    std::string checksum;
    try {
        declared = manifest.at("blob_bytes").get<std::size_t>();
        checksum = manifest.at("checksum_fnv1a64").get<std::string>();
    } catch (const std::exception& e) {
        throw CorruptCheckpoint(std::string("checkpoint manifest: ") + e.what());
    }
    if (blob.size() != declared) {
        throw CorruptCheckpoint("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest declares " +
                                std::to_string(declared));
    }
    if (hex64(fnv1a64(blob)) != checksum) throw CorruptCheckpoint("checkpoint blob checksum mismatch");

    try {
        info.hyper.validate(info.ablation);
    } catch (const std::exception& e) {
        throw CorruptCheckpoint(std::string("checkpoint hyper-parameters: ") + e.what());
    }

    auto expected = expected_shapes(info.hyper, info.ablation);
    const Eigen::Index c = info.hyper.channels;
    expected.insert(expected.begin(), {"input.scale", {c, 1}});
    expected.insert(expected.begin(), {"input.offset", {c, 1}});
    const Json& tensors = manifest.at("tensors");
    if (tensors.size() != expected.size()) {
        throw CorruptCheckpoint("checkpoint lists " + std::to_string(tensors.size()) + " tensors, expected " +
                                std::to_string(expected.size()));
    }

    const std::size_t width = info.dtype == Precision::F32 ? 4 : 8;
    std::vector<Matrix<S>> loaded;
    std::size_t at = 0;
    for (std::size_t k = 0; k < expected.size(); ++k) {
        const Json& t = tensors[k];
        const auto& [name, shape] = expected[k];
        Eigen::Index rows = 0, cols = 0;
        std::size_t offset = 0;
        try {
            rows = t.at("shape").at(0).get<Eigen::Index>();
            cols = t.at("shape").at(1).get<Eigen::Index>();
            offset = t.at("offset").get<std::size_t>();
            if (t.at("name").get<std::string>() != name) throw CorruptCheckpoint("checkpoint tensor " + std::to_string(k) + " should be " + name);
        } catch (const CorruptCheckpoint&) {
            throw;
        } catch (const std::exception& e) {
            throw CorruptCheckpoint(std::string("checkpoint tensor entry: ") + e.what());
        }
        if (rows != shape.first || cols != shape.second) {
            throw CorruptCheckpoint("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ", expected " + std::to_string(shape.first) + "x" +
                                    std::to_string(shape.second));
        }
        const std::size_t bytes = static_cast<std::size_t>(rows * cols) * width;
        if (offset != at || at + bytes > blob.size()) throw CorruptCheckpoint("checkpoint tensor " + name + " lies outside the blob");
        Matrix<S> m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const std::size_t pos = at + static_cast<std::size_t>(i) * width;
            m.data()[i] = width == 4 ? static_cast<S>(get<float>(blob, pos)) : static_cast<S>(get<double>(blob, pos));
        }
        at += bytes;
        loaded.push_back(std::move(m));
    }
    if (at != blob.size()) throw CorruptCheckpoint("checkpoint blob has trailing bytes");

    ModelParams<S> params = init_params<S>(info.hyper, info.ablation, 0);
    params.input_offset = loaded[0].col(0);
    params.input_scale = loaded[1].col(0);
    std::size_t k = 2;
    params.for_each([&](const std::string&, Matrix<S>& m) { m = std::move(loaded[k++]); });
    if (info_out) *info_out = info;
    return params;
}

template void save_checkpoint(const ModelParams<float>&, const fs::path&, std::uint64_t, double, int);
template void save_checkpoint(const ModelParams<double>&, const fs::path&, std::uint64_t, double, int);
template ModelParams<float> load_checkpoint(const fs::path&, CheckpointInfo*);
template ModelParams<double> load_checkpoint(const fs::path&, CheckpointInfo*);

}  // namespace safd
