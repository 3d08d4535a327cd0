#include "prop/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "prop/error.hpp"

namespace prop {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

nlohmann::json net_spec(const DenseNet& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers)
        layers.push_back({{"rows", l.weight.rows},
                          {"cols", l.weight.cols},
                          {"activation", activation_name(l.act)}});
    return layers;
}

DenseNet net_from_spec(const nlohmann::json& layers) {
    DenseNet net;
    for (const auto& l : layers) {
        Layer layer;
        layer.weight = Matrix(l.at("rows").get<int>(), l.at("cols").get<int>());
        layer.bias.assign(l.at("rows").get<int>(), 0.0);
        layer.act = activation_from_name(l.at("activation").get<std::string>());
        net.layers.push_back(std::move(layer));
    }
    return net;
}

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json header;
    header["kind"] = ckpt.kind;
    header["key_length"] = ckpt.policy.key_length;
    header["config_hash"] = ckpt.config_hash;
    header["base"] = net_spec(ckpt.policy.base);
    header["modulated_indices"] = nlohmann::json::array();
    header["encoders"] = nlohmann::json::array();
    for (const auto& [idx, enc] : ckpt.policy.encoders) {
        header["modulated_indices"].push_back(idx);
        header["encoders"].push_back(net_spec(enc.net));
    }
    header["has_frozen_reference"] = ckpt.policy.frozen_reference.has_value();
    std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write checkpoint to '" + path + "'");
    f.write(kMagic, sizeof(kMagic));
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(header_str.size()));
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    auto write_params = [&f](const Vector& p) {
        f.write(reinterpret_cast<const char*>(p.data()),
                static_cast<std::streamsize>(p.size() * sizeof(double)));
    };
    write_params(ckpt.policy.base.flatten_params());
    for (const auto& [idx, enc] : ckpt.policy.encoders) {
        (void)idx;
        write_params(enc.net.flatten_params());
    }
    if (ckpt.policy.frozen_reference) write_params(ckpt.policy.frozen_reference->flatten_params());
    if (!f) throw Error(ErrorKind::Io, "write failed for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot read checkpoint from '" + path + "'");
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw Error(ErrorKind::Config, "'" + path + "' is not a policy checkpoint");
    std::uint32_t version = read_u32(f);
    if (version != kVersion)
        throw Error(ErrorKind::Config, "checkpoint version " + std::to_string(version) +
                                           " unsupported (expected " + std::to_string(kVersion) +
                                           ")");
    std::uint32_t header_len = read_u32(f);
    std::string header_str(header_len, '\0');
    f.read(header_str.data(), header_len);
    if (!f) throw Error(ErrorKind::Io, "truncated checkpoint header in '" + path + "'");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Config, std::string("bad checkpoint header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.kind = header.value("kind", "prop");
    ckpt.config_hash = header.value("config_hash", "");
    ckpt.policy.key_length = header.at("key_length").get<int>();
    ckpt.policy.base = net_from_spec(header.at("base"));
    auto indices = header.at("modulated_indices");
    auto encoder_specs = header.at("encoders");
    for (std::size_t i = 0; i < indices.size(); ++i) {
        KeyEncoder enc;
        enc.layer_index = indices[i].get<int>();
        enc.net = net_from_spec(encoder_specs[i]);
        ckpt.policy.encoders.emplace(enc.layer_index, std::move(enc));
    }

    auto read_params = [&f, &path](DenseNet& net) {
        Vector p(net.param_count());
        f.read(reinterpret_cast<char*>(p.data()),
               static_cast<std::streamsize>(p.size() * sizeof(double)));
        if (!f) throw Error(ErrorKind::Io, "truncated parameter payload in '" + path + "'");
        net.unflatten_params(p);
    };
    read_params(ckpt.policy.base);
    for (auto& [idx, enc] : ckpt.policy.encoders) {
        (void)idx;
        read_params(enc.net);
    }
    if (header.value("has_frozen_reference", false)) {
        DenseNet ref = ckpt.policy.base;
        read_params(ref);
        ckpt.policy.frozen_reference = std::move(ref);
    }
    return ckpt;
}

} // namespace prop
