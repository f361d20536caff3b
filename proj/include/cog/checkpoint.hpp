#pragma once

// Binary checkpoint format:
//   bytes 0..7   magic "COGCKPT1"
//   bytes 8..11  little-endian u32 header length H
//   bytes 12..   UTF-8 JSON header of H bytes, then raw tensor payload
// The header records both configs, the step counters, and a tensor directory
// (name, shape, dtype, byte offset into the payload). Payload is raw
// little-endian IEEE-754 in directory order: parameters first, then first
// and second optimizer moments. Saving the result of a load reproduces the
// original file byte for byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cog/config_json.hpp"
#include "cog/errors.hpp"
#include "cog/model.hpp"
#include "cog/optimizer.hpp"

namespace cog {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'G', 'C', 'K', 'P', 'T', '1'};

template <typename Scalar>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<Scalar, float>) return "f32";
    else if constexpr (std::is_same_v<Scalar, double>) return "f64";
    else static_assert(!sizeof(Scalar), "unsupported checkpoint scalar type");
}

namespace detail {

/// Tensor directory order: every parameter, then optim.m.<name>, then
/// optim.v.<name>.
template <typename Scalar>
std::vector<ConstParamRef<Scalar>> checkpoint_tensors(const Cogformer<Scalar>& model,
                                                      const OptimState<Scalar>& optim) {
    auto params = param_refs(model);
    if (optim.m.size() != params.size() || optim.v.size() != params.size())
        throw std::invalid_argument("optimizer state does not match parameter list");
    std::vector<ConstParamRef<Scalar>> out;
    out.reserve(params.size() * 3);
    for (const auto& r : params) out.push_back(r);
    for (std::size_t i = 0; i < params.size(); ++i)
        out.push_back({"optim.m." + params[i].name, &optim.m[i]});
    for (std::size_t i = 0; i < params.size(); ++i)
        out.push_back({"optim.v." + params[i].name, &optim.v[i]});
    return out;
}

}  // namespace detail

template <typename Scalar>
void save_checkpoint(const Cogformer<Scalar>& model, const OptimState<Scalar>& optim, int step,
                     const TrainConfig& train_config, const std::filesystem::path& file) {
    const auto tensors = detail::checkpoint_tensors(model, optim);
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        dir.push_back({{"name", t.name},
                       {"shape", {t.tensor->rows(), t.tensor->cols()}},
                       {"dtype", dtype_name<Scalar>()},
                       {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.tensor->size()) * sizeof(Scalar);
    }
    const nlohmann::json header{{"model_config", to_json(model.config)},
                                {"train_config", to_json(train_config)},
                                {"tied_unembedding", model.tied_unembedding},
                                {"step", step},
                                {"optim_step", optim.step},
                                {"tensors", std::move(dir)}};
    const std::string header_str = header.dump();

    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot open checkpoint for writing: " + file.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const auto hlen = static_cast<std::uint32_t>(header_str.size());
    const char hlen_bytes[4] = {static_cast<char>(hlen & 0xff), static_cast<char>((hlen >> 8) & 0xff),
                                static_cast<char>((hlen >> 16) & 0xff),
                                static_cast<char>((hlen >> 24) & 0xff)};
    out.write(hlen_bytes, 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& t : tensors)
        out.write(reinterpret_cast<const char*>(t.tensor->data()),
                  static_cast<std::streamsize>(t.tensor->size() * sizeof(Scalar)));
    out.flush();
    if (!out) throw config_error("failed writing checkpoint: " + file.string());
}

struct CheckpointInfo {
    ModelConfig model_config;
    TrainConfig train_config;
    bool tied_unembedding = false;
    int step = 0;
    std::int64_t optim_step = 0;
};

namespace detail {

inline nlohmann::json read_checkpoint_header(const std::string& bytes,
                                             const std::filesystem::path& file,
                                             std::size_t& payload_begin) {
    if (bytes.size() < sizeof(kCheckpointMagic) + 4)
        throw config_error("checkpoint file truncated: " + file.string());
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw config_error("checkpoint magic mismatch: " + file.string());
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data() + 8);
    const std::uint32_t hlen = static_cast<std::uint32_t>(u[0]) |
                               (static_cast<std::uint32_t>(u[1]) << 8) |
                               (static_cast<std::uint32_t>(u[2]) << 16) |
                               (static_cast<std::uint32_t>(u[3]) << 24);
    payload_begin = 12 + static_cast<std::size_t>(hlen);
    if (bytes.size() < payload_begin)
        throw config_error("checkpoint header truncated: " + file.string());
    nlohmann::json header =
        nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + static_cast<std::ptrdiff_t>(payload_begin),
                              nullptr, /*allow_exceptions=*/false);
    if (header.is_discarded())
        throw config_error("checkpoint header is not valid JSON: " + file.string());
    return header;
}

inline std::string read_file_bytes(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw config_error("cannot open checkpoint: " + file.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline CheckpointInfo info_from_header(const nlohmann::json& header) {
    detail::check_keys(header,
                       {"model_config", "train_config", "tied_unembedding", "step", "optim_step",
                        "tensors"},
                       "checkpoint header");
    CheckpointInfo info;
    if (!header.contains("model_config") || !header.contains("train_config") ||
        !header.contains("tensors"))
        throw config_error("checkpoint header is missing required fields");
    info.model_config = model_config_from_json(header.at("model_config"));
    info.train_config = train_config_from_json(header.at("train_config"));
    detail::read_field(header, "tied_unembedding", info.tied_unembedding, "checkpoint header");
    detail::read_field(header, "step", info.step, "checkpoint header");
    detail::read_field(header, "optim_step", info.optim_step, "checkpoint header");
    if (info.step < 0 || info.optim_step < 0)
        throw config_error("checkpoint header has a negative step counter");
    return info;
}

}  // namespace detail

/// Parses only the header: enough to pick a precision and inspect configs.
inline CheckpointInfo peek_checkpoint(const std::filesystem::path& file) {
    const std::string bytes = detail::read_file_bytes(file);
    std::size_t payload_begin = 0;
    return detail::info_from_header(detail::read_checkpoint_header(bytes, file, payload_begin));
}

template <typename Scalar>
struct Checkpoint {
    Cogformer<Scalar> model;
    OptimState<Scalar> optim;
    TrainConfig train_config;
    int step = 0;
};

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& file) {
    const std::string bytes = detail::read_file_bytes(file);
    std::size_t payload_begin = 0;
    const nlohmann::json header = detail::read_checkpoint_header(bytes, file, payload_begin);
    const CheckpointInfo info = detail::info_from_header(header);

    const Precision want =
        std::is_same_v<Scalar, float> ? Precision::Single : Precision::Double;
    if (info.model_config.precision != want)
        throw config_error("checkpoint precision is " + to_string(info.model_config.precision) +
                           " but the loader was instantiated for " + to_string(want));

    Checkpoint<Scalar> ck;
    ck.model = make_zero_model<Scalar>(info.model_config, info.tied_unembedding);
    ck.optim = OptimState<Scalar>::zero_like(ck.model);
    ck.optim.step = info.optim_step;
    ck.train_config = info.train_config;
    ck.step = info.step;

    const auto expected = detail::checkpoint_tensors(ck.model, ck.optim);
    const auto& dir = header.at("tensors");
    if (!dir.is_array() || dir.size() != expected.size())
        throw config_error("checkpoint tensor directory has " + std::to_string(dir.size()) +
                           " entries, expected " + std::to_string(expected.size()));
    const std::size_t payload_size = bytes.size() - payload_begin;
    std::uint64_t end_of_last = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& e = dir.at(i);
        const std::string name = e.at("name").get<std::string>();
        if (name != expected[i].name)
            throw config_error("checkpoint tensor order mismatch: got '" + name + "', expected '" +
                               expected[i].name + "'");
        const auto shape = e.at("shape").get<std::array<std::int64_t, 2>>();
        const auto* dst = expected[i].tensor;
        if (shape[0] != dst->rows() || shape[1] != dst->cols())
            throw config_error("checkpoint shape mismatch for " + name);
        if (e.at("dtype").get<std::string>() != dtype_name<Scalar>())
            throw config_error("checkpoint dtype mismatch for " + name);
        const auto offset = e.at("offset").get<std::uint64_t>();
        const std::uint64_t nbytes = static_cast<std::uint64_t>(dst->size()) * sizeof(Scalar);
        if (offset + nbytes > payload_size)
            throw config_error("checkpoint payload truncated at " + name);
        std::memcpy(const_cast<Matrix<Scalar>*>(dst)->data(), bytes.data() + payload_begin + offset,
                    nbytes);
        end_of_last = std::max(end_of_last, offset + nbytes);
    }
    if (end_of_last != payload_size)
        throw config_error("checkpoint payload size mismatch: " + std::to_string(payload_size) +
                           " bytes present, directory covers " + std::to_string(end_of_last));
    return ck;
}

}  // namespace cog
