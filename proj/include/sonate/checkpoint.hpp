#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "sonate/autodiff.hpp"
#include "sonate/errors.hpp"
#include "sonate/linalg.hpp"

namespace sonate {

// Checkpoint container, little-endian:
//   magic "SNCK" | version u32 = 1 | payload length u64 | payload | crc32 u32
// payload: global step u64, config JSON (u32 length + bytes), tensor count
// u32, then per tensor: name length u16 + name, rows u32, cols u32, f64 data
// row-major. Weights are stored at full double width so a restored run is
// bit-exact.
inline constexpr char kCheckpointMagic[4] = {'S', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint64_t global_step = 0;
    std::string config_json;             // effective RunConfig snapshot
    std::map<std::string, Mat> tensors;  // params, embedding tables, optimizer state
};

namespace detail {

inline std::uint32_t crc32(const char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ static_cast<unsigned char>(data[i])) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

template <typename T>
void put(std::string& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    require(off + sizeof(T) <= buf.size(), Errc::CorruptCheckpoint, "checkpoint payload truncated");
    T v{};
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string payload;
    detail::put<std::uint64_t>(payload, ckpt.global_step);
    detail::put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.config_json.size()));
    payload.append(ckpt.config_json);
    detail::put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
        detail::put<std::uint16_t>(payload, static_cast<std::uint16_t>(name.size()));
        payload.append(name);
        detail::put<std::uint32_t>(payload, static_cast<std::uint32_t>(m.rows()));
        detail::put<std::uint32_t>(payload, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put<double>(payload, m(i, j));
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), Errc::IoError, "cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 4);
    const std::uint32_t version = kCheckpointVersion;
    os.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t len = payload.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const std::uint32_t crc = detail::crc32(payload.data(), payload.size());
    os.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    require(os.good(), Errc::IoError, "checkpoint write failed");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), Errc::IoError, "cannot read checkpoint " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    require(is.gcount() == 4 && std::memcmp(magic, kCheckpointMagic, 4) == 0, Errc::CorruptCheckpoint,
            "not a checkpoint file: " + path.string());
    std::uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), sizeof(version));
    require(is.gcount() == sizeof(version), Errc::CorruptCheckpoint, "checkpoint header truncated");
    require(version == kCheckpointVersion, Errc::VersionMismatch,
            "unsupported checkpoint version " + std::to_string(version));
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    require(is.gcount() == sizeof(len), Errc::CorruptCheckpoint, "checkpoint header truncated");
    std::string payload(len, '\0');
    is.read(payload.data(), static_cast<std::streamsize>(len));
    require(static_cast<std::uint64_t>(is.gcount()) == len, Errc::CorruptCheckpoint,
            "checkpoint payload truncated");
    std::uint32_t stored_crc = 0;
    is.read(reinterpret_cast<char*>(&stored_crc), sizeof(stored_crc));
    require(is.gcount() == sizeof(stored_crc), Errc::CorruptCheckpoint, "checkpoint checksum missing");
    require(detail::crc32(payload.data(), payload.size()) == stored_crc, Errc::CorruptCheckpoint,
            "checkpoint checksum mismatch");

    Checkpoint ckpt;
    std::size_t off = 0;
    ckpt.global_step = detail::take<std::uint64_t>(payload, off);
    const auto json_len = detail::take<std::uint32_t>(payload, off);
    require(off + json_len <= payload.size(), Errc::CorruptCheckpoint, "config snapshot truncated");
    ckpt.config_json = payload.substr(off, json_len);
    off += json_len;
    const auto count = detail::take<std::uint32_t>(payload, off);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::take<std::uint16_t>(payload, off);
        require(off + name_len <= payload.size(), Errc::CorruptCheckpoint, "tensor name truncated");
        std::string name = payload.substr(off, name_len);
        off += name_len;
        const auto rows = detail::take<std::uint32_t>(payload, off);
        const auto cols = detail::take<std::uint32_t>(payload, off);
        Mat m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = detail::take<double>(payload, off);
        ckpt.tensors.emplace(std::move(name), std::move(m));
    }
    return ckpt;
}

// Restores named parameter values in place; every expected name must exist
// with matching shape.
inline void restore_params(const std::map<std::string, Mat>& blobs,
                           const std::vector<std::pair<std::string, ad::Value>>& named) {
    for (const auto& [name, value] : named) {
        auto it = blobs.find(name);
        require(it != blobs.end(), Errc::CorruptCheckpoint, "checkpoint is missing tensor " + name);
        require(it->second.rows() == value->val.rows() && it->second.cols() == value->val.cols(),
                Errc::CorruptCheckpoint, "checkpoint tensor shape mismatch for " + name);
        value->val = it->second;
    }
}

}  // namespace sonate
