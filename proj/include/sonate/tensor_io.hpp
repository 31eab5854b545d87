#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "sonate/errors.hpp"
#include "sonate/linalg.hpp"

namespace sonate {

// SNTE tensor container, little-endian:
//   magic "SNTE" | version u32 = 1 | tensor count u32
//   per tensor: name length u16, UTF-8 name, ndim u32, dims u32 x ndim,
//               payload f32 x prod(dims)
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

inline constexpr char kTensorMagic[4] = {'S', 'N', 'T', 'E'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    // Build is little-endian x86; write raw.
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, Errc on_eof = Errc::TruncatedFile) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(static_cast<std::size_t>(is.gcount()) == sizeof(T), on_eof, "unexpected end of file");
    return v;
}

}  // namespace detail

inline void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), Errc::IoError, "cannot open for writing: " + path.string());
    os.write(kTensorMagic, 4);
    detail::write_le<std::uint32_t>(os, kTensorVersion);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        require(t.name.size() <= std::numeric_limits<std::uint16_t>::max(), Errc::DimOverflow,
                "tensor name too long");
        std::size_t n = t.dims.empty() ? 0 : 1;
        for (auto d : t.dims) {
            require(n == 0 || d <= std::numeric_limits<std::uint32_t>::max() / std::max<std::size_t>(n, 1),
                    Errc::DimOverflow, "tensor dims overflow 32 bits");
            n *= d;
        }
        require(n == t.data.size(), Errc::ShapeMismatch,
                "tensor '" + t.name + "': dims product != payload length");
        detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) detail::write_le<std::uint32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    require(os.good(), Errc::IoError, "write failed: " + path.string());
}

inline std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), Errc::IoError, "cannot open for reading: " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    require(is.gcount() == 4 && std::memcmp(magic, kTensorMagic, 4) == 0, Errc::BadMagic,
            "not a SNTE tensor file: " + path.string());
    const auto version = detail::read_le<std::uint32_t>(is);
    require(version == kTensorVersion, Errc::VersionMismatch,
            "unsupported tensor file version " + std::to_string(version));
    const auto count = detail::read_le<std::uint32_t>(is);
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto name_len = detail::read_le<std::uint16_t>(is);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        require(static_cast<std::size_t>(is.gcount()) == name_len, Errc::TruncatedFile, "truncated name");
        const auto ndim = detail::read_le<std::uint32_t>(is);
        require(ndim <= 8, Errc::DimOverflow, "implausible tensor rank");
        std::uint64_t n = ndim == 0 ? 0 : 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            t.dims.push_back(detail::read_le<std::uint32_t>(is));
            n *= t.dims.back();
            require(n <= (1ull << 32), Errc::DimOverflow, "tensor element count overflows");
        }
        t.data.resize(n);
        is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
        require(static_cast<std::size_t>(is.gcount()) == n * sizeof(float), Errc::TruncatedFile,
                "declared dims exceed payload in '" + t.name + "'");
        tensors.push_back(std::move(t));
    }
    return tensors;
}

// f32 <-> double matrix converters. Values written through these round
// through float, so read(write(x)) is bit-exact whenever x came from a file
// or from the synthetic world (which emits f32-representable latents).
inline NamedTensor to_tensor(const std::string& name, const Mat& m) {
    NamedTensor t;
    t.name = name;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(static_cast<float>(m(i, j)));
    return t;
}

inline Mat to_mat(const NamedTensor& t) {
    require(t.dims.size() == 2, Errc::ShapeMismatch, "tensor '" + t.name + "' is not 2-D");
    Mat m(t.dims[0], t.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<double>(t.data[k++]);
    return m;
}

inline const NamedTensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
    for (const auto& t : ts)
        if (t.name == name) return t;
    raise(Errc::ShapeMismatch, "tensor '" + name + "' not found in file");
}

}  // namespace sonate
