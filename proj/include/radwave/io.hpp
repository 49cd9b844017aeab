#pragma once

// Persistence formats.
//
//   CoeffVector  JSON: flat array [Re c_1, Im c_1, Re c_2, Im c_2, ...]
//                binary: the same sequence as little-endian float64
//   Ensemble     directory with manifest.json {seed, n_max, N_cutoff, K, count},
//                samples.bin (count * n_max coefficient pairs, index order)
//                and weights.bin (count float64)

#include "radwave/errors.hpp"
#include "radwave/gibbs.hpp"
#include "radwave/spectral.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace radwave {

namespace detail {

inline void put_f64_le(std::vector<char>& out, double v)
{
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline double get_f64_le(const char* p)
{
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= std::uint64_t{static_cast<unsigned char>(p[i])} << (8 * i);
    return std::bit_cast<double>(bits);
}

inline std::vector<char> read_all(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace detail

/// Writes `bytes` to `path` via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline nlohmann::json to_json(const CoeffVector& u)
{
    auto arr = nlohmann::json::array();
    for (const Complex& z : u) {
        arr.push_back(z.real());
        arr.push_back(z.imag());
    }
    return arr;
}

inline CoeffVector coeffs_from_json(const nlohmann::json& j)
{
    require(j.is_array() && !j.empty() && j.size() % 2 == 0,
            "coeffs_from_json: expected a non-empty array of (re, im) pairs");
    std::vector<Complex> c(j.size() / 2);
    for (std::size_t i = 0; i < c.size(); ++i)
        c[i] = Complex(j[2 * i].get<double>(), j[2 * i + 1].get<double>());
    return CoeffVector(std::move(c));
}

inline void append_binary(std::vector<char>& out, const CoeffVector& u)
{
    for (const Complex& z : u) {
        detail::put_f64_le(out, z.real());
        detail::put_f64_le(out, z.imag());
    }
}

inline std::vector<char> to_binary(const CoeffVector& u)
{
    std::vector<char> out;
    out.reserve(16 * u.size());
    append_binary(out, u);
    return out;
}

inline CoeffVector coeffs_from_binary(std::span<const char> bytes)
{
    require(!bytes.empty() && bytes.size() % 16 == 0, "coeffs_from_binary: length must be a positive multiple of 16");
    std::vector<Complex> c(bytes.size() / 16);
    for (std::size_t i = 0; i < c.size(); ++i)
        c[i] = Complex(detail::get_f64_le(bytes.data() + 16 * i), detail::get_f64_le(bytes.data() + 16 * i + 8));
    return CoeffVector(std::move(c));
}

inline void save_ensemble(const WeightedEnsemble& e, const std::filesystem::path& dir)
{
    e.validate();
    std::filesystem::create_directories(dir);
    std::vector<char> samples, weights;
    samples.reserve(e.size() * static_cast<std::size_t>(e.metadata.n_max) * 16);
    for (const auto& u : e.samples) {
        require(u.n_max() == e.metadata.n_max, "save_ensemble: sample mode count differs from metadata");
        append_binary(samples, u);
    }
    for (double w : e.weights)
        detail::put_f64_le(weights, w);
    const nlohmann::json manifest = {{"seed", e.metadata.seed},
                                     {"n_max", e.metadata.n_max},
                                     {"N_cutoff", e.N_cutoff},
                                     {"K", e.metadata.quadrature_nodes},
                                     {"count", e.size()}};
    write_file_atomic(dir / "samples.bin", {samples.data(), samples.size()});
    write_file_atomic(dir / "weights.bin", {weights.data(), weights.size()});
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline WeightedEnsemble load_ensemble(const std::filesystem::path& dir)
{
    const auto mtext = detail::read_all(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(mtext.begin(), mtext.end());
    WeightedEnsemble e;
    e.metadata.seed = manifest.at("seed").get<std::uint64_t>();
    e.metadata.n_max = manifest.at("n_max").get<int>();
    e.metadata.quadrature_nodes = manifest.at("K").get<int>();
    e.N_cutoff = manifest.at("N_cutoff").get<int>();
    const auto count = manifest.at("count").get<std::size_t>();

    const auto samples = detail::read_all(dir / "samples.bin");
    const auto weights = detail::read_all(dir / "weights.bin");
    const std::size_t stride = 16 * static_cast<std::size_t>(e.metadata.n_max);
    if (samples.size() != count * stride || weights.size() != count * 8)
        throw IoError("load_ensemble: file sizes do not match manifest in " + dir.string());
    e.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        e.samples.push_back(coeffs_from_binary(std::span<const char>(samples).subspan(i * stride, stride)));
    e.weights.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        e.weights[i] = detail::get_f64_le(weights.data() + 8 * i);
    e.validate();
    return e;
}

} // namespace radwave
