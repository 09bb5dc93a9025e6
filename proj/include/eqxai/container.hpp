/**
 * @file container.hpp
 * @brief The EQXAI1 binary container shared by checkpoints, concept probes
 * and datasets.
 *
 * Layout (all integers little-endian):
 *   magic "EQXAI1" | u32 version | str kind | u32 n_meta | n_meta x (str key, str value)
 *   | u32 n_tensors | n_tensors x (str name, u32 rank, rank x u64 dim)
 *   | f64 payload of every tensor, in manifest order.
 * A str is a u32 byte length followed by the bytes.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "eqxai/tensor.hpp"

namespace eqxai {

inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
    std::string kind;
    std::map<std::string, std::string> meta;
    std::vector<autodiff::NamedTensor> tensors;

    const autodiff::Tensor& tensor(const std::string& name) const;
    const std::string& meta_value(const std::string& key) const;
};

void write_container(std::ostream& out, const Container& c);
Container read_container(std::istream& in);

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

} // namespace eqxai
