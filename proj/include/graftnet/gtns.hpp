#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graftnet/tensor.hpp"

// GTNS binary tensor files:
//   "GTNS" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u32 LE dims | LE row-major payload

namespace graftnet::gtns {

inline constexpr std::uint8_t kVersion = 1;

template <Real T>
std::vector<std::uint8_t> encode(const Tensor<T>& tensor);

/// Decodes any GTNS dtype, converting elements to T.
template <Real T>
Tensor<T> decode(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

template <Real T>
void save(const std::filesystem::path& path, const Tensor<T>& tensor);

template <Real T>
Tensor<T> load(const std::filesystem::path& path);

/// dtype byte stored in a GTNS file.
DType peek_dtype(const std::filesystem::path& path);

}  // namespace graftnet::gtns
