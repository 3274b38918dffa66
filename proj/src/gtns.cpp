#include "graftnet/gtns.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace graftnet::gtns {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.insert(out.end(), bytes, bytes + sizeof(U));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

template <Real T>
std::vector<std::uint8_t> encode(const Tensor<T>& tensor) {
  std::vector<std::uint8_t> out{'G', 'T', 'N', 'S', kVersion, static_cast<std::uint8_t>(dtype_of<T>()),
                                static_cast<std::uint8_t>(tensor.rank())};
  if (tensor.rank() > 255) throw DimensionError("GTNS supports rank <= 255");
  for (auto d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + tensor.numel() * sizeof(T));
  for (T v : tensor.values()) put_le<T>(out, v);
  return out;
}

template <Real T>
Tensor<T> decode(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), "GTNS", 4) != 0) throw IoError(origin + ": not a GTNS file");
  if (bytes[4] != kVersion) throw IoError(origin + ": unsupported GTNS version " + std::to_string(bytes[4]));
  const std::uint8_t dtype = bytes[5];
  if (dtype > 1) throw IoError(origin + ": unknown GTNS dtype " + std::to_string(dtype));
  const std::size_t rank = bytes[6];
  std::size_t pos = 7;
  if (bytes.size() < pos + 4 * rank) throw IoError(origin + ": truncated GTNS header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, pos += 4) {
    shape[i] = get_le<std::uint32_t>(bytes.data() + pos);
    if (shape[i] == 0) throw IoError(origin + ": zero dimension in GTNS header");
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t width = dtype == 0 ? 4 : 8;
  if (bytes.size() != pos + n * width) throw IoError(origin + ": GTNS payload size mismatch");
  std::vector<T> values(n);
  for (std::size_t i = 0; i < n; ++i, pos += width) {
    values[i] = dtype == 0 ? static_cast<T>(get_le<float>(bytes.data() + pos))
                           : static_cast<T>(get_le<double>(bytes.data() + pos));
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <Real T>
void save(const std::filesystem::path& path, const Tensor<T>& tensor) {
  const auto bytes = encode(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <Real T>
Tensor<T> load(const std::filesystem::path& path) {
  return decode<T>(read_file(path), path.string());
}

DType peek_dtype(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 7 || std::memcmp(bytes.data(), "GTNS", 4) != 0) throw IoError(path.string() + ": not a GTNS file");
  return bytes[5] == 0 ? DType::f32 : DType::f64;
}

template std::vector<std::uint8_t> encode(const Tensor<float>&);
template std::vector<std::uint8_t> encode(const Tensor<double>&);
template Tensor<float> decode(const std::vector<std::uint8_t>&, const std::string&);
template Tensor<double> decode(const std::vector<std::uint8_t>&, const std::string&);
template void save(const std::filesystem::path&, const Tensor<float>&);
template void save(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load(const std::filesystem::path&);
template Tensor<double> load(const std::filesystem::path&);

}  // namespace graftnet::gtns
