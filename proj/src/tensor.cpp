#include "sbs/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "tensor container i/o assumes a little-endian host");

namespace sbs {

namespace {

constexpr char kMagic[4] = {'S', 'B', 'T', 'N'};
constexpr std::uint8_t kVersion = 1;

void write_bytes(std::ostream& os, const void* p, std::size_t n, const std::string& where) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError(str("short write to ", where));
}

void read_bytes(std::istream& is, void* p, std::size_t n, const std::string& where) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw IoError(str("short read from ", where));
}

}  // namespace

template <class S>
void write_tensor(std::ostream& os, const Tensor<S>& t, TensorDType dtype,
                  const std::string& where) {
  write_bytes(os, kMagic, 4, where);
  write_bytes(os, &kVersion, 1, where);
  const auto dt = static_cast<std::uint8_t>(dtype);
  write_bytes(os, &dt, 1, where);
  if (t.rank() > 255) throw ValueError("tensor rank exceeds container limit");
  const auto rank = static_cast<std::uint8_t>(t.rank());
  write_bytes(os, &rank, 1, where);
  for (Index i = 0; i < t.rank(); ++i) {
    const auto d = static_cast<std::uint32_t>(t.dim(i));
    write_bytes(os, &d, 4, where);
  }
  if (dtype == TensorDType::F32) {
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i)
      buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    write_bytes(os, buf.data(), buf.size() * 4, where);
  } else {
    std::vector<double> buf(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i)
      buf[static_cast<std::size_t>(i)] = static_cast<double>(t[i]);
    write_bytes(os, buf.data(), buf.size() * 8, where);
  }
}

template <class S>
Tensor<S> read_tensor(std::istream& is, const std::string& where) {
  char magic[4];
  read_bytes(is, magic, 4, where);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(str("bad magic in tensor container: ", where));
  std::uint8_t version = 0, dt = 0, rank = 0;
  read_bytes(is, &version, 1, where);
  if (version != kVersion)
    throw IoError(str("unsupported container version ", int(version), " in ", where));
  read_bytes(is, &dt, 1, where);
  if (dt > 1) throw IoError(str("unknown dtype code ", int(dt), " in ", where));
  read_bytes(is, &rank, 1, where);

  Dims dims(rank);
  for (int i = 0; i < int(rank); ++i) {
    std::uint32_t d = 0;
    read_bytes(is, &d, 4, where);
    dims[static_cast<std::size_t>(i)] = static_cast<Index>(d);
  }

  Tensor<S> t = Tensor<S>::zeros(dims);
  if (static_cast<TensorDType>(dt) == TensorDType::F32) {
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    read_bytes(is, buf.data(), buf.size() * 4, where);
    for (Index i = 0; i < t.size(); ++i)
      t[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
  } else {
    std::vector<double> buf(static_cast<std::size_t>(t.size()));
    read_bytes(is, buf.data(), buf.size() * 8, where);
    for (Index i = 0; i < t.size(); ++i)
      t[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
  }
  return t;
}

template <class S>
void write_tensor(const std::string& path, const Tensor<S>& t, TensorDType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str("cannot open for writing: ", path));
  write_tensor(os, t, dtype, path);
}

template <class S>
Tensor<S> read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open for reading: ", path));
  return read_tensor<S>(is, path);
}

#define SBS_INSTANTIATE(S)                                                      \
  template void write_tensor<S>(std::ostream&, const Tensor<S>&, TensorDType,   \
                                const std::string&);                            \
  template Tensor<S> read_tensor<S>(std::istream&, const std::string&);         \
  template void write_tensor<S>(const std::string&, const Tensor<S>&,           \
                                TensorDType);                                   \
  template Tensor<S> read_tensor<S>(const std::string&);

SBS_INSTANTIATE(float)
SBS_INSTANTIATE(double)
#undef SBS_INSTANTIATE

}  // namespace sbs
