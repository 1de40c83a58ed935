#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "brve/tensor.hpp"

namespace brve {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'N', '1'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is, const char* field) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error(std::string("DTN1: truncated ") + field);
  return v;
}

template <typename T>
void write_impl(std::ostream& os, const TensorT<T>& t, std::uint8_t dtype) {
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  os.put(static_cast<char>(dtype));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(T))));
  if (!os) throw std::runtime_error("DTN1: write failed");
}

}  // namespace

void write_dtn1(std::ostream& os, const TensorT<float>& t) { write_impl(os, t, 0); }
void write_dtn1(std::ostream& os, const TensorT<double>& t) { write_impl(os, t, 1); }

template <typename T>
TensorT<T> read_dtn1(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("DTN1: bad magic, expected \"DTN1\"");
  const std::uint32_t rank = get_u32(is, "rank");
  if (rank == 0 || rank > kMaxRank)
    throw std::runtime_error("DTN1: rank " + std::to_string(rank) + " outside 1.." +
                             std::to_string(kMaxRank));
  std::vector<std::int64_t> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(is, "dims");
    if (d == 0) throw std::runtime_error("DTN1: dim " + std::to_string(i) + " is zero");
    shape[i] = d;
  }
  const int dtype = is.get();
  if (dtype == std::char_traits<char>::eof()) throw std::runtime_error("DTN1: truncated dtype");
  const int expected = std::is_same_v<T, float> ? 0 : 1;
  if (dtype != 0 && dtype != 1)
    throw std::runtime_error("DTN1: unknown dtype " + std::to_string(dtype));
  if (dtype != expected)
    throw std::runtime_error(std::string("DTN1: dtype mismatch, file holds ") +
                             (dtype == 0 ? "f32" : "f64") + " but " +
                             (expected == 0 ? "f32" : "f64") + " was expected");
  TensorT<T> t(shape);
  if (!is.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(T)))))
    throw std::runtime_error("DTN1: truncated payload");
  return t;
}

template TensorT<float> read_dtn1<float>(std::istream&);
template TensorT<double> read_dtn1<double>(std::istream&);

}  // namespace brve
