#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace brve {

static_assert(std::endian::native == std::endian::little,
              "serialized formats are little-endian; big-endian hosts unsupported");

// Dense row-major tensor, last index fastest. Conventions used throughout:
//   {C}            per-channel vector
//   {C,H,W}        feature map, channel planes of H*W contiguous scalars
//   {Co,Ci,K,K}    conv weights, one Ci*K*K filter row per output channel
// float is the working precision; double instantiations exist so the
// gradient checker can run the full pipeline in 64-bit.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::int64_t> shape, T fill = T(0))
      : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), fill);
  }

  static TensorT from_data(std::vector<std::int64_t> shape, std::vector<T> data) {
    TensorT t;
    const std::int64_t n = checked_numel(shape);
    if (n != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape numel " + std::to_string(n));
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(std::int64_t i, std::int64_t j) { return data_[idx2(i, j)]; }
  T operator()(std::int64_t i, std::int64_t j) const { return data_[idx2(i, j)]; }
  T& operator()(std::int64_t c, std::int64_t h, std::int64_t w) { return data_[idx3(c, h, w)]; }
  T operator()(std::int64_t c, std::int64_t h, std::int64_t w) const { return data_[idx3(c, h, w)]; }
  T& operator()(std::int64_t o, std::int64_t c, std::int64_t i, std::int64_t j) {
    return data_[idx4(o, c, i, j)];
  }
  T operator()(std::int64_t o, std::int64_t c, std::int64_t i, std::int64_t j) const {
    return data_[idx4(o, c, i, j)];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] <= 0)
        throw std::invalid_argument("tensor: dim " + std::to_string(i) +
                                    " must be positive, got " + std::to_string(shape[i]));
      if (shape[i] > (std::int64_t(1) << 40) / n)
        throw std::invalid_argument("tensor: shape overflows element budget");
      n *= shape[i];
    }
    return n;
  }

  std::size_t idx2(std::int64_t i, std::int64_t j) const {
    return static_cast<std::size_t>(i * shape_[1] + j);
  }
  std::size_t idx3(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w);
  }
  std::size_t idx4(std::int64_t o, std::int64_t c, std::int64_t i, std::int64_t j) const {
    return static_cast<std::size_t>(((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j);
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

using DenseTensor = TensorT<float>;

// Sign convention shared by packing and binarization: bit 1 encodes +1,
// bit 0 encodes -1, and Sign(0) = -1 (strict x > 0 test).
template <typename T>
inline bool sign_bit(T x) {
  return x > T(0);
}

// Bit-packed +-1 tensor. Lanes run along the channel axis; each row packs
// `lanes` bits into ceil(lanes/64) words:
//   {C}            1 row           (row 0, lane c)
//   {C,N}          N rows          (row n, lane c)
//   {C,H,W}        H*W rows        (row h*W+w, lane c)
//   {Co,Ci,K,K}    Co*K*K rows     (row (o*K+ki)*K+kj, lane c) -- one
//                  word-aligned lane group per filter tap, so a convolution
//                  reduces to word-wide dots between an activation row and
//                  K*K weight rows.
// Padding lanes beyond `lanes` are fixed to bit 1 on every row; signed_dot
// subtracts their guaranteed matches.
class BitTensor {
 public:
  BitTensor() = default;
  BitTensor(std::vector<std::int64_t> logical_shape, std::int64_t rows, std::int64_t lanes);

  const std::vector<std::int64_t>& logical_shape() const { return shape_; }
  std::int64_t rows() const { return rows_; }
  std::int64_t lanes() const { return lanes_; }
  std::int64_t words_per_row() const { return wpr_; }

  const std::uint64_t* row(std::int64_t r) const {
    return words_.data() + static_cast<std::size_t>(r * wpr_);
  }
  std::uint64_t* row(std::int64_t r) { return words_.data() + static_cast<std::size_t>(r * wpr_); }

  bool bit(std::int64_t r, std::int64_t lane) const {
    return (row(r)[lane >> 6] >> (lane & 63)) & 1u;
  }
  void set_bit(std::int64_t r, std::int64_t lane, bool v) {
    std::uint64_t& w = row(r)[lane >> 6];
    const std::uint64_t m = std::uint64_t(1) << (lane & 63);
    w = v ? (w | m) : (w & ~m);
  }

 private:
  std::vector<std::int64_t> shape_;
  std::int64_t rows_ = 0;
  std::int64_t lanes_ = 0;
  std::int64_t wpr_ = 0;
  std::vector<std::uint64_t> words_;
};

// Exact +-1 dot product over n valid lanes: 2*popcount(XNOR) - n, with the
// all-matching padding lanes subtracted. Both rows must share the same lane
// count and padding policy.
inline std::int64_t signed_dot_words(const std::uint64_t* a, const std::uint64_t* b,
                                     std::int64_t words, std::int64_t n) {
  std::int64_t matches = 0;
  for (std::int64_t i = 0; i < words; ++i) matches += std::popcount(~(a[i] ^ b[i]));
  const std::int64_t pad = words * 64 - n;
  return 2 * (matches - pad) - n;
}

std::int64_t signed_dot(const BitTensor& a, std::int64_t row_a, const BitTensor& b,
                        std::int64_t row_b);

// Packs a +-1 tensor (ranks 1..4 per the lane conventions above). Any entry
// other than exactly -1 or +1 is rejected with its flat index.
template <typename T>
BitTensor pack_bits(const TensorT<T>& x);

// Packs by sign with the Sign(0) = -1 convention; no +-1 domain check.
// Used on real-valued pre-activations and latent weights.
template <typename T>
BitTensor pack_sign(const TensorT<T>& x);

template <typename T>
TensorT<T> unpack_bits(const BitTensor& b);

enum class StatRole { mean_abs, mean, stddev };

template <typename T>
struct StatVectorT {
  StatRole role{};
  std::vector<T> v;
};

template <typename T>
struct ChannelStatsT {
  StatVectorT<T> mean_abs;
  StatVectorT<T> mean;
  StatVectorT<T> stddev;  // population (biased) standard deviation
};

// Per-channel mean(|x|), mean(x) and population std over the spatial extent
// of a {C,H,W} map. Accumulates in double regardless of T.
template <typename T>
ChannelStatsT<T> channel_stats(const TensorT<T>& a);

// DTN1 tensor container: magic "DTN1", u32 rank, u32 dims[rank], u8 dtype
// (0 = f32, 1 = f64), then raw little-endian elements in row-major order.
void write_dtn1(std::ostream& os, const TensorT<float>& t);
void write_dtn1(std::ostream& os, const TensorT<double>& t);

// Reads a DTN1 payload whose dtype must match T exactly.
template <typename T>
TensorT<T> read_dtn1(std::istream& is);

// ---- template definitions ----

namespace detail {
void bit_pack_plan(const std::vector<std::int64_t>& shape, std::int64_t& rows,
                   std::int64_t& lanes);
}  // namespace detail

template <typename T>
BitTensor pack_sign(const TensorT<T>& x) {
  std::int64_t rows = 0, lanes = 0;
  detail::bit_pack_plan(x.shape(), rows, lanes);
  BitTensor b(x.shape(), rows, lanes);
  const T* d = x.data();
  if (x.rank() == 4) {
    const std::int64_t co = x.dim(0), ci = x.dim(1), k = x.dim(2) * x.dim(3);
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t t = 0; t < k; ++t) {
        const std::int64_t r = o * k + t;
        for (std::int64_t c = 0; c < ci; ++c)
          if (sign_bit(d[(o * ci + c) * k + t])) b.set_bit(r, c, true);
      }
    return b;
  }
  // ranks 1..3: dim 0 is the lane axis, remaining dims index rows
  for (std::int64_t c = 0; c < lanes; ++c)
    for (std::int64_t r = 0; r < rows; ++r)
      if (sign_bit(d[c * rows + r])) b.set_bit(r, c, true);
  return b;
}

template <typename T>
BitTensor pack_bits(const TensorT<T>& x) {
  const T* d = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (d[i] != T(1) && d[i] != T(-1))
      throw std::invalid_argument("pack_bits: element at flat index " + std::to_string(i) +
                                  " is not in {-1,+1}");
  return pack_sign(x);
}

template <typename T>
TensorT<T> unpack_bits(const BitTensor& b) {
  TensorT<T> out(b.logical_shape());
  T* d = out.data();
  const auto& shape = b.logical_shape();
  const std::int64_t rows = b.rows(), lanes = b.lanes();
  if (shape.size() == 4) {
    const std::int64_t ci = shape[1], k = shape[2] * shape[3];
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t o = r / k, t = r % k;
      for (std::int64_t c = 0; c < ci; ++c)
        d[(o * ci + c) * k + t] = b.bit(r, c) ? T(1) : T(-1);
    }
  } else {
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < lanes; ++c) d[c * rows + r] = b.bit(r, c) ? T(1) : T(-1);
  }
  return out;
}

template <typename T>
ChannelStatsT<T> channel_stats(const TensorT<T>& a) {
  if (a.rank() != 3)
    throw std::invalid_argument("channel_stats: expected a {C,H,W} tensor, got rank " +
                                std::to_string(a.rank()));
  const std::int64_t c = a.dim(0), n = a.dim(1) * a.dim(2);
  ChannelStatsT<T> s;
  s.mean_abs.role = StatRole::mean_abs;
  s.mean.role = StatRole::mean;
  s.stddev.role = StatRole::stddev;
  s.mean_abs.v.resize(static_cast<std::size_t>(c));
  s.mean.v.resize(static_cast<std::size_t>(c));
  s.stddev.v.resize(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T* p = a.data() + ch * n;
    double sum = 0.0, sum_abs = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      sum += p[i];
      sum_abs += std::abs(static_cast<double>(p[i]));
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double dlt = static_cast<double>(p[i]) - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);
    s.mean_abs.v[static_cast<std::size_t>(ch)] = static_cast<T>(sum_abs / static_cast<double>(n));
    s.mean.v[static_cast<std::size_t>(ch)] = static_cast<T>(mean);
    s.stddev.v[static_cast<std::size_t>(ch)] = static_cast<T>(std::sqrt(var));
  }
  return s;
}

}  // namespace brve
