#include "brve/tensor.hpp"

namespace brve {

BitTensor::BitTensor(std::vector<std::int64_t> logical_shape, std::int64_t rows,
                     std::int64_t lanes)
    : shape_(std::move(logical_shape)), rows_(rows), lanes_(lanes) {
  if (rows_ <= 0 || lanes_ <= 0)
    throw std::invalid_argument("bit tensor: rows and lanes must be positive");
  wpr_ = (lanes_ + 63) / 64;
  // Start from all-ones so padding lanes hold the canonical bit 1; valid
  // lanes are cleared to the -1 encoding before packing writes signs.
  words_.assign(static_cast<std::size_t>(rows_ * wpr_), ~std::uint64_t(0));
  const std::int64_t tail = lanes_ & 63;
  for (std::int64_t r = 0; r < rows_; ++r) {
    std::uint64_t* w = row(r);
    for (std::int64_t i = 0; i + 1 < wpr_; ++i) w[i] = 0;
    w[wpr_ - 1] = tail ? (~std::uint64_t(0)) << tail : 0;
  }
}

std::int64_t signed_dot(const BitTensor& a, std::int64_t row_a, const BitTensor& b,
                        std::int64_t row_b) {
  if (a.lanes() != b.lanes())
    throw std::invalid_argument("signed_dot: lane counts differ (" + std::to_string(a.lanes()) +
                                " vs " + std::to_string(b.lanes()) + ")");
  if (row_a < 0 || row_a >= a.rows() || row_b < 0 || row_b >= b.rows())
    throw std::invalid_argument("signed_dot: row index out of range");
  return signed_dot_words(a.row(row_a), b.row(row_b), a.words_per_row(), a.lanes());
}

namespace detail {

void bit_pack_plan(const std::vector<std::int64_t>& shape, std::int64_t& rows,
                   std::int64_t& lanes) {
  switch (shape.size()) {
    case 1:
      lanes = shape[0];
      rows = 1;
      return;
    case 2:
      lanes = shape[0];
      rows = shape[1];
      return;
    case 3:
      lanes = shape[0];
      rows = shape[1] * shape[2];
      return;
    case 4:
      lanes = shape[1];
      rows = shape[0] * shape[2] * shape[3];
      return;
    default:
      throw std::invalid_argument("bit packing supports ranks 1..4, got rank " +
                                  std::to_string(shape.size()));
  }
}

}  // namespace detail

}  // namespace brve
