#include "e2d2/masks.hpp"

#include <stdexcept>

namespace e2d2 {

BlockLayout::BlockLayout(std::int64_t l, std::int64_t s) : seq_len(l), block_size(s) {
  if (l < 1 || s < 1) throw std::invalid_argument("layout: L and S must be >= 1");
  if (l % s != 0) throw std::invalid_argument("layout: S must divide L");
  num_blocks = l / s;
}

AttentionMask mask_block_causal(const BlockLayout& layout) {
  const std::int64_t l = layout.seq_len;
  AttentionMask m(l, l);
  for (std::int64_t i = 0; i < l; ++i)
    for (std::int64_t j = 0; j < l; ++j)
      m.set(i, j, layout.block_of(j) <= layout.block_of(i));
  return m;
}

AttentionMask mask_block_diagonal(const BlockLayout& layout) {
  const std::int64_t l = layout.seq_len;
  AttentionMask m(l, l);
  for (std::int64_t i = 0; i < l; ++i)
    for (std::int64_t j = 0; j < l; ++j)
      m.set(i, j, layout.block_of(j) == layout.block_of(i));
  return m;
}

AttentionMask mask_offset_block_causal(const BlockLayout& layout) {
  const std::int64_t l = layout.seq_len;
  AttentionMask m(l, l);
  for (std::int64_t i = 0; i < l; ++i)
    for (std::int64_t j = 0; j < l; ++j)
      m.set(i, j, layout.block_of(j) < layout.block_of(i));
  return m;
}

AttentionMask mask_decoder(const BlockLayout& layout) {
  const std::int64_t l = layout.seq_len;
  AttentionMask m(l, 2 * l);
  for (std::int64_t i = 0; i < l; ++i)
    for (std::int64_t j = 0; j < l; ++j) {
      m.set(i, j, layout.block_of(j) < layout.block_of(i));
      m.set(i, l + j, layout.block_of(j) == layout.block_of(i));
    }
  return m;
}

AttentionMask mask_bd3lm(const BlockLayout& layout) {
  const std::int64_t l = layout.seq_len;
  AttentionMask m(2 * l, 2 * l);
  for (std::int64_t i = 0; i < l; ++i)
    for (std::int64_t j = 0; j < l; ++j) {
      // x rows: block-causal over x keys, nothing on z keys.
      m.set(i, j, layout.block_of(j) <= layout.block_of(i));
      // z rows: offset block-causal over x keys, block-diagonal over z keys.
      m.set(l + i, j, layout.block_of(j) < layout.block_of(i));
      m.set(l + i, l + j, layout.block_of(j) == layout.block_of(i));
    }
  return m;
}

std::pair<AttentionMask, AttentionMask> mask_mdlm_pair(
    std::int64_t l, const std::vector<std::int64_t>& clean_idx, std::int64_t prompt_len) {
  for (auto c : clean_idx)
    if (c < 0 || c >= l) throw std::invalid_argument("mask_mdlm_pair: clean index out of range");
  const std::int64_t ctx = prompt_len + std::int64_t(clean_idx.size());
  AttentionMask enc = AttentionMask::ones(ctx, ctx);
  AttentionMask dec = AttentionMask::ones(l, ctx + l);
  return {enc, dec};
}

void zero_invalid_keys(AttentionMask& m, const std::vector<std::uint8_t>& key_valid,
                       std::int64_t col_offset, std::int64_t self_col_offset) {
  for (std::int64_t c = 0; c < std::int64_t(key_valid.size()); ++c) {
    if (key_valid[std::size_t(c)]) continue;
    for (std::int64_t i = 0; i < m.rows; ++i) m.set(i, col_offset + c, false);
  }
  if (self_col_offset < 0) return;
  for (std::int64_t i = 0; i < m.rows; ++i) {
    bool any = false;
    for (std::int64_t j = 0; j < m.cols && !any; ++j) any = m.on(i, j);
    if (!any) m.set(i, self_col_offset + i, true);
  }
}

}  // namespace e2d2
