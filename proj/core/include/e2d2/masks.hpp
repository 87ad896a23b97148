#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "e2d2/attention_mask.hpp"

namespace e2d2 {

// (L, S, B) partition of a sequence into B = L/S contiguous blocks,
// 0-based positions and blocks.
struct BlockLayout {
  std::int64_t seq_len = 0;
  std::int64_t block_size = 0;
  std::int64_t num_blocks = 0;

  BlockLayout() = default;
  BlockLayout(std::int64_t l, std::int64_t s);

  std::int64_t block_of(std::int64_t pos) const { return pos / block_size; }
};

// Block-causal self-attention: bit(i,j) = 1 iff block(j) <= block(i).
// Nonzero count = (L^2 + L*S) / 2.
AttentionMask mask_block_causal(const BlockLayout& layout);

// Block-diagonal self-attention: bit(i,j) = 1 iff block(i) == block(j).
// Nonzero count = L*S.
AttentionMask mask_block_diagonal(const BlockLayout& layout);

// Offset block-causal cross-attention: bit(i,j) = 1 iff block(j) < block(i).
// Nonzero count = (L^2 - L*S) / 2. Equals block_causal minus block_diagonal.
AttentionMask mask_offset_block_causal(const BlockLayout& layout);

// Decoder mask over 2L keys: [offset_block_causal | block_diagonal].
// Keys 0..L-1 address encoder outputs, keys L..2L-1 the noisy tokens.
AttentionMask mask_decoder(const BlockLayout& layout);

// Decoder-only baseline mask over the x (+) z ordering:
//   [ 0    M_BC ]
//   [ M_OBC M_BD ]
// x rows never attend to z keys. Nonzero count = L^2 + L*S.
AttentionMask mask_bd3lm(const BlockLayout& layout);

// Full-sequence diffusion masks: encoder is fully bidirectional over the
// prompt_len + |clean| clean tokens; decoder is [full cross | full self] of
// shape L x (prompt_len + |clean| + L).
std::pair<AttentionMask, AttentionMask> mask_mdlm_pair(std::int64_t l,
                                                       const std::vector<std::int64_t>& clean_idx,
                                                       std::int64_t prompt_len);

// Disable attention to invalid keys (padding slots). Columns col_offset + c
// with key_valid[c] == 0 are zeroed; any row left with no allowed key gets its
// self column (row index + self_col_offset) re-enabled so the row stays usable.
void zero_invalid_keys(AttentionMask& m, const std::vector<std::uint8_t>& key_valid,
                       std::int64_t col_offset = 0, std::int64_t self_col_offset = -1);

}  // namespace e2d2
