#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "e2d2/attention_mask.hpp"
#include "e2d2/rng.hpp"
#include "e2d2/tensor.hpp"

namespace e2d2 {

enum class Variant { LastHidden, SharedKV };

struct ModelConfig {
  std::int64_t vocab_size = 260;
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_enc_layers = 4;
  std::int64_t n_dec_layers = 2;
  Variant variant = Variant::LastHidden;
  bool tie_weights = false;
  std::int64_t mlp_mult = 4;
  std::int64_t block_size = 4;
  std::int64_t max_len = 1024;
  double rope_base = 10000.0;

  std::int64_t head_dim() const { return d_model / n_heads; }
  Token mask_id() const { return Token(vocab_size - 1); }
  void validate() const;
};

// Decoder layer i (0-based) reads encoder layer n_enc - n_dec + i.
std::vector<std::int64_t> pair_layers(std::int64_t n_enc, std::int64_t n_dec);

struct LayerParams {
  Tensor attn_norm;        // [1, D]
  Tensor wq, wk, wv, wo;   // [D, D]
  Tensor q_norm, k_norm;   // [1, head_dim]
  Tensor mlp_norm;         // [1, D]
  Tensor w_gate, w_up;     // [D, mlp_mult*D]
  Tensor w_down;           // [mlp_mult*D, D]
};

// One segment of attention keys/values, per head, keys already QK-normalized
// and rotary-encoded.
struct KeySegment {
  std::vector<Tensor> k, v;  // per head, [len, head_dim]
  std::int64_t len = 0;
};

// Encoder features handed to the decoder. Exactly one representation is
// populated: last_hidden for Variant::LastHidden, layer_kv for
// Variant::SharedKV.
struct EncoderOutput {
  Tensor last_hidden;                 // [len, D]
  std::vector<KeySegment> layer_kv;   // per encoder layer
  std::vector<std::int64_t> positions;
  std::int64_t len = 0;
  Variant variant = Variant::LastHidden;
};

// Plain fp64 K/V storage per head for committed slots.
struct HeadBufs {
  std::vector<std::vector<double>> k, v;  // per head, row-major [len * head_dim]
};

// Accumulated state over committed clean slots during block sampling.
// enc holds the encoder's per-layer self K/V (used by incremental prefill and,
// for the shared-KV variant, as the decoder's cross keys). dec holds the
// per-decoder-layer K/V projections of committed last-hidden features
// (last-hidden variant only); the cheaper-to-store alternative of caching the
// features themselves would re-project them through every decoder layer at
// every denoise step, n_dec extra matmuls per step over the whole committed
// prefix. key_valid marks slots that may be attended (prompt padding slots
// are not).
struct KVCache {
  std::vector<HeadBufs> enc;
  std::vector<HeadBufs> dec;
  std::vector<std::uint8_t> key_valid;
  std::vector<std::int64_t> positions;
  std::int64_t committed_len = 0;
};

class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Full-pass encoder over clean tokens; throws on MASK in input.
  EncoderOutput encode_train(Tape& tape, const TokenSeq& tokens, const AttentionMask& mask,
                             const std::vector<std::int64_t>& positions);

  // Decoder over a noisy segment. mask is [n_z, enc.len + n_z]: the first
  // enc.len key columns address the encoder representation, the rest the
  // segment itself. Logits for MASK are forced to -inf.
  Tensor decode_train(Tape& tape, const TokenSeq& z, const EncoderOutput& enc,
                      const AttentionMask& mask, const std::vector<std::int64_t>& z_positions);

  // --- incremental (sampling) path ---
  KVCache init_cache() const;

  // Encode new clean slots and append their K/V to the cache. valid flags mark
  // slots usable as keys (padding slots are not). A zero-length append is a
  // no-op commit. Returns the new slots' final features (last-hidden variant;
  // empty otherwise).
  Matrix cache_append(KVCache& cache, const TokenSeq& tokens,
                      const std::vector<std::int64_t>& positions,
                      const std::vector<std::uint8_t>& valid);

  // One decoder pass over a noisy segment against the committed cache.
  Matrix decode_step(const KVCache& cache, const TokenSeq& z,
                     const std::vector<std::int64_t>& z_positions);

  // Clean-token predictive distribution per position: softmax of decode logits
  // (MASK excluded), with clean positions returning a point mass on their
  // observed token.
  Matrix forward_x0(const KVCache& cache, const TokenSeq& z,
                    const std::vector<std::int64_t>& z_positions);

  // Raw encoder stack without the clean-input check or final norm; used by
  // structural equivalence tests.
  Tensor encoder_stack_raw(Tape& tape, const TokenSeq& tokens, const AttentionMask& mask,
                           const std::vector<std::int64_t>& positions);

  // Decoder-side final norm + output head + MASK forbid.
  Tensor project_logits(Tape& tape, const Tensor& hidden);

  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor find_parameter(const std::string& name) const;

  const std::vector<std::int64_t>& layer_pairing() const { return pairing_; }

 private:
  struct LayerResult {
    Tensor out;
    KeySegment self;
  };

  LayerParams make_layer(Rng& rng);
  void register_layer(const std::string& prefix, const LayerParams& lp);

  // One pre-norm transformer layer with a fused attention call over
  // [prefix segments | self]. mask must be [n, total_prefix + n].
  LayerResult layer_forward(Tape& tape, const LayerParams& lp, const Tensor& x,
                            const std::vector<std::int64_t>& positions,
                            const std::vector<const KeySegment*>& prefix,
                            const AttentionMask& mask) const;

  // Project cross K/V for a decoder layer from hidden features (last-hidden
  // variant): the layer treats h as part of its input sequence, so h goes
  // through the layer's own attention norm and K/V projections.
  KeySegment project_kv(Tape& tape, const LayerParams& lp, const Tensor& hidden,
                        const std::vector<std::int64_t>& positions) const;

  KeySegment wrap_bufs(Tape& tape, const HeadBufs& bufs, std::int64_t len) const;

  ModelConfig cfg_;
  Tensor embed_;  // [V, D]
  Tensor head_;   // [D, V]; unused when tied (head = embed^T)
  std::vector<LayerParams> enc_layers_, dec_layers_;
  Tensor enc_final_norm_;  // last-hidden variant only
  Tensor dec_final_norm_;
  std::vector<std::int64_t> pairing_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace e2d2
