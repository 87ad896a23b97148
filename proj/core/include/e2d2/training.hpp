#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "e2d2/masks.hpp"
#include "e2d2/model.hpp"
#include "e2d2/schedule.hpp"

namespace e2d2 {

struct TrainBatch {
  std::vector<TokenSeq> x;                     // [batch][L] clean tokens
  std::vector<TokenSeq> z;                     // [batch][L] noised tokens
  std::vector<std::vector<double>> t;          // [batch][B] noise level per block
  std::vector<std::vector<std::uint8_t>> pad;  // [batch][L], 1 = real token
};

// Draw noise levels (stratified, shuffled assignment) and corrupt each block.
// per_block_t=false uses a single t per sequence, matching the single-t
// training presentation.
TrainBatch make_train_batch(const std::vector<TokenSeq>& x, const BlockLayout& layout,
                            const NoiseSchedule& sched, Rng& rng, bool per_block_t,
                            Token mask_id);

// Single-pass objective: one encoder pass over x with the block-causal mask,
// one decoder pass over z with the [offset-block-causal | block-diagonal]
// mask; weighted cross-entropy on masked positions, normalized by the count
// of non-pad tokens.
Tensor loss_block_diffusion_vectorized(Tape& tape, Model& model, const TrainBatch& batch,
                                       const BlockLayout& layout, const NoiseSchedule& sched);

// Correctness oracle: invoke the encoder and decoder separately for every
// block, conditioning on that block's clean prefix. Same value as the
// vectorized pass.
Tensor loss_block_diffusion_loop(Tape& tape, Model& model, const TrainBatch& batch,
                                 const BlockLayout& layout, const NoiseSchedule& sched);

// Full-sequence diffusion objective: encoder over the clean subset of z
// (plus optional per-sequence prompts), decoder over all of z with full
// bidirectional masks.
Tensor loss_mdlm(Tape& tape, Model& model, const TrainBatch& batch, const NoiseSchedule& sched,
                 const std::vector<TokenSeq>& prompts = {});

struct TrainHp {
  double lr = 3e-4;
  std::int64_t warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 1e-5;
  double grad_clip = 1.0;
  bool per_block_t = true;
  std::string mode = "block";  // block | mdlm
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // per parameter tensor
};

AdamState init_adam(const Model& model);

struct StepMetrics {
  double loss = 0;
  double grad_norm = 0;  // norm of the applied (clipped) gradient
};

// One optimization step: noise the batch, backprop, clip to grad_clip, Adam
// update with linear warmup. Deterministic given the rng state. Throws on a
// non-finite loss.
StepMetrics train_step(Model& model, AdamState& opt, const std::vector<TokenSeq>& x_batch,
                       const BlockLayout& layout, const NoiseSchedule& sched, const TrainHp& hp,
                       Rng& noise_rng);

// Monte Carlo estimate of the per-token NELBO, reported as a perplexity upper
// bound exp(mean per-token NELBO). t is stratified across the mc_samples
// dimension per (sequence, block).
double eval_nelbo_ppl(Model& model, const std::vector<TokenSeq>& seqs, const BlockLayout& layout,
                      const NoiseSchedule& sched, std::int64_t mc_samples, Rng& rng,
                      const std::string& mode = "block");

}  // namespace e2d2
