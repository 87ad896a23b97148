#include "e2d2/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace e2d2 {

namespace {

std::vector<std::int64_t> iota_positions(std::int64_t start, std::int64_t n) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), start);
  return p;
}

bool all_valid(const std::vector<std::uint8_t>& pad) {
  for (auto b : pad)
    if (!b) return false;
  return true;
}

// Zero pad-slot key columns; a pad query row keeps its own self key so no row
// goes degenerate.
void apply_pad_to_enc_mask(AttentionMask& m, const std::vector<std::uint8_t>& pad) {
  zero_invalid_keys(m, pad, 0, 0);
}

void apply_pad_to_dec_mask(AttentionMask& m, const std::vector<std::uint8_t>& pad,
                           std::int64_t ctx_len) {
  zero_invalid_keys(m, pad, 0, -1);             // clean-feature columns
  zero_invalid_keys(m, pad, ctx_len, ctx_len);  // noisy-token columns
}

double total_tokens(const TrainBatch& batch) {
  double n = 0;
  for (const auto& p : batch.pad)
    for (auto b : p) n += b ? 1.0 : 0.0;
  return n;
}

}  // namespace

TrainBatch make_train_batch(const std::vector<TokenSeq>& x, const BlockLayout& layout,
                            const NoiseSchedule& sched, Rng& rng, bool per_block_t,
                            Token mask_id) {
  const std::int64_t batch = std::int64_t(x.size());
  const std::int64_t l = layout.seq_len, s = layout.block_size, nb = layout.num_blocks;
  for (const auto& seq : x)
    if (std::int64_t(seq.size()) != l)
      throw std::invalid_argument("make_train_batch: sequence length mismatch");

  const std::int64_t draws = per_block_t ? batch * nb : batch;
  std::vector<double> ts = sample_t(draws, rng, sched);
  // Shuffle the stratified draws so strata are not tied to batch/block index.
  for (std::size_t i = ts.size(); i > 1; --i)
    std::swap(ts[i - 1], ts[std::size_t(rng.uniform_int(std::int64_t(i)))]);

  TrainBatch out;
  out.x = x;
  out.z.resize(std::size_t(batch));
  out.t.assign(std::size_t(batch), std::vector<double>(std::size_t(nb), 0.0));
  out.pad.assign(std::size_t(batch), std::vector<std::uint8_t>(std::size_t(l), 1));

  for (std::int64_t i = 0; i < batch; ++i) {
    out.z[std::size_t(i)].resize(std::size_t(l));
    for (std::int64_t b = 0; b < nb; ++b) {
      const double t = per_block_t ? ts[std::size_t(i * nb + b)] : ts[std::size_t(i)];
      out.t[std::size_t(i)][std::size_t(b)] = t;
      TokenSeq block(x[std::size_t(i)].begin() + b * s, x[std::size_t(i)].begin() + (b + 1) * s);
      LatentSequence zb = q_sample(block, t, sched, rng, mask_id);
      std::copy(zb.ids.begin(), zb.ids.end(), out.z[std::size_t(i)].begin() + b * s);
    }
  }
  return out;
}

Tensor loss_block_diffusion_vectorized(Tape& tape, Model& model, const TrainBatch& batch,
                                       const BlockLayout& layout, const NoiseSchedule& sched) {
  const std::int64_t l = layout.seq_len;
  const Token mask_id = model.config().mask_id();
  const double norm = total_tokens(batch);
  if (norm == 0) throw std::invalid_argument("loss: batch has no non-pad tokens");

  const AttentionMask enc_mask_base = mask_block_causal(layout);
  const AttentionMask dec_mask_base = mask_decoder(layout);
  const auto positions = iota_positions(0, l);

  Tensor total = sum_all(tape, Tensor::zeros(1, 1));
  for (std::size_t i = 0; i < batch.x.size(); ++i) {
    if (std::int64_t(batch.x[i].size()) != l)
      throw std::invalid_argument("loss: sequence length does not match layout");
    AttentionMask enc_mask = enc_mask_base;
    AttentionMask dec_mask = dec_mask_base;
    if (!all_valid(batch.pad[i])) {
      apply_pad_to_enc_mask(enc_mask, batch.pad[i]);
      apply_pad_to_dec_mask(dec_mask, batch.pad[i], l);
    }
    EncoderOutput enc = model.encode_train(tape, batch.x[i], enc_mask, positions);
    Tensor logits = model.decode_train(tape, batch.z[i], enc, dec_mask, positions);

    std::vector<double> weights(std::size_t(l), 0.0);
    for (std::int64_t p = 0; p < l; ++p) {
      if (!batch.pad[i][std::size_t(p)]) continue;
      if (batch.z[i][std::size_t(p)] != mask_id) continue;
      weights[std::size_t(p)] = loss_weight(sched, batch.t[i][std::size_t(layout.block_of(p))]);
    }
    total = add(tape, total, cross_entropy(tape, logits, batch.x[i], weights));
  }
  return scale(tape, total, 1.0 / norm);
}

Tensor loss_block_diffusion_loop(Tape& tape, Model& model, const TrainBatch& batch,
                                 const BlockLayout& layout, const NoiseSchedule& sched) {
  const std::int64_t l = layout.seq_len, s = layout.block_size, nb = layout.num_blocks;
  const Token mask_id = model.config().mask_id();
  const double norm = total_tokens(batch);
  if (norm == 0) throw std::invalid_argument("loss: batch has no non-pad tokens");

  Tensor total = sum_all(tape, Tensor::zeros(1, 1));
  for (std::size_t i = 0; i < batch.x.size(); ++i) {
    if (std::int64_t(batch.x[i].size()) != l)
      throw std::invalid_argument("loss: sequence length does not match layout");
    for (std::int64_t b = 0; b < nb; ++b) {
      const std::int64_t ctx = b * s;
      TokenSeq x_ctx(batch.x[i].begin(), batch.x[i].begin() + ctx);
      TokenSeq zb(batch.z[i].begin() + ctx, batch.z[i].begin() + ctx + s);
      TokenSeq xb(batch.x[i].begin() + ctx, batch.x[i].begin() + ctx + s);

      AttentionMask enc_mask = ctx > 0 ? mask_block_causal(BlockLayout(ctx, s))
                                       : AttentionMask(0, 0);
      AttentionMask dec_mask = AttentionMask::ones(s, ctx + s);
      std::vector<std::uint8_t> ctx_pad(batch.pad[i].begin(), batch.pad[i].begin() + ctx);
      std::vector<std::uint8_t> blk_pad(batch.pad[i].begin() + ctx,
                                        batch.pad[i].begin() + ctx + s);
      if (ctx > 0 && !all_valid(ctx_pad)) apply_pad_to_enc_mask(enc_mask, ctx_pad);
      if (!all_valid(ctx_pad) || !all_valid(blk_pad)) {
        zero_invalid_keys(dec_mask, ctx_pad, 0, -1);
        zero_invalid_keys(dec_mask, blk_pad, ctx, ctx);
      }

      EncoderOutput enc = model.encode_train(tape, x_ctx, enc_mask, iota_positions(0, ctx));
      Tensor logits = model.decode_train(tape, zb, enc, dec_mask, iota_positions(ctx, s));

      std::vector<double> weights(std::size_t(s), 0.0);
      for (std::int64_t p = 0; p < s; ++p) {
        if (!blk_pad[std::size_t(p)]) continue;
        if (zb[std::size_t(p)] != mask_id) continue;
        weights[std::size_t(p)] = loss_weight(sched, batch.t[i][std::size_t(b)]);
      }
      total = add(tape, total, cross_entropy(tape, logits, xb, weights));
    }
  }
  return scale(tape, total, 1.0 / norm);
}

Tensor loss_mdlm(Tape& tape, Model& model, const TrainBatch& batch, const NoiseSchedule& sched,
                 const std::vector<TokenSeq>& prompts) {
  const Token mask_id = model.config().mask_id();
  const double norm = total_tokens(batch);
  if (norm == 0) throw std::invalid_argument("loss: batch has no non-pad tokens");

  Tensor total = sum_all(tape, Tensor::zeros(1, 1));
  for (std::size_t i = 0; i < batch.x.size(); ++i) {
    const std::int64_t l = std::int64_t(batch.x[i].size());
    const TokenSeq prompt = i < prompts.size() ? prompts[i] : TokenSeq{};
    const std::int64_t p_len = std::int64_t(prompt.size());

    std::vector<std::int64_t> clean_idx;
    for (std::int64_t p = 0; p < l; ++p)
      if (batch.pad[i][std::size_t(p)] && batch.z[i][std::size_t(p)] != mask_id)
        clean_idx.push_back(p);

    TokenSeq enc_tokens = prompt;
    std::vector<std::int64_t> enc_pos = iota_positions(0, p_len);
    for (auto c : clean_idx) {
      enc_tokens.push_back(batch.z[i][std::size_t(c)]);
      enc_pos.push_back(p_len + c);
    }

    auto [enc_mask, dec_mask] = mask_mdlm_pair(l, clean_idx, p_len);
    const std::int64_t ctx = p_len + std::int64_t(clean_idx.size());
    if (!all_valid(batch.pad[i]))
      zero_invalid_keys(dec_mask, batch.pad[i], ctx, ctx);

    EncoderOutput enc = model.encode_train(tape, enc_tokens, enc_mask, enc_pos);
    Tensor logits = model.decode_train(tape, batch.z[i], enc, dec_mask,
                                       iota_positions(p_len, l));

    std::vector<double> weights(std::size_t(l), 0.0);
    for (std::int64_t p = 0; p < l; ++p) {
      if (!batch.pad[i][std::size_t(p)]) continue;
      if (batch.z[i][std::size_t(p)] != mask_id) continue;
      weights[std::size_t(p)] = loss_weight(sched, batch.t[i][0]);
    }
    total = add(tape, total, cross_entropy(tape, logits, batch.x[i], weights));
  }
  return scale(tape, total, 1.0 / norm);
}

AdamState init_adam(const Model& model) {
  AdamState st;
  for (const auto& [name, t] : model.parameters()) {
    st.m.emplace_back(std::size_t(t.size()), 0.0);
    st.v.emplace_back(std::size_t(t.size()), 0.0);
  }
  return st;
}

StepMetrics train_step(Model& model, AdamState& opt, const std::vector<TokenSeq>& x_batch,
                       const BlockLayout& layout, const NoiseSchedule& sched, const TrainHp& hp,
                       Rng& noise_rng) {
  const bool mdlm = hp.mode == "mdlm";
  const BlockLayout noise_layout =
      mdlm ? BlockLayout(layout.seq_len, layout.seq_len) : layout;
  TrainBatch batch = make_train_batch(x_batch, noise_layout, sched, noise_rng, hp.per_block_t,
                                      model.config().mask_id());

  Tape tape;
  Tensor loss = mdlm ? loss_mdlm(tape, model, batch, sched)
                     : loss_block_diffusion_vectorized(tape, model, batch, layout, sched);
  const double loss_val = loss.item();
  if (!std::isfinite(loss_val)) throw std::runtime_error("train_step: non-finite loss");
  tape.backward(loss);

  double sq = 0.0;
  for (const auto& [name, t] : model.parameters())
    for (double g : t.grad()) sq += g * g;
  const double raw_norm = std::sqrt(sq);
  const double clip_scale = raw_norm > hp.grad_clip ? hp.grad_clip / raw_norm : 1.0;

  opt.step += 1;
  const double lr = hp.lr * std::min(1.0, double(opt.step) / double(std::max<std::int64_t>(
                                              1, hp.warmup_steps)));
  const double bc1 = 1.0 - std::pow(hp.beta1, double(opt.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, double(opt.step));

  auto& params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params[p].second;
    auto& m = opt.m[p];
    auto& v = opt.v[p];
    auto& val = t.data();
    auto& grad = t.grad();
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double g = grad[j] * clip_scale;
      m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
      v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= lr * (mhat / (std::sqrt(vhat) + 1e-8) + hp.weight_decay * val[j]);
    }
    t.zero_grad();
  }

  StepMetrics mt;
  mt.loss = loss_val;
  mt.grad_norm = raw_norm * clip_scale;
  return mt;
}

double eval_nelbo_ppl(Model& model, const std::vector<TokenSeq>& seqs, const BlockLayout& layout,
                      const NoiseSchedule& sched, std::int64_t mc_samples, Rng& rng,
                      const std::string& mode) {
  if (mc_samples < 1) throw std::invalid_argument("eval: mc_samples must be >= 1");
  const bool mdlm = mode == "mdlm";
  const BlockLayout noise_layout =
      mdlm ? BlockLayout(layout.seq_len, layout.seq_len) : layout;
  const std::int64_t nb = noise_layout.num_blocks;
  const Token mask_id = model.config().mask_id();

  // Stratify t across the mc dimension per (sequence, block); a seeded
  // permutation decorrelates strata from block index.
  std::vector<std::vector<std::int64_t>> strata(seqs.size() * std::size_t(nb));
  for (auto& perm : strata) {
    perm.resize(std::size_t(mc_samples));
    std::iota(perm.begin(), perm.end(), std::int64_t(0));
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[std::size_t(rng.uniform_int(std::int64_t(i)))]);
  }

  double acc = 0.0;
  std::int64_t draws = 0;
  for (std::int64_t s = 0; s < mc_samples; ++s) {
    for (std::size_t q = 0; q < seqs.size(); ++q) {
      TrainBatch batch;
      batch.x = {seqs[q]};
      batch.pad = {std::vector<std::uint8_t>(seqs[q].size(), 1)};
      batch.z.resize(1);
      batch.z[0].resize(seqs[q].size());
      batch.t = {std::vector<double>(std::size_t(nb), 0.0)};
      for (std::int64_t b = 0; b < nb; ++b) {
        const std::int64_t stratum = strata[q * std::size_t(nb) + std::size_t(b)][std::size_t(s)];
        const double t = std::clamp((double(stratum) + rng.uniform()) / double(mc_samples),
                                    sched.t_min, 1.0);
        batch.t[0][std::size_t(b)] = t;
        TokenSeq block(seqs[q].begin() + b * noise_layout.block_size,
                       seqs[q].begin() + (b + 1) * noise_layout.block_size);
        LatentSequence zb = q_sample(block, t, sched, rng, mask_id);
        std::copy(zb.ids.begin(), zb.ids.end(),
                  batch.z[0].begin() + b * noise_layout.block_size);
      }
      Tape tape;
      tape.recording = false;
      Tensor loss = mdlm ? loss_mdlm(tape, model, batch, sched)
                         : loss_block_diffusion_vectorized(tape, model, batch, layout, sched);
      acc += loss.item();
      draws += 1;
    }
  }
  return std::exp(acc / double(draws));
}

}  // namespace e2d2
