#include "e2d2/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "e2d2/masks.hpp"
#include "e2d2/vocab.hpp"

namespace e2d2 {

std::int64_t SampleTrace::encoder_calls() const {
  std::int64_t n = 0;
  for (const auto& s : steps) n += s.encoder_called ? 1 : 0;
  return n;
}

std::int64_t SampleTrace::decoder_calls() const {
  std::int64_t n = 0;
  for (const auto& s : steps) n += s.decoder_calls;
  return n;
}

void SampleTrace::write(std::ostream& out) const {
  for (const auto& s : steps) {
    out << "block=" << s.block << " t=" << s.t << " unmasked=";
    for (std::size_t i = 0; i < s.unmasked.size(); ++i) {
      if (i) out << ',';
      out << s.unmasked[i];
    }
    out << " encoder_called=" << (s.encoder_called ? 1 : 0)
        << " decoder_calls=" << s.decoder_calls << "\n";
  }
}

Matrix x0_probs_from_logits(const Matrix& logits, const TokenSeq& z, Token mask_id,
                            double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("x0_probs: temperature must be > 0");
  Matrix probs(logits.rows, logits.cols);
  for (std::int64_t i = 0; i < logits.rows; ++i) {
    if (z[std::size_t(i)] != mask_id) {
      probs.at(i, z[std::size_t(i)]) = 1.0;
      continue;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < logits.cols; ++j)
      m = std::max(m, logits.at(i, j) / temperature);
    double denom = 0.0;
    for (std::int64_t j = 0; j < logits.cols; ++j) {
      const double x = logits.at(i, j) / temperature;
      const double e = std::isinf(x) && x < 0 ? 0.0 : std::exp(x - m);
      probs.at(i, j) = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < logits.cols; ++j) probs.at(i, j) /= denom;
  }
  return probs;
}

namespace {

Token draw_token(const Matrix& probs, std::int64_t row, DecodeRule rule, Rng& rng) {
  if (rule == DecodeRule::Argmax) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < probs.cols; ++j)
      if (probs.at(row, j) > probs.at(row, best)) best = j;
    return Token(best);
  }
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::int64_t j = 0; j < probs.cols; ++j) {
    cum += probs.at(row, j);
    if (u < cum) return Token(j);
  }
  return Token(probs.cols - 1);
}

}  // namespace

TokenSeq denoise_step(const TokenSeq& z_block, const Matrix& x0_probs, double t, double s,
                      DecodeRule rule, const NoiseSchedule& sched, Rng& rng, Token mask_id) {
  if (s >= t) throw std::domain_error("denoise_step: requires s < t");
  const bool final_step = s <= 1e-15;
  const double p_unmask = final_step ? 1.0 : unmask_probability(sched, s, t);
  TokenSeq out = z_block;
  for (std::size_t i = 0; i < z_block.size(); ++i) {
    if (z_block[i] != mask_id) continue;  // carry-over: never remasked
    const double coin = rng.uniform();
    if (coin < p_unmask) out[i] = draw_token(x0_probs, std::int64_t(i), rule, rng);
  }
  return out;
}

namespace {

struct BlockSamplerSetup {
  TokenSeq ctx_tokens;
  std::vector<std::int64_t> ctx_positions;
  std::vector<std::uint8_t> ctx_valid;
  std::int64_t gen_pos_base = 0;  // generated tokens continue contiguously after the prompt
  std::int64_t num_blocks = 0;
};

BlockSamplerSetup plan_block_sampling(const TokenSeq& prompt, std::int64_t block_size,
                                      std::int64_t max_new_tokens, std::int64_t vocab_size) {
  BlockSamplerSetup st;
  const std::int64_t p = std::int64_t(prompt.size());
  const std::int64_t ctx_slots = (p + block_size - 1) / block_size * block_size;
  st.ctx_tokens = prompt;
  // Padding slots are excluded as attention keys everywhere, so the filler id
  // only needs to be a valid non-MASK token.
  const Token pad = vocab_size > vocab::kPad ? vocab::kPad : Token(0);
  for (std::int64_t i = p; i < ctx_slots; ++i) st.ctx_tokens.push_back(pad);
  for (std::int64_t i = 0; i < ctx_slots; ++i) st.ctx_positions.push_back(i);
  st.ctx_valid.assign(std::size_t(ctx_slots), 1);
  for (std::int64_t i = p; i < ctx_slots; ++i) st.ctx_valid[std::size_t(i)] = 0;
  st.gen_pos_base = p;
  st.num_blocks = (max_new_tokens + block_size - 1) / block_size;
  return st;
}

}  // namespace

SampleResult sample_block_diffusion(Model& model, const TokenSeq& prompt,
                                    const SampleConfig& config, const NoiseSchedule& sched) {
  if (config.steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
  const std::int64_t s_blk = model.config().block_size;
  const Token mask_id = model.config().mask_id();
  const std::int64_t t_steps = config.steps;
  Rng rng(config.seed);

  BlockSamplerSetup st =
      plan_block_sampling(prompt, s_blk, config.max_new_tokens, model.config().vocab_size);
  SampleResult res;
  KVCache cache = model.init_cache();

  model.cache_append(cache, st.ctx_tokens, st.ctx_positions, st.ctx_valid);
  res.trace.steps.push_back({0, 1.0, {}, true, 0});

  TokenSeq generated;
  for (std::int64_t b = 1; b <= st.num_blocks; ++b) {
    TokenSeq z(std::size_t(s_blk), mask_id);
    std::vector<std::int64_t> zpos;
    for (std::int64_t j = 0; j < s_blk; ++j)
      zpos.push_back(st.gen_pos_base + (b - 1) * s_blk + j);

    for (std::int64_t i = t_steps; i >= 1; --i) {
      const double t = double(i) / double(t_steps);
      const double s = double(i - 1) / double(t_steps);
      Matrix logits = model.decode_step(cache, z, zpos);
      Matrix probs = x0_probs_from_logits(logits, z, mask_id, config.temperature);
      TokenSeq znew = denoise_step(z, probs, t, s, config.rule, sched, rng, mask_id);
      TraceStep step{b, t, {}, false, 1};
      for (std::size_t j = 0; j < z.size(); ++j)
        if (z[j] == mask_id && znew[j] != mask_id) step.unmasked.push_back(zpos[j]);
      res.trace.steps.push_back(std::move(step));
      z = std::move(znew);
    }
    model.cache_append(cache, z, zpos, std::vector<std::uint8_t>(std::size_t(s_blk), 1));
    res.trace.steps.push_back({b, 0.0, {}, true, 0});
    generated.insert(generated.end(), z.begin(), z.end());
  }
  generated.resize(std::size_t(config.max_new_tokens));
  res.tokens = std::move(generated);
  return res;
}

SampleResult sample_mdlm(Model& model, const TokenSeq& prompt, const SampleConfig& config,
                         const NoiseSchedule& sched) {
  const std::int64_t t_steps = config.steps, n_dec = config.dec_only;
  if (t_steps < 1 || n_dec < 1 || t_steps % n_dec != 0)
    throw std::invalid_argument("sample_mdlm: dec_only must divide steps");
  const Token mask_id = model.config().mask_id();
  const std::int64_t l = config.max_new_tokens;
  const std::int64_t p_len = std::int64_t(prompt.size());
  Rng rng(config.seed);

  SampleResult res;
  TokenSeq z(std::size_t(l), mask_id);
  std::vector<std::int64_t> zpos;
  for (std::int64_t i = 0; i < l; ++i) zpos.push_back(p_len + i);

  auto encode_clean = [&](Tape& tape) {
    TokenSeq enc_tokens = prompt;
    std::vector<std::int64_t> enc_pos;
    for (std::int64_t i = 0; i < p_len; ++i) enc_pos.push_back(i);
    for (std::int64_t i = 0; i < l; ++i)
      if (z[std::size_t(i)] != mask_id) {
        enc_tokens.push_back(z[std::size_t(i)]);
        enc_pos.push_back(p_len + i);
      }
    const std::int64_t ctx = std::int64_t(enc_tokens.size());
    return model.encode_train(tape, enc_tokens, AttentionMask::ones(ctx, ctx), enc_pos);
  };

  Tape tape;
  tape.recording = false;
  EncoderOutput enc = encode_clean(tape);
  res.trace.steps.push_back({0, 1.0, {}, true, 0});

  std::int64_t interval = 0;
  for (std::int64_t i = t_steps; i >= n_dec; i -= n_dec) {
    interval += 1;
    for (std::int64_t k = 0; k < n_dec; ++k) {
      const double t = double(i - k) / double(t_steps);
      const double s = double(i - k - 1) / double(t_steps);
      AttentionMask dec_mask = AttentionMask::ones(l, enc.len + l);
      Matrix logits =
          model.decode_train(tape, z, enc, dec_mask, zpos).to_matrix();
      Matrix probs = x0_probs_from_logits(logits, z, mask_id, config.temperature);
      TokenSeq znew = denoise_step(z, probs, t, s, config.rule, sched, rng, mask_id);
      TraceStep step{interval, t, {}, false, 1};
      for (std::size_t j = 0; j < z.size(); ++j)
        if (z[j] == mask_id && znew[j] != mask_id) step.unmasked.push_back(zpos[j]);
      res.trace.steps.push_back(std::move(step));
      z = std::move(znew);
    }
    tape.clear();
    enc = encode_clean(tape);
    res.trace.steps.push_back({interval, double(i - n_dec) / double(t_steps), {}, true, 0});
  }

  for (Token id : z)
    if (id == mask_id) throw std::logic_error("sample_mdlm: output still contains MASK");
  res.tokens = std::move(z);
  return res;
}

bool decode_greedy_equivalence(Model& model, const TokenSeq& prompt, const SampleConfig& config,
                               const NoiseSchedule& sched) {
  SampleConfig cfg = config;
  cfg.rule = DecodeRule::Argmax;
  SampleResult cached = sample_block_diffusion(model, prompt, cfg, sched);

  // Reference: recompute everything from scratch at every denoise step.
  const std::int64_t s_blk = model.config().block_size;
  const Token mask_id = model.config().mask_id();
  Rng rng(cfg.seed);
  BlockSamplerSetup st =
      plan_block_sampling(prompt, s_blk, cfg.max_new_tokens, model.config().vocab_size);

  TokenSeq committed = st.ctx_tokens;
  std::vector<std::int64_t> committed_pos = st.ctx_positions;
  std::vector<std::uint8_t> committed_valid = st.ctx_valid;

  TokenSeq generated;
  for (std::int64_t b = 1; b <= st.num_blocks; ++b) {
    TokenSeq z(std::size_t(s_blk), mask_id);
    std::vector<std::int64_t> zpos;
    for (std::int64_t j = 0; j < s_blk; ++j)
      zpos.push_back(st.gen_pos_base + (b - 1) * s_blk + j);

    for (std::int64_t i = cfg.steps; i >= 1; --i) {
      const double t = double(i) / double(cfg.steps);
      const double s = double(i - 1) / double(cfg.steps);
      Tape tape;
      tape.recording = false;
      const std::int64_t ctx = std::int64_t(committed.size());
      AttentionMask enc_mask(0, 0);
      if (ctx > 0) {
        enc_mask = mask_block_causal(BlockLayout(ctx, s_blk));
        zero_invalid_keys(enc_mask, committed_valid, 0, 0);
      }
      EncoderOutput enc = model.encode_train(tape, committed, enc_mask, committed_pos);
      AttentionMask dec_mask = AttentionMask::ones(s_blk, ctx + s_blk);
      zero_invalid_keys(dec_mask, committed_valid, 0, -1);
      Matrix logits = model.decode_train(tape, z, enc, dec_mask, zpos).to_matrix();
      Matrix probs = x0_probs_from_logits(logits, z, mask_id, cfg.temperature);
      z = denoise_step(z, probs, t, s, cfg.rule, sched, rng, mask_id);
    }
    committed.insert(committed.end(), z.begin(), z.end());
    committed_pos.insert(committed_pos.end(), zpos.begin(), zpos.end());
    committed_valid.insert(committed_valid.end(), std::size_t(s_blk), 1);
    generated.insert(generated.end(), z.begin(), z.end());
  }
  generated.resize(std::size_t(cfg.max_new_tokens));
  return generated == cached.tokens;
}

}  // namespace e2d2
