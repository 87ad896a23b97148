#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "e2d2/model.hpp"
#include "e2d2/schedule.hpp"

namespace e2d2 {

enum class SampleMode { Block, Mdlm };
enum class DecodeRule { Ancestral, Argmax };

struct SampleConfig {
  std::int64_t steps = 4;     // T: diffusion steps per block (block) or total budget (mdlm)
  std::int64_t dec_only = 1;  // n: decoder-only steps between encoder calls (mdlm)
  SampleMode mode = SampleMode::Block;
  DecodeRule rule = DecodeRule::Ancestral;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::int64_t max_new_tokens = 64;
};

struct TraceStep {
  std::int64_t block = 0;  // generation block (block mode) or interval (mdlm); 0 = prefill
  double t = 0.0;
  std::vector<std::int64_t> unmasked;  // absolute positions newly unmasked
  bool encoder_called = false;
  std::int64_t decoder_calls = 0;
};

struct SampleTrace {
  std::vector<TraceStep> steps;

  std::int64_t encoder_calls() const;
  std::int64_t decoder_calls() const;
  void write(std::ostream& out) const;  // one newline-delimited record per step
};

struct SampleResult {
  TokenSeq tokens;
  SampleTrace trace;
};

// Predictive distribution used by the sampler: carry-over rows are a point
// mass on the observed token; masked rows are the tempered softmax of the
// logits (MASK column is -inf, hence exactly 0).
Matrix x0_probs_from_logits(const Matrix& logits, const TokenSeq& z, Token mask_id,
                            double temperature);

// One ancestral step t -> s over a block: clean positions are copied verbatim;
// each masked position independently unmasks with probability
// (alpha(s) - alpha(t)) / (1 - alpha(t)), drawing its token from x0_probs
// (argmax under rule=Argmax). At s = 0 every remaining mask is forced open.
TokenSeq denoise_step(const TokenSeq& z_block, const Matrix& x0_probs, double t, double s,
                      DecodeRule rule, const NoiseSchedule& sched, Rng& rng, Token mask_id);

// Block-by-block generation with KV caching: prefill the encoder on the
// prompt, denoise each block with decoder-only calls, then encode the
// committed block once and append it to the cache.
SampleResult sample_block_diffusion(Model& model, const TokenSeq& prompt,
                                    const SampleConfig& config, const NoiseSchedule& sched);

// Full-sequence generation: n decoder-only denoise steps per interval over the
// whole sequence, then one encoder call over the prompt plus all clean tokens.
// Requires dec_only | steps.
SampleResult sample_mdlm(Model& model, const TokenSeq& prompt, const SampleConfig& config,
                         const NoiseSchedule& sched);

// True iff argmax block sampling with the incremental cache produces the same
// tokens as a reference that re-encodes the full committed prefix from scratch
// at every step.
bool decode_greedy_equivalence(Model& model, const TokenSeq& prompt, const SampleConfig& config,
                               const NoiseSchedule& sched);

}  // namespace e2d2
