#pragma once

#include <cstdint>
#include <vector>

#include "e2d2/rng.hpp"
#include "e2d2/tensor.hpp"

namespace e2d2 {

enum class ScheduleKind { Linear };

// Noise schedule alpha(t): keep probability at noise level t, with
// alpha(0) = 1, alpha(1) = 0, strictly decreasing. Only the linear schedule
// alpha(t) = 1 - t is built in; it makes the loss weight exactly 1/t.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Linear;
  double t_min = 1e-3;
};

double alpha(const NoiseSchedule& sched, double t);
double alpha_prime(const NoiseSchedule& sched, double t);

// Positive per-token multiplier -alpha'(t) / (1 - alpha(t)) on the negative
// log-likelihood of masked positions. Throws if t < t_min (the weight
// diverges as t -> 0).
double loss_weight(const NoiseSchedule& sched, double t);

// Probability that a masked position unmasks when stepping t -> s:
// (alpha(s) - alpha(t)) / (1 - alpha(t)). Requires s < t.
double unmask_probability(const NoiseSchedule& sched, double s, double t);

// Token-or-MASK state of a sequence at noise level t.
struct LatentSequence {
  TokenSeq ids;
  double t = 0.0;
};

// Forward corruption: each position independently kept with prob alpha(t),
// else replaced by mask_id. The clean input must not contain mask_id.
LatentSequence q_sample(const TokenSeq& x, double t, const NoiseSchedule& sched, Rng& rng,
                        Token mask_id);

// Reverse posterior over {x_token, MASK} for one position. If z_t is already
// unmasked the distribution is a point mass on it (carry-over); if masked, the
// unmask probability goes on x_token and the remainder stays on MASK.
struct TwoPointDist {
  Token token = 0;    // the non-MASK outcome
  double p_token = 0; // probability of unmasking to `token`
  double p_mask = 0;
};
TwoPointDist reverse_posterior(Token z_t, Token x_token, double s, double t,
                               const NoiseSchedule& sched, Token mask_id);

// Stratified draw: element i uniform in [i/batch, (i+1)/batch), clamped to
// [t_min, 1].
std::vector<double> sample_t(std::int64_t batch, Rng& rng, const NoiseSchedule& sched);

}  // namespace e2d2
