#include "e2d2/schedule.hpp"

#include <algorithm>
#include <stdexcept>

namespace e2d2 {

double alpha(const NoiseSchedule& sched, double t) {
  if (t < 0.0 || t > 1.0) throw std::domain_error("alpha: t outside [0, 1]");
  switch (sched.kind) {
    case ScheduleKind::Linear:
      return 1.0 - t;
  }
  throw std::domain_error("alpha: unknown schedule kind");
}

double alpha_prime(const NoiseSchedule& sched, double t) {
  if (t < 0.0 || t > 1.0) throw std::domain_error("alpha_prime: t outside [0, 1]");
  switch (sched.kind) {
    case ScheduleKind::Linear:
      return -1.0;
  }
  throw std::domain_error("alpha_prime: unknown schedule kind");
}

double loss_weight(const NoiseSchedule& sched, double t) {
  if (t < sched.t_min) throw std::domain_error("loss_weight: t below t_min clamp");
  if (t > 1.0) throw std::domain_error("loss_weight: t outside [t_min, 1]");
  return -alpha_prime(sched, t) / (1.0 - alpha(sched, t));
}

double unmask_probability(const NoiseSchedule& sched, double s, double t) {
  if (s >= t) throw std::domain_error("unmask_probability: requires s < t");
  return (alpha(sched, s) - alpha(sched, t)) / (1.0 - alpha(sched, t));
}

LatentSequence q_sample(const TokenSeq& x, double t, const NoiseSchedule& sched, Rng& rng,
                        Token mask_id) {
  for (Token id : x)
    if (id == mask_id) throw std::invalid_argument("q_sample: clean input contains MASK");
  const double keep = alpha(sched, t);
  LatentSequence z;
  z.t = t;
  z.ids.reserve(x.size());
  for (Token id : x) z.ids.push_back(rng.uniform() < keep ? id : mask_id);
  return z;
}

TwoPointDist reverse_posterior(Token z_t, Token x_token, double s, double t,
                               const NoiseSchedule& sched, Token mask_id) {
  if (s >= t) throw std::domain_error("reverse_posterior: requires s < t");
  if (z_t != x_token && z_t != mask_id)
    throw std::invalid_argument("reverse_posterior: z_t must be x_token or MASK");
  TwoPointDist d;
  d.token = x_token;
  if (z_t != mask_id) {
    // Carry-over: once unmasked, never remasked.
    d.p_token = 1.0;
    d.p_mask = 0.0;
  } else {
    d.p_token = unmask_probability(sched, s, t);
    d.p_mask = 1.0 - d.p_token;
  }
  return d;
}

std::vector<double> sample_t(std::int64_t batch, Rng& rng, const NoiseSchedule& sched) {
  if (batch < 1) throw std::invalid_argument("sample_t: batch must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(batch));
  for (std::int64_t i = 0; i < batch; ++i) {
    const double u = (double(i) + rng.uniform()) / double(batch);
    out[std::size_t(i)] = std::clamp(u, sched.t_min, 1.0);
  }
  return out;
}

}  // namespace e2d2
