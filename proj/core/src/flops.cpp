#include "e2d2/flops.hpp"

#include <chrono>
#include <memory>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "e2d2/masks.hpp"
#include "e2d2/sampling.hpp"

namespace e2d2 {

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::AR: return "ar";
    case Arch::MDLM: return "mdlm";
    case Arch::BD3LM: return "bd3lm";
    case Arch::E2D2: return "e2d2";
  }
  return "?";
}

Arch arch_from_name(const std::string& s) {
  if (s == "ar") return Arch::AR;
  if (s == "mdlm") return Arch::MDLM;
  if (s == "bd3lm") return Arch::BD3LM;
  if (s == "e2d2") return Arch::E2D2;
  throw std::invalid_argument("unknown arch: " + s);
}

void CostModel::validate() const {
  if (d < 1 || l < 1) throw std::invalid_argument("cost model: D and L must be >= 1");
  if (arch == Arch::E2D2) {
    if (n_enc < 1 || n_dec < 1)
      throw std::invalid_argument("cost model: e2d2 needs encoder and decoder layers");
  } else if (n < 1) {
    throw std::invalid_argument("cost model: N must be >= 1");
  }
  if ((arch == Arch::E2D2 || arch == Arch::BD3LM) && (s < 1 || l % s != 0))
    throw std::invalid_argument("cost model: e2d2/bd3lm require S | L");
}

std::int64_t attention_flops(const CostModel& cm) {
  cm.validate();
  switch (cm.arch) {
    case Arch::AR:
      return 4 * cm.n * cm.d * ((cm.l * cm.l + cm.l) / 2);
    case Arch::MDLM:
      return 4 * cm.n * cm.d * (cm.l * cm.l);
    case Arch::BD3LM:
      return 4 * cm.n * cm.d * (cm.l * cm.l + cm.l * cm.s);
    case Arch::E2D2:
      return 4 * (cm.n_enc + cm.n_dec) * cm.d * ((cm.l * cm.l + cm.l * cm.s) / 2);
  }
  throw std::invalid_argument("cost model: unknown arch");
}

std::int64_t mlp_flops(const CostModel& cm) {
  cm.validate();
  const std::int64_t base = 24 * cm.l * cm.d * cm.d;
  switch (cm.arch) {
    case Arch::AR:
    case Arch::MDLM:
      return base * cm.n;
    case Arch::BD3LM:
      return 2 * base * cm.n;
    case Arch::E2D2:
      return base * (cm.n_enc + cm.n_dec);
  }
  throw std::invalid_argument("cost model: unknown arch");
}

std::int64_t inference_flops(const CostModel& cm, std::int64_t theta, std::int64_t phi) {
  cm.validate();
  if (theta < 0 || phi < 0) throw std::invalid_argument("inference_flops: costs must be >= 0");
  switch (cm.arch) {
    case Arch::AR:
      return cm.l * theta;
    case Arch::MDLM:
      return cm.t * theta;
    case Arch::BD3LM:
      return cm.blocks() * cm.t * theta;
    case Arch::E2D2:
      return cm.blocks() * phi + cm.blocks() * cm.t * theta;
  }
  throw std::invalid_argument("cost model: unknown arch");
}

namespace {

// Per-layer cost of one call over S queries with an average of (L+S)/2 keys.
std::int64_t per_layer_call_cost(std::int64_t d, std::int64_t l, std::int64_t s) {
  return 4 * d * s * ((l + s) / 2) + 24 * s * d * d;
}

}  // namespace

std::int64_t decoder_call_cost(std::int64_t n_dec, std::int64_t d, std::int64_t l,
                               std::int64_t s) {
  return n_dec * per_layer_call_cost(d, l, s);
}

std::int64_t encoder_call_cost(std::int64_t n_enc, std::int64_t d, std::int64_t l,
                               std::int64_t s) {
  return n_enc * per_layer_call_cost(d, l, s);
}

CallCosts per_call_costs(const CostModel& cm) {
  cm.validate();
  CallCosts c;
  switch (cm.arch) {
    case Arch::AR:
      c.theta = cm.n * (4 * cm.d * ((cm.l + 1) / 2) + 24 * cm.d * cm.d);
      break;
    case Arch::MDLM:
      c.theta = cm.n * (4 * cm.d * cm.l * cm.l + 24 * cm.l * cm.d * cm.d);
      break;
    case Arch::BD3LM:
      c.theta = cm.n * per_layer_call_cost(cm.d, cm.l, cm.s);
      break;
    case Arch::E2D2:
      c.theta = decoder_call_cost(cm.n_dec, cm.d, cm.l, cm.s);
      c.phi = encoder_call_cost(cm.n_enc, cm.d, cm.l, cm.s);
      break;
  }
  return c;
}

MaskCheck validate_against_masks(const CostModel& cm) {
  cm.validate();
  if (cm.l > 256) throw std::invalid_argument("validate_against_masks: L must be <= 256");
  MaskCheck chk;
  chk.formula = attention_flops(cm);
  switch (cm.arch) {
    case Arch::AR:
      chk.per_layer_ops = mask_block_causal(BlockLayout(cm.l, 1)).count();
      break;
    case Arch::MDLM:
      chk.per_layer_ops = AttentionMask::ones(cm.l, cm.l).count();
      break;
    case Arch::BD3LM:
      chk.per_layer_ops = mask_bd3lm(BlockLayout(cm.l, cm.s)).count();
      break;
    case Arch::E2D2: {
      const BlockLayout layout(cm.l, cm.s);
      const std::int64_t enc_ops = mask_block_causal(layout).count();
      const std::int64_t dec_ops = mask_decoder(layout).count();
      if (enc_ops != dec_ops)
        throw std::runtime_error("mask count check failed: encoder " + std::to_string(enc_ops) +
                                 " vs decoder " + std::to_string(dec_ops) + " attention ops");
      chk.per_layer_ops = enc_ops;
      break;
    }
  }
  const std::int64_t from_masks = 4 * cm.total_layers() * cm.d * chk.per_layer_ops;
  if (from_masks != chk.formula)
    throw std::runtime_error("mask count check failed: formula " + std::to_string(chk.formula) +
                             " vs mask enumeration " + std::to_string(from_masks) + " (" +
                             std::to_string(chk.per_layer_ops) + " ops/layer)");
  return chk;
}

std::vector<ParetoRow> pareto_sweep(std::int64_t n_total, std::int64_t d, std::int64_t l,
                                    std::int64_t s, std::int64_t t,
                                    const std::vector<std::int64_t>& splits, bool measure,
                                    std::uint64_t seed, const QualityFn& quality) {
  std::vector<ParetoRow> rows;
  for (std::int64_t n_dec : splits) {
    if (n_dec < 1 || n_dec >= n_total)
      throw std::invalid_argument("pareto_sweep: split outside {1..N-1}");
    ParetoRow row;
    row.n_dec = n_dec;
    row.n_enc = n_total - n_dec;
    const std::int64_t theta = decoder_call_cost(n_dec, d, l, s);
    const std::int64_t phi = encoder_call_cost(row.n_enc, d, l, s);
    CostModel cm;
    cm.arch = Arch::E2D2;
    cm.n_enc = row.n_enc;
    cm.n_dec = n_dec;
    cm.d = d;
    cm.l = l;
    cm.s = s;
    cm.t = t;
    row.infer_flops = inference_flops(cm, theta, phi);
    row.wall_ms_per_token = std::numeric_limits<double>::quiet_NaN();
    row.ppl = quality ? quality(row.n_enc, row.n_dec)
                      : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }

  if (measure) {
    // Median of >= 5 timed runs after one warmup, with rounds interleaved
    // across splits so a load burst hits every split equally.
    NoiseSchedule sched;
    std::vector<std::unique_ptr<Model>> models;
    for (const auto& row : rows) {
      ModelConfig mc;
      mc.d_model = d;
      mc.n_heads = d % 4 == 0 ? 4 : 2;
      mc.n_enc_layers = row.n_enc;
      mc.n_dec_layers = row.n_dec;
      mc.block_size = s;
      mc.max_len = 4 * l;
      Rng rng(seed);
      models.push_back(std::make_unique<Model>(mc, rng));
    }
    SampleConfig sc;
    sc.steps = t;
    sc.rule = DecodeRule::Argmax;
    sc.seed = seed;
    sc.max_new_tokens = l;
    for (auto& m : models) sample_block_diffusion(*m, {}, sc, sched);  // warmup

    constexpr int kRounds = 7;
    std::vector<std::vector<double>> runs(rows.size());
    for (int r = 0; r < kRounds; ++r)
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sample_block_diffusion(*models[i], {}, sc, sched);
        const auto t1 = std::chrono::steady_clock::now();
        runs[i].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() /
                          double(l));
      }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::sort(runs[i].begin(), runs[i].end());
      rows[i].wall_ms_per_token = runs[i][runs[i].size() / 2];
    }
  }
  return rows;
}

std::string flops_csv_header() {
  return "arch,N_enc,N_dec,D,L,S,T,attn_flops,mlp_flops,infer_flops";
}

std::string flops_csv_row(const CostModel& cm, std::int64_t theta, std::int64_t phi) {
  std::ostringstream os;
  const std::int64_t n_enc = cm.arch == Arch::E2D2 ? cm.n_enc : cm.n;
  const std::int64_t n_dec = cm.arch == Arch::E2D2 ? cm.n_dec : 0;
  os << arch_name(cm.arch) << ',' << n_enc << ',' << n_dec << ',' << cm.d << ',' << cm.l << ','
     << cm.s << ',' << cm.t << ',' << attention_flops(cm) << ',' << mlp_flops(cm) << ','
     << inference_flops(cm, theta, phi);
  return os.str();
}

}  // namespace e2d2
