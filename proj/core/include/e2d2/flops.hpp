#pragma once

#include <functional>
#include <cstdint>
#include <string>
#include <vector>

namespace e2d2 {

enum class Arch { AR, MDLM, BD3LM, E2D2 };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

// Symbols for the closed-form training/inference cost formulas. n is the
// total layer count for ar/mdlm/bd3lm; e2d2 splits it into n_enc + n_dec.
struct CostModel {
  Arch arch = Arch::E2D2;
  std::int64_t n = 0;
  std::int64_t n_enc = 0, n_dec = 0;
  std::int64_t d = 0;
  std::int64_t l = 0;
  std::int64_t s = 0;
  std::int64_t t = 1;

  std::int64_t total_layers() const { return arch == Arch::E2D2 ? n_enc + n_dec : n; }
  std::int64_t blocks() const { return l / s; }
  void validate() const;
};

// Forward-pass attention FLOPs (2 per MAC, attention as two matmuls):
//   ar    4*N*D*(L^2+L)/2
//   mdlm  4*N*D*L^2
//   bd3lm 4*N*D*(L^2+L*S)
//   e2d2  4*(N_enc+N_dec)*D*(L^2+L*S)/2
std::int64_t attention_flops(const CostModel& cm);

// Gated MLP with three dense layers, intermediate width 4D:
// 24*N*L*D^2 (48 for bd3lm, whose layers see 2L tokens).
std::int64_t mlp_flops(const CostModel& cm);

// Per-call decomposition: ar L*theta; mdlm T*theta; bd3lm B*T*theta;
// e2d2 B*phi + B*T*theta.
std::int64_t inference_flops(const CostModel& cm, std::int64_t theta, std::int64_t phi);

// Analytic per-call costs for one decoder/encoder invocation during block
// sampling: S queries against an average of (L+S)/2 keys plus the MLP, per
// layer. Used by the pareto sweep's analytic column.
std::int64_t decoder_call_cost(std::int64_t n_dec, std::int64_t d, std::int64_t l, std::int64_t s);
std::int64_t encoder_call_cost(std::int64_t n_enc, std::int64_t d, std::int64_t l, std::int64_t s);

struct CallCosts {
  std::int64_t theta = 0;  // one denoising call of this architecture
  std::int64_t phi = 0;    // one encoder call (split architecture only)
};

// Per-call cost convention for each architecture: ar generates one token per
// call, mdlm denoises the full sequence, block architectures denoise one
// block against an average context of (L+S)/2 keys.
CallCosts per_call_costs(const CostModel& cm);

struct MaskCheck {
  std::int64_t per_layer_ops = 0;  // nonzero count from enumerating the mask
  std::int64_t formula = 0;        // attention_flops
};

// Enumerate the architecture's attention mask and assert
// 4 * N * D * nonzero == attention_flops. Throws with both counts on mismatch.
MaskCheck validate_against_masks(const CostModel& cm);

struct ParetoRow {
  std::int64_t n_enc = 0, n_dec = 0;
  std::int64_t infer_flops = 0;
  double wall_ms_per_token = 0.0;  // NaN when not measured
  double ppl = 0.0;                // NaN unless a quality hook is supplied
};

// Analytical + optionally measured cost per encoder/decoder split of a fixed
// total depth. Wall time is the median of repeated argmax sampling runs on a
// random-weight model. The quality column stays NaN unless the caller
// supplies a hook (e.g. a perplexity evaluation of trained weights per
// split).
using QualityFn = std::function<double(std::int64_t n_enc, std::int64_t n_dec)>;
std::vector<ParetoRow> pareto_sweep(std::int64_t n_total, std::int64_t d, std::int64_t l,
                                    std::int64_t s, std::int64_t t,
                                    const std::vector<std::int64_t>& splits, bool measure,
                                    std::uint64_t seed, const QualityFn& quality = nullptr);

// Machine-readable row for the CLI table.
std::string flops_csv_header();
std::string flops_csv_row(const CostModel& cm, std::int64_t theta, std::int64_t phi);

}  // namespace e2d2
