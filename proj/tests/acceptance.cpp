// Acceptance suite: every release criterion in one binary, one line each.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "e2d2/flops.hpp"
#include "e2d2/masks.hpp"
#include "e2d2/sampling.hpp"
#include "e2d2/training.hpp"
#include "e2d2/vocab.hpp"
#include "test_util.hpp"

using namespace e2d2;

namespace {

const NoiseSchedule kSched{};

ModelConfig tiny_config(Variant variant, std::int64_t s, std::int64_t vocab = 32) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = variant == Variant::SharedKV ? 2 : 1;
  cfg.variant = variant;
  cfg.block_size = s;
  return cfg;
}

TokenSeq random_tokens(std::int64_t n, std::int64_t vocab, Rng& rng) {
  TokenSeq x;
  for (std::int64_t i = 0; i < n; ++i) x.push_back(Token(rng.uniform_int(vocab - 1)));
  return x;
}

std::vector<std::int64_t> iota_pos(std::int64_t start, std::int64_t n) {
  std::vector<std::int64_t> p;
  for (std::int64_t i = 0; i < n; ++i) p.push_back(start + i);
  return p;
}

std::vector<TokenSeq> pattern_corpus(std::int64_t n_seqs, std::int64_t l) {
  std::string stream;
  while (std::int64_t(stream.size()) < n_seqs * l) stream += "abc";
  std::vector<TokenSeq> seqs;
  for (std::int64_t i = 0; i < n_seqs; ++i)
    seqs.push_back(
        vocab::encode(std::string_view(stream).substr(std::size_t(i * l), std::size_t(l))));
  return seqs;
}

// --- criterion 1: vectorized == loop ----------------------------------------

bool criterion_vectorized_oracle(std::string& detail) {
  double worst = 0;
  for (Variant variant : {Variant::LastHidden, Variant::SharedKV})
    for (auto [l, s] : std::vector<std::pair<std::int64_t, std::int64_t>>{
             {8, 2}, {8, 4}, {12, 3}, {8, 8}})
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 131 + l * 7 + s);
        Model model(tiny_config(variant, s), rng);
        BlockLayout layout(l, s);
        Rng noise = rng.child(1);
        TrainBatch batch = make_train_batch({random_tokens(l, 32, rng)}, layout, kSched, noise,
                                            true, model.config().mask_id());
        Tape tape;
        tape.recording = false;
        const double vec =
            loss_block_diffusion_vectorized(tape, model, batch, layout, kSched).item();
        const double loop = loss_block_diffusion_loop(tape, model, batch, layout, kSched).item();
        worst = std::max(worst, std::abs(vec - loop));
      }
  std::ostringstream os;
  os << "max |vectorized - loop| = " << worst << " over {(8,2),(8,4),(12,3),(8,8)} x 2 variants "
     << "x 20 seeds (tolerance 1e-9)";
  detail = os.str();
  return worst < 1e-9;
}

// --- criterion 2: KV-cache exactness ----------------------------------------

bool criterion_kv_cache(std::string& detail) {
  std::int64_t runs = 0, ok = 0;
  for (Variant variant : {Variant::LastHidden, Variant::SharedKV})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(7000 + seed);
      Model model(tiny_config(variant, 2), rng);
      SampleConfig cfg;
      cfg.steps = 2;
      cfg.max_new_tokens = 16;  // 8 blocks of S=2
      cfg.seed = seed;
      TokenSeq prompt = random_tokens(4, 30, rng);
      runs += 1;
      ok += decode_greedy_equivalence(model, prompt, cfg, kSched) ? 1 : 0;
    }
  std::ostringstream os;
  os << ok << "/" << runs
     << " cached argmax runs identical to full recompute (8 blocks, both variants, 10 seeds)";
  detail = os.str();
  return ok == runs;
}

// --- criterion 3: FLOPs table reproduction -----------------------------------

bool criterion_flops(std::string& detail) {
  std::int64_t checks = 0;
  bool ok = true;
  for (std::int64_t l = 1; l <= 64 && ok; ++l)
    for (std::int64_t s = 1; s <= l && ok; ++s) {
      if (l % s) continue;
      const std::int64_t n = 6, n_enc = 4, n_dec = 2, d = 8;
      CostModel ar{Arch::AR, n, 0, 0, d, l, 1, 1};
      CostModel mdlm{Arch::MDLM, n, 0, 0, d, l, s, 1};
      CostModel bd{Arch::BD3LM, n, 0, 0, d, l, s, 1};
      CostModel e2{Arch::E2D2, 0, n_enc, n_dec, d, l, s, 1};

      // Symbolic expressions, re-stated independently.
      ok = ok && attention_flops(ar) == 4 * n * d * ((l * l + l) / 2);
      ok = ok && attention_flops(mdlm) == 4 * n * d * l * l;
      ok = ok && attention_flops(bd) == 4 * n * d * (l * l + l * s);
      ok = ok && attention_flops(e2) == 4 * (n_enc + n_dec) * d * ((l * l + l * s) / 2);
      ok = ok && mlp_flops(ar) == 24 * n * l * d * d;
      ok = ok && mlp_flops(mdlm) == 24 * n * l * d * d;
      ok = ok && mlp_flops(bd) == 48 * n * l * d * d;
      ok = ok && mlp_flops(e2) == 24 * (n_enc + n_dec) * l * d * d;

      // Mask enumeration agrees exactly.
      try {
        validate_against_masks(ar);
        validate_against_masks(mdlm);
        validate_against_masks(bd);
        validate_against_masks(e2);
      } catch (const std::exception& e) {
        detail = e.what();
        return false;
      }

      // Factor-2 claim and the bound against full-sequence diffusion.
      CostModel bd_same{Arch::BD3LM, n_enc + n_dec, 0, 0, d, l, s, 1};
      ok = ok && 2 * attention_flops(e2) == attention_flops(bd_same);
      CostModel mdlm_same{Arch::MDLM, n_enc + n_dec, 0, 0, d, l, s, 1};
      if (s < l) ok = ok && attention_flops(e2) < attention_flops(mdlm_same);
      else ok = ok && attention_flops(e2) == attention_flops(mdlm_same);
      checks += 1;
    }
  std::ostringstream os;
  os << "formulas == re-stated symbolics == mask enumeration; x2 claim and S<=L bound hold as "
     << "integer identities over " << checks << " (L, S) pairs, L <= 64";
  detail = os.str();
  return ok;
}

// --- criterion 4: inference call accounting ----------------------------------

bool criterion_call_accounting(std::string& detail) {
  Rng rng(901);
  Model model(tiny_config(Variant::LastHidden, 4), rng);
  SampleConfig cfg;
  cfg.steps = 3;
  cfg.max_new_tokens = 20;  // B = 5
  cfg.seed = 3;
  SampleResult block = sample_block_diffusion(model, random_tokens(4, 30, rng), cfg, kSched);
  const bool block_ok =
      block.trace.decoder_calls() == 5 * 3 && block.trace.encoder_calls() == 5 + 1;

  SampleConfig mc;
  mc.mode = SampleMode::Mdlm;
  mc.steps = 12;
  mc.dec_only = 3;
  mc.max_new_tokens = 12;
  mc.seed = 4;
  SampleResult mdlm = sample_mdlm(model, {}, mc, kSched);
  const bool mdlm_ok = mdlm.trace.encoder_calls() == 12 / 3 + 1 &&
                       mdlm.trace.decoder_calls() == 12;

  std::ostringstream os;
  os << "block: " << block.trace.encoder_calls() << " enc / " << block.trace.decoder_calls()
     << " dec calls for B=5, T=3 (want 6 / 15); mdlm: " << mdlm.trace.encoder_calls()
     << " enc calls for T=12, n=3 (want 5)";
  detail = os.str();
  return block_ok && mdlm_ok;
}

// --- criterion 5: gradient correctness ---------------------------------------

bool criterion_gradients(std::string& detail) {
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 1;
  cfg.block_size = 2;
  Rng rng(523);
  Model model(cfg, rng);
  BlockLayout layout(8, 2);
  Rng noise(524);
  TrainBatch batch = make_train_batch({random_tokens(8, 32, rng)}, layout, kSched, noise, true,
                                      cfg.mask_id());

  auto loss_value = [&]() {
    Tape t;
    t.recording = false;
    return loss_block_diffusion_vectorized(t, model, batch, layout, kSched).item();
  };
  Tape tape;
  Tensor loss = loss_block_diffusion_vectorized(tape, model, batch, layout, kSched);
  tape.backward(loss);

  // Per parameter group: sampled entries plus the largest-gradient entry.
  double worst = 0;
  std::string worst_group;
  Rng pick(525);
  for (auto& [name, p] : model.parameters()) {
    std::vector<std::pair<std::string, Tensor>> one = {{name, p}};
    auto rep = testutil::fd_check_params(one, loss_value, 1e-5, 12, &pick);
    if (rep.max_rel > worst) {
      worst = rep.max_rel;
      worst_group = rep.worst;
    }
  }
  for (auto& [name, p] : model.parameters()) p.zero_grad();

  std::ostringstream os;
  os << "max relative error " << worst << " across all parameter groups (tolerance 1e-4), worst "
     << worst_group;
  detail = os.str();
  return worst < 1e-4;
}

// --- criterion 6: diffusion-process invariants --------------------------------

bool criterion_process_invariants(std::string& detail) {
  const Token mask_id = vocab::kMask;
  Rng rng(601);
  // Boundary identities.
  bool ok = alpha(kSched, 0.0) == 1.0 && alpha(kSched, 1.0) == 0.0;

  // Two-state property, 1e4 randomized trials.
  for (int trial = 0; trial < 10000 && ok; ++trial) {
    TokenSeq x = random_tokens(8, 256, rng);
    const double t = rng.uniform();
    LatentSequence z = q_sample(x, t, kSched, rng, mask_id);
    for (std::size_t i = 0; i < x.size(); ++i)
      ok = ok && (z.ids[i] == x[i] || z.ids[i] == mask_id);
  }

  // Carry-over / monotone unmasking over simulated reverse chains, 1e4 trials.
  for (int trial = 0; trial < 10000 && ok; ++trial) {
    Token z = mask_id;
    bool clean = false;
    const std::int64_t steps = 4 + std::int64_t(rng.uniform_int(8));
    for (std::int64_t i = steps; i >= 1; --i) {
      TwoPointDist d = reverse_posterior(z, Token(17), double(i - 1) / double(steps),
                                         double(i) / double(steps), kSched, mask_id);
      if (clean) ok = ok && d.p_mask == 0.0;  // never remasks
      z = rng.uniform() < d.p_token ? d.token : mask_id;
      clean = clean || z != mask_id;
    }
    ok = ok && z == Token(17);
  }

  // Zero masking probability at the model level: MASK logit is -inf on >= 1e4
  // decoded rows.
  Rng mrng(602);
  ModelConfig cfg = tiny_config(Variant::LastHidden, 4);
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  Model model(cfg, mrng);
  std::int64_t rows = 0;
  const double inf = std::numeric_limits<double>::infinity();
  while (rows < 10000 && ok) {
    const std::int64_t l = 16;
    TokenSeq x = random_tokens(l, 32, mrng);
    BlockLayout layout(l, 4);
    Rng noise = mrng.child(std::uint64_t(rows));
    TrainBatch b = make_train_batch({x}, layout, kSched, noise, true, cfg.mask_id());
    Tape tape;
    tape.recording = false;
    EncoderOutput enc = model.encode_train(tape, x, mask_block_causal(layout), iota_pos(0, l));
    Tensor logits = model.decode_train(tape, b.z[0], enc, mask_decoder(layout), iota_pos(0, l));
    for (std::int64_t i = 0; i < l; ++i) ok = ok && logits.at(i, cfg.mask_id()) == -inf;
    rows += l;
  }

  std::ostringstream os;
  os << "two-state, carry-over, zero-masking (-inf MASK logit on " << rows
     << " rows), boundary identities over 1e4 randomized trials";
  detail = os.str();
  return ok;
}

// --- criterion 7: leakage freedom ---------------------------------------------

bool criterion_leakage(std::string& detail) {
  double worst = 0;
  for (Variant variant : {Variant::LastHidden, Variant::SharedKV}) {
    Rng rng(701);
    Model model(tiny_config(variant, 4), rng);
    const std::int64_t l = 16, s = 4;
    BlockLayout layout(l, s);
    TokenSeq x = random_tokens(l, 32, rng);
    Rng noise(702);
    TrainBatch batch = make_train_batch({x}, layout, kSched, noise, true,
                                        model.config().mask_id());

    auto logits_for = [&](const TokenSeq& xs, const TokenSeq& zs) {
      Tape tape;
      tape.recording = false;
      EncoderOutput enc = model.encode_train(tape, xs, mask_block_causal(layout), iota_pos(0, l));
      return model.decode_train(tape, zs, enc, mask_decoder(layout), iota_pos(0, l)).to_matrix();
    };
    Matrix base = logits_for(x, batch.z[0]);

    for (std::int64_t pert_block = 1; pert_block < layout.num_blocks; ++pert_block) {
      TokenSeq x2 = x;
      TokenSeq z2 = batch.z[0];
      for (std::int64_t j = pert_block * s; j < (pert_block + 1) * s; ++j) {
        x2[std::size_t(j)] = Token((x2[std::size_t(j)] + 7) % 31);
        if (z2[std::size_t(j)] != model.config().mask_id()) z2[std::size_t(j)] = x2[std::size_t(j)];
      }
      Matrix pert = logits_for(x2, z2);
      for (std::int64_t i = 0; i < pert_block * s; ++i)
        for (std::int64_t j = 0; j < base.cols; ++j) {
          if (std::isinf(base.at(i, j))) continue;
          worst = std::max(worst, std::abs(base.at(i, j) - pert.at(i, j)));
        }
    }
  }
  std::ostringstream os;
  os << "max earlier-block logit change under later-block perturbation = " << worst
     << " (tolerance 1e-12), both variants";
  detail = os.str();
  return worst < 1e-12;
}

// --- criterion 8: learning smoke test -----------------------------------------

bool criterion_smoke(std::string& detail) {
  ModelConfig cfg;
  cfg.vocab_size = vocab::kSize;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.n_enc_layers = 4;
  cfg.n_dec_layers = 2;
  cfg.variant = Variant::LastHidden;
  cfg.block_size = 4;
  cfg.max_len = 256;

  const std::int64_t l = 64;
  Rng init(801);
  Model model(cfg, init);
  AdamState opt = init_adam(model);
  TrainHp hp;
  BlockLayout layout(l, cfg.block_size);
  auto corpus = pattern_corpus(256, l);
  Rng data(802), noise(803);
  for (int step = 0; step < 2000; ++step) {
    std::vector<TokenSeq> xb;
    for (int i = 0; i < 4; ++i)
      xb.push_back(corpus[std::size_t(data.uniform_int(std::int64_t(corpus.size())))]);
    train_step(model, opt, xb, layout, kSched, hp, noise);
  }

  Rng eval_rng(804);
  std::vector<TokenSeq> eval_set(corpus.begin(), corpus.begin() + 16);
  const double ppl = eval_nelbo_ppl(model, eval_set, layout, kSched, 4, eval_rng);

  SampleConfig sc;
  sc.steps = 4;
  sc.rule = DecodeRule::Argmax;
  sc.seed = 805;
  sc.max_new_tokens = 64;
  SampleResult res = sample_block_diffusion(model, vocab::encode("abc"), sc, kSched);
  const std::string pat = "abc";
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < res.tokens.size(); ++i)
    hits += res.tokens[i] == Token(pat[(3 + i) % 3]) ? 1 : 0;
  const double acc = double(hits) / double(res.tokens.size());

  std::ostringstream os;
  os << "ppl upper bound " << ppl << " (< 2.0 vs byte-uniform ~256), continuation accuracy "
     << acc * 100 << "% (>= 95%) after 2000 steps";
  detail = os.str();
  return ppl < 2.0 && acc >= 0.95;
}

// --- criterion 9: relative cost sanity ------------------------------------------

bool criterion_relative_cost(std::string& detail) {
  const std::int64_t s = 4, t_steps = 4, new_tokens = 64;

  ModelConfig split;
  split.vocab_size = vocab::kSize;
  split.d_model = 64;
  split.n_heads = 4;
  split.n_enc_layers = 10;
  split.n_dec_layers = 2;
  split.variant = Variant::LastHidden;
  split.block_size = s;
  split.max_len = 512;

  // Decoder-only reference: a tied stack whose every denoise step runs all 12
  // layers, the block-diffusion cost profile of a single-stack model.
  ModelConfig mono = split;
  mono.variant = Variant::SharedKV;
  mono.n_enc_layers = 12;
  mono.n_dec_layers = 12;
  mono.tie_weights = true;

  Rng r1(901), r2(902);
  Model fast(split, r1);
  Model slow(mono, r2);

  auto time_once = [&](Model& m, std::uint64_t seed) {
    SampleConfig sc;
    sc.steps = t_steps;
    sc.rule = DecodeRule::Argmax;
    sc.seed = seed;
    sc.max_new_tokens = new_tokens;
    const auto t0 = std::chrono::steady_clock::now();
    sample_block_diffusion(m, {}, sc, kSched);
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / double(new_tokens);
  };

  time_once(fast, 0);  // warm both code paths
  time_once(slow, 0);
  int wins = 0;
  double ms_fast = 0, ms_slow = 0;
  for (std::uint64_t trial = 1; trial <= 5; ++trial) {
    const double a = time_once(fast, trial);
    const double b = time_once(slow, trial);
    ms_fast += a / 5;
    ms_slow += b / 5;
    wins += a < b ? 1 : 0;
  }
  std::ostringstream os;
  os << "split 10/2 at " << ms_fast << " ms/token vs decoder-only-style 12 at " << ms_slow
     << " ms/token; faster in " << wins << "/5 trials (need >= 4)";
  detail = os.str();
  return wins >= 4;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Criterion> criteria = {
      {"vectorized-training oracle", criterion_vectorized_oracle},
      {"kv-cache exactness", criterion_kv_cache},
      {"flops table reproduction", criterion_flops},
      {"inference-call accounting", criterion_call_accounting},
      {"gradient correctness", criterion_gradients},
      {"diffusion-process invariants", criterion_process_invariants},
      {"leakage-freedom", criterion_leakage},
      {"learning smoke test", criterion_smoke},
      {"relative-cost sanity", criterion_relative_cost},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = criteria[i].fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    std::printf("%s - criterion %zu (%s): %s [%.1fs]\n", ok ? "PASS" : "FAIL", i + 1,
                criteria[i].name, detail.c_str(), secs);
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  else std::printf("all %zu criteria passed\n", criteria.size());
  return failures == 0 ? 0 : 1;
}
