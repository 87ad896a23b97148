// Byte-level encoder-decoder discrete diffusion language model CLI.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "e2d2/checkpoint.hpp"
#include "e2d2/config.hpp"
#include "e2d2/data.hpp"
#include "e2d2/flops.hpp"
#include "e2d2/masks.hpp"
#include "e2d2/sampling.hpp"
#include "e2d2/training.hpp"
#include "e2d2/vocab.hpp"

using namespace e2d2;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_run_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return RunConfig::from_file(config_path);
}

Model load_model_or_usage(const std::string& ckpt) {
  if (ckpt.empty()) throw UsageError("a checkpoint is required (--ckpt PATH)");
  std::ifstream probe(ckpt, std::ios::binary);
  if (!probe) throw UsageError("cannot open checkpoint: " + ckpt);
  probe.close();
  return load_checkpoint(ckpt);
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw UsageError("train needs a corpus (run.corpus or --corpus)");
  Rng root(cfg.seed);
  Rng init_rng = root.child(1);
  Rng data_rng = root.child(2);
  Rng noise_rng = root.child(3);

  auto seqs = ingest(cfg.corpus, cfg.seq_len);
  BatchStream stream(seqs, cfg.batch_size, data_rng);
  Model model(cfg.model, init_rng);
  AdamState opt = init_adam(model);
  BlockLayout layout(cfg.seq_len, cfg.model.block_size);

  std::ofstream metrics(cfg.metrics_path, std::ios::trunc);
  if (!metrics) throw UsageError("cannot open metrics log: " + cfg.metrics_path);

  std::int64_t tokens_seen = 0;
  for (std::int64_t step = 1; step <= cfg.train_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    StepMetrics m = train_step(model, opt, stream.next(), layout, cfg.schedule, cfg.train,
                               noise_rng);
    const auto t1 = std::chrono::steady_clock::now();
    tokens_seen += cfg.batch_size * cfg.seq_len;
    metrics << "step=" << step << " loss=" << m.loss << " grad_norm=" << m.grad_norm
            << " tokens_seen=" << tokens_seen << " wall_ms="
            << std::chrono::duration<double, std::milli>(t1 - t0).count() << "\n";
    if (step % 100 == 0 || step == cfg.train_steps)
      std::cout << "step " << step << "/" << cfg.train_steps << " loss " << m.loss << "\n";
  }
  save_checkpoint(model, cfg.checkpoint);
  std::cout << "saved checkpoint to " << cfg.checkpoint << "\n";
  return kExitOk;
}

int cmd_sample(const RunConfig& cfg, const std::string& prompt_text,
               const std::string& trace_path) {
  Model model = load_model_or_usage(cfg.checkpoint);
  SampleConfig sc = cfg.sample;
  sc.seed = Rng(cfg.seed).child(4).seed();
  TokenSeq prompt = vocab::encode(prompt_text);

  SampleResult res = sc.mode == SampleMode::Block
                         ? sample_block_diffusion(model, prompt, sc, cfg.schedule)
                         : sample_mdlm(model, prompt, sc, cfg.schedule);
  std::cout << vocab::decode(res.tokens) << "\n";
  if (!trace_path.empty()) {
    std::ofstream out(trace_path, std::ios::trunc);
    if (!out) throw UsageError("cannot open trace file: " + trace_path);
    res.trace.write(out);
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::int64_t mc_samples, std::int64_t max_seqs) {
  Model model = load_model_or_usage(cfg.checkpoint);
  if (cfg.corpus.empty()) throw UsageError("eval needs a corpus (run.corpus or --corpus)");
  auto seqs = ingest(cfg.corpus, cfg.seq_len);
  if (max_seqs > 0 && std::int64_t(seqs.size()) > max_seqs)
    seqs.resize(std::size_t(max_seqs));
  Rng eval_rng = Rng(cfg.seed).child(5);
  BlockLayout layout(cfg.seq_len, model.config().block_size);
  const double ppl = eval_nelbo_ppl(model, seqs, layout, cfg.schedule, mc_samples, eval_rng,
                                    cfg.train.mode);
  if (!std::isfinite(ppl)) throw std::runtime_error("eval: non-finite perplexity");
  std::cout << "ppl_upper_bound=" << ppl << " sequences=" << seqs.size()
            << " mc_samples=" << mc_samples << "\n";
  return kExitOk;
}

int cmd_flops(std::int64_t n, std::int64_t n_enc, std::int64_t n_dec, std::int64_t d,
              std::int64_t l, std::int64_t s, std::int64_t t, bool csv, bool validate,
              const std::string& pareto_splits) {
  std::vector<CostModel> models;
  for (Arch arch : {Arch::AR, Arch::MDLM, Arch::BD3LM, Arch::E2D2}) {
    CostModel cm;
    cm.arch = arch;
    cm.n = n;
    cm.n_enc = n_enc;
    cm.n_dec = n_dec;
    cm.d = d;
    cm.l = l;
    cm.s = s;
    cm.t = t;
    models.push_back(cm);
  }

  if (validate) {
    for (const auto& cm : models) {
      MaskCheck chk = validate_against_masks(cm);
      std::cout << arch_name(cm.arch) << ": formula " << chk.formula << " == 4*N*D*"
                << chk.per_layer_ops << " (mask enumeration) ok\n";
    }
    return kExitOk;
  }

  if (!pareto_splits.empty()) {
    std::vector<std::int64_t> splits;
    std::stringstream ss(pareto_splits);
    std::string item;
    while (std::getline(ss, item, ',')) splits.push_back(std::stoll(item));
    auto rows = pareto_sweep(n, d, l, s, t, splits, /*measure=*/true, 1);
    std::cout << "n_enc,n_dec,infer_flops,wall_ms_per_token\n";
    for (const auto& r : rows)
      std::cout << r.n_enc << ',' << r.n_dec << ',' << r.infer_flops << ','
                << r.wall_ms_per_token << "\n";
    return kExitOk;
  }

  if (csv) {
    std::cout << flops_csv_header() << "\n";
    for (const auto& cm : models) {
      CallCosts c = per_call_costs(cm);
      std::cout << flops_csv_row(cm, c.theta, c.phi) << "\n";
    }
    return kExitOk;
  }

  std::cout << std::left << std::setw(8) << "arch" << std::right << std::setw(16) << "attn_flops"
            << std::setw(16) << "mlp_flops" << std::setw(18) << "infer_flops" << "\n";
  for (const auto& cm : models) {
    CallCosts c = per_call_costs(cm);
    std::cout << std::left << std::setw(8) << arch_name(cm.arch) << std::right << std::setw(16)
              << attention_flops(cm) << std::setw(16) << mlp_flops(cm) << std::setw(18)
              << inference_flops(cm, c.theta, c.phi) << "\n";
  }
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg, std::int64_t warmup, std::int64_t samples) {
  const bool have_ckpt = !cfg.checkpoint.empty() && std::ifstream(cfg.checkpoint).good();
  Rng init_rng = Rng(cfg.seed).child(1);
  Model model = have_ckpt ? load_checkpoint(cfg.checkpoint) : Model(cfg.model, init_rng);
  SampleConfig sc = cfg.sample;
  sc.rule = DecodeRule::Argmax;

  auto one_run = [&](std::uint64_t seed) {
    SampleConfig run_cfg = sc;
    run_cfg.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    SampleResult res = run_cfg.mode == SampleMode::Block
                           ? sample_block_diffusion(model, {}, run_cfg, cfg.schedule)
                           : sample_mdlm(model, {}, run_cfg, cfg.schedule);
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    return std::pair<double, SampleTrace>(double(res.tokens.size()) / secs,
                                          std::move(res.trace));
  };

  for (std::int64_t i = 0; i < warmup; ++i) one_run(std::uint64_t(i));
  std::vector<double> tput;
  std::int64_t enc_calls = 0, dec_calls = 0;
  for (std::int64_t i = 0; i < samples; ++i) {
    auto [tps, trace] = one_run(std::uint64_t(warmup + i));
    tput.push_back(tps);
    enc_calls = trace.encoder_calls();
    dec_calls = trace.decoder_calls();
  }
  std::sort(tput.begin(), tput.end());
  const double median = tput[tput.size() / 2];
  double mean = 0;
  for (double v : tput) mean += v / double(tput.size());
  double var = 0;
  for (double v : tput) var += (v - mean) * (v - mean) / double(tput.size());
  std::cout << "tokens_per_sec_median=" << median << " spread=" << std::sqrt(var)
            << " samples=" << samples << " warmup=" << warmup
            << " encoder_calls=" << enc_calls << " decoder_calls=" << dec_calls << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"encoder-decoder discrete diffusion language model over raw bytes"};
  app.require_subcommand(1);

  std::string config_path, ckpt, corpus, prompt_text, trace_path, mode, rule, pareto_splits;
  std::uint64_t seed = 0;
  bool csv = false, validate = false;
  std::int64_t steps = -1, mc_samples = 8, max_seqs = 64, new_tokens = -1;
  std::int64_t warmup = 100, samples = 100;
  std::int64_t sample_t = -1, sample_n = -1;
  double temperature = -1.0;
  std::int64_t fl_n = 12, fl_n_enc = 10, fl_n_dec = 2, fl_d = 64, fl_l = 64, fl_s = 4, fl_t = 4;

  std::vector<CLI::Option*> seed_opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value sections)");
    seed_opts.push_back(sub->add_option("--seed", seed, "root seed"));
    sub->add_option("--ckpt", ckpt, "checkpoint path");
  };

  auto* train = app.add_subcommand("train", "train on a byte corpus");
  add_common(train);
  train->add_option("--corpus", corpus, "corpus file");
  train->add_option("--steps", steps, "override train.steps");

  auto* sample = app.add_subcommand("sample", "generate text from a checkpoint");
  add_common(sample);
  sample->add_option("--prompt", prompt_text, "prompt text");
  sample->add_option("--mode", mode, "block|mdlm");
  sample->add_option("--T", sample_t, "diffusion steps");
  sample->add_option("--n", sample_n, "decoder-only steps between encoder calls (mdlm)");
  sample->add_option("--rule", rule, "ancestral|argmax");
  sample->add_option("--temperature", temperature, "softmax temperature");
  sample->add_option("--max-new-tokens", new_tokens, "tokens to generate");
  sample->add_option("--trace", trace_path, "write per-step trace records here");

  auto* eval = app.add_subcommand("eval", "perplexity upper bound on a corpus");
  add_common(eval);
  eval->add_option("--corpus", corpus, "corpus file");
  eval->add_option("--mc", mc_samples, "monte-carlo samples per sequence");
  eval->add_option("--max-seqs", max_seqs, "cap on evaluated sequences");

  auto* flops = app.add_subcommand("flops", "closed-form cost tables");
  flops->add_option("--N", fl_n, "total layers (ar/mdlm/bd3lm)");
  flops->add_option("--n-enc", fl_n_enc, "encoder layers");
  flops->add_option("--n-dec", fl_n_dec, "decoder layers");
  flops->add_option("--D", fl_d, "hidden dim");
  flops->add_option("--L", fl_l, "sequence length");
  flops->add_option("--S", fl_s, "block size");
  flops->add_option("--T", fl_t, "diffusion steps");
  flops->add_flag("--csv", csv, "machine-readable rows");
  flops->add_flag("--validate", validate, "check formulas against mask enumeration");
  flops->add_option("--pareto", pareto_splits, "comma-separated decoder depths to sweep");

  auto* bench = app.add_subcommand("bench", "decoding throughput protocol");
  add_common(bench);
  bench->add_option("--warmup", warmup, "warmup samples");
  bench->add_option("--samples", samples, "measured samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    bool seed_given = false;
    for (auto* opt : seed_opts) seed_given |= opt->count() > 0;
    if (seed_given) cfg.seed = seed;
    if (!ckpt.empty()) cfg.checkpoint = ckpt;
    if (!corpus.empty()) cfg.corpus = corpus;
    if (steps > 0) cfg.train_steps = steps;
    if (!mode.empty()) cfg.set("sample.mode", mode);
    if (!rule.empty()) cfg.set("sample.rule", rule);
    if (temperature > 0) cfg.sample.temperature = temperature;
    if (sample_t > 0) cfg.sample.steps = sample_t;
    if (sample_n > 0) cfg.sample.dec_only = sample_n;
    if (new_tokens > 0) cfg.sample.max_new_tokens = new_tokens;

    if (train->parsed()) return cmd_train(cfg);
    if (sample->parsed()) return cmd_sample(cfg, prompt_text, trace_path);
    if (eval->parsed()) return cmd_eval(cfg, mc_samples, max_seqs);
    if (flops->parsed())
      return cmd_flops(fl_n, fl_n_enc, fl_n_dec, fl_d, fl_l, fl_s, fl_t, csv, validate,
                       pareto_splits);
    if (bench->parsed()) return cmd_bench(cfg, warmup, samples);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const std::string what = e.what();
    if (what.find("cannot open") != std::string::npos ||
        what.find("empty corpus") != std::string::npos)
      return kExitUsage;
    return kExitNumeric;
  }
  return kExitOk;
}
