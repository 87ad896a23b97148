#include "e2d2/model.hpp"

#include <cmath>
#include <stdexcept>

namespace e2d2 {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("config: vocab_size must be >= 2");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw std::invalid_argument("config: d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0)
    throw std::invalid_argument("config: head_dim must be even for rotary embedding");
  if (n_enc_layers < 1 || n_dec_layers < 1)
    throw std::invalid_argument("config: layer counts must be >= 1");
  if (variant == Variant::SharedKV && n_dec_layers > n_enc_layers)
    throw std::invalid_argument("config: shared_kv requires n_dec_layers <= n_enc_layers");
  if (tie_weights && variant != Variant::SharedKV)
    throw std::invalid_argument("config: tie_weights requires variant shared_kv");
  if (block_size < 1) throw std::invalid_argument("config: block_size must be >= 1");
}

std::vector<std::int64_t> pair_layers(std::int64_t n_enc, std::int64_t n_dec) {
  if (n_dec > n_enc)
    throw std::invalid_argument("pair_layers: n_dec must not exceed n_enc");
  std::vector<std::int64_t> p(static_cast<std::size_t>(n_dec));
  for (std::int64_t i = 0; i < n_dec; ++i) p[std::size_t(i)] = n_enc - n_dec + i;
  return p;
}

namespace {

Tensor init_weight(std::int64_t r, std::int64_t c, Rng& rng) {
  Tensor t = Tensor::zeros(r, c, /*requires_grad=*/true);
  for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
  return t;
}

Tensor init_gain(std::int64_t d) { return Tensor::full(1, d, 1.0, /*requires_grad=*/true); }

}  // namespace

LayerParams Model::make_layer(Rng& rng) {
  const std::int64_t d = cfg_.d_model;
  const std::int64_t hd = cfg_.head_dim();
  const std::int64_t m = cfg_.mlp_mult * d;
  LayerParams lp;
  lp.attn_norm = init_gain(d);
  lp.wq = init_weight(d, d, rng);
  lp.wk = init_weight(d, d, rng);
  lp.wv = init_weight(d, d, rng);
  lp.wo = init_weight(d, d, rng);
  lp.q_norm = init_gain(hd);
  lp.k_norm = init_gain(hd);
  lp.mlp_norm = init_gain(d);
  lp.w_gate = init_weight(d, m, rng);
  lp.w_up = init_weight(d, m, rng);
  lp.w_down = init_weight(m, d, rng);
  return lp;
}

void Model::register_layer(const std::string& prefix, const LayerParams& lp) {
  params_.emplace_back(prefix + ".attn_norm", lp.attn_norm);
  params_.emplace_back(prefix + ".wq", lp.wq);
  params_.emplace_back(prefix + ".wk", lp.wk);
  params_.emplace_back(prefix + ".wv", lp.wv);
  params_.emplace_back(prefix + ".wo", lp.wo);
  params_.emplace_back(prefix + ".q_norm", lp.q_norm);
  params_.emplace_back(prefix + ".k_norm", lp.k_norm);
  params_.emplace_back(prefix + ".mlp_norm", lp.mlp_norm);
  params_.emplace_back(prefix + ".w_gate", lp.w_gate);
  params_.emplace_back(prefix + ".w_up", lp.w_up);
  params_.emplace_back(prefix + ".w_down", lp.w_down);
}

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.variant == Variant::SharedKV)
    pairing_ = pair_layers(cfg_.n_enc_layers, cfg_.n_dec_layers);

  embed_ = init_weight(cfg_.vocab_size, cfg_.d_model, rng);
  params_.emplace_back("embed", embed_);
  if (!cfg_.tie_weights) {
    head_ = init_weight(cfg_.d_model, cfg_.vocab_size, rng);
    params_.emplace_back("head", head_);
  }

  for (std::int64_t i = 0; i < cfg_.n_enc_layers; ++i) {
    enc_layers_.push_back(make_layer(rng));
    register_layer("enc." + std::to_string(i), enc_layers_.back());
  }
  if (cfg_.tie_weights) {
    for (std::int64_t i = 0; i < cfg_.n_dec_layers; ++i)
      dec_layers_.push_back(enc_layers_[std::size_t(pairing_[std::size_t(i)])]);
  } else {
    for (std::int64_t i = 0; i < cfg_.n_dec_layers; ++i) {
      dec_layers_.push_back(make_layer(rng));
      register_layer("dec." + std::to_string(i), dec_layers_.back());
    }
  }

  if (cfg_.variant == Variant::LastHidden) {
    enc_final_norm_ = init_gain(cfg_.d_model);
    params_.emplace_back("enc_final_norm", enc_final_norm_);
  }
  dec_final_norm_ = init_gain(cfg_.d_model);
  params_.emplace_back("dec_final_norm", dec_final_norm_);
}

Tensor Model::find_parameter(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw std::invalid_argument("no parameter named " + name);
}

Model::LayerResult Model::layer_forward(Tape& tape, const LayerParams& lp, const Tensor& x,
                                        const std::vector<std::int64_t>& positions,
                                        const std::vector<const KeySegment*>& prefix,
                                        const AttentionMask& mask) const {
  for (auto p : positions)
    if (p < 0 || p >= cfg_.max_len)
      throw std::invalid_argument("position exceeds max_len");
  const std::int64_t n = x.rows();
  const std::int64_t hd = cfg_.head_dim();
  std::int64_t prefix_len = 0;
  for (const auto* seg : prefix) prefix_len += seg->len;
  if (mask.rows != n || mask.cols != prefix_len + n)
    throw std::invalid_argument("layer_forward: mask shape mismatch");

  Tensor xn = rmsnorm(tape, x, lp.attn_norm);
  Tensor q = matmul(tape, xn, lp.wq);
  Tensor k = matmul(tape, xn, lp.wk);
  Tensor v = matmul(tape, xn, lp.wv);

  const double inv_sqrt = 1.0 / std::sqrt(double(hd));
  std::vector<Tensor> head_outs;
  LayerResult res;
  res.self.len = n;
  for (std::int64_t h = 0; h < cfg_.n_heads; ++h) {
    Tensor qh = rope(tape, rmsnorm(tape, slice_cols(tape, q, h * hd, (h + 1) * hd), lp.q_norm),
                     positions, cfg_.rope_base);
    Tensor kh = rope(tape, rmsnorm(tape, slice_cols(tape, k, h * hd, (h + 1) * hd), lp.k_norm),
                     positions, cfg_.rope_base);
    Tensor vh = slice_cols(tape, v, h * hd, (h + 1) * hd);
    res.self.k.push_back(kh);
    res.self.v.push_back(vh);

    Tensor keys = kh, vals = vh;
    for (auto it = prefix.rbegin(); it != prefix.rend(); ++it) {
      if ((*it)->len == 0) continue;
      keys = concat_rows(tape, (*it)->k[std::size_t(h)], keys);
      vals = concat_rows(tape, (*it)->v[std::size_t(h)], vals);
    }
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, keys)), inv_sqrt);
    Tensor probs = masked_softmax(tape, scores, mask);
    head_outs.push_back(matmul(tape, probs, vals));
  }

  Tensor attn = matmul(tape, concat_cols(tape, head_outs), lp.wo);
  Tensor x1 = add(tape, x, attn);

  Tensor mn = rmsnorm(tape, x1, lp.mlp_norm);
  Tensor gated = mul(tape, silu(tape, matmul(tape, mn, lp.w_gate)), matmul(tape, mn, lp.w_up));
  res.out = add(tape, x1, matmul(tape, gated, lp.w_down));
  return res;
}

KeySegment Model::project_kv(Tape& tape, const LayerParams& lp, const Tensor& hidden,
                             const std::vector<std::int64_t>& positions) const {
  const std::int64_t hd = cfg_.head_dim();
  KeySegment seg;
  seg.len = hidden.rows();
  if (seg.len == 0) return seg;
  Tensor hn = rmsnorm(tape, hidden, lp.attn_norm);
  Tensor k = matmul(tape, hn, lp.wk);
  Tensor v = matmul(tape, hn, lp.wv);
  for (std::int64_t h = 0; h < cfg_.n_heads; ++h) {
    seg.k.push_back(rope(tape,
                         rmsnorm(tape, slice_cols(tape, k, h * hd, (h + 1) * hd), lp.k_norm),
                         positions, cfg_.rope_base));
    seg.v.push_back(slice_cols(tape, v, h * hd, (h + 1) * hd));
  }
  return seg;
}

Tensor Model::encoder_stack_raw(Tape& tape, const TokenSeq& tokens, const AttentionMask& mask,
                                const std::vector<std::int64_t>& positions) {
  Tensor x = embedding(tape, embed_, tokens);
  for (const auto& lp : enc_layers_) x = layer_forward(tape, lp, x, positions, {}, mask).out;
  return x;
}

EncoderOutput Model::encode_train(Tape& tape, const TokenSeq& tokens, const AttentionMask& mask,
                                  const std::vector<std::int64_t>& positions) {
  for (Token id : tokens)
    if (id == cfg_.mask_id())
      throw std::invalid_argument("encode: clean input contains MASK");
  const std::int64_t n = std::int64_t(tokens.size());
  if (std::int64_t(positions.size()) != n)
    throw std::invalid_argument("encode: positions length mismatch");

  EncoderOutput out;
  out.variant = cfg_.variant;
  out.len = n;
  out.positions = positions;
  if (n == 0) {
    out.layer_kv.resize(std::size_t(cfg_.n_enc_layers));
    return out;
  }
  if (mask.rows != n || mask.cols != n)
    throw std::invalid_argument("encode: mask shape mismatch");

  Tensor x = embedding(tape, embed_, tokens);
  for (const auto& lp : enc_layers_) {
    LayerResult res = layer_forward(tape, lp, x, positions, {}, mask);
    x = res.out;
    out.layer_kv.push_back(std::move(res.self));
  }
  if (cfg_.variant == Variant::LastHidden)
    out.last_hidden = rmsnorm(tape, x, enc_final_norm_);
  return out;
}

Tensor Model::project_logits(Tape& tape, const Tensor& hidden) {
  Tensor h = rmsnorm(tape, hidden, dec_final_norm_);
  Tensor logits = cfg_.tie_weights ? matmul(tape, h, transpose(tape, embed_))
                                   : matmul(tape, h, head_);
  return forbid_col(tape, logits, cfg_.mask_id());
}

Tensor Model::decode_train(Tape& tape, const TokenSeq& z, const EncoderOutput& enc,
                           const AttentionMask& mask,
                           const std::vector<std::int64_t>& z_positions) {
  const std::int64_t n = std::int64_t(z.size());
  if (std::int64_t(z_positions.size()) != n)
    throw std::invalid_argument("decode: positions length mismatch");
  if (mask.rows != n || mask.cols != enc.len + n)
    throw std::invalid_argument("decode: mask shape does not cover enc context + segment");
  if (enc.variant != cfg_.variant)
    throw std::invalid_argument("decode: encoder output variant mismatch");

  Tensor x = embedding(tape, embed_, z);
  for (std::int64_t i = 0; i < cfg_.n_dec_layers; ++i) {
    const LayerParams& lp = dec_layers_[std::size_t(i)];
    KeySegment cross;
    const KeySegment* cross_ptr = nullptr;
    if (enc.len > 0) {
      if (cfg_.variant == Variant::LastHidden) {
        cross = project_kv(tape, lp, enc.last_hidden, enc.positions);
        cross_ptr = &cross;
      } else {
        cross_ptr = &enc.layer_kv[std::size_t(pairing_[std::size_t(i)])];
      }
    }
    std::vector<const KeySegment*> prefix;
    if (cross_ptr) prefix.push_back(cross_ptr);
    x = layer_forward(tape, lp, x, z_positions, prefix, mask).out;
  }
  return project_logits(tape, x);
}

KVCache Model::init_cache() const {
  KVCache c;
  c.enc.resize(std::size_t(cfg_.n_enc_layers));
  for (auto& hb : c.enc) {
    hb.k.resize(std::size_t(cfg_.n_heads));
    hb.v.resize(std::size_t(cfg_.n_heads));
  }
  if (cfg_.variant == Variant::LastHidden) {
    c.dec.resize(std::size_t(cfg_.n_dec_layers));
    for (auto& hb : c.dec) {
      hb.k.resize(std::size_t(cfg_.n_heads));
      hb.v.resize(std::size_t(cfg_.n_heads));
    }
  }
  return c;
}

KeySegment Model::wrap_bufs(Tape& tape, const HeadBufs& bufs, std::int64_t len) const {
  (void)tape;
  const std::int64_t hd = cfg_.head_dim();
  KeySegment seg;
  seg.len = len;
  for (std::int64_t h = 0; h < cfg_.n_heads; ++h) {
    seg.k.push_back(Tensor::from(len, hd, bufs.k[std::size_t(h)]));
    seg.v.push_back(Tensor::from(len, hd, bufs.v[std::size_t(h)]));
  }
  return seg;
}

namespace {

void append_segment(HeadBufs& bufs, const KeySegment& seg) {
  for (std::size_t h = 0; h < seg.k.size(); ++h) {
    const auto& kv = seg.k[h].data();
    const auto& vv = seg.v[h].data();
    bufs.k[h].insert(bufs.k[h].end(), kv.begin(), kv.end());
    bufs.v[h].insert(bufs.v[h].end(), vv.begin(), vv.end());
  }
}

// Mask over [committed | new] with invalid key columns zeroed. All committed
// slots lie in earlier blocks, so they are fully visible; within the appended
// segment attention is block-causal on the block grid (block_size <= 0 means
// the whole segment is one unit, as in a decoder denoise pass).
AttentionMask incremental_mask(std::int64_t n_new, const std::vector<std::uint8_t>& committed_valid,
                               const std::vector<std::uint8_t>& new_valid,
                               std::int64_t block_size) {
  const std::int64_t committed = std::int64_t(committed_valid.size());
  AttentionMask m = AttentionMask::ones(n_new, committed + n_new);
  for (std::int64_t c = 0; c < committed; ++c)
    if (!committed_valid[std::size_t(c)])
      for (std::int64_t i = 0; i < n_new; ++i) m.set(i, c, false);
  for (std::int64_t c = 0; c < n_new; ++c) {
    const bool invalid = !new_valid[std::size_t(c)];
    for (std::int64_t i = 0; i < n_new; ++i) {
      const bool future_block = block_size > 0 && c / block_size > i / block_size;
      if (invalid || future_block) m.set(i, committed + c, false);
    }
  }
  // Keep every query row usable; an invalid slot attends to itself.
  for (std::int64_t i = 0; i < n_new; ++i) {
    bool any = false;
    for (std::int64_t j = 0; j < m.cols && !any; ++j) any = m.on(i, j);
    if (!any) m.set(i, committed + i, true);
  }
  return m;
}

}  // namespace

Matrix Model::cache_append(KVCache& cache, const TokenSeq& tokens,
                           const std::vector<std::int64_t>& positions,
                           const std::vector<std::uint8_t>& valid) {
  const std::int64_t n = std::int64_t(tokens.size());
  if (std::int64_t(positions.size()) != n || std::int64_t(valid.size()) != n)
    throw std::invalid_argument("cache_append: length mismatch");
  if (n == 0) return Matrix();
  for (Token id : tokens)
    if (id == cfg_.mask_id())
      throw std::invalid_argument("cache_append: clean input contains MASK");

  Tape tape;
  tape.recording = false;
  const AttentionMask mask = incremental_mask(n, cache.key_valid, valid, cfg_.block_size);

  Tensor x = embedding(tape, embed_, tokens);
  for (std::int64_t i = 0; i < cfg_.n_enc_layers; ++i) {
    KeySegment prefix_seg = wrap_bufs(tape, cache.enc[std::size_t(i)], cache.committed_len);
    std::vector<const KeySegment*> prefix;
    if (prefix_seg.len > 0) prefix.push_back(&prefix_seg);
    LayerResult res = layer_forward(tape, enc_layers_[std::size_t(i)], x, positions,
                                    prefix, mask);
    x = res.out;
    append_segment(cache.enc[std::size_t(i)], res.self);
  }

  Matrix h_out;
  if (cfg_.variant == Variant::LastHidden) {
    Tensor h_new = rmsnorm(tape, x, enc_final_norm_);
    for (std::int64_t i = 0; i < cfg_.n_dec_layers; ++i) {
      KeySegment seg = project_kv(tape, dec_layers_[std::size_t(i)], h_new, positions);
      append_segment(cache.dec[std::size_t(i)], seg);
    }
    h_out = h_new.to_matrix();
  }

  cache.key_valid.insert(cache.key_valid.end(), valid.begin(), valid.end());
  cache.positions.insert(cache.positions.end(), positions.begin(), positions.end());
  cache.committed_len += n;
  return h_out;
}

Matrix Model::decode_step(const KVCache& cache, const TokenSeq& z,
                          const std::vector<std::int64_t>& z_positions) {
  const std::int64_t n = std::int64_t(z.size());
  if (std::int64_t(z_positions.size()) != n)
    throw std::invalid_argument("decode_step: positions length mismatch");

  Tape tape;
  tape.recording = false;
  AttentionMask mask = incremental_mask(n, cache.key_valid,
                                        std::vector<std::uint8_t>(std::size_t(n), 1),
                                        /*block_size=*/0);

  Tensor x = embedding(tape, embed_, z);
  for (std::int64_t i = 0; i < cfg_.n_dec_layers; ++i) {
    const LayerParams& lp = dec_layers_[std::size_t(i)];
    KeySegment cross;
    if (cache.committed_len > 0) {
      const HeadBufs& bufs = cfg_.variant == Variant::LastHidden
                                 ? cache.dec[std::size_t(i)]
                                 : cache.enc[std::size_t(pairing_[std::size_t(i)])];
      cross = wrap_bufs(tape, bufs, cache.committed_len);
    }
    std::vector<const KeySegment*> prefix;
    if (cross.len > 0) prefix.push_back(&cross);
    x = layer_forward(tape, lp, x, z_positions, prefix, mask).out;
  }
  return project_logits(tape, x).to_matrix();
}

Matrix Model::forward_x0(const KVCache& cache, const TokenSeq& z,
                         const std::vector<std::int64_t>& z_positions) {
  Matrix logits = decode_step(cache, z, z_positions);
  Matrix probs(logits.rows, logits.cols);
  for (std::int64_t i = 0; i < logits.rows; ++i) {
    if (z[std::size_t(i)] != cfg_.mask_id()) {
      probs.at(i, z[std::size_t(i)]) = 1.0;  // carry-over: clean stays put
      continue;
    }
    double m = logits.at(i, 0);
    for (std::int64_t j = 0; j < logits.cols; ++j) m = std::max(m, logits.at(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < logits.cols; ++j) {
      const double x = logits.at(i, j);
      const double e = std::isinf(x) && x < 0 ? 0.0 : std::exp(x - m);
      probs.at(i, j) = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < logits.cols; ++j) probs.at(i, j) /= denom;
  }
  return probs;
}

}  // namespace e2d2
