#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "e2d2/attention_mask.hpp"

namespace e2d2 {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Plain fp64 matrix without gradient tracking, for inference-side outputs.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), v(std::size_t(r * c), 0.0) {}
  double& at(std::int64_t i, std::int64_t j) { return v[std::size_t(i * cols + j)]; }
  double at(std::int64_t i, std::int64_t j) const { return v[std::size_t(i * cols + j)]; }
};

class Tape;

struct TensorData {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const Tape* producer = nullptr;  // tape that produced this node, null for leaves
};

// Cheap shared handle over a dense row-major fp64 matrix. Scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::int64_t r, std::int64_t c, bool requires_grad = false);
  static Tensor full(std::int64_t r, std::int64_t c, double fill, bool requires_grad = false);
  static Tensor from(std::int64_t r, std::int64_t c, std::vector<double> v,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return bool(d_); }
  std::int64_t rows() const { return d_->rows; }
  std::int64_t cols() const { return d_->cols; }
  std::int64_t size() const { return d_->rows * d_->cols; }

  double& at(std::int64_t i, std::int64_t j) { return d_->value[std::size_t(i * cols() + j)]; }
  double at(std::int64_t i, std::int64_t j) const {
    return d_->value[std::size_t(i * cols() + j)];
  }
  double item() const;  // 1x1 only

  std::vector<double>& data() { return d_->value; }
  const std::vector<double>& data() const { return d_->value; }
  std::vector<double>& grad() { return d_->grad; }
  const std::vector<double>& grad() const { return d_->grad; }
  double grad_at(std::int64_t i, std::int64_t j) const {
    return d_->grad[std::size_t(i * cols() + j)];
  }

  void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), 0.0); }
  bool requires_grad() const { return d_->requires_grad; }

  Matrix to_matrix() const;

  std::shared_ptr<TensorData> d_;
};

// Ordered record of primitive ops. Ops are appended in execution order, so
// walking the record backwards is a reverse topological traversal. One tape
// per training step; recording=false gives a forward-only pass for inference.
class Tape {
 public:
  bool recording = true;

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
  std::size_t num_ops() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the record in reverse, visiting each
  // op exactly once. The loss must be a 1x1 tensor produced on this tape.
  void backward(const Tensor& loss);

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

// --- Primitive ops -----------------------------------------------------------
// Every op computes the forward value immediately and, when the tape is
// recording, appends a closure that accumulates input grads from output grads.
// All reductions run in fixed sequential order.

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& t, const Tensor& a);
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double c);
Tensor silu(Tape& t, const Tensor& a);

// Row-wise x / sqrt(mean(x^2) + eps) * gain, eps = 1e-6. gain is [1, D].
Tensor rmsnorm(Tape& t, const Tensor& x, const Tensor& gain);

// Row-wise softmax over allowed keys; disallowed keys get additive -inf before
// normalization and exactly 0 probability after. A row with no allowed key is
// a degenerate-row error.
Tensor masked_softmax(Tape& t, const Tensor& scores, const AttentionMask& mask);

// sum_i weights[i] * (-log softmax(logits[i])[targets[i]]); returns 1x1.
Tensor cross_entropy(Tape& t, const Tensor& logits, const TokenSeq& targets,
                     const std::vector<double>& weights);

// Gather rows of table [V, D] at ids; backward scatter-adds.
Tensor embedding(Tape& t, const Tensor& table, const TokenSeq& ids);

Tensor concat_rows(Tape& t, const Tensor& a, const Tensor& b);
Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts);
Tensor slice_rows(Tape& t, const Tensor& a, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(Tape& t, const Tensor& a, std::int64_t c0, std::int64_t c1);

// Rotary embedding over one head: x is [n, head_dim], head_dim even, pairs
// (j, j + head_dim/2) rotated by pos * base^(-2j/head_dim).
Tensor rope(Tape& t, const Tensor& x, const std::vector<std::int64_t>& positions, double base);

// Copy with one column forced to -inf; grads for that column are dropped.
Tensor forbid_col(Tape& t, const Tensor& a, std::int64_t col);

Tensor sum_all(Tape& t, const Tensor& a);

}  // namespace e2d2
