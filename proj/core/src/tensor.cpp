#include "e2d2/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace e2d2 {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::shared_ptr<TensorData> make_node(std::int64_t r, std::int64_t c) {
  auto d = std::make_shared<TensorData>();
  d->rows = r;
  d->cols = c;
  d->value.assign(std::size_t(r * c), 0.0);
  d->grad.assign(std::size_t(r * c), 0.0);
  return d;
}

Tensor make_output(Tape& t, std::int64_t r, std::int64_t c) {
  Tensor out;
  out.d_ = make_node(r, c);
  out.d_->producer = &t;
  out.d_->requires_grad = true;
  return out;
}

void check(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

Tensor Tensor::zeros(std::int64_t r, std::int64_t c, bool requires_grad) {
  Tensor t;
  t.d_ = make_node(r, c);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::int64_t r, std::int64_t c, double fill, bool requires_grad) {
  Tensor t = zeros(r, c, requires_grad);
  std::fill(t.d_->value.begin(), t.d_->value.end(), fill);
  return t;
}

Tensor Tensor::from(std::int64_t r, std::int64_t c, std::vector<double> v, bool requires_grad) {
  if (std::int64_t(v.size()) != r * c)
    throw std::invalid_argument("tensor: data length does not match shape");
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->rows = r;
  t.d_->cols = c;
  t.d_->value = std::move(v);
  t.d_->grad.assign(std::size_t(r * c), 0.0);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v) { return from(1, 1, {v}); }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not 1x1");
  return d_->value[0];
}

Matrix Tensor::to_matrix() const {
  Matrix m(rows(), cols());
  m.v = d_->value;
  return m;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.d_->producer != this)
    throw std::logic_error("backward: value was not produced on this tape");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  loss.d_->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul: inner extents disagree");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_output(t, m, n);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out.data().data();
    for (std::int64_t i = 0; i < m; ++i) {
      double* Ci = C + i * n;
      for (std::int64_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* Bp = B + p * n;
        for (std::int64_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
    }
  }
  if (t.recording) {
    auto ad = a.d_, bd = b.d_, od = out.d_;
    t.record([ad, bd, od, m, k, n] {
      const double* G = od->grad.data();
      const double* A = ad->value.data();
      const double* B = bd->value.data();
      double* GA = ad->grad.data();
      double* GB = bd->grad.data();
      // a.grad += g * b^T
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* Gi = G + i * n;
          const double* Bp = B + p * n;
          for (std::int64_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
          GA[i * k + p] += s;
        }
      // b.grad += a^T * g
      for (std::int64_t i = 0; i < m; ++i) {
        const double* Gi = G + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          double* GBp = GB + p * n;
          for (std::int64_t j = 0; j < n; ++j) GBp[j] += aip * Gi[j];
        }
      }
    });
  }
  return out;
}

Tensor transpose(Tape& t, const Tensor& a) {
  const std::int64_t m = a.rows(), n = a.cols();
  Tensor out = make_output(t, n, m);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    t.record([ad, od, m, n] {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
          ad->grad[std::size_t(i * n + j)] += od->grad[std::size_t(j * m + i)];
    });
  }
  return out;
}

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tensor out = make_output(t, a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[std::size_t(i)] = a.data()[std::size_t(i)] + b.data()[std::size_t(i)];
  if (t.recording) {
    auto ad = a.d_, bd = b.d_, od = out.d_;
    t.record([ad, bd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        ad->grad[i] += od->grad[i];
        bd->grad[i] += od->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Tensor out = make_output(t, a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[std::size_t(i)] = a.data()[std::size_t(i)] * b.data()[std::size_t(i)];
  if (t.recording) {
    auto ad = a.d_, bd = b.d_, od = out.d_;
    t.record([ad, bd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        ad->grad[i] += od->grad[i] * bd->value[i];
        bd->grad[i] += od->grad[i] * ad->value[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& t, const Tensor& a, double c) {
  Tensor out = make_output(t, a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[std::size_t(i)] = a.data()[std::size_t(i)] * c;
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    t.record([ad, od, c] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * c;
    });
  }
  return out;
}

Tensor silu(Tape& t, const Tensor& a) {
  Tensor out = make_output(t, a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[std::size_t(i)];
    out.data()[std::size_t(i)] = x / (1.0 + std::exp(-x));
  }
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    t.record([ad, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        const double x = ad->value[i];
        const double sig = 1.0 / (1.0 + std::exp(-x));
        ad->grad[i] += od->grad[i] * sig * (1.0 + x * (1.0 - sig));
      }
    });
  }
  return out;
}

Tensor rmsnorm(Tape& t, const Tensor& x, const Tensor& gain) {
  check(gain.rows() == 1 && gain.cols() == x.cols(), "rmsnorm: gain must be [1, D]");
  check(x.cols() > 0, "rmsnorm: D must be positive");
  constexpr double eps = 1e-6;
  const std::int64_t n = x.rows(), d = x.cols();
  Tensor out = make_output(t, n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    double ms = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ms += x.at(i, j) * x.at(i, j);
    ms /= double(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) * inv * gain.at(0, j);
  }
  if (t.recording) {
    auto xd = x.d_, gd = gain.d_, od = out.d_;
    t.record([xd, gd, od, n, d] {
      for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = xd->value.data() + i * d;
        const double* gi = od->grad.data() + i * d;
        double ms = 0.0;
        for (std::int64_t j = 0; j < d; ++j) ms += xi[j] * xi[j];
        ms /= double(d);
        const double inv = 1.0 / std::sqrt(ms + eps);
        // a_j = dL/dy_j * gain_j; dx_k = inv*a_k - inv^3 * x_k * (sum_j a_j x_j)/D
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += gi[j] * gd->value[std::size_t(j)] * xi[j];
        const double c = inv * inv * inv * dot / double(d);
        for (std::int64_t j = 0; j < d; ++j) {
          xd->grad[std::size_t(i * d + j)] +=
              inv * gi[j] * gd->value[std::size_t(j)] - c * xi[j];
          gd->grad[std::size_t(j)] += gi[j] * xi[j] * inv;
        }
      }
    });
  }
  return out;
}

Tensor masked_softmax(Tape& t, const Tensor& scores, const AttentionMask& mask) {
  check(scores.rows() == mask.rows && scores.cols() == mask.cols,
        "masked_softmax: mask shape mismatch");
  const std::int64_t n = scores.rows(), k = scores.cols();
  Tensor out = make_output(t, n, k);
  for (std::int64_t i = 0; i < n; ++i) {
    // Additive -inf on disallowed keys, then a stable softmax.
    double m = kNegInf;
    for (std::int64_t j = 0; j < k; ++j) {
      const double s = mask.on(i, j) ? scores.at(i, j) : kNegInf;
      if (s > m) m = s;
    }
    if (m == kNegInf)
      throw std::domain_error("masked_softmax: degenerate row with no allowed key");
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double s = mask.on(i, j) ? scores.at(i, j) : kNegInf;
      const double e = (s == kNegInf) ? 0.0 : std::exp(s - m);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < k; ++j) out.at(i, j) /= denom;
  }
  if (t.recording) {
    auto sd = scores.d_, od = out.d_;
    t.record([sd, od, n, k] {
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = od->value.data() + i * k;
        const double* g = od->grad.data() + i * k;
        double dot = 0.0;
        for (std::int64_t j = 0; j < k; ++j) dot += p[j] * g[j];
        for (std::int64_t j = 0; j < k; ++j)
          sd->grad[std::size_t(i * k + j)] += p[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape& t, const Tensor& logits, const TokenSeq& targets,
                     const std::vector<double>& weights) {
  const std::int64_t n = logits.rows(), v = logits.cols();
  check(std::int64_t(targets.size()) == n, "cross_entropy: targets length mismatch");
  check(std::int64_t(weights.size()) == n, "cross_entropy: weights length mismatch");
  for (std::int64_t i = 0; i < n; ++i)
    if (targets[std::size_t(i)] < 0 || targets[std::size_t(i)] >= v)
      throw std::out_of_range("cross_entropy: target out of range");

  Tensor out = make_output(t, 1, 1);
  std::vector<double> lse(static_cast<std::size_t>(n), 0.0);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double m = kNegInf;
    for (std::int64_t j = 0; j < v; ++j) m = std::max(m, logits.at(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < v; ++j) {
      const double x = logits.at(i, j);
      denom += (x == kNegInf) ? 0.0 : std::exp(x - m);
    }
    lse[std::size_t(i)] = m + std::log(denom);
    total += weights[std::size_t(i)] * (lse[std::size_t(i)] - logits.at(i, targets[std::size_t(i)]));
  }
  out.data()[0] = total;
  if (t.recording) {
    auto ld = logits.d_, od = out.d_;
    auto tg = targets;
    auto w = weights;
    t.record([ld, od, tg, w, lse, n, v] {
      const double g = od->grad[0];
      for (std::int64_t i = 0; i < n; ++i) {
        const double wi = w[std::size_t(i)] * g;
        if (wi == 0.0) continue;
        for (std::int64_t j = 0; j < v; ++j) {
          const double x = ld->value[std::size_t(i * v + j)];
          const double p = (x == kNegInf) ? 0.0 : std::exp(x - lse[std::size_t(i)]);
          ld->grad[std::size_t(i * v + j)] += wi * p;
        }
        ld->grad[std::size_t(i * v + tg[std::size_t(i)])] -= wi;
      }
    });
  }
  return out;
}

Tensor embedding(Tape& t, const Tensor& table, const TokenSeq& ids) {
  const std::int64_t n = std::int64_t(ids.size()), d = table.cols();
  for (Token id : ids)
    if (id < 0 || std::int64_t(id) >= table.rows())
      throw std::out_of_range("embedding: id out of range");
  Tensor out = make_output(t, n, d);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = table.at(ids[std::size_t(i)], j);
  if (t.recording) {
    auto td = table.d_, od = out.d_;
    auto idv = ids;
    t.record([td, od, idv, n, d] {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
          td->grad[std::size_t(idv[std::size_t(i)] * d + j)] += od->grad[std::size_t(i * d + j)];
    });
  }
  return out;
}

Tensor concat_rows(Tape& t, const Tensor& a, const Tensor& b) {
  check(a.cols() == b.cols() || a.rows() == 0 || b.rows() == 0,
        "concat_rows: column mismatch");
  const std::int64_t d = a.rows() > 0 ? a.cols() : b.cols();
  Tensor out = make_output(t, a.rows() + b.rows(), d);
  for (std::int64_t i = 0; i < a.rows(); ++i)
    for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = a.at(i, j);
  for (std::int64_t i = 0; i < b.rows(); ++i)
    for (std::int64_t j = 0; j < d; ++j) out.at(a.rows() + i, j) = b.at(i, j);
  if (t.recording) {
    auto ad = a.d_, bd = b.d_, od = out.d_;
    t.record([ad, bd, od] {
      const std::size_t na = ad->value.size();
      for (std::size_t i = 0; i < na; ++i) ad->grad[i] += od->grad[i];
      for (std::size_t i = 0; i < bd->value.size(); ++i) bd->grad[i] += od->grad[na + i];
    });
  }
  return out;
}

Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: no parts");
  const std::int64_t n = parts.front().rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    check(p.rows() == n, "concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor out = make_output(t, n, total);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  if (t.recording) {
    std::vector<std::shared_ptr<TensorData>> pd;
    pd.reserve(parts.size());
    for (const auto& p : parts) pd.push_back(p.d_);
    auto od = out.d_;
    t.record([pd, od, n, total] {
      std::int64_t off = 0;
      for (const auto& p : pd) {
        const std::int64_t c = p->cols;
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            p->grad[std::size_t(i * c + j)] += od->grad[std::size_t(i * total + off + j)];
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape& t, const Tensor& a, std::int64_t r0, std::int64_t r1) {
  check(0 <= r0 && r0 <= r1 && r1 <= a.rows(), "slice_rows: range out of bounds");
  const std::int64_t d = a.cols();
  Tensor out = make_output(t, r1 - r0, d);
  for (std::int64_t i = r0; i < r1; ++i)
    for (std::int64_t j = 0; j < d; ++j) out.at(i - r0, j) = a.at(i, j);
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    t.record([ad, od, r0, d] {
      for (std::int64_t i = 0; i < od->rows; ++i)
        for (std::int64_t j = 0; j < d; ++j)
          ad->grad[std::size_t((r0 + i) * d + j)] += od->grad[std::size_t(i * d + j)];
    });
  }
  return out;
}

Tensor slice_cols(Tape& t, const Tensor& a, std::int64_t c0, std::int64_t c1) {
  check(0 <= c0 && c0 <= c1 && c1 <= a.cols(), "slice_cols: range out of bounds");
  const std::int64_t n = a.rows(), w = c1 - c0;
  Tensor out = make_output(t, n, w);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < w; ++j) out.at(i, j) = a.at(i, c0 + j);
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    const std::int64_t ac = a.cols();
    t.record([ad, od, c0, ac, n, w] {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          ad->grad[std::size_t(i * ac + c0 + j)] += od->grad[std::size_t(i * w + j)];
    });
  }
  return out;
}

Tensor rope(Tape& t, const Tensor& x, const std::vector<std::int64_t>& positions, double base) {
  const std::int64_t n = x.rows(), d = x.cols();
  check(std::int64_t(positions.size()) == n, "rope: positions length mismatch");
  check(d % 2 == 0, "rope: head dim must be even");
  const std::int64_t half = d / 2;
  Tensor out = make_output(t, n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    const double pos = double(positions[std::size_t(i)]);
    for (std::int64_t j = 0; j < half; ++j) {
      const double theta = pos * std::pow(base, -2.0 * double(j) / double(d));
      const double c = std::cos(theta), s = std::sin(theta);
      const double x0 = x.at(i, j), x1 = x.at(i, j + half);
      out.at(i, j) = x0 * c - x1 * s;
      out.at(i, j + half) = x0 * s + x1 * c;
    }
  }
  if (t.recording) {
    auto xd = x.d_, od = out.d_;
    auto pos = positions;
    t.record([xd, od, pos, base, n, d, half] {
      for (std::int64_t i = 0; i < n; ++i) {
        const double p = double(pos[std::size_t(i)]);
        for (std::int64_t j = 0; j < half; ++j) {
          const double theta = p * std::pow(base, -2.0 * double(j) / double(d));
          const double c = std::cos(theta), s = std::sin(theta);
          const double g0 = od->grad[std::size_t(i * d + j)];
          const double g1 = od->grad[std::size_t(i * d + j + half)];
          xd->grad[std::size_t(i * d + j)] += g0 * c + g1 * s;
          xd->grad[std::size_t(i * d + j + half)] += -g0 * s + g1 * c;
        }
      }
    });
  }
  return out;
}

Tensor forbid_col(Tape& t, const Tensor& a, std::int64_t col) {
  check(0 <= col && col < a.cols(), "forbid_col: column out of range");
  Tensor out = make_output(t, a.rows(), a.cols());
  out.data() = a.data();
  for (std::int64_t i = 0; i < a.rows(); ++i) out.at(i, col) = kNegInf;
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    const std::int64_t c = a.cols();
    t.record([ad, od, col, c] {
      for (std::int64_t i = 0; i < od->rows; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          if (j != col) ad->grad[std::size_t(i * c + j)] += od->grad[std::size_t(i * c + j)];
    });
  }
  return out;
}

Tensor sum_all(Tape& t, const Tensor& a) {
  Tensor out = make_output(t, 1, 1);
  double s = 0.0;
  for (double x : a.data()) s += x;
  out.data()[0] = s;
  if (t.recording) {
    auto ad = a.d_, od = out.d_;
    t.record([ad, od] {
      for (auto& g : ad->grad) g += od->grad[0];
    });
  }
  return out;
}

}  // namespace e2d2
