#include "e2d2/data.hpp"

#include <fstream>
#include <numeric>
#include <stdexcept>

#include "e2d2/vocab.hpp"

namespace e2d2 {

std::vector<TokenSeq> wrap_tokens(const TokenSeq& stream, std::int64_t l) {
  if (l < 1) throw std::invalid_argument("wrap_tokens: l must be >= 1");
  std::vector<TokenSeq> out;
  const std::int64_t n = std::int64_t(stream.size()) / l;
  out.reserve(std::size_t(n));
  for (std::int64_t i = 0; i < n; ++i)
    out.emplace_back(stream.begin() + i * l, stream.begin() + (i + 1) * l);
  return out;
}

std::vector<TokenSeq> ingest(const std::string& path, std::int64_t l) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ingest: cannot open corpus: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw std::runtime_error("ingest: empty corpus: " + path);
  auto seqs = wrap_tokens(vocab::encode(bytes), l);
  if (seqs.empty())
    throw std::runtime_error("ingest: corpus shorter than one sequence of length " +
                             std::to_string(l));
  return seqs;
}

BatchStream::BatchStream(std::vector<TokenSeq> seqs, std::int64_t batch_size, Rng rng)
    : seqs_(std::move(seqs)), batch_size_(batch_size), rng_(rng) {
  if (seqs_.empty()) throw std::invalid_argument("BatchStream: no sequences");
  if (batch_size_ < 1) throw std::invalid_argument("BatchStream: batch_size must be >= 1");
  order_.resize(seqs_.size());
  std::iota(order_.begin(), order_.end(), std::size_t(0));
  reshuffle();
}

void BatchStream::reshuffle() {
  // Fisher-Yates with our own rng, stable across platforms.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = std::size_t(rng_.uniform_int(std::int64_t(i)));
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::vector<TokenSeq> BatchStream::next() {
  std::vector<TokenSeq> batch;
  batch.reserve(std::size_t(batch_size_));
  for (std::int64_t i = 0; i < batch_size_; ++i) {
    if (cursor_ >= order_.size()) reshuffle();
    batch.push_back(seqs_[order_[cursor_++]]);
  }
  return batch;
}

}  // namespace e2d2
