#pragma once

#include <string>
#include <vector>

#include "e2d2/rng.hpp"
#include "e2d2/tensor.hpp"

namespace e2d2 {

// Byte-tokenize a corpus file, concatenate and wrap to length l. The partial
// tail is dropped. Throws on an empty corpus.
std::vector<TokenSeq> ingest(const std::string& path, std::int64_t l);

std::vector<TokenSeq> wrap_tokens(const TokenSeq& stream, std::int64_t l);

// Deterministic shuffled batch iterator; reshuffles at each epoch boundary.
class BatchStream {
 public:
  BatchStream(std::vector<TokenSeq> seqs, std::int64_t batch_size, Rng rng);

  std::vector<TokenSeq> next();
  std::int64_t num_sequences() const { return std::int64_t(seqs_.size()); }

 private:
  void reshuffle();

  std::vector<TokenSeq> seqs_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t batch_size_;
  Rng rng_;
};

}  // namespace e2d2
