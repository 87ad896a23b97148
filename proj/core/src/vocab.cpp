#include "e2d2/vocab.hpp"

namespace e2d2::vocab {

TokenSeq encode(std::string_view bytes) {
  TokenSeq ids;
  ids.reserve(bytes.size());
  for (unsigned char c : bytes) ids.push_back(Token(c));
  return ids;
}

std::string decode(const TokenSeq& ids) {
  std::string out;
  out.reserve(ids.size());
  for (Token id : ids)
    if (id >= 0 && id < 256) out.push_back(char(static_cast<unsigned char>(id)));
  return out;
}

}  // namespace e2d2::vocab
