#include "e2d2/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace e2d2 {

namespace {

constexpr char kMagic[8] = {'E', '2', 'D', '2', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double d) { write_u64(out, std::bit_cast<std::uint64_t>(d)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), std::streamsize(n));
  return s;
}

}  // namespace

std::string model_config_to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "vocab_size = " << cfg.vocab_size << "\n";
  os << "d_model = " << cfg.d_model << "\n";
  os << "n_heads = " << cfg.n_heads << "\n";
  os << "n_enc_layers = " << cfg.n_enc_layers << "\n";
  os << "n_dec_layers = " << cfg.n_dec_layers << "\n";
  os << "variant = " << (cfg.variant == Variant::LastHidden ? "last_hidden" : "shared_kv") << "\n";
  os << "tie_weights = " << (cfg.tie_weights ? 1 : 0) << "\n";
  os << "mlp_mult = " << cfg.mlp_mult << "\n";
  os << "block_size = " << cfg.block_size << "\n";
  os << "max_len = " << cfg.max_len << "\n";
  os << "rope_base = " << cfg.rope_base << "\n";
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "vocab_size") cfg.vocab_size = std::stoll(val);
    else if (key == "d_model") cfg.d_model = std::stoll(val);
    else if (key == "n_heads") cfg.n_heads = std::stoll(val);
    else if (key == "n_enc_layers") cfg.n_enc_layers = std::stoll(val);
    else if (key == "n_dec_layers") cfg.n_dec_layers = std::stoll(val);
    else if (key == "variant")
      cfg.variant = (val == "shared_kv") ? Variant::SharedKV : Variant::LastHidden;
    else if (key == "tie_weights") cfg.tie_weights = (val == "1" || val == "true");
    else if (key == "mlp_mult") cfg.mlp_mult = std::stoll(val);
    else if (key == "block_size") cfg.block_size = std::stoll(val);
    else if (key == "max_len") cfg.max_len = std::stoll(val);
    else if (key == "rope_base") cfg.rope_base = std::stod(val);
    else throw std::invalid_argument("checkpoint config: unknown key " + key);
  }
  return cfg;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  out.write(kMagic, 8);
  write_u64(out, kVersion);
  write_string(out, model_config_to_text(model.config()));
  write_u64(out, model.parameters().size());
  for (const auto& [name, t] : model.parameters()) {
    write_string(out, name);
    write_u64(out, std::uint64_t(t.rows()));
    write_u64(out, std::uint64_t(t.cols()));
    for (double d : t.data()) write_f64(out, d);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic: " + path);
  const std::uint64_t version = read_u64(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  const ModelConfig cfg = model_config_from_text(read_string(in));
  Rng init_rng(0);
  Model model(cfg, init_rng);

  const std::uint64_t count = read_u64(in);
  if (count != model.parameters().size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(in);
    const std::int64_t rows = std::int64_t(read_u64(in));
    const std::int64_t cols = std::int64_t(read_u64(in));
    Tensor t = model.find_parameter(name);
    if (t.rows() != rows || t.cols() != cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    for (auto& d : t.data()) d = read_f64(in);
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file: " + path);
  return model;
}

}  // namespace e2d2
