#include "e2d2/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace e2d2 {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean: " + v);
}

}  // namespace

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw std::invalid_argument("config: expected section.key, got " + dotted_key);
  const std::string section = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);

  if (section == "model") {
    if (key == "vocab_size") model.vocab_size = std::stoll(value);
    else if (key == "d_model") model.d_model = std::stoll(value);
    else if (key == "n_heads") model.n_heads = std::stoll(value);
    else if (key == "n_enc_layers") model.n_enc_layers = std::stoll(value);
    else if (key == "n_dec_layers") model.n_dec_layers = std::stoll(value);
    else if (key == "variant") {
      if (value == "last_hidden") model.variant = Variant::LastHidden;
      else if (value == "shared_kv") model.variant = Variant::SharedKV;
      else throw std::invalid_argument("config: unknown variant: " + value);
    } else if (key == "tie_weights") model.tie_weights = parse_bool(value);
    else if (key == "mlp_mult") model.mlp_mult = std::stoll(value);
    else if (key == "block_size") model.block_size = std::stoll(value);
    else if (key == "max_len") model.max_len = std::stoll(value);
    else if (key == "rope_base") model.rope_base = std::stod(value);
    else throw std::invalid_argument("config: unknown key model." + key);
  } else if (section == "schedule") {
    if (key == "kind") {
      if (value != "linear") throw std::invalid_argument("config: unknown schedule: " + value);
      schedule.kind = ScheduleKind::Linear;
    } else if (key == "t_min") schedule.t_min = std::stod(value);
    else throw std::invalid_argument("config: unknown key schedule." + key);
  } else if (section == "train") {
    if (key == "steps") train_steps = std::stoll(value);
    else if (key == "batch_size") batch_size = std::stoll(value);
    else if (key == "seq_len") seq_len = std::stoll(value);
    else if (key == "lr") train.lr = std::stod(value);
    else if (key == "warmup_steps") train.warmup_steps = std::stoll(value);
    else if (key == "beta1") train.beta1 = std::stod(value);
    else if (key == "beta2") train.beta2 = std::stod(value);
    else if (key == "weight_decay") train.weight_decay = std::stod(value);
    else if (key == "grad_clip") train.grad_clip = std::stod(value);
    else if (key == "per_block_t") train.per_block_t = parse_bool(value);
    else if (key == "mode") {
      if (value != "block" && value != "mdlm")
        throw std::invalid_argument("config: unknown train mode: " + value);
      train.mode = value;
    } else if (key == "metrics_path") metrics_path = value;
    else throw std::invalid_argument("config: unknown key train." + key);
  } else if (section == "sample") {
    if (key == "T") sample.steps = std::stoll(value);
    else if (key == "n") sample.dec_only = std::stoll(value);
    else if (key == "mode") {
      if (value == "block") sample.mode = SampleMode::Block;
      else if (value == "mdlm") sample.mode = SampleMode::Mdlm;
      else throw std::invalid_argument("config: unknown sample mode: " + value);
    } else if (key == "rule") {
      if (value == "ancestral") sample.rule = DecodeRule::Ancestral;
      else if (value == "argmax") sample.rule = DecodeRule::Argmax;
      else throw std::invalid_argument("config: unknown decode rule: " + value);
    } else if (key == "temperature") sample.temperature = std::stod(value);
    else if (key == "max_new_tokens") sample.max_new_tokens = std::stoll(value);
    else throw std::invalid_argument("config: unknown key sample." + key);
  } else if (section == "run") {
    if (key == "seed") seed = std::stoull(value);
    else if (key == "corpus") corpus = value;
    else if (key == "checkpoint") checkpoint = value;
    else throw std::invalid_argument("config: unknown key run." + key);
  } else {
    throw std::invalid_argument("config: unknown section " + section);
  }
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config: bad section line: " + line);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value, got: " + line);
    if (section.empty()) throw std::invalid_argument("config: key outside any section: " + line);
    cfg.set(section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_text(text);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "[model]\n";
  os << "vocab_size = " << model.vocab_size << "\n";
  os << "d_model = " << model.d_model << "\n";
  os << "n_heads = " << model.n_heads << "\n";
  os << "n_enc_layers = " << model.n_enc_layers << "\n";
  os << "n_dec_layers = " << model.n_dec_layers << "\n";
  os << "variant = " << (model.variant == Variant::LastHidden ? "last_hidden" : "shared_kv")
     << "\n";
  os << "tie_weights = " << (model.tie_weights ? "true" : "false") << "\n";
  os << "mlp_mult = " << model.mlp_mult << "\n";
  os << "block_size = " << model.block_size << "\n";
  os << "max_len = " << model.max_len << "\n";
  os << "rope_base = " << model.rope_base << "\n";
  os << "\n[schedule]\n";
  os << "kind = linear\n";
  os << "t_min = " << schedule.t_min << "\n";
  os << "\n[train]\n";
  os << "steps = " << train_steps << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "seq_len = " << seq_len << "\n";
  os << "lr = " << train.lr << "\n";
  os << "warmup_steps = " << train.warmup_steps << "\n";
  os << "beta1 = " << train.beta1 << "\n";
  os << "beta2 = " << train.beta2 << "\n";
  os << "weight_decay = " << train.weight_decay << "\n";
  os << "grad_clip = " << train.grad_clip << "\n";
  os << "per_block_t = " << (train.per_block_t ? "true" : "false") << "\n";
  os << "mode = " << train.mode << "\n";
  os << "metrics_path = " << metrics_path << "\n";
  os << "\n[sample]\n";
  os << "T = " << sample.steps << "\n";
  os << "n = " << sample.dec_only << "\n";
  os << "mode = " << (sample.mode == SampleMode::Block ? "block" : "mdlm") << "\n";
  os << "rule = " << (sample.rule == DecodeRule::Ancestral ? "ancestral" : "argmax") << "\n";
  os << "temperature = " << sample.temperature << "\n";
  os << "max_new_tokens = " << sample.max_new_tokens << "\n";
  os << "\n[run]\n";
  os << "seed = " << seed << "\n";
  os << "corpus = " << corpus << "\n";
  os << "checkpoint = " << checkpoint << "\n";
  return os.str();
}

}  // namespace e2d2
