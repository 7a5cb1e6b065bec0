#include "slt/config.hpp"

#include <fstream>
#include <sstream>

#include "slt/errors.hpp"

namespace slt {

namespace {

const std::map<std::string, std::string>& default_config() {
  static const std::map<std::string, std::string> defaults = {
      {"seed", "1"},
      {"out_dir", "run"},
      {"threads", "0"},

      {"data.train_manifest", ""},
      {"data.val_manifest", ""},
      {"data.test_manifest", ""},
      {"data.vocab_size", "7000"},
      {"data.tokenizer", ""},
      {"data.truecaser", ""},

      {"model.encoder_layers", "6"},
      {"model.decoder_layers", "3"},
      {"model.embed_dim", "256"},
      {"model.ffn_dim", "1024"},
      {"model.attention_heads", "4"},
      {"model.dropout", "0.3"},
      {"model.max_source_positions", "1024"},
      {"model.max_target_positions", "256"},

      {"train.batch_size", "32"},
      {"train.label_smoothing", "0.1"},
      {"train.peak_lr", "1e-3"},
      {"train.min_lr", "1e-7"},
      {"train.warmup_steps", "2000"},
      {"train.restart_period", "17000"},
      {"train.max_steps", "100000"},
      {"train.scheduler", "cosine_restarts"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.98"},
      {"train.adam_eps", "1e-8"},
      {"train.weight_decay", "0.1"},
      {"train.clip_norm", "1.0"},
      {"train.validate_every_epochs", "2"},

      {"decode.beam", "5"},
      {"decode.max_len", "256"},
      {"decode.len_penalty", "1.0"},
      {"decode.checkpoint", ""},
      {"decode.input", ""},
      {"decode.output", ""},

      {"eval.blacklist", ""},
      {"eval.hyps", ""},
      {"eval.refs", ""},
      {"eval.per_sentence", ""},
      {"eval.split", "test"},

      {"synth.symbols", "40"},
      {"synth.frames_per_symbol", "4"},
      {"synth.feature_dim", "64"},
      {"synth.noise_sigma", "0.1"},
      {"synth.len_lo", "3"},
      {"synth.len_hi", "8"},
      {"synth.n_train", "2000"},
      {"synth.n_val", "200"},
      {"synth.n_test", "200"},

      {"sweep.spec", ""},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::pair<std::string, std::string> parse_config_line(const std::string& line) {
  std::string t = trim(line);
  if (t.empty() || t[0] == '#') return {"", ""};
  size_t eq = t.find('=');
  if (eq == std::string::npos) throw ConfigError("config line missing '=': \"" + line + "\"");
  return {trim(t.substr(0, eq)), trim(t.substr(eq + 1))};
}

RunConfig::RunConfig() = default;

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.load_file(path);
  return cfg;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    try {
      auto [key, value] = parse_config_line(line);
      if (!key.empty()) set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!default_config().count(key)) throw ConfigError("unknown config key \"" + key + "\"");
  values_[key] = value;
}

bool RunConfig::has_key(const std::string& key) const { return default_config().count(key) > 0; }

bool RunConfig::is_default(const std::string& key) const { return !values_.count(key); }

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  auto dit = default_config().find(key);
  if (dit == default_config().end()) throw ConfigError("unknown config key \"" + key + "\"");
  return dit->second;
}

int RunConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " is not an integer: \"" + get(key) + "\"");
  }
}

int64_t RunConfig::get_i64(const std::string& key) const {
  try {
    return std::stoll(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " is not an integer: \"" + get(key) + "\"");
  }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " is not an unsigned integer: \"" + get(key) + "\"");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " is not a number: \"" + get(key) + "\"");
  }
}

std::map<std::string, std::string> RunConfig::resolved() const {
  std::map<std::string, std::string> out = default_config();
  for (const auto& [key, value] : values_) out[key] = value;
  return out;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  for (const auto& [key, value] : resolved()) out << key << " = " << value << "\n";
  return out.str();
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write resolved config " + path.string());
  out << resolved_text();
}

std::filesystem::path RunConfig::out_dir() const { return get("out_dir"); }

std::filesystem::path RunConfig::tokenizer_path() const {
  std::string p = get("data.tokenizer");
  return p.empty() ? out_dir() / "tokenizer.sltbpe" : std::filesystem::path(p);
}

std::filesystem::path RunConfig::truecaser_path() const {
  std::string p = get("data.truecaser");
  return p.empty() ? out_dir() / "truecaser.tsv" : std::filesystem::path(p);
}

}  // namespace slt
