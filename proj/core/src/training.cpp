#include "slt/training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "slt/rng.hpp"

namespace slt {

void TrainConfig::validate() const {
  if (batch_size <= 0) throw InvalidConfig("batch_size must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw InvalidConfig("label_smoothing must be in [0,1)");
  if (min_lr >= peak_lr) throw InvalidConfig("min_lr must be below peak_lr");
  if (warmup_steps < 0 || restart_period < 0 || max_steps < 0) throw InvalidConfig("negative step counts");
  if (validate_every_epochs <= 0) throw InvalidConfig("validate_every_epochs must be positive");
}

double lr_at(const TrainConfig& cfg, int64_t step) {
  if (cfg.scheduler == Scheduler::inverse_sqrt) {
    if (step == 0) return cfg.warmup_steps > 0 ? cfg.min_lr : cfg.peak_lr;
    double warm = static_cast<double>(cfg.warmup_steps);
    double s = static_cast<double>(step);
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
      return cfg.min_lr + (cfg.peak_lr - cfg.min_lr) * s / warm;
    return cfg.peak_lr * std::sqrt(std::max(warm, 1.0) / s);
  }
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.min_lr +
           (cfg.peak_lr - cfg.min_lr) * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  int64_t period = cfg.restart_period > 0 ? cfg.restart_period
                                          : std::max<int64_t>(cfg.max_steps - cfg.warmup_steps, 1);
  int64_t t = step - cfg.warmup_steps;
  t = cfg.restart_period > 0 ? t % period : std::min(t, period);
  double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(period);
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(phase));
}

double clip_grad_norm(std::unordered_map<std::string, TensorData<float>>& grads, double clip_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (float v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    float s = static_cast<float>(clip_norm / norm);
    for (auto& [name, g] : grads)
      for (float& v : g.data) v *= s;
  }
  return norm;
}

void adam_step(OptimState& state, ModelParams<float>& params,
               std::unordered_map<std::string, TensorData<float>>& grads, double lr,
               const TrainConfig& cfg) {
  clip_grad_norm(grads, cfg.clip_norm);
  state.step += 1;
  double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (const std::string& name : params.names) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // parameter untouched this step
    TensorData<float>& p = params.at(name);
    const TensorData<float>& g = git->second;
    if (g.shape != p.shape)
      throw ShapeMismatch("gradient shape " + shape_str(g.shape) + " for parameter " + name + " " +
                          shape_str(p.shape));
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, TensorData<float>(p.shape)).first;
      state.v.emplace(name, TensorData<float>(p.shape));
    }
    TensorData<float>& m = mit->second;
    TensorData<float>& v = state.v.at(name);
    for (int64_t i = 0; i < p.numel(); ++i) {
      size_t k = static_cast<size_t>(i);
      double gi = g.data[k];
      double mi = b1 * m.data[k] + (1.0 - b1) * gi;
      double vi = b2 * v.data[k] + (1.0 - b2) * gi * gi;
      m.data[k] = static_cast<float>(mi);
      v.data[k] = static_cast<float>(vi);
      double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      double pd = p.data[k] - update;
      if (cfg.weight_decay > 0.0) pd -= lr * cfg.weight_decay * pd;
      p.data[k] = static_cast<float>(pd);
    }
  }
}

// ---------------------------------------------------------------------------
// Log entries

std::string log_entry_json(const TrainLogEntry& e) {
  nlohmann::json j;
  j["step"] = e.step;
  j["epoch"] = e.epoch;
  j["rbleu"] = e.rbleu;
  j["bleu"] = e.bleu;
  j["bleu1"] = e.bleu1;
  j["bleu2"] = e.bleu2;
  j["bleu3"] = e.bleu3;
  j["loss"] = e.loss;
  j["lr"] = e.lr;
  j["checkpoint"] = e.checkpoint;
  return j.dump();
}

TrainLogEntry parse_log_entry(const std::string& json_line) {
  nlohmann::json j = nlohmann::json::parse(json_line, nullptr, false);
  if (j.is_discarded()) throw BadHeader("malformed train log line: " + json_line);
  TrainLogEntry e;
  e.step = j.value("step", int64_t{0});
  e.epoch = j.value("epoch", 0);
  e.rbleu = j.value("rbleu", 0.0);
  e.bleu = j.value("bleu", 0.0);
  e.bleu1 = j.value("bleu1", 0.0);
  e.bleu2 = j.value("bleu2", 0.0);
  e.bleu3 = j.value("bleu3", 0.0);
  e.loss = j.value("loss", 0.0);
  e.lr = j.value("lr", 0.0);
  e.checkpoint = j.value("checkpoint", std::string());
  return e;
}

std::vector<TrainLogEntry> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot open train log " + path.string());
  std::vector<TrainLogEntry> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_log_entry(line));
  return out;
}

std::string select_checkpoint(const std::vector<TrainLogEntry>& log) {
  const TrainLogEntry* best = nullptr;
  for (const TrainLogEntry& e : log)
    if (!best || e.rbleu > best->rbleu) best = &e;
  if (!best) throw NoValidations("train log has no validation entries");
  return best->checkpoint;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);  // little-endian hosts only
}

void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& in, const char* what) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw TruncatedFile(std::string("short read of ") + what);
  return v;
}

uint64_t read_u64(std::istream& in, const char* what) {
  uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw TruncatedFile(std::string("short read of ") + what);
  return v;
}

void write_blob(std::ostream& out, const TensorData<float>& t) {
  out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
}

void read_blob(std::istream& in, TensorData<float>& t, const std::string& what) {
  if (!in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4)))
    throw TruncatedFile("short read of tensor " + what);
}

std::string config_block(const ModelConfig& cfg) {
  std::string s;
  s += "encoder_layers = " + std::to_string(cfg.encoder_layers) + "\n";
  s += "decoder_layers = " + std::to_string(cfg.decoder_layers) + "\n";
  s += "embed_dim = " + std::to_string(cfg.embed_dim) + "\n";
  s += "ffn_dim = " + std::to_string(cfg.ffn_dim) + "\n";
  s += "attention_heads = " + std::to_string(cfg.attention_heads) + "\n";
  s += "feature_dim = " + std::to_string(cfg.feature_dim) + "\n";
  s += "vocab_size = " + std::to_string(cfg.vocab_size) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.dropout);
  s += std::string("dropout = ") + buf + "\n";
  s += "max_source_positions = " + std::to_string(cfg.max_source_positions) + "\n";
  s += "max_target_positions = " + std::to_string(cfg.max_target_positions) + "\n";
  return s;
}

ModelConfig parse_config_block(const std::string& block) {
  ModelConfig cfg;
  std::istringstream in(block);
  std::string line;
  while (std::getline(in, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t");
      size_t e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "encoder_layers") cfg.encoder_layers = std::stoi(value);
    else if (key == "decoder_layers") cfg.decoder_layers = std::stoi(value);
    else if (key == "embed_dim") cfg.embed_dim = std::stoi(value);
    else if (key == "ffn_dim") cfg.ffn_dim = std::stoi(value);
    else if (key == "attention_heads") cfg.attention_heads = std::stoi(value);
    else if (key == "feature_dim") cfg.feature_dim = std::stoi(value);
    else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
    else if (key == "dropout") cfg.dropout = std::stod(value);
    else if (key == "max_source_positions") cfg.max_source_positions = std::stoi(value);
    else if (key == "max_target_positions") cfg.max_target_positions = std::stoi(value);
  }
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const OptimState* opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write("SLTM", 4);
  write_u32(out, 1);
  std::string cfg = config_block(params.cfg);
  write_u32(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u32(out, static_cast<uint32_t>(params.names.size()));
  for (const std::string& name : params.names) {
    const TensorData<float>& t = params.at(name);
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
    write_blob(out, t);
  }
  out.put(opt ? 1 : 0);
  if (opt) {
    write_u64(out, static_cast<uint64_t>(opt->step));
    for (const std::string& name : params.names) {
      write_blob(out, opt->m.at(name));
      write_blob(out, opt->v.at(name));
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw TruncatedFile("short read of magic in " + path.string());
  if (std::string_view(magic, 4) != "SLTM") throw BadMagic("not a SLTM checkpoint: " + path.string());
  uint32_t version = read_u32(in, "version");
  if (version != 1) throw BadHeader("unsupported checkpoint version " + std::to_string(version));
  uint32_t cfg_len = read_u32(in, "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len)) throw TruncatedFile("short read of config in " + path.string());

  Checkpoint ck;
  ck.params.cfg = parse_config_block(cfg_text);
  uint32_t n_params = read_u32(in, "parameter count");
  for (uint32_t i = 0; i < n_params; ++i) {
    uint32_t name_len = read_u32(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw TruncatedFile("short read of name in " + path.string());
    uint32_t rank = read_u32(in, "rank");
    Shape shape;
    for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(read_u32(in, "dim")));
    TensorData<float> t(shape);
    read_blob(in, t, name);
    ck.params.names.push_back(name);
    ck.params.tensors.emplace(name, std::move(t));
  }
  int has_opt = in.get();
  if (has_opt == 1) {
    OptimState opt;
    opt.step = static_cast<int64_t>(read_u64(in, "optimizer step"));
    for (const std::string& name : ck.params.names) {
      TensorData<float> m(ck.params.at(name).shape), v(ck.params.at(name).shape);
      read_blob(in, m, name + ".m");
      read_blob(in, v, name + ".v");
      opt.m.emplace(name, std::move(m));
      opt.v.emplace(name, std::move(v));
    }
    ck.opt = std::move(opt);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Batching over preloaded features, sharing the shuffle/bucket logic with
// make_batches via identical ordering computations.
struct LoadedExample {
  TensorData<float> feats;
  std::vector<int> tokens;  // <s> ... </s>
};

std::vector<LoadedExample> load_examples(const std::vector<ManifestRecord>& records,
                                         const std::filesystem::path& manifest,
                                         const TokenizerModel& tokenizer, int max_source_positions) {
  std::vector<LoadedExample> out;
  out.reserve(records.size());
  for (const ManifestRecord& rec : records) {
    LoadedExample ex;
    ex.feats = read_features(resolve_feature_path(manifest, rec.feature_path));
    if (ex.feats.dim(0) != rec.n_frames)
      throw BadHeader("manifest n_frames " + std::to_string(rec.n_frames) + " != file frames " +
                      std::to_string(ex.feats.dim(0)) + " for id " + rec.id);
    if (ex.feats.dim(0) > max_source_positions) {
      TensorData<float> cut(Shape{max_source_positions, ex.feats.dim(1)});
      std::copy_n(ex.feats.ptr(), cut.numel(), cut.ptr());
      ex.feats = std::move(cut);
    }
    ex.tokens.push_back(kBosId);
    for (int id : encode(tokenizer, lowercase(rec.translation))) ex.tokens.push_back(id);
    ex.tokens.push_back(kEosId);
    out.push_back(std::move(ex));
  }
  return out;
}

Batch assemble_batch(const std::vector<LoadedExample>& examples, const std::vector<size_t>& order,
                     size_t begin, size_t end) {
  int b = static_cast<int>(end - begin);
  int t_max = 1, u_max = 2;
  int d = examples[order[begin]].feats.dim(1);
  for (size_t i = begin; i < end; ++i) {
    t_max = std::max(t_max, examples[order[i]].feats.dim(0));
    u_max = std::max(u_max, static_cast<int>(examples[order[i]].tokens.size()));
  }
  Batch batch;
  batch.batch = b;
  batch.max_target_len = u_max;
  batch.src = TensorData<float>(Shape{b, t_max, d});
  batch.targets.assign(static_cast<size_t>(b) * u_max, kPadId);
  for (int i = 0; i < b; ++i) {
    const LoadedExample& ex = examples[order[begin + static_cast<size_t>(i)]];
    std::copy_n(ex.feats.ptr(), ex.feats.numel(), batch.src.ptr() + static_cast<int64_t>(i) * t_max * d);
    batch.src_lens.push_back(ex.feats.dim(0));
    std::copy(ex.tokens.begin(), ex.tokens.end(), batch.targets.begin() + static_cast<int64_t>(i) * u_max);
    batch.target_lens.push_back(static_cast<int>(ex.tokens.size()));
  }
  return batch;
}

std::vector<std::pair<size_t, size_t>> epoch_batch_orders(size_t n, int batch_size, uint64_t seed,
                                                          int epoch, const std::vector<int>& frame_counts,
                                                          std::vector<size_t>& order_out) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(hash_u64(seed, 0x62617463u /*"batc"*/, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  size_t chunk = static_cast<size_t>(batch_size) * 20;
  for (size_t begin = 0; begin < n; begin += chunk) {
    size_t end = std::min(n, begin + chunk);
    std::stable_sort(order.begin() + static_cast<int64_t>(begin), order.begin() + static_cast<int64_t>(end),
                     [&](size_t a, size_t b) { return frame_counts[a] < frame_counts[b]; });
  }
  order_out = order;
  std::vector<std::pair<size_t, size_t>> spans;
  for (size_t begin = 0; begin < n; begin += static_cast<size_t>(batch_size))
    spans.emplace_back(begin, std::min(n, begin + static_cast<size_t>(batch_size)));
  return spans;
}

struct TrainStepResult {
  double loss = 0.0;
};

TrainStepResult train_step(ModelParams<float>& params, OptimState& opt, const Batch& batch,
                           const ModelConfig& mcfg, const TrainConfig& tcfg, int64_t step) {
  Graph<float> g;
  ParamVars<float> pv = register_params(g, params, /*requires_grad=*/true);
  DropoutPlan plan{mcfg.dropout, hash_u64(tcfg.seed, 0x64726f70u /*"drop"*/), step, true};

  Var<float> memory = encode_features(g, pv, mcfg, batch.src, batch.src_lens, plan);
  int prev_len = batch.max_target_len - 1;
  std::vector<int> prev(static_cast<size_t>(batch.batch) * prev_len);
  std::vector<int> labels(static_cast<size_t>(batch.batch) * prev_len);
  for (int b = 0; b < batch.batch; ++b)
    for (int u = 0; u < prev_len; ++u) {
      prev[static_cast<size_t>(b) * prev_len + u] = batch.targets[static_cast<size_t>(b) * batch.max_target_len + u];
      labels[static_cast<size_t>(b) * prev_len + u] =
          batch.targets[static_cast<size_t>(b) * batch.max_target_len + u + 1];
    }
  Var<float> logits =
      decode_logits(g, pv, mcfg, memory, batch.src_lens, prev, batch.batch, prev_len, plan);
  Var<float> loss = label_smoothed_ce_mean(logits, labels, tcfg.label_smoothing, kPadId);

  double loss_value = static_cast<double>(loss.value().data[0]);
  if (!std::isfinite(loss_value))
    throw NonFiniteLoss("non-finite training loss at step " + std::to_string(step));
  g.backward(loss);

  std::unordered_map<std::string, TensorData<float>> grads;
  for (const std::string& name : params.names) {
    int id = pv.at(name).id;
    if (g.grad_ready(id)) grads.emplace(name, g.grad_of(id));
  }
  adam_step(opt, params, grads, lr_at(tcfg, step), tcfg);
  return {loss_value};
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const TrainData& data,
                  const DecodeOptions& decode_opts, const std::filesystem::path& out_dir) {
  model_cfg.validate();
  train_cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");

  std::vector<ManifestRecord> train_records = parse_manifest(data.train_manifest);
  if (train_records.empty()) throw EmptyDataset("empty training manifest " + data.train_manifest.string());
  std::vector<ManifestRecord> val_records = parse_manifest(data.val_manifest);

  std::vector<LoadedExample> train_examples =
      load_examples(train_records, data.train_manifest, data.tokenizer, model_cfg.max_source_positions);
  std::vector<int> frame_counts;
  frame_counts.reserve(train_examples.size());
  for (const LoadedExample& ex : train_examples) frame_counts.push_back(ex.feats.dim(0));

  std::vector<TensorData<float>> val_feats;
  std::vector<std::string> val_refs;
  for (const ManifestRecord& rec : val_records) {
    val_feats.push_back(read_features(resolve_feature_path(data.val_manifest, rec.feature_path)));
    val_refs.push_back(rec.translation);
  }

  ModelParams<float> params = build_model(model_cfg, train_cfg.seed);
  OptimState opt;
  for (const std::string& name : params.names) {
    opt.m.emplace(name, TensorData<float>(params.at(name).shape));
    opt.v.emplace(name, TensorData<float>(params.at(name).shape));
  }

  TrainResult result;
  result.checkpoint_last = out_dir / "checkpoints" / "checkpoint_last.sltm";
  result.checkpoint_best = out_dir / "checkpoints" / "checkpoint_best.sltm";
  result.log_path = out_dir / "train_log.jsonl";
  save_checkpoint(result.checkpoint_last, params, &opt);

  std::ofstream log_out(result.log_path, std::ios::binary | std::ios::trunc);
  if (!log_out) throw IoError("cannot write train log " + result.log_path.string());

  double best_rbleu = -1.0;
  double last_loss = 0.0;
  int64_t step = 0;
  int epoch = 0;
  int64_t last_validation_step = -1;

  auto run_validation = [&](int at_epoch) {
    if (val_feats.empty()) return;
    std::vector<std::string> hyps =
        translate_corpus(params, data.tokenizer, data.truecaser, val_feats, decode_opts);
    MetricReport report = evaluate_report(hyps, val_refs, data.blacklist);
    fs::path epoch_ckpt = out_dir / "checkpoints" / ("checkpoint_e" + std::to_string(at_epoch) + ".sltm");
    save_checkpoint(epoch_ckpt, params, &opt);
    save_checkpoint(result.checkpoint_last, params, &opt);
    TrainLogEntry entry;
    entry.step = step;
    entry.epoch = at_epoch;
    entry.rbleu = report.rbleu;
    entry.bleu = report.bleu.score;
    entry.bleu1 = report.bleu1;
    entry.bleu2 = report.bleu2;
    entry.bleu3 = report.bleu3;
    entry.loss = last_loss;
    entry.lr = lr_at(train_cfg, step);
    entry.checkpoint = epoch_ckpt.string();
    if (report.rbleu > best_rbleu) {
      best_rbleu = report.rbleu;
      save_checkpoint(result.checkpoint_best, params, &opt);
    }
    result.log.push_back(entry);
    log_out << log_entry_json(entry) << "\n";
    log_out.flush();
    last_validation_step = step;
  };

  while (step < train_cfg.max_steps) {
    epoch += 1;
    std::vector<size_t> order;
    std::vector<std::pair<size_t, size_t>> spans = epoch_batch_orders(
        train_examples.size(), train_cfg.batch_size, train_cfg.seed, epoch, frame_counts, order);
    for (const auto& [begin, end] : spans) {
      if (step >= train_cfg.max_steps) break;
      Batch batch = assemble_batch(train_examples, order, begin, end);
      last_loss = train_step(params, opt, batch, model_cfg, train_cfg, step).loss;
      step += 1;
    }
    if (step < train_cfg.max_steps && epoch % train_cfg.validate_every_epochs == 0) run_validation(epoch);
  }

  if (step > 0 && last_validation_step != step) run_validation(epoch);
  save_checkpoint(result.checkpoint_last, params, &opt);
  result.steps = step;
  return result;
}

}  // namespace slt
