#include "slt/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "slt/data.hpp"
#include "slt/decoding.hpp"
#include "slt/errors.hpp"
#include "slt/metrics.hpp"
#include "slt/model.hpp"
#include "slt/textproc.hpp"
#include "slt/training.hpp"

namespace slt {

namespace {

namespace fs = std::filesystem;

void prepare_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir(), ec);
  if (ec) throw IoError("cannot create out_dir " + cfg.out_dir().string());
  cfg.write_resolved(cfg.out_dir() / "config.resolved");
}

SyntheticSpec synth_spec(const RunConfig& cfg) {
  SyntheticSpec spec;
  spec.n_symbols = cfg.get_int("synth.symbols");
  spec.frames_per_symbol = cfg.get_int("synth.frames_per_symbol");
  spec.feature_dim = cfg.get_int("synth.feature_dim");
  spec.noise_sigma = cfg.get_double("synth.noise_sigma");
  spec.len_lo = cfg.get_int("synth.len_lo");
  spec.len_hi = cfg.get_int("synth.len_hi");
  spec.n_train = cfg.get_int("synth.n_train");
  spec.n_val = cfg.get_int("synth.n_val");
  spec.n_test = cfg.get_int("synth.n_test");
  spec.seed = cfg.get_u64("seed");
  return spec;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.batch_size = cfg.get_int("train.batch_size");
  t.label_smoothing = cfg.get_double("train.label_smoothing");
  t.peak_lr = cfg.get_double("train.peak_lr");
  t.min_lr = cfg.get_double("train.min_lr");
  t.warmup_steps = cfg.get_i64("train.warmup_steps");
  t.restart_period = cfg.get_i64("train.restart_period");
  t.max_steps = cfg.get_i64("train.max_steps");
  std::string sched = cfg.get("train.scheduler");
  if (sched == "cosine_restarts")
    t.scheduler = Scheduler::cosine_restarts;
  else if (sched == "inverse_sqrt")
    t.scheduler = Scheduler::inverse_sqrt;
  else
    throw ConfigError("train.scheduler must be cosine_restarts or inverse_sqrt, got \"" + sched + "\"");
  t.adam_beta1 = cfg.get_double("train.adam_beta1");
  t.adam_beta2 = cfg.get_double("train.adam_beta2");
  t.adam_eps = cfg.get_double("train.adam_eps");
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.clip_norm = cfg.get_double("train.clip_norm");
  t.validate_every_epochs = cfg.get_int("train.validate_every_epochs");
  t.seed = cfg.get_u64("seed");
  return t;
}

DecodeOptions decode_options(const RunConfig& cfg) {
  DecodeOptions d;
  d.beam = cfg.get_int("decode.beam");
  d.max_len = cfg.get_int("decode.max_len");
  d.len_penalty = cfg.get_double("decode.len_penalty");
  return d;
}

Blacklist load_blacklist(const RunConfig& cfg) {
  std::string path = cfg.get("eval.blacklist");
  return path.empty() ? Blacklist::builtin() : Blacklist::load(path);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// Validates every feature file named by a manifest: readable SLTF header,
// frame count matching the manifest, consistent feature dim.
int verify_manifest_features(const fs::path& manifest_path, int& feature_dim, std::ostream& out) {
  std::vector<ManifestRecord> records = parse_manifest(manifest_path);
  int failures = 0;
  for (const ManifestRecord& rec : records) {
    try {
      auto [t, d] = read_feature_header(resolve_feature_path(manifest_path, rec.feature_path));
      if (t != rec.n_frames)
        throw BadHeader("n_frames " + std::to_string(rec.n_frames) + " != file frames " +
                        std::to_string(t));
      if (feature_dim < 0) feature_dim = d;
      if (d != feature_dim)
        throw FeatureDimMismatch("feature dim " + std::to_string(d) + " != " + std::to_string(feature_dim));
    } catch (const Error& e) {
      out << "error: " << manifest_path.string() << " id " << rec.id << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures;
}

struct PreparedData {
  TokenizerModel tokenizer;
  CasingModel truecaser;
};

PreparedData load_prepared(const RunConfig& cfg) {
  return {load_tokenizer(cfg.tokenizer_path()), load_truecaser(cfg.truecaser_path())};
}

std::vector<TensorData<float>> load_manifest_features(const fs::path& manifest,
                                                      const std::vector<ManifestRecord>& records) {
  std::vector<TensorData<float>> feats;
  feats.reserve(records.size());
  for (const ManifestRecord& rec : records)
    feats.push_back(read_features(resolve_feature_path(manifest, rec.feature_path)));
  return feats;
}

ModelConfig model_config(const RunConfig& cfg, int feature_dim, int vocab_size) {
  ModelConfig m;
  m.encoder_layers = cfg.get_int("model.encoder_layers");
  m.decoder_layers = cfg.get_int("model.decoder_layers");
  m.embed_dim = cfg.get_int("model.embed_dim");
  m.ffn_dim = cfg.get_int("model.ffn_dim");
  m.attention_heads = cfg.get_int("model.attention_heads");
  m.dropout = cfg.get_double("model.dropout");
  m.max_source_positions = cfg.get_int("model.max_source_positions");
  m.max_target_positions = cfg.get_int("model.max_target_positions");
  m.feature_dim = feature_dim;
  m.vocab_size = vocab_size;
  return m;
}

fs::path require_path(const RunConfig& cfg, const std::string& key, const std::string& what) {
  std::string p = cfg.get(key);
  if (p.empty()) throw ConfigError(key + " must be set (" + what + ")");
  return p;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, std::ostream& out) {
  prepare_out_dir(cfg);
  SyntheticSpec spec = synth_spec(cfg);
  SynthSummary summary = generate_synthetic(spec, cfg.out_dir());
  out << "synthetic dataset written to " << cfg.out_dir().string() << "\n";
  out << "examples: train " << summary.n_train << ", val " << summary.n_val << ", test " << summary.n_test
      << "\n";
  out << "symbols: " << summary.n_symbols << "\n";
  out << "total frames: " << summary.total_frames << "\n";
}

void cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  prepare_out_dir(cfg);
  fs::path train_manifest = require_path(cfg, "data.train_manifest", "training manifest");
  std::vector<ManifestRecord> records = parse_manifest(train_manifest);
  if (records.empty()) throw EmptyDataset("training manifest has no rows: " + train_manifest.string());

  std::vector<std::string> raw, lower;
  raw.reserve(records.size());
  for (const ManifestRecord& rec : records) {
    raw.push_back(rec.translation);
    lower.push_back(lowercase(rec.translation));
  }

  TokenizerModel tokenizer = train_tokenizer(lower, cfg.get_int("data.vocab_size"));
  save_tokenizer(tokenizer, cfg.tokenizer_path());
  CasingModel truecaser = train_truecaser(raw);
  save_truecaser(truecaser, cfg.truecaser_path());

  int feature_dim = -1;
  int failures = verify_manifest_features(train_manifest, feature_dim, out);
  for (const char* key : {"data.val_manifest", "data.test_manifest"}) {
    std::string p = cfg.get(key);
    if (!p.empty()) failures += verify_manifest_features(p, feature_dim, out);
  }
  if (failures > 0) throw DataError(std::to_string(failures) + " feature file(s) failed validation");

  out << "tokenizer: " << cfg.tokenizer_path().string() << " (vocab " << tokenizer.vocab_size << ", "
      << tokenizer.merges.size() << " merges)\n";
  out << "truecaser: " << cfg.truecaser_path().string() << " (" << truecaser.casing_map.size()
      << " word forms)\n";
  out << "feature dim: " << feature_dim << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  prepare_out_dir(cfg);
  PreparedData prepared = load_prepared(cfg);

  TrainData data;
  data.train_manifest = require_path(cfg, "data.train_manifest", "training manifest");
  data.val_manifest = require_path(cfg, "data.val_manifest", "validation manifest");
  data.tokenizer = std::move(prepared.tokenizer);
  data.truecaser = std::move(prepared.truecaser);
  data.blacklist = load_blacklist(cfg);

  std::vector<ManifestRecord> train_records = parse_manifest(data.train_manifest);
  if (train_records.empty()) throw EmptyDataset("training manifest has no rows");
  auto [t0, feature_dim] =
      read_feature_header(resolve_feature_path(data.train_manifest, train_records.front().feature_path));
  (void)t0;

  ModelConfig mcfg = model_config(cfg, feature_dim, data.tokenizer.vocab_size);
  TrainConfig tcfg = train_config(cfg);
  DecodeOptions dopts = decode_options(cfg);

  TrainResult result = train(mcfg, tcfg, data, dopts, cfg.out_dir());
  out << "trained " << result.steps << " steps, " << result.log.size() << " validations\n";
  out << "checkpoint_last: " << result.checkpoint_last.string() << "\n";
  if (!result.log.empty()) {
    out << "checkpoint_best: " << result.checkpoint_best.string() << " (selected "
        << select_checkpoint(result.log) << ")\n";
    const TrainLogEntry& last = result.log.back();
    char buf[128];
    std::snprintf(buf, sizeof(buf), "final val rBLEU %.2f BLEU %.2f", last.rbleu, last.bleu);
    out << buf << "\n";
  }
}

void cmd_translate(const RunConfig& cfg, std::ostream& out) {
  prepare_out_dir(cfg);
  std::string ckpt = cfg.get("decode.checkpoint");
  fs::path checkpoint = ckpt.empty() ? cfg.out_dir() / "checkpoints" / "checkpoint_best.sltm" : fs::path(ckpt);
  std::string input = cfg.get("decode.input");
  fs::path manifest = input.empty() ? require_path(cfg, "data.test_manifest", "input manifest") : fs::path(input);
  std::string output = cfg.get("decode.output");
  fs::path out_path = output.empty() ? cfg.out_dir() / "hyps.txt" : fs::path(output);

  PreparedData prepared = load_prepared(cfg);
  Checkpoint ck = load_checkpoint(checkpoint);
  std::vector<ManifestRecord> records = parse_manifest(manifest);
  std::vector<TensorData<float>> feats = load_manifest_features(manifest, records);

  std::vector<std::string> hyps =
      translate_corpus(ck.params, prepared.tokenizer, prepared.truecaser, feats, decode_options(cfg));
  std::ofstream of(out_path, std::ios::binary);
  if (!of) throw IoError("cannot write " + out_path.string());
  for (const std::string& h : hyps) of << h << "\n";
  out << "translated " << hyps.size() << " sentences to " << out_path.string() << "\n";
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  prepare_out_dir(cfg);
  fs::path hyps_path = require_path(cfg, "eval.hyps", "hypothesis file");
  fs::path refs_path = require_path(cfg, "eval.refs", "reference file or manifest");

  std::vector<std::string> hyps = read_lines(hyps_path);
  std::vector<std::string> refs;
  std::vector<std::string> ids;
  if (refs_path.extension() == ".tsv") {
    for (const ManifestRecord& rec : parse_manifest(refs_path)) {
      refs.push_back(rec.translation);
      ids.push_back(rec.id);
    }
  } else {
    refs = read_lines(refs_path);
    for (size_t i = 0; i < refs.size(); ++i) ids.push_back(std::to_string(i + 1));
  }
  if (hyps.size() != refs.size())
    throw LengthMismatch("evaluate: " + std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");

  Blacklist bl = load_blacklist(cfg);
  MetricReport report = evaluate_report(hyps, refs, bl);
  out << report_tsv(report, cfg.get("eval.split"));

  std::string per_sentence = cfg.get("eval.per_sentence");
  if (!per_sentence.empty()) {
    std::ofstream ps(per_sentence, std::ios::binary);
    if (!ps) throw IoError("cannot write " + per_sentence);
    ps << "id\tBLEU\trBLEU\n";
    for (size_t i = 0; i < hyps.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2f\t%.2f", sentence_bleu(hyps[i], refs[i]),
                    sentence_rbleu(hyps[i], refs[i], bl));
      ps << ids[i] << "\t" << buf << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Flexible grid search: tune keys in order, fixing each winner by validation
// rBLEU before moving to the next key.

namespace {

struct SweepKey {
  std::string key;
  std::vector<std::string> candidates;
};

std::vector<SweepKey> parse_sweep_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sweep spec " + path.string());
  std::vector<SweepKey> keys;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto [key, value] = parse_config_line(line);
    if (key.empty()) continue;
    SweepKey sk;
    sk.key = key;
    std::istringstream vs(value);
    std::string item;
    while (std::getline(vs, item, ',')) {
      size_t b = item.find_first_not_of(" \t");
      size_t e = item.find_last_not_of(" \t");
      if (b != std::string::npos) sk.candidates.push_back(item.substr(b, e - b + 1));
    }
    if (sk.candidates.empty())
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": no candidate values");
    keys.push_back(std::move(sk));
  }
  if (keys.empty()) throw ConfigError("sweep spec has no keys: " + path.string());
  return keys;
}

// Best validation rBLEU/BLEU of one prepare+train run.
std::pair<double, double> run_trial(const RunConfig& trial_cfg) {
  std::ostringstream sink;
  cmd_prepare(trial_cfg, sink);
  cmd_train(trial_cfg, sink);
  std::vector<TrainLogEntry> log = read_train_log(trial_cfg.out_dir() / "train_log.jsonl");
  std::string best = select_checkpoint(log);
  for (const TrainLogEntry& e : log)
    if (e.checkpoint == best) return {e.rbleu, e.bleu};
  throw DataError("selected checkpoint missing from log");
}

}  // namespace

void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  prepare_out_dir(cfg);
  std::vector<SweepKey> keys = parse_sweep_spec(require_path(cfg, "sweep.spec", "sweep spec"));

  std::vector<std::pair<std::string, std::string>> fixed;
  fs::path results_path = cfg.out_dir() / "sweep_results.tsv";
  std::ofstream results(results_path, std::ios::binary);
  if (!results) throw IoError("cannot write " + results_path.string());
  results << "trial_id\toverrides\tval_rbleu\tval_bleu\n";

  int trial_id = 0;
  int successes = 0;
  for (const SweepKey& sk : keys) {
    double best_rbleu = -1.0;
    std::string best_value;
    for (const std::string& candidate : sk.candidates) {
      RunConfig trial = cfg;
      std::string overrides;
      for (const auto& [k, v] : fixed) {
        trial.set(k, v);
        overrides += k + "=" + v + ",";
      }
      trial.set(sk.key, candidate);
      overrides += sk.key + "=" + candidate;
      trial.set("out_dir", (cfg.out_dir() / ("trial_" + std::to_string(trial_id))).string());

      std::string rbleu_s = "-", bleu_s = "-";
      try {
        auto [rbleu, bleu] = run_trial(trial);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f", rbleu);
        rbleu_s = buf;
        std::snprintf(buf, sizeof(buf), "%.4f", bleu);
        bleu_s = buf;
        ++successes;
        if (rbleu > best_rbleu) {  // ties keep the first listed candidate
          best_rbleu = rbleu;
          best_value = candidate;
        }
      } catch (const Error& e) {
        out << "trial " << trial_id << " failed: " << e.what() << "\n";
      }
      results << trial_id << "\t" << overrides << "\t" << rbleu_s << "\t" << bleu_s << "\n";
      results.flush();
      ++trial_id;
    }
    if (best_value.empty()) best_value = sk.candidates.front();  // all candidates failed
    fixed.emplace_back(sk.key, best_value);
    out << "fixed " << sk.key << " = " << best_value << "\n";
  }

  RunConfig final_cfg = cfg;
  for (const auto& [k, v] : fixed) final_cfg.set(k, v);
  final_cfg.write_resolved(cfg.out_dir() / "sweep_best.config");
  out << "results: " << results_path.string() << "\n";
  out << "best config: " << (cfg.out_dir() / "sweep_best.config").string() << "\n";
  if (successes == 0) throw DataError("every sweep trial failed");
}

int exit_code_for(const std::exception& e) {
  if (const Error* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::config:
        return 2;
      case ErrorKind::data:
        return 3;
      case ErrorKind::numeric:
        return 4;
    }
  }
  return 1;
}

}  // namespace slt
