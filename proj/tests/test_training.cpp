#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slt/data.hpp"
#include "slt/errors.hpp"
#include "slt/training.hpp"

using namespace slt;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "slt_training_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig default_schedule() {
  TrainConfig cfg;
  cfg.peak_lr = 1e-3;
  cfg.min_lr = 1e-7;
  cfg.warmup_steps = 2000;
  cfg.restart_period = 17000;
  cfg.max_steps = 100000;
  return cfg;
}

}  // namespace

TEST_CASE("scheduler fixtures") {
  TrainConfig cfg = default_schedule();
  CHECK(lr_at(cfg, 2000) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(std::abs(lr_at(cfg, 2000 + 8500) - (1e-3 + 1e-7) / 2) < 1e-12);
  CHECK(lr_at(cfg, 2000 + 17000) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at(cfg, 0) == doctest::Approx(1e-7));
  CHECK(lr_at(cfg, 1000) == doctest::Approx(1e-7 + (1e-3 - 1e-7) * 0.5));
  // approaching the period end decays to ~min_lr
  CHECK(lr_at(cfg, 2000 + 16999) < 1e-6);
}

TEST_CASE("scheduler is continuous except at restart boundaries") {
  TrainConfig cfg = default_schedule();
  for (int64_t step = 1; step < 40000; step += 7) {
    double delta = std::abs(lr_at(cfg, step) - lr_at(cfg, step - 1));
    bool at_restart = step > cfg.warmup_steps && (step - cfg.warmup_steps) % cfg.restart_period == 0;
    if (at_restart)
      CHECK(lr_at(cfg, step) == doctest::Approx(cfg.peak_lr).epsilon(1e-15));
    else
      CHECK(delta < 1e-6);
  }
}

TEST_CASE("restart period zero decays once over the remaining budget") {
  TrainConfig cfg = default_schedule();
  cfg.restart_period = 0;
  cfg.max_steps = 10000;
  CHECK(lr_at(cfg, 2000) == doctest::Approx(1e-3));
  CHECK(std::abs(lr_at(cfg, 2000 + 4000) - (1e-3 + 1e-7) / 2) < 1e-12);
  CHECK(lr_at(cfg, 10000) == doctest::Approx(1e-7).epsilon(1e-9));
  // no restart: stays at min_lr past the budget
  CHECK(lr_at(cfg, 12000) == doctest::Approx(1e-7).epsilon(1e-9));
}

TEST_CASE("inverse sqrt scheduler") {
  TrainConfig cfg = default_schedule();
  cfg.scheduler = Scheduler::inverse_sqrt;
  CHECK(lr_at(cfg, 2000) == doctest::Approx(1e-3));
  CHECK(lr_at(cfg, 8000) == doctest::Approx(1e-3 * std::sqrt(2000.0 / 8000.0)));
  CHECK(lr_at(cfg, 1000) < 1e-3);
}

TEST_CASE("adam first step approximates a sign step") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 0.0;
  ModelParams<float> params;
  params.names = {"p"};
  params.tensors.emplace("p", TensorData<float>(Shape{1}, {1.0f}));
  OptimState state;
  std::unordered_map<std::string, TensorData<float>> grads;
  grads.emplace("p", TensorData<float>(Shape{1}, {0.5f}));
  adam_step(state, params, grads, 0.01, cfg);
  CHECK(params.at("p").data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  CHECK(state.step == 1);
}

TEST_CASE("adam with zero gradients and zero decay leaves parameters unchanged") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  ModelParams<float> params;
  params.names = {"p"};
  params.tensors.emplace("p", TensorData<float>(Shape{2}, {0.25f, -3.0f}));
  OptimState state;
  std::unordered_map<std::string, TensorData<float>> grads;
  grads.emplace("p", TensorData<float>(Shape{2}, 0.0f));
  for (int i = 0; i < 3; ++i) adam_step(state, params, grads, 0.1, cfg);
  CHECK(params.at("p").data[0] == 0.25f);
  CHECK(params.at("p").data[1] == -3.0f);
}

TEST_CASE("adam descends on a quadratic") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 0.0;
  ModelParams<float> params;
  params.names = {"p"};
  params.tensors.emplace("p", TensorData<float>(Shape{1}, {1.0f}));
  OptimState state;
  for (int i = 0; i < 100; ++i) {
    std::unordered_map<std::string, TensorData<float>> grads;
    grads.emplace("p", TensorData<float>(Shape{1}, {2.0f * params.at("p").data[0]}));
    adam_step(state, params, grads, 0.1, cfg);
  }
  CHECK(std::abs(params.at("p").data[0]) < 0.1);
}

TEST_CASE("decoupled weight decay shrinks parameters after the adam delta") {
  TrainConfig cfg;
  cfg.weight_decay = 0.5;
  cfg.clip_norm = 0.0;
  ModelParams<float> params;
  params.names = {"p"};
  params.tensors.emplace("p", TensorData<float>(Shape{1}, {1.0f}));
  OptimState state;
  std::unordered_map<std::string, TensorData<float>> grads;
  grads.emplace("p", TensorData<float>(Shape{1}, {0.0f}));
  adam_step(state, params, grads, 0.1, cfg);
  // delta is zero, so p <- p - lr*wd*p
  CHECK(params.at("p").data[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-6));
}

TEST_CASE("global norm clipping") {
  std::unordered_map<std::string, TensorData<float>> grads;
  grads.emplace("a", TensorData<float>(Shape{2}, {3.0f, 0.0f}));
  grads.emplace("b", TensorData<float>(Shape{1}, {4.0f}));
  double norm = clip_grad_norm(grads, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  double sq = 0;
  for (const auto& [k, g] : grads)
    for (float v : g.data) sq += static_cast<double>(v) * v;
  CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
  // disabled when clip_norm = 0
  std::unordered_map<std::string, TensorData<float>> grads2;
  grads2.emplace("a", TensorData<float>(Shape{1}, {8.0f}));
  clip_grad_norm(grads2, 0.0);
  CHECK(grads2.at("a").data[0] == 8.0f);
}

TEST_CASE("select_checkpoint picks max rBLEU, earliest on ties") {
  std::vector<TrainLogEntry> log(3);
  log[0].rbleu = 1.0;
  log[0].checkpoint = "c0";
  log[1].rbleu = 2.78;
  log[1].checkpoint = "c1";
  log[2].rbleu = 2.78;
  log[2].checkpoint = "c2";
  CHECK(select_checkpoint(log) == "c1");
  CHECK(select_checkpoint({log[0]}) == "c0");
  CHECK_THROWS_AS(select_checkpoint({}), NoValidations);
}

TEST_CASE("select_checkpoint follows rBLEU when BLEU disagrees") {
  std::vector<TrainLogEntry> log(2);
  log[0].rbleu = 1.1;
  log[0].bleu = 55.0;  // BLEU argmax
  log[0].checkpoint = "bleu_winner";
  log[1].rbleu = 2.5;  // rBLEU argmax
  log[1].bleu = 12.0;
  log[1].checkpoint = "rbleu_winner";
  CHECK(select_checkpoint(log) == "rbleu_winner");
}

TEST_CASE("train log JSONL round trip") {
  TrainLogEntry e;
  e.step = 120;
  e.epoch = 4;
  e.rbleu = 12.5;
  e.bleu = 30.25;
  e.bleu1 = 50.0;
  e.bleu2 = 40.0;
  e.bleu3 = 35.0;
  e.loss = 2.125;
  e.lr = 5e-4;
  e.checkpoint = "ck/checkpoint_e4.sltm";
  TrainLogEntry back = parse_log_entry(log_entry_json(e));
  CHECK(back.step == e.step);
  CHECK(back.epoch == e.epoch);
  CHECK(back.rbleu == e.rbleu);
  CHECK(back.bleu == e.bleu);
  CHECK(back.bleu1 == e.bleu1);
  CHECK(back.loss == e.loss);
  CHECK(back.lr == e.lr);
  CHECK(back.checkpoint == e.checkpoint);
  CHECK_THROWS_AS(parse_log_entry("{not json"), BadHeader);
}

TEST_CASE("checkpoint save/load round trip with optimizer state") {
  fs::path dir = fresh_dir("ckpt");
  ModelConfig cfg;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.embed_dim = 8;
  cfg.ffn_dim = 8;
  cfg.attention_heads = 2;
  cfg.feature_dim = 4;
  cfg.vocab_size = 9;
  cfg.dropout = 0.15;
  ModelParams<float> params = build_model(cfg, 31);
  OptimState opt;
  opt.step = 17;
  for (const auto& name : params.names) {
    TensorData<float> m(params.at(name).shape, 0.25f), v(params.at(name).shape, 0.5f);
    opt.m.emplace(name, std::move(m));
    opt.v.emplace(name, std::move(v));
  }
  save_checkpoint(dir / "a.sltm", params, &opt);

  Checkpoint ck = load_checkpoint(dir / "a.sltm");
  CHECK(ck.params.names == params.names);
  CHECK(ck.params.cfg.embed_dim == cfg.embed_dim);
  CHECK(ck.params.cfg.vocab_size == cfg.vocab_size);
  CHECK(ck.params.cfg.dropout == doctest::Approx(cfg.dropout));
  for (const auto& name : params.names) CHECK(ck.params.at(name).data == params.at(name).data);
  REQUIRE(ck.opt.has_value());
  CHECK(ck.opt->step == 17);
  CHECK(ck.opt->m.at("input_proj.weight").data[0] == 0.25f);

  save_checkpoint(dir / "b.sltm", params, nullptr);
  CHECK_FALSE(load_checkpoint(dir / "b.sltm").opt.has_value());

  {
    std::ofstream bad(dir / "bad.sltm", std::ios::binary);
    bad << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.sltm"), BadMagic);
}

namespace {

// Tiny on-disk dataset via the synthetic generator.
TrainData tiny_dataset(const fs::path& dir, int n_train, int n_val, uint64_t seed) {
  SyntheticSpec spec;
  spec.n_symbols = 4;
  spec.frames_per_symbol = 2;
  spec.feature_dim = 6;
  spec.noise_sigma = 0.05;
  spec.len_lo = 1;
  spec.len_hi = 3;
  spec.n_train = n_train;
  spec.n_val = n_val;
  spec.n_test = 2;
  spec.seed = seed;
  generate_synthetic(spec, dir);

  std::vector<std::string> lower;
  for (const ManifestRecord& rec : parse_manifest(dir / "train.tsv")) lower.push_back(rec.translation);

  TrainData data;
  data.train_manifest = dir / "train.tsv";
  data.val_manifest = dir / "val.tsv";
  for (int vocab : {15, 14, 13, 12, 11, 10}) {
    try {
      data.tokenizer = train_tokenizer(lower, vocab);
      break;
    } catch (const CorpusTooSmall&) {
    }
  }
  data.truecaser = train_truecaser(lower);
  data.blacklist = Blacklist::builtin();
  return data;
}

ModelConfig tiny_model_config(int vocab) {
  ModelConfig cfg;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.embed_dim = 16;
  cfg.ffn_dim = 32;
  cfg.attention_heads = 2;
  cfg.feature_dim = 6;
  cfg.vocab_size = vocab;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("zero max_steps emits the initial checkpoint only") {
  fs::path dir = fresh_dir("zero_steps");
  TrainData data = tiny_dataset(dir, 4, 2, 3);
  TrainConfig tcfg;
  tcfg.max_steps = 0;
  tcfg.batch_size = 2;
  tcfg.seed = 5;
  DecodeOptions dopts;
  dopts.beam = 2;
  dopts.max_len = 8;
  TrainResult result = train(tiny_model_config(data.tokenizer.vocab_size), tcfg, data, dopts, dir / "run");
  CHECK(result.steps == 0);
  CHECK(result.log.empty());
  CHECK(fs::exists(result.checkpoint_last));
  CHECK_FALSE(fs::exists(result.checkpoint_best));
  CHECK_THROWS_AS(select_checkpoint(result.log), NoValidations);
}

TEST_CASE("memorization: 200 steps drive the loss under 0.1") {
  fs::path dir = fresh_dir("memorize");
  TrainData data = tiny_dataset(dir, 4, 2, 7);
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.label_smoothing = 0.0;
  tcfg.weight_decay = 0.0;
  tcfg.peak_lr = 3e-3;
  tcfg.min_lr = 1e-7;
  tcfg.warmup_steps = 20;
  tcfg.restart_period = 0;
  tcfg.max_steps = 200;
  tcfg.validate_every_epochs = 1000000;  // only the final validation runs
  tcfg.seed = 11;
  DecodeOptions dopts;
  dopts.beam = 2;
  dopts.max_len = 10;
  TrainResult result = train(tiny_model_config(data.tokenizer.vocab_size), tcfg, data, dopts, dir / "run");
  CHECK(result.steps == 200);
  REQUIRE(!result.log.empty());
  CHECK(result.log.back().loss < 0.1);
}

TEST_CASE("training is deterministic for a fixed seed") {
  fs::path dir = fresh_dir("determinism");
  TrainData data = tiny_dataset(dir, 6, 2, 13);
  TrainConfig tcfg;
  tcfg.batch_size = 3;
  tcfg.max_steps = 10;
  tcfg.warmup_steps = 5;
  tcfg.restart_period = 100;
  tcfg.validate_every_epochs = 1000000;
  tcfg.seed = 21;
  DecodeOptions dopts;
  dopts.beam = 2;
  dopts.max_len = 8;
  ModelConfig mcfg = tiny_model_config(data.tokenizer.vocab_size);

  TrainResult a = train(mcfg, tcfg, data, dopts, dir / "run_a");
  TrainResult b = train(mcfg, tcfg, data, dopts, dir / "run_b");
  REQUIRE(!a.log.empty());
  REQUIRE(!b.log.empty());
  CHECK(a.log.back().loss == b.log.back().loss);  // bit-identical step-10 loss
  CHECK(a.log.back().rbleu == b.log.back().rbleu);
  CHECK(a.log.back().bleu == b.log.back().bleu);
}

TEST_CASE("checkpoint_best tracks the log maximum") {
  fs::path dir = fresh_dir("best_track");
  TrainData data = tiny_dataset(dir, 8, 3, 17);
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.max_steps = 30;
  tcfg.warmup_steps = 5;
  tcfg.restart_period = 0;
  tcfg.validate_every_epochs = 2;
  tcfg.peak_lr = 2e-3;
  tcfg.seed = 23;
  DecodeOptions dopts;
  dopts.beam = 2;
  dopts.max_len = 10;
  TrainResult result =
      train(tiny_model_config(data.tokenizer.vocab_size), tcfg, data, dopts, dir / "run");
  REQUIRE(!result.log.empty());
  CHECK(fs::exists(result.checkpoint_best));
  double max_rbleu = -1;
  for (const TrainLogEntry& e : result.log) max_rbleu = std::max(max_rbleu, e.rbleu);
  std::string best = select_checkpoint(result.log);
  for (const TrainLogEntry& e : result.log)
    if (e.checkpoint == best) CHECK(e.rbleu == max_rbleu);
  std::vector<TrainLogEntry> reread = read_train_log(result.log_path);
  REQUIRE(reread.size() == result.log.size());
  for (size_t i = 0; i < reread.size(); ++i) CHECK(reread[i].checkpoint == result.log[i].checkpoint);
}
