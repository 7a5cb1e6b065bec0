#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "slt/commands.hpp"
#include "slt/config.hpp"
#include "slt/data.hpp"
#include "slt/errors.hpp"
#include "slt/metrics.hpp"
#include "slt/training.hpp"

using namespace slt;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "slt_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> file_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// Small synthetic dataset settings shared by the pipeline tests.
void set_tiny_dataset(RunConfig& cfg, const fs::path& data_dir) {
  cfg.set("synth.symbols", "6");
  cfg.set("synth.frames_per_symbol", "2");
  cfg.set("synth.feature_dim", "8");
  cfg.set("synth.noise_sigma", "0.05");
  cfg.set("synth.len_lo", "2");
  cfg.set("synth.len_hi", "5");
  cfg.set("synth.n_train", "256");
  cfg.set("synth.n_val", "16");
  cfg.set("synth.n_test", "16");
  cfg.set("out_dir", data_dir.string());
}

void set_tiny_model(RunConfig& cfg) {
  cfg.set("model.encoder_layers", "1");
  cfg.set("model.decoder_layers", "1");
  cfg.set("model.embed_dim", "32");
  cfg.set("model.ffn_dim", "64");
  cfg.set("model.attention_heads", "2");
  cfg.set("model.dropout", "0.0");
  cfg.set("train.batch_size", "16");
  cfg.set("train.peak_lr", "3e-3");
  cfg.set("train.warmup_steps", "50");
  cfg.set("train.restart_period", "0");
  cfg.set("train.max_steps", "800");
  cfg.set("train.weight_decay", "0.0");
  cfg.set("train.validate_every_epochs", "8");
  cfg.set("data.vocab_size", "19");
  cfg.set("decode.beam", "3");
  cfg.set("decode.max_len", "12");
}

struct RunOutput {
  int exit_code;
  std::string stdout_text;
};

RunOutput run_cli(const std::string& args) {
  std::string cmd = std::string(SLT_CLI_PATH) + " " + args + " 2>/dev/null";
  std::array<char, 4096> buf{};
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

}  // namespace

TEST_CASE("config parsing and overrides") {
  fs::path dir = fresh_dir("config");
  {
    std::ofstream out(dir / "run.config");
    out << "# a comment\n";
    out << "train.max_steps = 123\n";
    out << "model.embed_dim= 64\n";
    out << "\n";
    out << "eval.split =dev\n";
  }
  RunConfig cfg = RunConfig::from_file(dir / "run.config");
  CHECK(cfg.get_i64("train.max_steps") == 123);
  CHECK(cfg.get_int("model.embed_dim") == 64);
  CHECK(cfg.get("eval.split") == "dev");
  CHECK(cfg.get_int("train.batch_size") == 32);  // untouched default

  CHECK_THROWS_AS(cfg.set("train.unknown_key", "1"), ConfigError);
  {
    std::ofstream out(dir / "bad.config");
    out << "no equals sign here\n";
  }
  CHECK_THROWS_AS(RunConfig::from_file(dir / "bad.config"), ConfigError);
  CHECK_THROWS_AS(RunConfig().get("nope"), ConfigError);

  std::string text = cfg.resolved_text();
  CHECK(text.find("train.max_steps = 123") != std::string::npos);
  CHECK(text.find("decode.beam = 5") != std::string::npos);
  CHECK(text.find("train.scheduler = cosine_restarts") != std::string::npos);
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(CorpusTooSmall("x")) == 3);
  CHECK(exit_code_for(NonFiniteLoss("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("cmd_synth writes a deterministic dataset tree") {
  fs::path dir_a = fresh_dir("synth_a");
  fs::path dir_b = fresh_dir("synth_b");
  RunConfig cfg;
  set_tiny_dataset(cfg, dir_a);
  std::ostringstream out_a;
  cmd_synth(cfg, out_a);
  for (const char* f : {"train.tsv", "val.tsv", "test.tsv"}) CHECK(fs::exists(dir_a / f));
  CHECK(fs::exists(dir_a / "config.resolved"));
  CHECK(out_a.str().find("train 256") != std::string::npos);

  // summary counts match manifest rows
  CHECK(parse_manifest(dir_a / "train.tsv").size() == 256);
  CHECK(parse_manifest(dir_a / "val.tsv").size() == 16);
  CHECK(parse_manifest(dir_a / "test.tsv").size() == 16);

  RunConfig cfg_b;
  set_tiny_dataset(cfg_b, dir_b);
  std::ostringstream out_b;
  cmd_synth(cfg_b, out_b);
  CHECK(slurp(dir_a / "train.tsv") == slurp(dir_b / "train.tsv"));
  for (const ManifestRecord& rec : parse_manifest(dir_a / "train.tsv"))
    CHECK(slurp(dir_a / rec.feature_path) == slurp(dir_b / rec.feature_path));
}

TEST_CASE("cmd_prepare trains artifacts idempotently") {
  fs::path data_dir = fresh_dir("prepare_data");
  fs::path run_dir = fresh_dir("prepare_run");
  RunConfig synth_cfg;
  set_tiny_dataset(synth_cfg, data_dir);
  std::ostringstream sink;
  cmd_synth(synth_cfg, sink);

  RunConfig cfg;
  cfg.set("out_dir", run_dir.string());
  cfg.set("data.train_manifest", (data_dir / "train.tsv").string());
  cfg.set("data.val_manifest", (data_dir / "val.tsv").string());
  cfg.set("data.test_manifest", (data_dir / "test.tsv").string());
  cfg.set("data.vocab_size", "19");
  cmd_prepare(cfg, sink);
  CHECK(fs::exists(run_dir / "tokenizer.sltbpe"));
  CHECK(fs::exists(run_dir / "truecaser.tsv"));

  std::string tok1 = slurp(run_dir / "tokenizer.sltbpe");
  std::string tc1 = slurp(run_dir / "truecaser.tsv");
  cmd_prepare(cfg, sink);
  CHECK(slurp(run_dir / "tokenizer.sltbpe") == tok1);  // byte-identical rerun
  CHECK(slurp(run_dir / "truecaser.tsv") == tc1);

  // infeasible vocab size surfaces as CorpusTooSmall (CLI exit 3)
  RunConfig bad = cfg;
  bad.set("data.vocab_size", "5000");
  try {
    cmd_prepare(bad, sink);
    FAIL("expected CorpusTooSmall");
  } catch (const Error& e) {
    CHECK(exit_code_for(e) == 3);
    CHECK(std::string(e.what()).find("CorpusTooSmall") != std::string::npos);
  }
}

TEST_CASE("pipeline: synth -> prepare -> train -> translate -> evaluate") {
  fs::path data_dir = fresh_dir("pipe_data");
  fs::path run_dir = fresh_dir("pipe_run");
  std::ostringstream sink;

  RunConfig cfg;
  set_tiny_dataset(cfg, data_dir);
  cmd_synth(cfg, sink);

  cfg.set("out_dir", run_dir.string());
  set_tiny_model(cfg);
  cfg.set("data.train_manifest", (data_dir / "train.tsv").string());
  cfg.set("data.val_manifest", (data_dir / "val.tsv").string());
  cfg.set("data.test_manifest", (data_dir / "test.tsv").string());
  cmd_prepare(cfg, sink);
  cmd_train(cfg, sink);
  CHECK(fs::exists(run_dir / "checkpoints" / "checkpoint_best.sltm"));
  CHECK(fs::exists(run_dir / "train_log.jsonl"));

  cmd_translate(cfg, sink);
  fs::path hyps = run_dir / "hyps.txt";
  REQUIRE(fs::exists(hyps));
  CHECK(file_lines(hyps).size() == 16);

  // translate determinism: rerun produces the identical file
  std::string first = slurp(hyps);
  cmd_translate(cfg, sink);
  CHECK(slurp(hyps) == first);

  RunConfig eval_cfg = cfg;
  eval_cfg.set("eval.hyps", hyps.string());
  eval_cfg.set("eval.refs", (data_dir / "test.tsv").string());
  eval_cfg.set("eval.per_sentence", (run_dir / "per_sentence.tsv").string());
  std::ostringstream report;
  cmd_evaluate(eval_cfg, report);
  std::string tsv = report.str();
  CHECK(tsv.find("split\trBLEU\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU") == 0);

  // the tiny task is learnable: corpus BLEU comfortably high
  std::istringstream parse(tsv);
  std::string header, row;
  std::getline(parse, header);
  std::getline(parse, row);
  std::vector<std::string> cols;
  {
    std::istringstream rs(row);
    std::string c;
    while (std::getline(rs, c, '\t')) cols.push_back(c);
  }
  REQUIRE(cols.size() == 6);
  CHECK(std::stod(cols[5]) > 50.0);

  std::vector<std::string> per_sentence = file_lines(run_dir / "per_sentence.tsv");
  CHECK(per_sentence.size() == 17);  // header + 16 rows
  CHECK(per_sentence[0] == "id\tBLEU\trBLEU");

  // hyps == refs scores 100 everywhere
  std::vector<ManifestRecord> test_records = parse_manifest(data_dir / "test.tsv");
  fs::path ref_lines_path = run_dir / "refs.txt";
  {
    std::ofstream out(ref_lines_path);
    for (const ManifestRecord& rec : test_records) out << rec.translation << "\n";
  }
  RunConfig perfect = eval_cfg;
  perfect.set("eval.hyps", ref_lines_path.string());
  perfect.set("eval.refs", (data_dir / "test.tsv").string());
  std::ostringstream perfect_report;
  cmd_evaluate(perfect, perfect_report);
  CHECK(perfect_report.str().find("100.00\t100.00\t100.00\t100.00\t100.00") != std::string::npos);
}

TEST_CASE("cmd_evaluate per-sentence scores on a singleton pair") {
  fs::path dir = fresh_dir("singleton");
  {
    std::ofstream hyps(dir / "hyps.txt");
    hyps << "It's a very important part of the process.\n";
    std::ofstream refs(dir / "refs.txt");
    refs << "So, this is a very important part of the process.\n";
  }
  RunConfig cfg;
  cfg.set("out_dir", dir.string());
  cfg.set("eval.hyps", (dir / "hyps.txt").string());
  cfg.set("eval.refs", (dir / "refs.txt").string());
  cfg.set("eval.per_sentence", (dir / "per.tsv").string());
  std::ostringstream out;
  cmd_evaluate(cfg, out);
  std::vector<std::string> rows = file_lines(dir / "per.tsv");
  REQUIRE(rows.size() == 2);
  // high sentence BLEU, but the reductions leave fewer than four tokens
  CHECK(rows[1] == "1\t61.86\t0.00");
}

TEST_CASE("cmd_sweep fixes the stable learning rate") {
  fs::path data_dir = fresh_dir("sweep_data");
  fs::path run_dir = fresh_dir("sweep_run");
  std::ostringstream sink;

  RunConfig cfg;
  set_tiny_dataset(cfg, data_dir);
  cfg.set("synth.n_train", "128");
  cfg.set("synth.n_val", "8");
  cfg.set("synth.n_test", "8");
  cmd_synth(cfg, sink);

  cfg.set("out_dir", run_dir.string());
  set_tiny_model(cfg);
  cfg.set("train.max_steps", "250");
  cfg.set("data.train_manifest", (data_dir / "train.tsv").string());
  cfg.set("data.val_manifest", (data_dir / "val.tsv").string());
  cfg.set("data.test_manifest", (data_dir / "test.tsv").string());

  fs::path spec_path = run_dir / "sweep.spec";
  fs::create_directories(run_dir);
  {
    std::ofstream out(spec_path);
    out << "# tuning order\n";
    out << "train.peak_lr = 0.5, 0.003\n";
    out << "train.label_smoothing = 0.1\n";
  }
  cfg.set("sweep.spec", spec_path.string());

  std::ostringstream out;
  cmd_sweep(cfg, out);
  CHECK(out.str().find("fixed train.peak_lr = 0.003") != std::string::npos);
  CHECK(out.str().find("fixed train.label_smoothing = 0.1") != std::string::npos);

  std::vector<std::string> rows = file_lines(run_dir / "sweep_results.tsv");
  REQUIRE(rows.size() == 4);  // header + 3 trials
  CHECK(rows[0] == "trial_id\toverrides\tval_rbleu\tval_bleu");

  std::string best_cfg = slurp(run_dir / "sweep_best.config");
  CHECK(best_cfg.find("train.peak_lr = 0.003") != std::string::npos);
}

TEST_CASE("CLI binary: exit codes and report output") {
  fs::path data_dir = fresh_dir("bin_data");
  fs::path run_dir = fresh_dir("bin_run");

  RunOutput synth = run_cli("synth --out-dir " + data_dir.string() +
                            " --set synth.n_train=12 --set synth.n_val=4 --set synth.n_test=4"
                            " --set synth.symbols=5 --set synth.feature_dim=6 --set synth.len_hi=5");
  CHECK(synth.exit_code == 0);
  CHECK(synth.stdout_text.find("train 12") != std::string::npos);

  // unknown key -> config error (2)
  CHECK(run_cli("synth --out-dir " + data_dir.string() + " --set nope=1").exit_code == 2);
  // missing manifest -> data error (3)
  CHECK(run_cli("prepare --out-dir " + run_dir.string() + " --set data.train_manifest=" +
                (data_dir / "absent.tsv").string())
            .exit_code == 3);

  // evaluate hypotheses against themselves through the binary
  fs::path refs = run_dir / "refs.txt";
  fs::create_directories(run_dir);
  {
    std::ofstream out(refs);
    for (const ManifestRecord& rec : parse_manifest(data_dir / "test.tsv")) out << rec.translation << "\n";
  }
  RunOutput eval = run_cli("evaluate --out-dir " + run_dir.string() + " --hyps " + refs.string() +
                           " --refs " + (data_dir / "test.tsv").string() + " --split test");
  CHECK(eval.exit_code == 0);
  CHECK(eval.stdout_text.find("split\trBLEU\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU") == 0);
  CHECK(eval.stdout_text.find("test\t") != std::string::npos);
}
