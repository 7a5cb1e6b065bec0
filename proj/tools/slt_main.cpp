#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "slt/commands.hpp"
#include "slt/config.hpp"
#include "slt/errors.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string seed;
  std::string out_dir;
  std::string threads;
  std::vector<std::string> sets;
};

void apply_globals(slt::RunConfig& cfg, const GlobalArgs& args) {
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const std::string& kv : args.sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) throw slt::ConfigError("--set expects key=value, got \"" + kv + "\"");
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t");
      size_t e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (!args.seed.empty()) cfg.set("seed", args.seed);
  if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
  if (!args.threads.empty()) cfg.set("threads", args.threads);
#ifdef _OPENMP
  int threads = cfg.get_int("threads");
  if (threads > 0) omp_set_num_threads(threads);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sign-language translation toolkit: feature-to-text transformer training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs args;
  app.add_option("--config", args.config_path, "config file of key = value lines")->expected(1);
  app.add_option("--seed", args.seed, "run seed");
  app.add_option("--out-dir", args.out_dir, "run directory");
  app.add_option("--threads", args.threads, "worker thread count (0 = all cores)");
  app.add_option("--set", args.sets, "override a config key, e.g. --set train.max_steps=100")
      ->take_all();

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic parallel corpus");
  CLI::App* prepare = app.add_subcommand("prepare", "train tokenizer/truecaser and validate features");
  CLI::App* train = app.add_subcommand("train", "train a model with validation-based selection");
  CLI::App* translate = app.add_subcommand("translate", "beam-decode a manifest to text");
  std::string checkpoint, input, output;
  translate->add_option("--checkpoint", checkpoint, "checkpoint to decode with");
  translate->add_option("--input", input, "input manifest");
  translate->add_option("--output", output, "output text file");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score hypotheses against raw references");
  std::string hyps, refs, per_sentence, split;
  evaluate->add_option("--hyps", hyps, "hypothesis file, one sentence per line");
  evaluate->add_option("--refs", refs, "reference manifest (.tsv) or text file");
  evaluate->add_option("--per-sentence", per_sentence, "write per-sentence BLEU/rBLEU TSV here");
  evaluate->add_option("--split", split, "split label for the report");
  CLI::App* sweep = app.add_subcommand("sweep", "flexible grid search over config keys");
  std::string sweep_spec;
  sweep->add_option("--sweep", sweep_spec, "sweep spec file: key = v1, v2, ... per line");

  CLI11_PARSE(app, argc, argv);

  try {
    slt::RunConfig cfg;
    apply_globals(cfg, args);
    if (*translate) {
      if (!checkpoint.empty()) cfg.set("decode.checkpoint", checkpoint);
      if (!input.empty()) cfg.set("decode.input", input);
      if (!output.empty()) cfg.set("decode.output", output);
    }
    if (*evaluate) {
      if (!hyps.empty()) cfg.set("eval.hyps", hyps);
      if (!refs.empty()) cfg.set("eval.refs", refs);
      if (!per_sentence.empty()) cfg.set("eval.per_sentence", per_sentence);
      if (!split.empty()) cfg.set("eval.split", split);
    }
    if (*sweep && !sweep_spec.empty()) cfg.set("sweep.spec", sweep_spec);

    if (*synth) slt::cmd_synth(cfg, std::cout);
    if (*prepare) slt::cmd_prepare(cfg, std::cout);
    if (*train) slt::cmd_train(cfg, std::cout);
    if (*translate) slt::cmd_translate(cfg, std::cout);
    if (*evaluate) slt::cmd_evaluate(cfg, std::cout);
    if (*sweep) slt::cmd_sweep(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return slt::exit_code_for(e);
  }
  return 0;
}
