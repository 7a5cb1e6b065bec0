#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "slt/autodiff.hpp"
#include "slt/data.hpp"
#include "slt/decoding.hpp"
#include "slt/metrics.hpp"
#include "slt/model.hpp"
#include "slt/textproc.hpp"

namespace slt {

enum class Scheduler { cosine_restarts, inverse_sqrt };

struct TrainConfig {
  int batch_size = 32;
  double label_smoothing = 0.1;
  double peak_lr = 1e-3;
  double min_lr = 1e-7;
  int64_t warmup_steps = 2000;
  int64_t restart_period = 17000;  // 0: plain cosine over (max_steps - warmup)
  int64_t max_steps = 100000;
  Scheduler scheduler = Scheduler::cosine_restarts;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;  // decoupled
  double clip_norm = 1.0;     // 0: off
  int validate_every_epochs = 2;
  uint64_t seed = 1;

  void validate() const;
};

// Warmup is linear from min_lr to peak_lr over [0, warmup_steps); afterwards
// cosine_restarts decays from peak_lr to min_lr with period restart_period,
// jumping back to peak_lr at each restart boundary.
double lr_at(const TrainConfig& cfg, int64_t step);

struct OptimState {
  std::unordered_map<std::string, TensorData<float>> m, v;
  int64_t step = 0;
};

// Global-norm clipping (in place), returns the pre-clip norm.
double clip_grad_norm(std::unordered_map<std::string, TensorData<float>>& grads, double clip_norm);

// Bias-corrected Adam step plus decoupled weight decay p -= lr*wd*p applied
// after the Adam delta. Gradients are clipped before the moment update.
void adam_step(OptimState& state, ModelParams<float>& params,
               std::unordered_map<std::string, TensorData<float>>& grads, double lr,
               const TrainConfig& cfg);

// Mean label-smoothed cross-entropy over non-pad positions; `count` receives
// the number of positions contributing.
template <typename T>
Var<T> label_smoothed_ce_mean(Var<T> logits, const std::vector<int>& targets, double eps, int pad_id,
                              int64_t* count = nullptr) {
  auto ids = std::make_shared<std::vector<int>>(targets);
  int64_t nonpad = 0;
  for (int t : targets)
    if (t != pad_id) ++nonpad;
  if (count) *count = nonpad;
  Var<T> sum = label_smoothed_ce_sum(logits, ids, eps, pad_id);
  return nonpad > 0 ? scale(sum, 1.0 / static_cast<double>(nonpad)) : sum;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogEntry {
  int64_t step = 0;
  int epoch = 0;
  double rbleu = 0.0;
  double bleu = 0.0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double bleu3 = 0.0;
  double loss = 0.0;
  double lr = 0.0;
  std::string checkpoint;
};

std::string log_entry_json(const TrainLogEntry& entry);
TrainLogEntry parse_log_entry(const std::string& json_line);
std::vector<TrainLogEntry> read_train_log(const std::filesystem::path& path);

// Checkpoint with the highest validation rBLEU; ties resolve to the earliest.
std::string select_checkpoint(const std::vector<TrainLogEntry>& log);

struct TrainData {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  TokenizerModel tokenizer;
  CasingModel truecaser;
  Blacklist blacklist;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::filesystem::path checkpoint_best;
  std::filesystem::path checkpoint_last;
  std::filesystem::path log_path;
  int64_t steps = 0;
};

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const TrainData& data,
                  const DecodeOptions& decode_opts, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Checkpoints: magic "SLTM", u32 version, length-prefixed key-value config
// block, named little-endian f32 parameter blobs, optional optimizer state.

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const OptimState* opt = nullptr);

struct Checkpoint {
  ModelParams<float> params;
  std::optional<OptimState> opt;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace slt
