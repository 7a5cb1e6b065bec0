#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slt/tensor.hpp"
#include "slt/textproc.hpp"

namespace slt {

struct ManifestRecord {
  std::string id;
  std::string feature_path;  // relative to the manifest's directory
  int n_frames = 0;
  std::string translation;
};

// TSV with header "id\tfeatures\tn_frames\ttranslation".
std::vector<ManifestRecord> parse_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// SLTF: magic "SLTF", u32 version=1, u32 T, u32 D, then T*D little-endian f32.
TensorData<float> read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const TensorData<float>& features);

// Header-only read (magic/version/T/D), for fast validation.
std::pair<int, int> read_feature_header(const std::filesystem::path& path);

// Converter from a whitespace text matrix (one row per line).
TensorData<float> features_from_text(const std::string& text);

// Resolves a record's feature path against the directory of its manifest.
std::filesystem::path resolve_feature_path(const std::filesystem::path& manifest_path,
                                           const std::string& feature_path);

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  TensorData<float> src;          // [B, T_max, D], zero padded
  std::vector<int> src_lens;      // valid frames per row
  std::vector<int> targets;       // [B, U_max] flat: <s> ... </s> <pad>*
  std::vector<int> target_lens;   // valid tokens per row (incl. <s> and </s>)
  int batch = 0;
  int max_target_len = 0;
};

// Seeded shuffle per epoch, then length-bucketed batching: records are sorted
// by source length within shuffled chunks of batch_size*20 to limit padding.
std::vector<Batch> make_batches(const std::vector<ManifestRecord>& records,
                                const std::filesystem::path& manifest_path, const TokenizerModel& tokenizer,
                                int batch_size, uint64_t seed, int epoch, int max_source_positions);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticSpec {
  int n_symbols = 40;
  int frames_per_symbol = 4;
  int feature_dim = 64;
  double noise_sigma = 0.1;
  int len_lo = 3;
  int len_hi = 8;
  int n_train = 2000;
  int n_val = 200;
  int n_test = 200;
  uint64_t seed = 1;

  void validate() const;
};

struct SynthSummary {
  int n_train = 0, n_val = 0, n_test = 0;
  int64_t total_frames = 0;
  int n_symbols = 0;
};

// Writes train.tsv/val.tsv/test.tsv plus features/*.sltf under out_dir.
// Symbol k has a fixed prototype feature block; example features are the
// concatenated prototypes plus fresh sigma-scaled Gaussian noise, and the
// translation is the space-joined words "w<k>".
SynthSummary generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Prototype block for symbol k (the generator's ground truth, used by the
// nearest-prototype oracle in tests).
TensorData<float> synthetic_prototype(const SyntheticSpec& spec, int symbol);

}  // namespace slt
