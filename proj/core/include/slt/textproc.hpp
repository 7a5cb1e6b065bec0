#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace slt {

// Special token ids are fixed across the toolkit.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecials = 4;

// U+2581 LOWER ONE EIGHTH BLOCK, the word-boundary marker.
inline constexpr std::string_view kWordMarker = "\xe2\x96\x81";

// ---------------------------------------------------------------------------
// UTF-8 helpers shared by text processing and metrics.

std::vector<uint32_t> utf8_decode(std::string_view text);
void utf8_append(std::string& out, uint32_t cp);
std::string utf8_encode(const std::vector<uint32_t>& cps);

// Simple per-codepoint case mapping (ASCII, Latin-1, Latin Extended-A, Greek
// and Cyrillic base ranges); other codepoints pass through unchanged.
uint32_t lowercase_codepoint(uint32_t cp);
uint32_t uppercase_codepoint(uint32_t cp);

// ---------------------------------------------------------------------------
// Subword tokenizer (deterministic BPE over whitespace pre-tokenized words).

struct TokenizerModel {
  std::vector<std::string> vocab;  // dense ids 0..vocab_size-1, specials first
  std::vector<std::pair<std::string, std::string>> merges;
  int vocab_size = 0;

  std::unordered_map<std::string, int> index;  // vocab entry -> id
  void rebuild_index();
  int id_of(const std::string& piece) const;
};

std::string lowercase(std::string_view text);

TokenizerModel train_tokenizer(const std::vector<std::string>& corpus, int vocab_size);

std::vector<int> encode(const TokenizerModel& model, std::string_view text);

std::string detokenize(const TokenizerModel& model, const std::vector<int>& ids);

void save_tokenizer(const TokenizerModel& model, const std::filesystem::path& path);
TokenizerModel load_tokenizer(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Frequency-table truecaser.

struct CasingModel {
  // lowercase word -> (most frequent surface form, count)
  std::unordered_map<std::string, std::pair<std::string, int64_t>> casing_map;
  int64_t total_words = 0;
};

CasingModel train_truecaser(const std::vector<std::string>& corpus);

std::string truecase(const CasingModel& model, std::string_view text);

void save_truecaser(const CasingModel& model, const std::filesystem::path& path);
CasingModel load_truecaser(const std::filesystem::path& path);

// Whitespace tokenization used by the truecaser and metrics reduction.
std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace slt
