#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace slt {

// ---------------------------------------------------------------------------
// Blacklist driving the rBLEU reduction.

struct Blacklist {
  std::unordered_set<std::string> words;

  bool contains(const std::string& w) const { return words.count(w) > 0; }

  // The list shipped in core/data/appendix_a.txt, compiled into the library.
  static const Blacklist& builtin();
  // UTF-8 file, one word per line, '#' comments allowed.
  static Blacklist load(const std::filesystem::path& path);
  static Blacklist parse(std::string_view text);
};

// ---------------------------------------------------------------------------
// BLEU

// Splits punctuation .,!?;:"()[]{} and en/em dashes into their own tokens,
// normalizes curly quotes/apostrophes to straight, keeps apostrophes attached.
std::vector<std::string> bleu_tokenize(std::string_view text);

struct BleuScore {
  double score = 0.0;                          // percentage in [0,100]
  std::array<double, 4> precisions{};          // raw modified precisions p1..p4
  std::array<int64_t, 4> correct{};            // clipped n-gram matches
  std::array<int64_t, 4> total{};              // hypothesis n-gram counts
  double brevity_penalty = 1.0;
  int64_t hyp_len = 0;
  int64_t ref_len = 0;
};

// Corpus-level BLEU over pre-tokenized sentences, truncated at `order`.
// Zero match counts are exponentially smoothed: the k-th zero numerator
// becomes 1/(2^k * total_n). An order with no hypothesis n-grams at all
// (total_n == 0) zeroes the score.
BleuScore corpus_bleu_tokens(const std::vector<std::vector<std::string>>& hyps,
                             const std::vector<std::vector<std::string>>& refs, int order = 4);

BleuScore corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

double sentence_bleu(const std::string& hyp, const std::string& ref);

// ---------------------------------------------------------------------------
// Reduced BLEU

// lowercase -> normalize apostrophes -> strip punctuation except word-internal
// apostrophes -> whitespace split -> drop blacklisted tokens.
std::vector<std::string> reduce(std::string_view text, const Blacklist& bl);

// 0.0 exactly when either reduction has fewer than four tokens.
double sentence_rbleu(const std::string& hyp, const std::string& ref, const Blacklist& bl);

double corpus_rbleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                    const Blacklist& bl);

// ---------------------------------------------------------------------------
// Report

struct MetricReport {
  BleuScore bleu;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double bleu3 = 0.0;
  double rbleu = 0.0;
  int64_t n_pairs = 0;
};

MetricReport evaluate_report(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                             const Blacklist& bl);

// Two-line TSV: "split\trBLEU\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU" then the values
// rounded to two decimals.
std::string report_tsv(const MetricReport& report, std::string_view split);

}  // namespace slt
