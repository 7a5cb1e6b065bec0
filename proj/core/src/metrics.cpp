#include "slt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "slt/errors.hpp"
#include "slt/textproc.hpp"

namespace slt {

// ---------------------------------------------------------------------------
// Blacklist

extern const char* kAppendixABlacklist;  // generated from core/data/appendix_a.txt

Blacklist Blacklist::parse(std::string_view text) {
  Blacklist bl;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    size_t start = line.find_first_not_of(' ');
    if (start == std::string::npos) continue;
    line = line.substr(start);
    if (line.empty() || line[0] == '#') continue;
    bl.words.insert(line);
  }
  return bl;
}

Blacklist Blacklist::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open blacklist " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const Blacklist& Blacklist::builtin() {
  static const Blacklist bl = parse(kAppendixABlacklist);
  return bl;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace {

constexpr uint32_t kEnDash = 0x2013;
constexpr uint32_t kEmDash = 0x2014;

uint32_t normalize_quote(uint32_t cp) {
  if (cp == 0x2018 || cp == 0x2019 || cp == 0x02bc) return '\'';
  if (cp == 0x201c || cp == 0x201d) return '"';
  return cp;
}

bool is_split_punct(uint32_t cp) {
  switch (cp) {
    case '.':
    case ',':
    case '!':
    case '?':
    case ';':
    case ':':
    case '"':
    case '(':
    case ')':
    case '[':
    case ']':
    case '{':
    case '}':
      return true;
    default:
      return cp == kEnDash || cp == kEmDash;
  }
}

bool is_space_cp(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v';
}

bool is_ascii_punct(uint32_t cp) {
  return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') || (cp >= '[' && cp <= '`') ||
         (cp >= '{' && cp <= '~');
}

bool is_alnum_cp(uint32_t cp) {
  if (cp < 0x80) return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  return !is_space_cp(cp) && cp != kEnDash && cp != kEmDash;  // non-ASCII letters count as word chars
}

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<uint32_t> cps = utf8_decode(text);
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (uint32_t raw : cps) {
    uint32_t cp = normalize_quote(raw);
    if (is_space_cp(cp)) {
      flush();
    } else if (is_split_punct(cp)) {
      flush();
      std::string tok;
      utf8_append(tok, cp);
      tokens.push_back(std::move(tok));
    } else {
      utf8_append(cur, cp);
    }
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------
// Corpus BLEU

namespace {

// N-grams are hashed as the token strings joined with an unlikely separator.
void count_ngrams(const std::vector<std::string>& tokens, int n,
                  std::unordered_map<std::string, int64_t>& out) {
  if (static_cast<int>(tokens.size()) < n) return;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    out[key] += 1;
  }
}

double score_from_counts(const std::array<int64_t, 4>& correct, const std::array<int64_t, 4>& total,
                         double brevity_penalty, int order) {
  double log_sum = 0.0;
  double smooth = 1.0;
  for (int n = 0; n < order; ++n) {
    size_t i = static_cast<size_t>(n);
    if (total[i] == 0) return 0.0;  // hypotheses too short to form any n-gram
    double p;
    if (correct[i] > 0) {
      p = static_cast<double>(correct[i]) / static_cast<double>(total[i]);
    } else {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(total[i]));
    }
    log_sum += std::log(p) / order;
  }
  return brevity_penalty * std::exp(log_sum) * 100.0;
}

}  // namespace

BleuScore corpus_bleu_tokens(const std::vector<std::vector<std::string>>& hyps,
                             const std::vector<std::vector<std::string>>& refs, int order) {
  if (hyps.size() != refs.size())
    throw LengthMismatch("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw EmptyCorpus("corpus_bleu: no sentence pairs");

  BleuScore s;
  for (size_t i = 0; i < hyps.size(); ++i) {
    s.hyp_len += static_cast<int64_t>(hyps[i].size());
    s.ref_len += static_cast<int64_t>(refs[i].size());
    for (int n = 1; n <= order; ++n) {
      std::unordered_map<std::string, int64_t> hyp_counts, ref_counts;
      count_ngrams(hyps[i], n, hyp_counts);
      count_ngrams(refs[i], n, ref_counts);
      int64_t clipped = 0;
      int64_t total = 0;
      for (const auto& [gram, count] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) clipped += std::min(count, it->second);
        total += count;
      }
      s.correct[static_cast<size_t>(n - 1)] += clipped;
      s.total[static_cast<size_t>(n - 1)] += total;
    }
  }

  for (int n = 0; n < 4; ++n) {
    size_t i = static_cast<size_t>(n);
    s.precisions[i] =
        s.total[i] > 0 ? static_cast<double>(s.correct[i]) / static_cast<double>(s.total[i]) : 0.0;
  }

  if (s.hyp_len == 0) {
    s.brevity_penalty = 0.0;
    s.score = 0.0;
    return s;
  }
  s.brevity_penalty = s.hyp_len >= s.ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  s.score = score_from_counts(s.correct, s.total, s.brevity_penalty, order);
  return s;
}

BleuScore corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hyps.size());
  r.reserve(refs.size());
  for (const std::string& s : hyps) h.push_back(bleu_tokenize(s));
  for (const std::string& s : refs) r.push_back(bleu_tokenize(s));
  return corpus_bleu_tokens(h, r);
}

double sentence_bleu(const std::string& hyp, const std::string& ref) {
  return corpus_bleu({hyp}, {ref}).score;
}

// ---------------------------------------------------------------------------
// Reduced BLEU

std::vector<std::string> reduce(std::string_view text, const Blacklist& bl) {
  std::vector<uint32_t> cps = utf8_decode(lowercase(text));
  for (uint32_t& cp : cps) cp = normalize_quote(cp);

  // Strip punctuation, keeping apostrophes flanked by word characters.
  std::vector<uint32_t> kept;
  kept.reserve(cps.size());
  for (size_t i = 0; i < cps.size(); ++i) {
    uint32_t cp = cps[i];
    if (cp == '\'') {
      bool internal = i > 0 && i + 1 < cps.size() && is_alnum_cp(cps[i - 1]) && is_alnum_cp(cps[i + 1]);
      if (internal) kept.push_back(cp);
      continue;
    }
    if (is_ascii_punct(cp) || cp == kEnDash || cp == kEmDash || cp == 0x201c || cp == 0x201d) continue;
    kept.push_back(cp);
  }

  std::vector<std::string> out;
  for (std::string& tok : split_whitespace(utf8_encode(kept)))
    if (!bl.contains(tok)) out.push_back(std::move(tok));
  return out;
}

double sentence_rbleu(const std::string& hyp, const std::string& ref, const Blacklist& bl) {
  std::vector<std::string> h = reduce(hyp, bl);
  std::vector<std::string> r = reduce(ref, bl);
  if (std::min(h.size(), r.size()) < 4) return 0.0;
  return corpus_bleu_tokens({h}, {r}).score;
}

double corpus_rbleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                    const Blacklist& bl) {
  if (hyps.size() != refs.size())
    throw LengthMismatch("corpus_rbleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw EmptyCorpus("corpus_rbleu: no sentence pairs");
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hyps.size());
  r.reserve(refs.size());
  for (const std::string& s : hyps) h.push_back(reduce(s, bl));
  for (const std::string& s : refs) r.push_back(reduce(s, bl));
  return corpus_bleu_tokens(h, r).score;
}

// ---------------------------------------------------------------------------
// Report

MetricReport evaluate_report(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                             const Blacklist& bl) {
  MetricReport report;
  report.bleu = corpus_bleu(hyps, refs);
  std::vector<std::vector<std::string>> h, r;
  for (const std::string& s : hyps) h.push_back(bleu_tokenize(s));
  for (const std::string& s : refs) r.push_back(bleu_tokenize(s));
  report.bleu1 = corpus_bleu_tokens(h, r, 1).score;
  report.bleu2 = corpus_bleu_tokens(h, r, 2).score;
  report.bleu3 = corpus_bleu_tokens(h, r, 3).score;
  report.rbleu = corpus_rbleu(hyps, refs, bl);
  report.n_pairs = static_cast<int64_t>(hyps.size());
  return report;
}

std::string report_tsv(const MetricReport& report, std::string_view split) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.2f\t%.2f\t%.2f\t%.2f\t%.2f", report.rbleu, report.bleu1, report.bleu2,
                report.bleu3, report.bleu.score);
  std::string out = "split\trBLEU\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU\n";
  out += std::string(split);
  out.push_back('\t');
  out += buf;
  out.push_back('\n');
  return out;
}

}  // namespace slt
