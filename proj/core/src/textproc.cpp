#include "slt/textproc.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "slt/errors.hpp"

namespace slt {

// ---------------------------------------------------------------------------
// UTF-8

std::vector<uint32_t> utf8_decode(std::string_view text) {
  std::vector<uint32_t> cps;
  cps.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    unsigned char c0 = static_cast<unsigned char>(text[i]);
    uint32_t cp = c0;
    size_t len = 1;
    if (c0 >= 0xf0) {
      len = 4;
      cp = c0 & 0x07u;
    } else if (c0 >= 0xe0) {
      len = 3;
      cp = c0 & 0x0fu;
    } else if (c0 >= 0xc0) {
      len = 2;
      cp = c0 & 0x1fu;
    }
    if (len > 1) {
      if (i + len > text.size()) {
        cps.push_back(c0);  // invalid byte passes through
        ++i;
        continue;
      }
      bool ok = true;
      for (size_t k = 1; k < len; ++k) {
        unsigned char ck = static_cast<unsigned char>(text[i + k]);
        if ((ck & 0xc0u) != 0x80u) {
          ok = false;
          break;
        }
        cp = (cp << 6) | (ck & 0x3fu);
      }
      if (!ok) {
        cps.push_back(c0);
        ++i;
        continue;
      }
    }
    cps.push_back(cp);
    i += len;
  }
  return cps;
}

void utf8_append(std::string& out, uint32_t cp) {
  if (cp < 0x80u) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800u) {
    out.push_back(static_cast<char>(0xc0u | (cp >> 6)));
    out.push_back(static_cast<char>(0x80u | (cp & 0x3fu)));
  } else if (cp < 0x10000u) {
    out.push_back(static_cast<char>(0xe0u | (cp >> 12)));
    out.push_back(static_cast<char>(0x80u | ((cp >> 6) & 0x3fu)));
    out.push_back(static_cast<char>(0x80u | (cp & 0x3fu)));
  } else {
    out.push_back(static_cast<char>(0xf0u | (cp >> 18)));
    out.push_back(static_cast<char>(0x80u | ((cp >> 12) & 0x3fu)));
    out.push_back(static_cast<char>(0x80u | ((cp >> 6) & 0x3fu)));
    out.push_back(static_cast<char>(0x80u | (cp & 0x3fu)));
  }
}

std::string utf8_encode(const std::vector<uint32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (uint32_t cp : cps) utf8_append(out, cp);
  return out;
}

uint32_t lowercase_codepoint(uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  // Latin-1 supplement (skip the multiplication sign).
  if (cp >= 0xc0u && cp <= 0xdeu && cp != 0xd7u) return cp + 32;
  // Latin Extended-A: mostly upper/lower pairs on even/odd codepoints.
  if (cp >= 0x100u && cp <= 0x137u && cp % 2 == 0) return cp + 1;
  if (cp >= 0x139u && cp <= 0x148u && cp % 2 == 1) return cp + 1;
  if (cp >= 0x14au && cp <= 0x177u && cp % 2 == 0) return cp + 1;
  if (cp == 0x178u) return 0xffu;  // Ÿ
  if (cp >= 0x179u && cp <= 0x17eu && cp % 2 == 1) return cp + 1;
  // Greek.
  if (cp >= 0x391u && cp <= 0x3a9u && cp != 0x3a2u) return cp + 32;
  // Cyrillic.
  if (cp >= 0x410u && cp <= 0x42fu) return cp + 32;
  if (cp >= 0x400u && cp <= 0x40fu) return cp + 80;
  return cp;
}

uint32_t uppercase_codepoint(uint32_t cp) {
  if (cp >= 'a' && cp <= 'z') return cp - 32;
  if (cp >= 0xe0u && cp <= 0xfeu && cp != 0xf7u) return cp - 32;
  if (cp == 0xffu) return 0x178u;
  if (cp >= 0x101u && cp <= 0x138u && cp % 2 == 1) return cp - 1;
  if (cp >= 0x13au && cp <= 0x149u && cp % 2 == 0) return cp - 1;
  if (cp >= 0x14bu && cp <= 0x178u && cp % 2 == 1) return cp - 1;
  if (cp >= 0x17au && cp <= 0x17fu && cp % 2 == 0) return cp - 1;
  if (cp >= 0x3b1u && cp <= 0x3c9u && cp != 0x3c2u) return cp - 32;
  if (cp >= 0x430u && cp <= 0x44fu) return cp - 32;
  if (cp >= 0x450u && cp <= 0x45fu) return cp - 80;
  return cp;
}

std::string lowercase(std::string_view text) {
  std::vector<uint32_t> cps = utf8_decode(text);
  for (uint32_t& cp : cps) cp = lowercase_codepoint(cp);
  return utf8_encode(cps);
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// BPE

void TokenizerModel::rebuild_index() {
  index.clear();
  index.reserve(vocab.size() * 2);
  for (size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));
}

int TokenizerModel::id_of(const std::string& piece) const {
  auto it = index.find(piece);
  return it == index.end() ? kUnkId : it->second;
}

namespace {

// A word as a sequence of current symbols plus its corpus frequency.
struct WordEntry {
  std::vector<std::string> symbols;
  int64_t count = 0;
};

std::vector<std::string> word_to_symbols(const std::string& word) {
  std::vector<std::string> symbols;
  symbols.emplace_back(kWordMarker);
  for (uint32_t cp : utf8_decode(word)) {
    std::string s;
    utf8_append(s, cp);
    symbols.push_back(std::move(s));
  }
  return symbols;
}

// Merge all non-overlapping (left,right) occurrences, scanning left to right.
void apply_merge(std::vector<std::string>& symbols, const std::string& left, const std::string& right,
                 const std::string& joined) {
  size_t w = 0;
  for (size_t r = 0; r < symbols.size();) {
    if (r + 1 < symbols.size() && symbols[r] == left && symbols[r + 1] == right) {
      symbols[w++] = joined;
      r += 2;
    } else {
      if (w != r) symbols[w] = std::move(symbols[r]);
      ++w;
      r += 1;
    }
  }
  symbols.resize(w);
}

}  // namespace

TokenizerModel train_tokenizer(const std::vector<std::string>& corpus, int vocab_size) {
  // Word frequency table, insertion-ordered for determinism.
  std::vector<WordEntry> words;
  {
    std::unordered_map<std::string, size_t> seen;
    for (const std::string& sentence : corpus) {
      for (std::string& w : split_whitespace(sentence)) {
        auto it = seen.find(w);
        if (it == seen.end()) {
          seen.emplace(w, words.size());
          words.push_back({word_to_symbols(w), 1});
        } else {
          words[it->second].count += 1;
        }
      }
    }
  }

  TokenizerModel model;
  model.vocab = {"<pad>", "<s>", "</s>", "<unk>"};
  model.vocab_size = vocab_size;

  // Base alphabet, sorted for a canonical id assignment.
  {
    std::map<std::string, bool> alphabet;
    for (const WordEntry& w : words)
      for (const std::string& s : w.symbols) alphabet.emplace(s, true);
    if (static_cast<int>(alphabet.size()) + kNumSpecials > vocab_size)
      throw CorpusTooSmall("vocab_size " + std::to_string(vocab_size) + " cannot hold " +
                           std::to_string(alphabet.size()) + " distinct symbols plus " +
                           std::to_string(kNumSpecials) + " specials");
    for (const auto& [sym, _] : alphabet) model.vocab.push_back(sym);
  }

  while (static_cast<int>(model.vocab.size()) < vocab_size) {
    // Count adjacent pairs, weighted by word frequency.
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const WordEntry& w : words)
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;

    // Best pair: max count, ties to the lexicographically smallest (left,right).
    // Skip candidates whose joined string is already a vocab entry.
    model.rebuild_index();
    const std::pair<std::string, std::string>* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count < best_count || (best && count == best_count)) continue;  // map order is ascending
      if (model.index.count(pair.first + pair.second)) continue;
      best = &pair;
      best_count = count;
    }
    if (!best)
      throw CorpusTooSmall("corpus exhausted at vocab size " + std::to_string(model.vocab.size()) +
                           " before reaching " + std::to_string(vocab_size));

    std::string joined = best->first + best->second;
    for (WordEntry& w : words) apply_merge(w.symbols, best->first, best->second, joined);
    model.merges.emplace_back(best->first, best->second);
    model.vocab.push_back(std::move(joined));
  }

  model.rebuild_index();
  return model;
}

std::vector<int> encode(const TokenizerModel& model, std::string_view text) {
  std::vector<int> ids;
  for (const std::string& word : split_whitespace(text)) {
    std::vector<std::string> symbols = word_to_symbols(word);
    for (const auto& [left, right] : model.merges) apply_merge(symbols, left, right, left + right);
    for (const std::string& s : symbols) {
      int id = model.id_of(s);
      ids.push_back(id < kNumSpecials ? kUnkId : id);
    }
  }
  return ids;
}

std::string detokenize(const TokenizerModel& model, const std::vector<int>& ids) {
  std::string joined;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(model.vocab.size()))
      throw UnknownId("token id " + std::to_string(id) + " outside vocab of size " +
                      std::to_string(model.vocab.size()));
    if (id < kNumSpecials) continue;
    joined += model.vocab[static_cast<size_t>(id)];
  }
  std::string out;
  size_t i = 0;
  while (i < joined.size()) {
    if (joined.compare(i, kWordMarker.size(), kWordMarker) == 0) {
      out.push_back(' ');
      i += kWordMarker.size();
    } else {
      out.push_back(joined[i]);
      ++i;
    }
  }
  size_t start = out.find_first_not_of(' ');
  return start == std::string::npos ? std::string() : out.substr(start);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string escape_piece(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\\')
      out += "\\\\";
    else if (c == '\t')
      out += "\\t";
    else if (c == '\n')
      out += "\\n";
    else
      out.push_back(c);
  }
  return out;
}

std::string unescape_piece(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      char n = s[i + 1];
      if (n == 't') {
        out.push_back('\t');
        ++i;
        continue;
      }
      if (n == 'n') {
        out.push_back('\n');
        ++i;
        continue;
      }
      if (n == '\\') {
        out.push_back('\\');
        ++i;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

}  // namespace

void save_tokenizer(const TokenizerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write tokenizer to " + path.string());
  out << "SLTBPE 1\n" << model.vocab_size << "\n";
  for (const std::string& v : model.vocab) out << escape_piece(v) << "\n";
  out << "MERGES\n";
  for (const auto& [l, r] : model.merges) out << escape_piece(l) << "\t" << escape_piece(r) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

TokenizerModel load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open tokenizer " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "SLTBPE 1") throw BadHeader("not a SLTBPE 1 file: " + path.string());
  TokenizerModel model;
  if (!std::getline(in, line)) throw TruncatedFile("missing vocab size in " + path.string());
  model.vocab_size = std::stoi(line);
  for (int i = 0; i < model.vocab_size; ++i) {
    if (!std::getline(in, line)) throw TruncatedFile("vocab truncated in " + path.string());
    model.vocab.push_back(unescape_piece(line));
  }
  if (!std::getline(in, line) || line != "MERGES") throw BadHeader("missing MERGES section in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw BadHeader("malformed merge line in " + path.string());
    model.merges.emplace_back(unescape_piece(line.substr(0, tab)), unescape_piece(line.substr(tab + 1)));
  }
  model.rebuild_index();
  return model;
}

// ---------------------------------------------------------------------------
// Truecaser

namespace {

std::string lower_first_codepoint(const std::string& word) {
  std::vector<uint32_t> cps = utf8_decode(word);
  if (!cps.empty()) cps[0] = lowercase_codepoint(cps[0]);
  return utf8_encode(cps);
}

}  // namespace

CasingModel train_truecaser(const std::vector<std::string>& corpus) {
  // lowercase key -> surface -> count; ordered maps keep selection deterministic.
  std::map<std::string, std::map<std::string, int64_t>> tally;
  CasingModel model;
  for (const std::string& sentence : corpus) {
    std::vector<std::string> tokens = split_whitespace(sentence);
    for (size_t i = 0; i < tokens.size(); ++i) {
      std::string surface = i == 0 ? lower_first_codepoint(tokens[i]) : tokens[i];
      tally[lowercase(surface)][surface] += 1;
      model.total_words += 1;
    }
  }
  for (const auto& [key, forms] : tally) {
    // Highest count wins; ties go to the lexicographically smallest surface,
    // which prefers a genuinely observed cased form over a lowered one.
    const std::string* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [surface, count] : forms) {
      if (count > best_count) {
        best = &surface;
        best_count = count;
      }
    }
    model.casing_map.emplace(key, std::make_pair(*best, best_count));
  }
  return model;
}

std::string truecase(const CasingModel& model, std::string_view text) {
  std::vector<std::string> tokens = split_whitespace(text);
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    auto it = model.casing_map.find(tokens[i]);
    out += it == model.casing_map.end() ? tokens[i] : it->second.first;
  }
  // Uppercase the first alphabetic (cased) character of the sentence.
  std::vector<uint32_t> cps = utf8_decode(out);
  for (uint32_t& cp : cps) {
    bool cased = lowercase_codepoint(cp) != cp || uppercase_codepoint(cp) != cp;
    if (cased) {
      cp = uppercase_codepoint(cp);
      return utf8_encode(cps);
    }
  }
  return out;
}

void save_truecaser(const CasingModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write truecaser to " + path.string());
  std::map<std::string, std::pair<std::string, int64_t>> sorted(model.casing_map.begin(), model.casing_map.end());
  for (const auto& [key, entry] : sorted) out << key << "\t" << entry.first << "\t" << entry.second << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

CasingModel load_truecaser(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open truecaser " + path.string());
  CasingModel model;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = line.find('\t', t1 == std::string::npos ? 0 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw BadHeader("malformed truecaser line in " + path.string());
    int64_t count = std::stoll(line.substr(t2 + 1));
    model.casing_map.emplace(line.substr(0, t1), std::make_pair(line.substr(t1 + 1, t2 - t1 - 1), count));
    model.total_words += count;
  }
  return model;
}

}  // namespace slt
