#include "slt/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "slt/errors.hpp"
#include "slt/rng.hpp"

namespace slt {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

constexpr char kManifestHeader[] = "id\tfeatures\tn_frames\ttranslation";

}  // namespace

std::vector<ManifestRecord> parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw BadHeader("empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw BadHeader("manifest " + path.string() + " must start with \"" + kManifestHeader + "\"");
  std::vector<ManifestRecord> records;
  std::unordered_set<std::string> ids;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 4)
      throw BadHeader("manifest " + path.string() + " line " + std::to_string(line_no) + " has " +
                      std::to_string(cols.size()) + " columns, expected 4");
    if (!ids.insert(cols[0]).second)
      throw DuplicateId("duplicate id \"" + cols[0] + "\" in " + path.string());
    ManifestRecord rec;
    rec.id = cols[0];
    rec.feature_path = cols[1];
    try {
      rec.n_frames = std::stoi(cols[2]);
    } catch (const std::exception&) {
      throw BadHeader("manifest " + path.string() + " line " + std::to_string(line_no) +
                      ": bad n_frames \"" + cols[2] + "\"");
    }
    rec.translation = cols[3];
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << "\n";
  for (const ManifestRecord& r : records)
    out << r.id << "\t" << r.feature_path << "\t" << r.n_frames << "\t" << r.translation << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// SLTF feature files

namespace {

void write_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw TruncatedFile("short read of " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_features(const std::filesystem::path& path, const TensorData<float>& features) {
  if (features.rank() != 2)
    throw ShapeMismatch("feature matrix must be [T,D], got " + shape_str(features.shape));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write features " + path.string());
  out.write("SLTF", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<uint32_t>(features.dim(0)));
  write_u32(out, static_cast<uint32_t>(features.dim(1)));
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(features.ptr()),
            static_cast<std::streamsize>(features.numel() * 4));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::pair<uint32_t, uint32_t> read_sltf_header(std::istream& in, const std::string& name) {
  char magic[4];
  if (!in.read(magic, 4)) throw TruncatedFile("short read of magic in " + name);
  if (std::memcmp(magic, "SLTF", 4) != 0) throw BadMagic("not an SLTF file: " + name);
  uint32_t version = read_u32(in, "version in " + name);
  if (version != 1) throw BadHeader("unsupported SLTF version " + std::to_string(version) + " in " + name);
  uint32_t t = read_u32(in, "frame count in " + name);
  uint32_t d = read_u32(in, "feature dim in " + name);
  return {t, d};
}

}  // namespace

TensorData<float> read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open features " + path.string());
  auto [t, d] = read_sltf_header(in, path.string());
  TensorData<float> out(Shape{static_cast<int>(t), static_cast<int>(d)});
  if (!in.read(reinterpret_cast<char*>(out.ptr()), static_cast<std::streamsize>(out.numel() * 4)))
    throw TruncatedFile("payload shorter than " + std::to_string(t) + "x" + std::to_string(d) + " in " +
                        path.string());
  if (!all_finite(out)) throw NonFiniteValue("non-finite feature value in " + path.string());
  return out;
}

std::pair<int, int> read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open features " + path.string());
  auto [t, d] = read_sltf_header(in, path.string());
  return {static_cast<int>(t), static_cast<int>(d)};
}

TensorData<float> features_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<float> values;
  int cols = -1;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<float> row;
    double v;
    while (ls >> v) row.push_back(static_cast<float>(v));
    if (row.empty()) continue;
    if (cols < 0)
      cols = static_cast<int>(row.size());
    else if (static_cast<int>(row.size()) != cols)
      throw BadHeader("text matrix row " + std::to_string(rows + 1) + " has " +
                      std::to_string(row.size()) + " values, expected " + std::to_string(cols));
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw EmptyDataset("text matrix has no rows");
  return TensorData<float>(Shape{rows, cols}, std::move(values));
}

std::filesystem::path resolve_feature_path(const std::filesystem::path& manifest_path,
                                           const std::string& feature_path) {
  std::filesystem::path p(feature_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<Batch> make_batches(const std::vector<ManifestRecord>& records,
                                const std::filesystem::path& manifest_path, const TokenizerModel& tokenizer,
                                int batch_size, uint64_t seed, int epoch, int max_source_positions) {
  if (records.empty()) throw EmptyDataset("no records to batch");
  std::vector<size_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(hash_u64(seed, 0x62617463u /*"batc"*/, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);

  // Sort by source length within shuffled chunks to limit padding.
  size_t chunk = static_cast<size_t>(batch_size) * 20;
  for (size_t begin = 0; begin < order.size(); begin += chunk) {
    size_t end = std::min(order.size(), begin + chunk);
    std::stable_sort(order.begin() + static_cast<int64_t>(begin), order.begin() + static_cast<int64_t>(end),
                     [&](size_t a, size_t b) { return records[a].n_frames < records[b].n_frames; });
  }

  std::vector<Batch> batches;
  for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), begin + static_cast<size_t>(batch_size));
    int b = static_cast<int>(end - begin);
    Batch batch;
    batch.batch = b;

    std::vector<TensorData<float>> feats;
    std::vector<std::vector<int>> token_rows;
    int t_max = 1, u_max = 2, d = -1;
    for (size_t i = begin; i < end; ++i) {
      const ManifestRecord& rec = records[order[i]];
      TensorData<float> f = read_features(resolve_feature_path(manifest_path, rec.feature_path));
      if (f.dim(0) != rec.n_frames)
        throw BadHeader("manifest n_frames " + std::to_string(rec.n_frames) + " != file frames " +
                        std::to_string(f.dim(0)) + " for id " + rec.id);
      if (f.dim(0) > max_source_positions) {
        // Long clips are truncated; the model cannot attend beyond its table.
        TensorData<float> cut(Shape{max_source_positions, f.dim(1)});
        std::copy_n(f.ptr(), cut.numel(), cut.ptr());
        f = std::move(cut);
      }
      if (d < 0) d = f.dim(1);
      if (f.dim(1) != d)
        throw FeatureDimMismatch("feature dim " + std::to_string(f.dim(1)) + " != " + std::to_string(d) +
                                 " for id " + rec.id);
      t_max = std::max(t_max, f.dim(0));

      std::vector<int> tokens;
      tokens.push_back(kBosId);
      for (int id : encode(tokenizer, lowercase(rec.translation))) tokens.push_back(id);
      tokens.push_back(kEosId);
      u_max = std::max(u_max, static_cast<int>(tokens.size()));
      feats.push_back(std::move(f));
      token_rows.push_back(std::move(tokens));
    }

    batch.src = TensorData<float>(Shape{b, t_max, d});
    batch.max_target_len = u_max;
    batch.targets.assign(static_cast<size_t>(b) * u_max, kPadId);
    for (int i = 0; i < b; ++i) {
      const TensorData<float>& f = feats[static_cast<size_t>(i)];
      std::copy_n(f.ptr(), f.numel(), batch.src.ptr() + static_cast<int64_t>(i) * t_max * d);
      batch.src_lens.push_back(f.dim(0));
      const std::vector<int>& toks = token_rows[static_cast<size_t>(i)];
      std::copy(toks.begin(), toks.end(), batch.targets.begin() + static_cast<int64_t>(i) * u_max);
      batch.target_lens.push_back(static_cast<int>(toks.size()));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticSpec::validate() const {
  if (n_symbols <= 0 || frames_per_symbol <= 0 || feature_dim <= 0 || len_lo <= 0 || n_train <= 0 ||
      n_val <= 0 || n_test <= 0)
    throw InvalidConfig("synthetic spec fields must be positive");
  if (len_lo > len_hi) throw InvalidConfig("synthetic len_lo > len_hi");
  if (noise_sigma < 0) throw InvalidConfig("synthetic noise_sigma must be >= 0");
}

TensorData<float> synthetic_prototype(const SyntheticSpec& spec, int symbol) {
  Rng rng(hash_u64(spec.seed, 0x70726f74u /*"prot"*/, static_cast<uint64_t>(symbol)));
  TensorData<float> proto(Shape{spec.frames_per_symbol, spec.feature_dim});
  for (float& v : proto.data) v = static_cast<float>(rng.gauss());
  return proto;
}

SynthSummary generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "features").string());

  std::vector<TensorData<float>> protos;
  for (int k = 0; k < spec.n_symbols; ++k) protos.push_back(synthetic_prototype(spec, k));

  SynthSummary summary;
  summary.n_symbols = spec.n_symbols;
  const struct {
    const char* split;
    int count;
    uint64_t tag;
  } splits[] = {{"train", spec.n_train, 1}, {"val", spec.n_val, 2}, {"test", spec.n_test, 3}};

  for (const auto& s : splits) {
    std::vector<ManifestRecord> records;
    for (int i = 0; i < s.count; ++i) {
      Rng rng(hash_u64(spec.seed, 0x73656e74u /*"sent"*/, s.tag, static_cast<uint64_t>(i)));
      int len = spec.len_lo + static_cast<int>(rng.below(static_cast<uint64_t>(spec.len_hi - spec.len_lo + 1)));
      std::vector<int> symbols;
      std::string translation;
      for (int j = 0; j < len; ++j) {
        int k = static_cast<int>(rng.below(static_cast<uint64_t>(spec.n_symbols)));
        symbols.push_back(k);
        if (j) translation.push_back(' ');
        // Sentence-initial capitalization, as in natural references; the
        // postprocessing chain restores it, keeping perfect translations at
        // BLEU 100 under case-sensitive scoring.
        translation += (j == 0 ? "W" : "w") + std::to_string(k);
      }

      int t = len * spec.frames_per_symbol;
      TensorData<float> feats(Shape{t, spec.feature_dim});
      Rng noise(hash_u64(spec.seed, 0x6e6f6973u /*"nois"*/, s.tag, static_cast<uint64_t>(i)));
      for (int j = 0; j < len; ++j) {
        const TensorData<float>& proto = protos[static_cast<size_t>(symbols[static_cast<size_t>(j)])];
        std::copy_n(proto.ptr(), proto.numel(),
                    feats.ptr() + static_cast<int64_t>(j) * proto.numel());
      }
      if (spec.noise_sigma > 0)
        for (float& v : feats.data) v += static_cast<float>(spec.noise_sigma * noise.gauss());

      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%06d", s.split, i);
      std::string rel = std::string("features/") + idbuf + ".sltf";
      write_features(out_dir / rel, feats);
      records.push_back(ManifestRecord{idbuf, rel, t, translation});
      summary.total_frames += t;
    }
    write_manifest(out_dir / (std::string(s.split) + ".tsv"), records);
    if (std::string(s.split) == "train") summary.n_train = s.count;
    if (std::string(s.split) == "val") summary.n_val = s.count;
    if (std::string(s.split) == "test") summary.n_test = s.count;
  }
  return summary;
}

}  // namespace slt
