#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "slt/autodiff.hpp"
#include "slt/data.hpp"
#include "slt/errors.hpp"
#include "slt/model.hpp"
#include "slt/rng.hpp"
#include "slt/textproc.hpp"
#include "slt/training.hpp"

using namespace slt;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "slt_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("manifest parsing") {
  fs::path dir = fresh_dir("manifest");
  {
    std::ofstream out(dir / "header_only.tsv");
    out << "id\tfeatures\tn_frames\ttranslation\n";
  }
  CHECK(parse_manifest(dir / "header_only.tsv").empty());

  {
    std::ofstream out(dir / "dup.tsv");
    out << "id\tfeatures\tn_frames\ttranslation\n";
    out << "x\tf1.sltf\t3\thello there\n";
    out << "x\tf2.sltf\t4\tagain\n";
  }
  CHECK_THROWS_AS(parse_manifest(dir / "dup.tsv"), DuplicateId);

  {
    std::ofstream out(dir / "bad.tsv");
    out << "id\tfeat\tframes\ttext\n";
  }
  CHECK_THROWS_AS(parse_manifest(dir / "bad.tsv"), BadHeader);
  CHECK_THROWS_AS(parse_manifest(dir / "missing.tsv"), MissingFile);

  // write -> parse round trip
  std::vector<ManifestRecord> records = {{"a", "features/a.sltf", 7, "first sentence"},
                                         {"b", "features/b.sltf", 2, "second one with\ttab? no"}};
  records[1].translation = "second one";
  write_manifest(dir / "rt.tsv", records);
  std::vector<ManifestRecord> back = parse_manifest(dir / "rt.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].feature_path == "features/a.sltf");
  CHECK(back[0].n_frames == 7);
  CHECK(back[0].translation == "first sentence");
  CHECK(back[1].id == "b");
}

TEST_CASE("SLTF round trip and error paths") {
  fs::path dir = fresh_dir("sltf");
  Rng rng(4);
  TensorData<float> feats(Shape{5, 3});
  for (float& v : feats.data) v = static_cast<float>(rng.gauss());

  write_features(dir / "a.sltf", feats);
  TensorData<float> back = read_features(dir / "a.sltf");
  CHECK(back.shape == feats.shape);
  CHECK(back.data == feats.data);  // bit-identical

  auto [t, d] = read_feature_header(dir / "a.sltf");
  CHECK(t == 5);
  CHECK(d == 3);

  {
    std::ofstream out(dir / "bad_magic.sltf", std::ios::binary);
    out << "XXXX";
    uint32_t rest[3] = {1, 2, 2};
    out.write(reinterpret_cast<char*>(rest), 12);
  }
  CHECK_THROWS_AS(read_features(dir / "bad_magic.sltf"), BadMagic);

  {
    // header promises 4x4 floats but carries fewer
    std::ofstream out(dir / "short.sltf", std::ios::binary);
    out << "SLTF";
    uint32_t header[3] = {1, 4, 4};
    out.write(reinterpret_cast<char*>(header), 12);
    float payload[5] = {1, 2, 3, 4, 5};
    out.write(reinterpret_cast<char*>(payload), 20);
  }
  CHECK_THROWS_AS(read_features(dir / "short.sltf"), TruncatedFile);

  {
    TensorData<float> nan_feats(Shape{1, 2});
    nan_feats.data[1] = std::numeric_limits<float>::quiet_NaN();
    std::ofstream out(dir / "nan.sltf", std::ios::binary);
    out << "SLTF";
    uint32_t header[3] = {1, 1, 2};
    out.write(reinterpret_cast<char*>(header), 12);
    out.write(reinterpret_cast<const char*>(nan_feats.ptr()), 8);
  }
  CHECK_THROWS_AS(read_features(dir / "nan.sltf"), NonFiniteValue);
}

TEST_CASE("text matrix converter") {
  TensorData<float> m = features_from_text("1 2 3\n4 5 6\n");
  CHECK(m.shape == Shape{2, 3});
  CHECK(m.data == std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(features_from_text("1 2\n3\n"), BadHeader);
  CHECK_THROWS_AS(features_from_text(""), EmptyDataset);
}

namespace {

// A small on-disk dataset of random features plus word translations.
struct DiskDataset {
  fs::path manifest;
  std::vector<ManifestRecord> records;
  TokenizerModel tokenizer;
};

DiskDataset make_disk_dataset(const fs::path& dir, int n, int max_frames, uint64_t seed) {
  DiskDataset ds;
  fs::create_directories(dir / "features");
  Rng rng(seed);
  std::vector<std::string> sentences;
  const std::vector<std::string> words = {"red", "green", "blue", "dark", "light"};
  for (int i = 0; i < n; ++i) {
    int frames = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_frames)));
    TensorData<float> f(Shape{frames, 3});
    for (float& v : f.data) v = static_cast<float>(rng.gauss());
    std::string rel = "features/ex" + std::to_string(i) + ".sltf";
    write_features(dir / rel, f);
    std::string text;
    int len = 1 + static_cast<int>(rng.below(3));
    for (int j = 0; j < len; ++j)
      text += (j ? " " : "") + words[static_cast<size_t>(rng.below(words.size()))];
    ds.records.push_back({"ex" + std::to_string(i), rel, frames, text});
    sentences.push_back(text);
  }
  ds.manifest = dir / "train.tsv";
  write_manifest(ds.manifest, ds.records);
  for (int vocab : {30, 26, 22, 18, 14}) {
    try {
      ds.tokenizer = train_tokenizer(sentences, vocab);
      break;
    } catch (const CorpusTooSmall&) {
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("batching partitions the dataset exactly") {
  fs::path dir = fresh_dir("batching");
  DiskDataset ds = make_disk_dataset(dir, 23, 6, 9);

  std::vector<Batch> batches = make_batches(ds.records, ds.manifest, ds.tokenizer, 4, 123, 1, 64);
  CHECK(batches.size() == 6);  // ceil(23/4)
  int total = 0;
  std::multiset<std::string> seen, expected;
  for (const Batch& b : batches) {
    total += b.batch;
    CHECK(static_cast<int>(b.src_lens.size()) == b.batch);
    for (int i = 0; i < b.batch; ++i) {
      std::string key = std::to_string(b.src_lens[static_cast<size_t>(i)]) + "|";
      for (int u = 0; u < b.max_target_len; ++u)
        key += std::to_string(b.targets[static_cast<size_t>(i) * b.max_target_len + u]) + ",";
      // strip trailing pads so the key is padding-independent
      while (key.size() >= 2 && key.substr(key.size() - 2) == "0,") key.resize(key.size() - 2);
      seen.insert(key);
    }
  }
  CHECK(total == 23);
  for (const ManifestRecord& rec : ds.records) {
    std::string key = std::to_string(rec.n_frames) + "|1,";
    for (int id : encode(ds.tokenizer, lowercase(rec.translation))) key += std::to_string(id) + ",";
    key += "2,";
    expected.insert(key);
  }
  CHECK(seen == expected);

  // single record -> single batch of one
  std::vector<ManifestRecord> one = {ds.records[0]};
  std::vector<Batch> single = make_batches(one, ds.manifest, ds.tokenizer, 4, 1, 1, 64);
  REQUIRE(single.size() == 1);
  CHECK(single[0].batch == 1);

  CHECK_THROWS_AS(make_batches({}, ds.manifest, ds.tokenizer, 4, 1, 1, 64), EmptyDataset);
}

TEST_CASE("different epochs reorder but never change the multiset") {
  fs::path dir = fresh_dir("epochs");
  DiskDataset ds = make_disk_dataset(dir, 17, 5, 21);
  // identify examples by their first feature value; length sorting leaves
  // ties in shuffled order, so the id sequence changes across epochs
  auto gather = [&](int epoch) {
    std::multiset<float> ids;
    std::vector<float> order;
    for (const Batch& b : make_batches(ds.records, ds.manifest, ds.tokenizer, 4, 7, epoch, 64))
      for (int i = 0; i < b.batch; ++i) {
        float v = b.src.data[static_cast<size_t>(i) * static_cast<size_t>(b.src.dim(1) * b.src.dim(2))];
        ids.insert(v);
        order.push_back(v);
      }
    return std::make_pair(ids, order);
  };
  auto [ids1, order1] = gather(1);
  auto [ids2, order2] = gather(2);
  CHECK(ids1 == ids2);
  CHECK(order1 != order2);  // shuffle differs across epochs

  // a different bucket seed also only reorders
  std::multiset<float> ids3;
  std::vector<float> order3;
  for (const Batch& b : make_batches(ds.records, ds.manifest, ds.tokenizer, 4, 99, 1, 64))
    for (int i = 0; i < b.batch; ++i) {
      float v = b.src.data[static_cast<size_t>(i) * static_cast<size_t>(b.src.dim(1) * b.src.dim(2))];
      ids3.insert(v);
      order3.push_back(v);
    }
  CHECK(ids3 == ids1);
  CHECK(order3 != order1);
}

TEST_CASE("long sources are truncated to max positions") {
  fs::path dir = fresh_dir("trunc");
  DiskDataset ds = make_disk_dataset(dir, 4, 10, 33);
  std::vector<Batch> batches = make_batches(ds.records, ds.manifest, ds.tokenizer, 4, 1, 1, 3);
  for (const Batch& b : batches) {
    CHECK(b.src.dim(1) <= 3);
    for (int l : b.src_lens) CHECK(l <= 3);
  }
}

TEST_CASE("batched loss equals the sum of unbatched losses") {
  fs::path dir = fresh_dir("pad_loss");
  DiskDataset ds = make_disk_dataset(dir, 5, 6, 55);
  std::vector<Batch> batches = make_batches(ds.records, ds.manifest, ds.tokenizer, 5, 3, 1, 64);
  REQUIRE(batches.size() == 1);
  const Batch& batch = batches[0];

  ModelConfig cfg;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.embed_dim = 8;
  cfg.ffn_dim = 8;
  cfg.attention_heads = 2;
  cfg.feature_dim = 3;
  cfg.vocab_size = ds.tokenizer.vocab_size;
  cfg.dropout = 0.0;
  ModelParams<float> params = build_model(cfg, 5);
  DropoutPlan plan;

  auto loss_of = [&](const Batch& b) {
    Graph<float> g;
    ParamVars<float> pv = register_params(g, params, false);
    Var<float> mem = encode_features(g, pv, cfg, b.src, b.src_lens, plan);
    int prev_len = b.max_target_len - 1;
    std::vector<int> prev(static_cast<size_t>(b.batch) * prev_len), labels(prev.size());
    for (int i = 0; i < b.batch; ++i)
      for (int u = 0; u < prev_len; ++u) {
        prev[static_cast<size_t>(i) * prev_len + u] = b.targets[static_cast<size_t>(i) * b.max_target_len + u];
        labels[static_cast<size_t>(i) * prev_len + u] =
            b.targets[static_cast<size_t>(i) * b.max_target_len + u + 1];
      }
    Var<float> logits = decode_logits(g, pv, cfg, mem, b.src_lens, prev, b.batch, prev_len, plan);
    auto ids = std::make_shared<std::vector<int>>(labels);
    int64_t count = 0;
    for (int t : labels)
      if (t != kPadId) ++count;
    return std::make_pair(
        static_cast<double>(label_smoothed_ce_sum(logits, ids, 0.1, kPadId).value().data[0]), count);
  };

  auto [batch_sum, batch_count] = loss_of(batch);

  // one batch per sentence, no cross-sentence padding
  double single_sum = 0;
  int64_t single_count = 0;
  for (int i = 0; i < batch.batch; ++i) {
    Batch one;
    one.batch = 1;
    int t = batch.src_lens[static_cast<size_t>(i)];
    int d = batch.src.dim(2);
    one.src = TensorData<float>(Shape{1, t, d});
    std::copy_n(batch.src.ptr() + static_cast<int64_t>(i) * batch.src.dim(1) * d,
                static_cast<int64_t>(t) * d, one.src.ptr());
    one.src_lens = {t};
    int ulen = batch.target_lens[static_cast<size_t>(i)];
    one.max_target_len = ulen;
    one.targets.assign(batch.targets.begin() + static_cast<int64_t>(i) * batch.max_target_len,
                       batch.targets.begin() + static_cast<int64_t>(i) * batch.max_target_len + ulen);
    one.target_lens = {ulen};
    auto [s, c] = loss_of(one);
    single_sum += s;
    single_count += c;
  }
  CHECK(batch_count == single_count);
  CHECK(batch_sum == doctest::Approx(single_sum).epsilon(1e-5));
}

TEST_CASE("synthetic generation determinism and structure") {
  fs::path dir_a = fresh_dir("synth_a");
  fs::path dir_b = fresh_dir("synth_b");
  SyntheticSpec spec;
  spec.n_symbols = 6;
  spec.frames_per_symbol = 2;
  spec.feature_dim = 5;
  spec.noise_sigma = 0.0;
  spec.len_lo = 2;
  spec.len_hi = 4;
  spec.n_train = 12;
  spec.n_val = 4;
  spec.n_test = 4;
  spec.seed = 77;

  SynthSummary sa = generate_synthetic(spec, dir_a);
  SynthSummary sb = generate_synthetic(spec, dir_b);
  CHECK(sa.n_train == 12);
  CHECK(sb.n_train == sa.n_train);
  CHECK(sa.n_symbols == 6);

  std::vector<ManifestRecord> train = parse_manifest(dir_a / "train.tsv");
  REQUIRE(static_cast<int>(train.size()) == spec.n_train);
  int64_t frames = 0;
  for (const ManifestRecord& rec : train) {
    int words = 1 + static_cast<int>(std::count(rec.translation.begin(), rec.translation.end(), ' '));
    CHECK(rec.n_frames == words * spec.frames_per_symbol);
    frames += rec.n_frames;
    // identical bytes across the two runs
    CHECK(slurp(dir_a / rec.feature_path) == slurp(dir_b / rec.feature_path));
  }

  // sigma=0: repeating symbols give byte-identical prototype blocks
  for (const ManifestRecord& rec : train) {
    TensorData<float> f = read_features(dir_a / rec.feature_path);
    std::vector<std::string> words = split_whitespace(rec.translation);
    for (size_t j = 0; j < words.size(); ++j) {
      int k = std::stoi(words[j].substr(1));
      TensorData<float> proto = synthetic_prototype(spec, k);
      for (int64_t e = 0; e < proto.numel(); ++e)
        CHECK(f.data[static_cast<size_t>(j) * static_cast<size_t>(proto.numel()) + static_cast<size_t>(e)] ==
              proto.data[static_cast<size_t>(e)]);
    }
  }

  // splits are disjoint in example identity
  std::set<std::string> ids;
  for (const char* split : {"train.tsv", "val.tsv", "test.tsv"})
    for (const ManifestRecord& rec : parse_manifest(dir_a / split)) CHECK(ids.insert(rec.id).second);
}

TEST_CASE("nearest-prototype classification recovers every synthetic sentence") {
  fs::path dir = fresh_dir("synth_oracle");
  SyntheticSpec spec;
  spec.n_symbols = 8;
  spec.frames_per_symbol = 3;
  spec.feature_dim = 16;
  spec.noise_sigma = 0.1;
  spec.len_lo = 2;
  spec.len_hi = 5;
  spec.n_train = 20;
  spec.n_val = 8;
  spec.n_test = 8;
  spec.seed = 99;
  generate_synthetic(spec, dir);

  std::vector<TensorData<float>> protos;
  for (int k = 0; k < spec.n_symbols; ++k) protos.push_back(synthetic_prototype(spec, k));

  for (const char* split : {"train.tsv", "val.tsv", "test.tsv"}) {
    for (const ManifestRecord& rec : parse_manifest(dir / split)) {
      TensorData<float> f = read_features(dir / rec.feature_path);
      int blocks = f.dim(0) / spec.frames_per_symbol;
      std::string decoded;
      for (int j = 0; j < blocks; ++j) {
        int best = -1;
        double best_dist = 1e30;
        for (int k = 0; k < spec.n_symbols; ++k) {
          double dist = 0;
          for (int64_t e = 0; e < protos[static_cast<size_t>(k)].numel(); ++e) {
            double diff = f.data[static_cast<size_t>(j) * static_cast<size_t>(protos[0].numel()) +
                                 static_cast<size_t>(e)] -
                          protos[static_cast<size_t>(k)].data[static_cast<size_t>(e)];
            dist += diff * diff;
          }
          if (dist < best_dist) {
            best_dist = dist;
            best = k;
          }
        }
        decoded += (j ? " " : "") + ("w" + std::to_string(best));
      }
      CHECK(decoded == lowercase(rec.translation));
    }
  }
}
