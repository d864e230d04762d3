#pragma once

// End-to-end orchestration: synthetic dataset generation, recognizer
// pretraining, correction-model training on frozen backbone features,
// evaluation against the decode-then-compare baseline, single-sample
// inference, attention dumps, and ablations. Everything is deterministic
// given (config, seed).

#include <ostream>
#include <unordered_map>

#include "cloze/augmentation.hpp"
#include "cloze/checkpoint.hpp"
#include "cloze/config.hpp"
#include "cloze/dataset.hpp"
#include "cloze/metrics.hpp"

namespace cloze {

namespace fs = std::filesystem;

template <typename T>
void fisher_yates(std::vector<T>& v, Rng& rng) {
  for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[size_t(i)], v[size_t(rand_int(rng, 0, i))]);
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GenSummary {
  int train_pos = 0, train_neg = 0, dev = 0, test_pos = 0, test_neg = 0;
  int max_width = 0;
  AugmentStats augment;
};

namespace detail {

inline int pick_shard(const std::vector<ShardSpec>& shards, Rng& rng) {
  double total = 0;
  for (const auto& s : shards) total += s.weight;
  double x = rand_uniform(rng, 0.0, total);
  double acc = 0;
  for (size_t i = 0; i < shards.size(); ++i) {
    acc += shards[i].weight;
    if (x < acc) return int(i);
  }
  return int(shards.size()) - 1;
}

inline std::vector<int> random_text(const Vocabulary& vocab, int len, Rng& rng) {
  std::vector<int> ids(size_t(len), 0);
  for (auto& id : ids) id = rand_int(rng, 0, vocab.char_count() - 1);
  return ids;
}

}  // namespace detail

inline GenSummary gen_dataset(const RunConfig& cfg, const fs::path& out_dir,
                              std::ostream* log = nullptr) {
  cfg.validate();
  GenSummary sum;
  sum.max_width = cfg.resolved_max_width();

  Vocabulary vocab = Vocabulary::synthetic(cfg.vocab_size);
  ConfusionSet confusion = ConfusionSet::paired(vocab);
  GlyphFont font(vocab, cfg.glyphs);

  std::vector<GlyphGenConfig> shard_glyphs;
  for (const auto& s : cfg.shards) {
    GlyphGenConfig g = cfg.glyphs;
    g.ligature_prob = std::clamp(float(cfg.ligature_prob) * s.ligature_mult, 0.0f, 0.95f);
    g.confusion_glyph_prob = float(cfg.confusion_glyph_prob);
    g.ink_max = std::clamp(cfg.glyphs.ink_max * s.ink_mult, 0.0f, 0.9f);
    shard_glyphs.push_back(g);
  }

  fs::create_directories(out_dir / "images");
  vocab.save(out_dir / "vocab.txt");
  confusion.save(out_dir / "confusion.tsv", vocab);

  auto render_padded = [&](const std::vector<int>& ids, int shard, Rng& rng) {
    LineRender lr = render_line(ids, font, GlyphStyle{}, shard_glyphs[size_t(shard)], &confusion, rng);
    return pad_to_width(lr.image, sum.max_width, cfg.glyphs.block_width);
  };

  auto make_positive = [&](const std::string& id, const std::vector<int>& ids, int shard,
                           const GlyphImage& img) {
    Sample s;
    s.id = id;
    s.image = "images/" + id + ".pgm";
    s.content = decode_text(ids, vocab);
    s.answer = s.content;
    s.labels = labels_to_names(LabelSeq(ids.size() + 1, EditLabel::O));
    s.y = 0;
    s.valid_width = img.valid_width;
    s.shard = cfg.shards[size_t(shard)].name;
    return s;
  };

  char idbuf[64];

  // train: clean lines plus answer-corrupted negatives sharing the image
  std::vector<Sample> train;
  for (int i = 0; i < cfg.train_lines; ++i) {
    Rng rng = make_rng(cfg.seed, "train-line", uint64_t(i));
    int shard = detail::pick_shard(cfg.shards, rng);
    auto ids = detail::random_text(vocab, rand_int(rng, cfg.answer_min_len, cfg.answer_max_len), rng);
    GlyphImage img = render_padded(ids, shard, rng);
    std::snprintf(idbuf, sizeof idbuf, "train-%06d", i);
    Sample pos = make_positive(idbuf, ids, shard, img);
    write_pgm(img, out_dir / pos.image);
    train.push_back(pos);
    ++sum.train_pos;

    Rng aug_rng = make_rng(cfg.seed, "augment", uint64_t(i));
    AugmentConfig acfg = cfg.augment;
    acfg.max_answer_len = cfg.model.max_text_len - 1;
    auto negs = make_negatives(ids, ids, vocab, confusion, acfg, aug_rng, &sum.augment);
    for (size_t k = 0; k < negs.size(); ++k) {
      Sample neg = pos;
      neg.id = pos.id + "-n" + std::to_string(k);
      neg.answer = decode_text(negs[k].answer, vocab);
      neg.labels = labels_to_names(negs[k].alignment.labels);
      neg.y = 1;
      train.push_back(neg);
      ++sum.train_neg;
    }
  }
  save_manifest(out_dir / "manifest-train.jsonl", train);

  // dev: clean lines, used to track recognizer error rate
  std::vector<Sample> dev;
  for (int i = 0; i < cfg.dev_lines; ++i) {
    Rng rng = make_rng(cfg.seed, "dev-line", uint64_t(i));
    int shard = detail::pick_shard(cfg.shards, rng);
    auto ids = detail::random_text(vocab, rand_int(rng, cfg.answer_min_len, cfg.answer_max_len), rng);
    GlyphImage img = render_padded(ids, shard, rng);
    std::snprintf(idbuf, sizeof idbuf, "dev-%06d", i);
    Sample s = make_positive(idbuf, ids, shard, img);
    write_pgm(img, out_dir / s.image);
    dev.push_back(s);
    ++sum.dev;
  }
  save_manifest(out_dir / "manifest-dev.jsonl", dev);

  // test: organic errors — the CONTENT deviates from the answer and is
  // rendered to its own image, so nothing is shared with training images
  int n_err = int(std::lround(double(cfg.test_lines) * cfg.test_error_frac));
  std::vector<int> err_flag(size_t(cfg.test_lines), 0);
  for (int i = 0; i < n_err && i < cfg.test_lines; ++i) err_flag[size_t(i)] = 1;
  {
    Rng rng = make_rng(cfg.seed, "test-flags");
    fisher_yates(err_flag, rng);
  }
  std::vector<Sample> test;
  for (int i = 0; i < cfg.test_lines; ++i) {
    Rng rng = make_rng(cfg.seed, "test-line", uint64_t(i));
    int shard = detail::pick_shard(cfg.shards, rng);
    auto answer = detail::random_text(vocab, rand_int(rng, cfg.answer_min_len, cfg.answer_max_len), rng);
    std::vector<int> content = answer;
    if (err_flag[size_t(i)]) {
      int family = rand_int(rng, 0, 2);
      if (family == 0) {
        int pos = rand_int(rng, 0, int(content.size()) - 1);
        content[size_t(pos)] = sample_substitute(content[size_t(pos)], confusion, vocab, rng);
      } else if (family == 1 && content.size() > 1) {
        content.erase(content.begin() + rand_int(rng, 0, int(content.size()) - 1));
      } else {
        int slot = rand_int(rng, 0, int(content.size()));
        content.insert(content.begin() + slot, rand_int(rng, 0, vocab.char_count() - 1));
      }
    }
    GlyphImage img = render_padded(content, shard, rng);
    std::snprintf(idbuf, sizeof idbuf, "test-%06d", i);
    Sample s;
    s.id = idbuf;
    s.image = "images/" + s.id + ".pgm";
    s.content = decode_text(content, vocab);
    s.answer = decode_text(answer, vocab);
    LabelSeq labels = derive_labels(content, answer);
    s.labels = labels_to_names(labels);
    s.y = reduce_binary(labels);
    s.valid_width = img.valid_width;
    s.shard = cfg.shards[size_t(shard)].name;
    write_pgm(img, out_dir / s.image);
    test.push_back(s);
    if (s.y)
      ++sum.test_neg;
    else
      ++sum.test_pos;
  }
  save_manifest(out_dir / "manifest-test.jsonl", test);

  nlohmann::json meta{{"max_width", sum.max_width},
                      {"counts",
                       {{"train_pos", sum.train_pos},
                        {"train_neg", sum.train_neg},
                        {"dev", sum.dev},
                        {"test_pos", sum.test_pos},
                        {"test_neg", sum.test_neg}}},
                      {"config", cfg.to_json()}};
  write_text_file(out_dir / "meta.json", meta.dump(2) + "\n");

  if (log)
    *log << "dataset: " << sum.train_pos << "+" << sum.train_neg << " train, " << sum.dev
         << " dev, " << sum.test_pos << "+" << sum.test_neg << " test, width " << sum.max_width
         << "\n";
  return sum;
}

// ---------------------------------------------------------------------------
// Loading

struct DataEnv {
  fs::path dir;
  Vocabulary vocab;
  ConfusionSet confusion;
  int max_width = 0;
  nlohmann::json meta;
};

inline DataEnv load_data_env(const fs::path& dir) {
  DataEnv env;
  env.dir = dir;
  env.vocab = Vocabulary::load(dir / "vocab.txt");
  env.confusion = ConfusionSet::load(dir / "confusion.tsv", env.vocab);
  env.meta = nlohmann::json::parse(read_text_file(dir / "meta.json"), nullptr, false);
  if (env.meta.is_discarded()) throw IoError("meta.json is not valid JSON");
  env.max_width = env.meta.at("max_width").get<int>();
  return env;
}

struct PreppedSample {
  Sample meta;
  std::vector<int> content_ids, answer_ids;
  LabelSeq labels;
  int valid_blocks = 0;
};

inline std::vector<PreppedSample> prep_split(const DataEnv& env, const std::string& split,
                                             int block_width) {
  auto samples = load_manifest(env.dir / ("manifest-" + split + ".jsonl"));
  std::vector<PreppedSample> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    PreppedSample p;
    p.content_ids = encode_text(s.content, env.vocab);
    p.answer_ids = encode_text(s.answer, env.vocab);
    p.labels = names_to_labels(s.labels);
    p.valid_blocks = valid_block_count(s.valid_width, block_width);
    p.meta = std::move(s);
    out.push_back(std::move(p));
  }
  return out;
}

class ImageCache {
 public:
  explicit ImageCache(fs::path root) : root_(std::move(root)) {}

  const GlyphImage& get(const Sample& s) {
    auto it = map_.find(s.image);
    if (it == map_.end()) {
      GlyphImage img = read_pgm(root_ / s.image);
      img.valid_width = s.valid_width;
      it = map_.emplace(s.image, std::move(img)).first;
    }
    return it->second;
  }

 private:
  fs::path root_;
  std::unordered_map<std::string, GlyphImage> map_;
};

// Adjusts the configured width to what the dataset was generated with, so
// checkpoints and models built from (config, dataset) agree on geometry.
inline RunConfig resolve_config(const RunConfig& cfg, const DataEnv& env) {
  RunConfig rc = cfg;
  rc.max_width = env.max_width;
  return rc;
}

// ---------------------------------------------------------------------------
// Stage 1: recognizer pretraining (CTC)

struct TrainResult {
  double final_train_loss = 0;
  double final_dev_metric = 0;  // CER for the recognizer, loss for correction
  int epochs = 0;
};

inline TrainResult pretrain_ocr(const RunConfig& cfg0, const fs::path& data_dir,
                                const fs::path& ckpt_out, const fs::path& log_jsonl = {},
                                std::ostream* log = nullptr) {
  DataEnv env = load_data_env(data_dir);
  RunConfig cfg = resolve_config(cfg0, env);
  cfg.validate();
  auto train_all = prep_split(env, "train", cfg.glyphs.block_width);
  std::vector<PreppedSample> train;
  for (auto& p : train_all)
    if (p.meta.y == 0) train.push_back(std::move(p));  // one per unique image
  auto dev = prep_split(env, "dev", cfg.glyphs.block_width);
  if (train.empty()) throw IoError("no clean training lines in " + data_dir.string());
  ImageCache images(env.dir);

  OcrModel model(cfg.backbone, env.vocab, cfg.glyphs.img_height, cfg.glyphs.block_width, cfg.seed);
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  int n = int(train.size());
  int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t total_steps = int64_t(cfg.epochs_pretrain) * batches_per_epoch;
  Rng train_rng = make_rng(cfg.seed, "ocr-train");

  std::string log_lines;
  TrainResult res;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    std::vector<int> order(size_t(n), 0);
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
    Rng erng = make_rng(cfg.seed, "ocr-epoch", uint64_t(epoch));
    fisher_yates(order, erng);

    double epoch_loss = 0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      int lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      model.store().zero_grad();
      for (int k = lo; k < hi; ++k) {
        const auto& p = train[size_t(order[size_t(k)])];
        Tensor l = model.loss(images.get(p.meta), p.content_ids, true, train_rng);
        backward(scale(l, 1.0f / float(hi - lo)));
        epoch_loss += l.item();
      }
      opt.step(model.store(), cosine_anneal(cfg.lr_pretrain, step, total_steps));
      ++step;
    }
    epoch_loss /= n;

    double cer = 0;
    for (const auto& p : dev) cer += char_error_rate(p.content_ids, model.decode(images.get(p.meta)));
    cer = dev.empty() ? 0.0 : cer / double(dev.size());

    nlohmann::json line{{"epoch", epoch}, {"train_loss", epoch_loss}, {"dev_cer", cer}};
    log_lines += line.dump() + "\n";
    if (log) *log << "pretrain epoch " << epoch << ": loss " << epoch_loss << ", dev cer " << cer
                  << "\n";
    res = {epoch_loss, cer, epoch + 1};
  }

  if (!log_jsonl.empty()) write_text_file(log_jsonl, log_lines);
  CheckpointHeader hdr;
  hdr.kind = "ocr";
  hdr.config_hash = to_hex(cfg.config_hash());
  hdr.geometry = {{"img_height", cfg.glyphs.img_height},
                  {"block_width", cfg.glyphs.block_width},
                  {"max_width", cfg.resolved_max_width()}};
  hdr.rng_state = rng_state_string(train_rng);
  save_checkpoint(ckpt_out, hdr, model.store());
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2: correction model on frozen backbone features

namespace detail {

// Features are computed once per unique image with dropout off: the backbone
// is frozen, so its activations are constants of the optimization.
inline std::unordered_map<std::string, Tensor> cache_features(
    CorrectionModel& model, const std::vector<PreppedSample>& samples, ImageCache& images) {
  std::unordered_map<std::string, Tensor> feats;
  NoGradGuard ng;
  Rng rng = make_rng(0, "feat");
  for (const auto& p : samples)
    if (!feats.count(p.meta.image))
      feats.emplace(p.meta.image, model.backbone_features(images.get(p.meta), false, rng));
  return feats;
}

}  // namespace detail

inline TrainResult train_correction_samples(const RunConfig& cfg, CorrectionModel& model,
                                            const std::vector<PreppedSample>& train,
                                            const std::vector<PreppedSample>& dev,
                                            ImageCache& images, std::string* log_lines_out,
                                            std::ostream* log) {
  if (train.empty()) throw IoError("no training samples");
  model.freeze_backbone();
  auto feats = detail::cache_features(model, train, images);
  auto dev_feats = detail::cache_features(model, dev, images);

  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  int n = int(train.size());
  int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t total_steps = int64_t(cfg.epochs_correct) * batches_per_epoch;
  Rng train_rng = make_rng(cfg.seed, "cor-train");

  TrainResult res;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs_correct; ++epoch) {
    std::vector<int> order(size_t(n), 0);
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
    Rng erng = make_rng(cfg.seed, "cor-epoch", uint64_t(epoch));
    fisher_yates(order, erng);

    double epoch_loss = 0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      int lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      model.store().zero_grad();
      for (int k = lo; k < hi; ++k) {
        const auto& p = train[size_t(order[size_t(k)])];
        Tensor logits = model.logits_from_features(feats.at(p.meta.image), p.valid_blocks,
                                                   p.answer_ids, true, train_rng);
        Tensor l = model.loss(logits, p.labels);
        backward(scale(l, 1.0f / float(hi - lo)));
        epoch_loss += l.item();
      }
      opt.step(model.store(), cosine_anneal(cfg.lr_correct, step, total_steps));
      ++step;
    }
    epoch_loss /= n;

    double dev_loss = 0;
    if (!dev.empty()) {
      NoGradGuard ng;
      Rng drng = make_rng(0, "eval");
      for (const auto& p : dev) {
        Tensor logits = model.logits_from_features(dev_feats.at(p.meta.image), p.valid_blocks,
                                                   p.answer_ids, false, drng);
        dev_loss += model.loss(logits, p.labels).item();
      }
      dev_loss /= double(dev.size());
    }

    if (log_lines_out) {
      nlohmann::json line{{"epoch", epoch}, {"train_loss", epoch_loss}, {"dev_loss", dev_loss}};
      *log_lines_out += line.dump() + "\n";
    }
    if (log) *log << "train epoch " << epoch << ": loss " << epoch_loss << ", dev loss "
                  << dev_loss << "\n";
    res = {epoch_loss, dev_loss, epoch + 1};
  }
  return res;
}

// `ocr_ckpt` empty = keep the randomly initialized (still frozen) backbone.
inline TrainResult train_correction(const RunConfig& cfg0, const fs::path& data_dir,
                                    const fs::path& ocr_ckpt, const fs::path& ckpt_out,
                                    const fs::path& log_jsonl = {}, std::ostream* log = nullptr) {
  DataEnv env = load_data_env(data_dir);
  RunConfig cfg = resolve_config(cfg0, env);
  cfg.validate();
  auto train = prep_split(env, "train", cfg.glyphs.block_width);
  auto dev = prep_split(env, "dev", cfg.glyphs.block_width);
  ImageCache images(env.dir);

  CorrectionModel model(cfg.backbone, cfg.model, env.vocab, cfg.glyphs.img_height,
                        cfg.resolved_max_width(), cfg.glyphs.block_width, cfg.seed);
  if (!ocr_ckpt.empty())
    load_checkpoint_prefix(ocr_ckpt, "ocr", model.backbone().prefix(), model.store());

  std::string log_lines;
  TrainResult res = train_correction_samples(cfg, model, train, dev, images,
                                             log_jsonl.empty() ? nullptr : &log_lines, log);
  if (!log_jsonl.empty()) write_text_file(log_jsonl, log_lines);

  CheckpointHeader hdr;
  hdr.kind = "correction";
  hdr.config_hash = to_hex(cfg.config_hash());
  hdr.geometry = {{"img_height", cfg.glyphs.img_height},
                  {"block_width", cfg.glyphs.block_width},
                  {"max_width", cfg.resolved_max_width()}};
  hdr.rng_state = "";
  save_checkpoint(ckpt_out, hdr, model.store());
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation: correction model vs decode-then-compare baseline

inline MetricsReport evaluate_correction_model(CorrectionModel& model,
                                               const std::vector<PreppedSample>& test,
                                               ImageCache& images, const std::string& name) {
  MetricsAccumulator acc;
  for (const auto& p : test) {
    LabelSeq pred = model.predict(images.get(p.meta), p.valid_blocks, p.answer_ids);
    acc.add(pred, p.labels);
  }
  return acc.report(name);
}

inline MetricsReport evaluate_ocr_baseline(OcrModel& model, const std::vector<PreppedSample>& test,
                                           ImageCache& images, const std::string& name) {
  MetricsAccumulator acc;
  for (const auto& p : test) {
    std::vector<int> decoded = model.decode(images.get(p.meta));
    acc.add(derive_labels(decoded, p.answer_ids), p.labels);
    acc.add_cer(char_error_rate(p.content_ids, decoded));
  }
  return acc.report(name);
}

struct EvalResult {
  MetricsReport correction;
  MetricsReport baseline;
};

inline EvalResult evaluate(const RunConfig& cfg0, const fs::path& data_dir,
                           const fs::path& correction_ckpt, const fs::path& ocr_ckpt,
                           const fs::path& out_dir = {}, std::ostream* log = nullptr) {
  DataEnv env = load_data_env(data_dir);
  RunConfig cfg = resolve_config(cfg0, env);
  cfg.validate();
  auto test = prep_split(env, "test", cfg.glyphs.block_width);
  ImageCache images(env.dir);

  CorrectionModel model(cfg.backbone, cfg.model, env.vocab, cfg.glyphs.img_height,
                        cfg.resolved_max_width(), cfg.glyphs.block_width, cfg.seed);
  load_checkpoint(correction_ckpt, "correction", to_hex(cfg.config_hash()), model.store());

  OcrModel ocr(cfg.backbone, env.vocab, cfg.glyphs.img_height, cfg.glyphs.block_width, cfg.seed);
  load_checkpoint(ocr_ckpt, "ocr", to_hex(cfg.config_hash()), ocr.store());

  EvalResult res{evaluate_correction_model(model, test, images, "correction"),
                 evaluate_ocr_baseline(ocr, test, images, "baseline")};

  std::string table = MetricsReport::table({res.correction, res.baseline});
  if (log) *log << table;
  if (!out_dir.empty()) {
    nlohmann::json j{{"models", {res.correction.to_json(), res.baseline.to_json()}}};
    write_text_file(out_dir / "report.json", j.dump(2) + "\n");
    write_text_file(out_dir / "report.txt", table);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Single-sample inference

inline nlohmann::json correct_one(const RunConfig& cfg0, const fs::path& data_dir,
                                  const fs::path& correction_ckpt, const fs::path& image_path,
                                  const std::string& answer, AttnExport* ex = nullptr) {
  DataEnv env = load_data_env(data_dir);
  RunConfig cfg = resolve_config(cfg0, env);
  cfg.validate();
  CorrectionModel model(cfg.backbone, cfg.model, env.vocab, cfg.glyphs.img_height,
                        cfg.resolved_max_width(), cfg.glyphs.block_width, cfg.seed);
  load_checkpoint(correction_ckpt, "correction", to_hex(cfg.config_hash()), model.store());

  GlyphImage raw = read_pgm(image_path);
  GlyphImage img = pad_to_width(raw, cfg.resolved_max_width(), cfg.glyphs.block_width);
  int vb = valid_block_count(raw.width, cfg.glyphs.block_width);
  auto answer_ids = encode_text(answer, env.vocab);

  LabelSeq pred = model.predict(img, vb, answer_ids, ex);
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : extract_spans(pred)) {
    const char* kind = s.kind == SpanKind::kSub ? "sub" : (s.kind == SpanKind::kDel ? "del" : "add");
    spans.push_back({{"kind", kind}, {"start", s.start}, {"end", s.end}});
  }
  return nlohmann::json{{"answer", answer},
                        {"labels", labels_to_names(pred)},
                        {"binary", reduce_binary(pred)},
                        {"spans", spans}};
}

// Attention dump: CSV of every cross-attention weight plus one PGM heatmap
// per (layer, head), query tokens down the side, image blocks across.
inline nlohmann::json viz_attention(const RunConfig& cfg, const fs::path& data_dir,
                                    const fs::path& correction_ckpt, const fs::path& image_path,
                                    const std::string& answer, const fs::path& out_dir) {
  AttnExport ex;
  nlohmann::json result = correct_one(cfg, data_dir, correction_ckpt, image_path, answer, &ex);
  fs::create_directories(out_dir);

  std::string csv = "kind,layer,head,token_index,block_index,weight\n";
  auto dump = [&csv](const char* kind, const std::vector<AttnMatrix>& mats) {
    char buf[128];
    for (size_t layer = 0; layer < mats.size(); ++layer) {
      const auto& m = mats[layer];
      for (int h = 0; h < m.heads; ++h)
        for (int i = 0; i < m.lq; ++i)
          for (int j = 0; j < m.lk; ++j) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%d,%d,%d,%.6f\n", kind, layer, h, i, j,
                          double(m.at(h, i, j)));
            csv += buf;
          }
    }
  };
  dump("cross", ex.cross);
  dump("text_self", ex.text_self);
  write_text_file(out_dir / "attention.csv", csv);

  const int cell = 8;
  for (size_t layer = 0; layer < ex.cross.size(); ++layer) {
    const auto& m = ex.cross[layer];
    for (int h = 0; h < m.heads; ++h) {
      GlyphImage heat = GlyphImage::blank(m.lq * cell, m.lk * cell);
      for (int i = 0; i < m.lq; ++i)
        for (int j = 0; j < m.lk; ++j) {
          float v = 1.0f - std::clamp(m.at(h, i, j), 0.0f, 1.0f);  // dark = high weight
          for (int dy = 0; dy < cell; ++dy)
            for (int dx = 0; dx < cell; ++dx) heat.at(i * cell + dy, j * cell + dx) = v;
        }
      write_pgm(heat, out_dir / ("cross-l" + std::to_string(layer) + "-h" + std::to_string(h) + ".pgm"));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablation: architecture variants and shard-drop retraining

struct AblationVariant {
  std::string name;
  int encoder_blocks = 2, fusion_blocks = 2;
  TextSelfAttn text_self_attn = TextSelfAttn::kBlock;
  std::string drop_shard;  // retrain without this shard when nonempty
};

inline std::vector<AblationVariant> default_ablation_variants(const RunConfig& cfg) {
  std::vector<AblationVariant> v = {
      {"enc1-fus1-selfoff", 1, 1, TextSelfAttn::kOff, ""},
      {"enc1-fus1-selfblk", 1, 1, TextSelfAttn::kBlock, ""},
      {"enc2-fus2-selfoff", 2, 2, TextSelfAttn::kOff, ""},
      {"enc2-fus2-selfblk", 2, 2, TextSelfAttn::kBlock, ""},
      {"enc3-fus3-selfblk", 3, 3, TextSelfAttn::kBlock, ""},
  };
  for (const auto& s : cfg.shards)
    v.push_back({"drop-" + s.name, cfg.model.encoder_blocks, cfg.model.fusion_blocks,
                 cfg.model.text_self_attn, s.name});
  return v;
}

inline nlohmann::json run_ablation(const RunConfig& cfg0, const fs::path& data_dir,
                                   const fs::path& ocr_ckpt, const fs::path& out_dir,
                                   std::vector<AblationVariant> variants = {},
                                   std::ostream* log = nullptr) {
  DataEnv env = load_data_env(data_dir);
  RunConfig base = resolve_config(cfg0, env);
  base.validate();
  if (variants.empty()) variants = default_ablation_variants(base);

  auto train_full = prep_split(env, "train", base.glyphs.block_width);
  auto dev = prep_split(env, "dev", base.glyphs.block_width);
  auto test = prep_split(env, "test", base.glyphs.block_width);
  ImageCache images(env.dir);
  fs::create_directories(out_dir);

  nlohmann::json rows = nlohmann::json::array();
  std::vector<MetricsReport> reports;
  for (const auto& var : variants) {
    RunConfig cfg = base;
    cfg.model.encoder_blocks = var.encoder_blocks;
    cfg.model.fusion_blocks = var.fusion_blocks;
    cfg.model.text_self_attn = var.text_self_attn;
    cfg.validate();

    std::vector<PreppedSample> train;
    for (const auto& p : train_full)
      if (var.drop_shard.empty() || p.meta.shard != var.drop_shard) train.push_back(p);

    CorrectionModel model(cfg.backbone, cfg.model, env.vocab, cfg.glyphs.img_height,
                          cfg.resolved_max_width(), cfg.glyphs.block_width, cfg.seed);
    if (!ocr_ckpt.empty())
      load_checkpoint_prefix(ocr_ckpt, "ocr", model.backbone().prefix(), model.store());
    if (log) *log << "ablation '" << var.name << "': " << train.size() << " train samples\n";
    TrainResult tr = train_correction_samples(cfg, model, train, dev, images, nullptr, nullptr);
    MetricsReport rep = evaluate_correction_model(model, test, images, var.name);
    reports.push_back(rep);
    nlohmann::json row = rep.to_json();
    row["train_loss"] = tr.final_train_loss;
    row["train_samples"] = train.size();
    rows.push_back(row);
    if (log) *log << MetricsReport::table({rep});
  }

  nlohmann::json out{{"variants", rows}};
  write_text_file(out_dir / "ablation.json", out.dump(2) + "\n");
  write_text_file(out_dir / "ablation.txt", MetricsReport::table(reports));
  return out;
}

}  // namespace cloze
