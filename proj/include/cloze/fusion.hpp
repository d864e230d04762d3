#pragma once

// Cross-modal correction model. A frozen-or-trainable conv backbone turns the
// line image into a feature sequence; a small transformer encoder refines it;
// the answer text (with a leading placeholder slot) queries it through
// cross-attention blocks; a linear head emits per-position edit labels.

#include <optional>

#include "cloze/ocr.hpp"

namespace cloze {

enum class TextSelfAttn { kBlock, kOnce, kOff };

inline TextSelfAttn text_self_attn_from_name(const std::string& s) {
  if (s == "block") return TextSelfAttn::kBlock;
  if (s == "once") return TextSelfAttn::kOnce;
  if (s == "off") return TextSelfAttn::kOff;
  throw IoError("text_self_attn must be block|once|off, got '" + s + "'");
}

inline const char* text_self_attn_name(TextSelfAttn m) {
  switch (m) {
    case TextSelfAttn::kBlock: return "block";
    case TextSelfAttn::kOnce: return "once";
    default: return "off";
  }
}

struct ModelConfig {
  int model_dim = 64;       // shared attention width
  int text_embed_dim = 32;  // raw character embedding width
  int heads = 4;
  int encoder_blocks = 2;   // image self-attention depth
  int fusion_blocks = 2;    // cross-attention depth
  int ffn_mult = 4;
  int max_text_len = 16;  // placeholder slot + answer characters
  float dropout = 0.1f;
  TextSelfAttn text_self_attn = TextSelfAttn::kBlock;

  void validate() const {
    if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
      throw GeometryMismatchError("model_dim " + std::to_string(model_dim) +
                                  " must be a positive multiple of heads " + std::to_string(heads));
    if (text_embed_dim <= 0 || ffn_mult <= 0 || max_text_len < 2 || encoder_blocks < 0 ||
        fusion_blocks <= 0)
      throw GeometryMismatchError("bad model dims");
  }
};

// Per-layer attention weights for inspection: heads x (Lq x Lk), row-major.
struct AttnMatrix {
  int heads = 0, lq = 0, lk = 0;
  std::vector<float> w;
  float at(int h, int i, int j) const {
    return w[(size_t(h) * size_t(lq) + size_t(i)) * size_t(lk) + size_t(j)];
  }
};

struct AttnExport {
  std::vector<AttnMatrix> cross;      // one per fusion block
  std::vector<AttnMatrix> text_self;  // one per self-attn application
};

namespace detail {

class Mha {
 public:
  Mha(std::string prefix, int dim, int heads, ParameterStore& store, Rng& rng)
      : prefix_(std::move(prefix)), dim_(dim), heads_(heads) {
    float std = std::sqrt(1.0f / float(dim));
    for (const char* tag : {"wq", "wk", "wv", "wo"})
      store.add(prefix_ + tag, Tensor::randn({dim, dim}, rng, std));
    for (const char* tag : {"bq", "bk", "bv", "bo"}) store.add(prefix_ + tag, Tensor::zeros({dim}));
  }

  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const Tensor* key_mask,
                 ParameterStore& store, AttnMatrix* probs_out = nullptr) const {
    int dh = dim_ / heads_;
    Tensor q = add(matmul(q_in, store.get(prefix_ + "wq").tensor), store.get(prefix_ + "bq").tensor);
    Tensor k = add(matmul(kv_in, store.get(prefix_ + "wk").tensor), store.get(prefix_ + "bk").tensor);
    Tensor v = add(matmul(kv_in, store.get(prefix_ + "wv").tensor), store.get(prefix_ + "bv").tensor);
    if (probs_out) {
      probs_out->heads = heads_;
      probs_out->lq = q_in.dim(0);
      probs_out->lk = kv_in.dim(0);
      probs_out->w.assign(size_t(heads_) * size_t(probs_out->lq) * size_t(probs_out->lk), 0.0f);
    }
    std::vector<Tensor> head_outs;
    for (int h = 0; h < heads_; ++h) {
      Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), 1.0f / std::sqrt(float(dh)));
      Tensor probs = masked_softmax(scores, key_mask);
      if (probs_out)
        std::copy(probs.values().begin(), probs.values().end(),
                  probs_out->w.begin() + size_t(h) * probs.values().size());
      head_outs.push_back(matmul(probs, vh));
    }
    Tensor cat = concat_cols(head_outs);
    return add(matmul(cat, store.get(prefix_ + "wo").tensor), store.get(prefix_ + "bo").tensor);
  }

 private:
  std::string prefix_;
  int dim_, heads_;
};

class Ffn {
 public:
  Ffn(std::string prefix, int dim, int mult, ParameterStore& store, Rng& rng)
      : prefix_(std::move(prefix)) {
    store.add(prefix_ + "w1", Tensor::randn({dim, dim * mult}, rng, std::sqrt(1.0f / float(dim))));
    store.add(prefix_ + "b1", Tensor::zeros({dim * mult}));
    store.add(prefix_ + "w2",
              Tensor::randn({dim * mult, dim}, rng, std::sqrt(1.0f / float(dim * mult))));
    store.add(prefix_ + "b2", Tensor::zeros({dim}));
  }

  Tensor forward(const Tensor& x, ParameterStore& store) const {
    Tensor h = relu(add(matmul(x, store.get(prefix_ + "w1").tensor), store.get(prefix_ + "b1").tensor));
    return add(matmul(h, store.get(prefix_ + "w2").tensor), store.get(prefix_ + "b2").tensor);
  }

 private:
  std::string prefix_;
};

class Ln {
 public:
  Ln(std::string prefix, int dim, ParameterStore& store) : prefix_(std::move(prefix)) {
    store.add(prefix_ + "g", Tensor::filled({dim}, 1.0f));
    store.add(prefix_ + "b", Tensor::zeros({dim}));
  }
  Tensor forward(const Tensor& x, ParameterStore& store) const {
    return layer_norm(x, store.get(prefix_ + "g").tensor, store.get(prefix_ + "b").tensor);
  }

 private:
  std::string prefix_;
};

// Post-norm residual self-attention block: LN(x + MHA), LN(x + FFN).
class SelfBlock {
 public:
  SelfBlock(const std::string& prefix, int dim, int heads, int ffn_mult, ParameterStore& store,
            Rng& rng)
      : attn_(prefix + "attn.", dim, heads, store, rng),
        ln1_(prefix + "ln1.", dim, store),
        ffn_(prefix + "ffn.", dim, ffn_mult, store, rng),
        ln2_(prefix + "ln2.", dim, store) {}

  Tensor forward(const Tensor& x, const Tensor* key_mask, ParameterStore& store, float drop,
                 Rng& rng, bool training, AttnMatrix* probs_out = nullptr) const {
    Tensor a = attn_.forward(x, x, key_mask, store, probs_out);
    Tensor y = ln1_.forward(add(x, dropout(a, drop, rng, training)), store);
    Tensor f = ffn_.forward(y, store);
    return ln2_.forward(add(y, dropout(f, drop, rng, training)), store);
  }

 private:
  Mha attn_;
  Ln ln1_;
  Ffn ffn_;
  Ln ln2_;
};

// Fusion block: optional text self-attention, cross-attention from text into
// image features, then FFN; residual + post-norm around each sublayer.
class FusionBlock {
 public:
  FusionBlock(const std::string& prefix, int dim, int heads, int ffn_mult, bool with_self,
              ParameterStore& store, Rng& rng)
      : with_self_(with_self),
        cross_(prefix + "cross.", dim, heads, store, rng),
        ln_cross_(prefix + "ln_cross.", dim, store),
        ffn_(prefix + "ffn.", dim, ffn_mult, store, rng),
        ln_ffn_(prefix + "ln_ffn.", dim, store) {
    if (with_self_) {
      self_.emplace(prefix + "self.", dim, heads, store, rng);
      ln_self_.emplace(prefix + "ln_self.", dim, store);
    }
  }

  Tensor forward(const Tensor& text, const Tensor& img, const Tensor* text_mask,
                 const Tensor* img_mask, ParameterStore& store, float drop, Rng& rng, bool training,
                 AttnMatrix* cross_out, AttnMatrix* self_out) const {
    Tensor x = text;
    if (with_self_) {
      Tensor a = self_->forward(x, x, text_mask, store, self_out);
      x = ln_self_->forward(add(x, dropout(a, drop, rng, training)), store);
    }
    Tensor c = cross_.forward(x, img, img_mask, store, cross_out);
    x = ln_cross_.forward(add(x, dropout(c, drop, rng, training)), store);
    Tensor f = ffn_.forward(x, store);
    return ln_ffn_.forward(add(x, dropout(f, drop, rng, training)), store);
  }

  bool with_self() const { return with_self_; }

 private:
  bool with_self_;
  std::optional<Mha> self_;
  std::optional<Ln> ln_self_;
  Mha cross_;
  Ln ln_cross_;
  Ffn ffn_;
  Ln ln_ffn_;
};

}  // namespace detail

struct TextEncoding {
  Tensor g;         // [max_text_len, model_dim]
  Tensor key_mask;  // [max_text_len] additive, -inf on padding
  int valid_len = 0;
};

class CorrectionModel {
 public:
  CorrectionModel(const BackboneConfig& bb_cfg, const ModelConfig& cfg, const Vocabulary& vocab,
                  int img_height, int max_width, int block_width, uint64_t init_seed)
      : cfg_(cfg),
        blk_id_(vocab.blk()),
        pad_id_(vocab.pad()),
        image_len_(max_width / block_width) {
    cfg_.validate();
    if (max_width % block_width != 0)
      throw GeometryMismatchError("max_width " + std::to_string(max_width) +
                                  " not a multiple of block width " + std::to_string(block_width));
    Rng rng = make_rng(init_seed, "model_init");
    backbone_ = std::make_unique<Backbone>(bb_cfg, img_height, block_width, store_, rng);

    int dim = cfg_.model_dim;
    store_.add("img_proj.w", Tensor::randn({bb_cfg.feature_dim(), dim}, rng,
                                           std::sqrt(1.0f / float(bb_cfg.feature_dim()))));
    store_.add("img_proj.b", Tensor::zeros({dim}));
    store_.add("img_pos", Tensor::randn({image_len_, dim}, rng, 0.02f));
    for (int i = 0; i < cfg_.encoder_blocks; ++i)
      enc_.emplace_back("enc" + std::to_string(i) + ".", dim, cfg_.heads, cfg_.ffn_mult, store_, rng);

    store_.add("text_embed", Tensor::randn({vocab.total_size(), cfg_.text_embed_dim}, rng, 0.02f));
    store_.add("text_proj.w", Tensor::randn({cfg_.text_embed_dim, dim}, rng,
                                            std::sqrt(1.0f / float(cfg_.text_embed_dim))));
    store_.add("text_proj.b", Tensor::zeros({dim}));
    store_.add("text_pos", Tensor::randn({cfg_.max_text_len, dim}, rng, 0.02f));

    if (cfg_.text_self_attn == TextSelfAttn::kOnce)
      pre_self_.emplace("text_sa.", dim, cfg_.heads, cfg_.ffn_mult, store_, rng);
    for (int i = 0; i < cfg_.fusion_blocks; ++i)
      fus_.emplace_back("fus" + std::to_string(i) + ".", dim, cfg_.heads, cfg_.ffn_mult,
                        cfg_.text_self_attn == TextSelfAttn::kBlock, store_, rng);

    store_.add("out.w", Tensor::randn({dim, kLabelCount}, rng, std::sqrt(1.0f / float(dim))));
    store_.add("out.b", Tensor::zeros({kLabelCount}));
  }

  // Raw backbone features [image_len, D]; cacheable when the backbone is frozen.
  Tensor backbone_features(const GlyphImage& img, bool training, Rng& rng) {
    Tensor feats = backbone_->forward(image_to_tensor(img), store_, training, rng);
    if (feats.dim(0) != image_len_)
      throw GeometryMismatchError("image yields " + std::to_string(feats.dim(0)) +
                                  " feature blocks, model expects " + std::to_string(image_len_));
    return feats;
  }

  // Image encoder: project, add positions, self-attend with padded keys masked.
  Tensor encode_image(const Tensor& feats, int valid_blocks, bool training, Rng& rng,
                      Tensor* img_mask_out = nullptr) {
    if (valid_blocks <= 0 || valid_blocks > image_len_)
      throw GeometryMismatchError("valid_blocks " + std::to_string(valid_blocks) + " outside [1," +
                                  std::to_string(image_len_) + "]");
    Tensor mask = block_mask(image_len_, valid_blocks);
    Tensor x = add(matmul(feats, store_.get("img_proj.w").tensor), store_.get("img_proj.b").tensor);
    x = add(x, store_.get("img_pos").tensor);
    x = dropout(x, cfg_.dropout, rng, training);
    for (const auto& blk : enc_) x = blk.forward(x, &mask, store_, cfg_.dropout, rng, training);
    if (img_mask_out) *img_mask_out = mask;
    return x;
  }

  TextEncoding encode_text(const std::vector<int>& answer_ids, bool training, Rng& rng) {
    int valid = int(answer_ids.size()) + 1;
    if (valid > cfg_.max_text_len)
      throw AnswerTooLongError("answer of " + std::to_string(answer_ids.size()) +
                               " characters exceeds text length " +
                               std::to_string(cfg_.max_text_len - 1));
    std::vector<int> ids;
    ids.reserve(size_t(cfg_.max_text_len));
    ids.push_back(blk_id_);
    ids.insert(ids.end(), answer_ids.begin(), answer_ids.end());
    while (int(ids.size()) < cfg_.max_text_len) ids.push_back(pad_id_);

    Tensor e = embedding_lookup(store_.get("text_embed").tensor, ids);
    Tensor g = add(matmul(e, store_.get("text_proj.w").tensor), store_.get("text_proj.b").tensor);
    g = add(g, store_.get("text_pos").tensor);
    g = dropout(g, cfg_.dropout, rng, training);
    return TextEncoding{g, block_mask(cfg_.max_text_len, valid), valid};
  }

  // Cross-modal fusion; image features stay fixed across blocks.
  Tensor fuse(const Tensor& s_img, const Tensor& img_mask, TextEncoding& text, bool training,
              Rng& rng, AttnExport* ex = nullptr) {
    Tensor x = text.g;
    if (pre_self_) {
      AttnMatrix* slot = nullptr;
      if (ex) {
        ex->text_self.emplace_back();
        slot = &ex->text_self.back();
      }
      x = pre_self_->forward(x, &text.key_mask, store_, cfg_.dropout, rng, training, slot);
    }
    for (const auto& blk : fus_) {
      AttnMatrix* cross_slot = nullptr;
      AttnMatrix* self_slot = nullptr;
      if (ex) {
        ex->cross.emplace_back();
        cross_slot = &ex->cross.back();
        if (blk.with_self()) {
          ex->text_self.emplace_back();
          self_slot = &ex->text_self.back();
        }
      }
      x = blk.forward(x, s_img, &text.key_mask, &img_mask, store_, cfg_.dropout, rng, training,
                      cross_slot, self_slot);
    }
    if (ex) zero_padded_rows(*ex, text.valid_len);
    return x;
  }

  Tensor label_logits(const Tensor& fused) {
    return add(matmul(fused, store_.get("out.w").tensor), store_.get("out.b").tensor);
  }

  // Full forward from cached backbone features.
  Tensor logits_from_features(const Tensor& feats, int valid_blocks,
                              const std::vector<int>& answer_ids, bool training, Rng& rng,
                              AttnExport* ex = nullptr, int* valid_len_out = nullptr) {
    Tensor img_mask;
    Tensor s_img = encode_image(feats, valid_blocks, training, rng, &img_mask);
    TextEncoding text = encode_text(answer_ids, training, rng);
    Tensor fused = fuse(s_img, img_mask, text, training, rng, ex);
    if (valid_len_out) *valid_len_out = text.valid_len;
    return label_logits(fused);
  }

  Tensor logits(const GlyphImage& img, int valid_blocks, const std::vector<int>& answer_ids,
                bool training, Rng& rng, AttnExport* ex = nullptr, int* valid_len_out = nullptr) {
    Tensor feats = backbone_features(img, training, rng);
    return logits_from_features(feats, valid_blocks, answer_ids, training, rng, ex, valid_len_out);
  }

  // Mean cross entropy over the placeholder slot and answer positions.
  Tensor loss(const Tensor& logits, const LabelSeq& labels) {
    int L = cfg_.max_text_len;
    if (int(labels.size()) > L)
      throw LengthMismatchError("label sequence of " + std::to_string(labels.size()) +
                                " exceeds text length " + std::to_string(L));
    std::vector<int> targets(size_t(L), 0);
    std::vector<uint8_t> valid(size_t(L), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
      targets[i] = int(labels[i]);
      valid[i] = 1;
    }
    return cross_entropy_rows(logits, targets, valid);
  }

  LabelSeq predict(const GlyphImage& img, int valid_blocks, const std::vector<int>& answer_ids,
                   AttnExport* ex = nullptr) {
    NoGradGuard ng;
    Rng rng = make_rng(0, "eval");
    int valid_len = 0;
    Tensor lg = logits(img, valid_blocks, answer_ids, false, rng, ex, &valid_len);
    return argmax_labels(lg, valid_len);
  }

  LabelSeq predict_from_features(const Tensor& feats, int valid_blocks,
                                 const std::vector<int>& answer_ids, AttnExport* ex = nullptr) {
    NoGradGuard ng;
    Rng rng = make_rng(0, "eval");
    int valid_len = 0;
    Tensor lg = logits_from_features(feats, valid_blocks, answer_ids, false, rng, ex, &valid_len);
    return argmax_labels(lg, valid_len);
  }

  static LabelSeq argmax_labels(const Tensor& logits, int valid_len) {
    LabelSeq out;
    int m = logits.dim(1);
    for (int i = 0; i < valid_len; ++i) {
      const float* row = logits.values().data() + size_t(i) * size_t(m);
      int best = 0;
      for (int j = 1; j < m; ++j)
        if (row[j] > row[best]) best = j;
      out.push_back(EditLabel(best));
    }
    return out;
  }

  int freeze_backbone(bool frozen = true) { return store_.freeze_prefix(backbone_->prefix(), frozen); }

  ParameterStore& store() { return store_; }
  Backbone& backbone() { return *backbone_; }
  const ModelConfig& config() const { return cfg_; }
  int image_len() const { return image_len_; }

 private:
  static Tensor block_mask(int len, int valid) {
    Tensor m = Tensor::zeros({len});
    for (int i = valid; i < len; ++i)
      m.values()[size_t(i)] = -std::numeric_limits<float>::infinity();
    return m;
  }

  static void zero_padded_rows(AttnExport& ex, int valid_len) {
    auto zero_rows = [&](AttnMatrix& m) {
      for (int h = 0; h < m.heads; ++h)
        for (int i = valid_len; i < m.lq; ++i)
          std::fill_n(m.w.begin() + (size_t(h) * size_t(m.lq) + size_t(i)) * size_t(m.lk),
                      size_t(m.lk), 0.0f);
    };
    for (auto& m : ex.cross) zero_rows(m);
    for (auto& m : ex.text_self) zero_rows(m);
  }

  ModelConfig cfg_;
  int blk_id_, pad_id_, image_len_;
  ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::vector<detail::SelfBlock> enc_;
  std::optional<detail::SelfBlock> pre_self_;
  std::vector<detail::FusionBlock> fus_;
};

}  // namespace cloze
