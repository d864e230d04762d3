#pragma once

// Convolutional line encoder plus CTC head. The encoder collapses a padded
// line image [1, H, W] into a feature sequence [W/block, D]; each stage is
// entry conv -> channel norm -> relu -> maxpool -> dropout -> residual units.
// The norm is a per-position layer norm across channels: unlike batch or
// instance norm it uses no cross-position statistics, so each output pixel
// still depends only on its local receptive field.

#include "cloze/ctc.hpp"
#include "cloze/glyphgen.hpp"
#include "cloze/optim.hpp"
#include "cloze/vocab.hpp"

namespace cloze {

struct BackboneConfig {
  std::vector<int> channels = {12, 24, 48, 64};
  std::vector<int> units = {1, 1, 1, 1};
  std::vector<std::pair<int, int>> pools = {{2, 2}, {2, 2}, {2, 2}, {4, 1}};
  float dropout = 0.1f;

  int feature_dim() const { return channels.back(); }

  int width_shrink() const {
    int s = 1;
    for (auto& p : pools) s *= p.second;
    return s;
  }

  void validate(int img_height, int block_width) const {
    if (channels.empty() || channels.size() != units.size() || channels.size() != pools.size())
      throw GeometryMismatchError("backbone: channels/units/pools must be same nonzero length");
    int hs = 1;
    for (auto& p : pools) {
      if (p.first <= 0 || p.second <= 0) throw GeometryMismatchError("backbone: non-positive pool");
      hs *= p.first;
    }
    if (hs != img_height)
      throw GeometryMismatchError("backbone: pool heights shrink " + std::to_string(img_height) +
                                  "px to " + std::to_string(img_height / hs) + " rows, expected 1");
    if (width_shrink() != block_width)
      throw GeometryMismatchError("backbone: pool widths shrink by " +
                                  std::to_string(width_shrink()) + ", block width is " +
                                  std::to_string(block_width));
    for (int c : channels)
      if (c <= 0) throw GeometryMismatchError("backbone: non-positive channel count");
    for (int u : units)
      if (u < 0) throw GeometryMismatchError("backbone: negative unit count");
  }

  // Horizontal receptive-field radius of one output feature, in input pixels.
  int receptive_margin_px() const {
    double radius = 0.0;
    double jump = 1.0;
    for (size_t s = 0; s < channels.size(); ++s) {
      radius += jump;  // entry 3x3 conv
      radius += (pools[s].second - 1) * jump / 2.0;
      jump *= pools[s].second;
      for (int u = 0; u < units[s]; ++u) radius += 2.0 * jump;  // two 3x3 convs
    }
    return int(std::ceil(radius));
  }
};

// Ink-positive view of a rendered line: background 0, full ink 1.
inline Tensor image_to_tensor(const GlyphImage& img) {
  std::vector<float> v(img.pixels.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0f - img.pixels[i];
  return Tensor::from_values({1, img.height, img.width}, std::move(v));
}

class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, int img_height, int block_width, ParameterStore& store,
           Rng& rng, std::string prefix = "backbone.")
      : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate(img_height, block_width);
    int in_c = 1;
    for (size_t s = 0; s < cfg_.channels.size(); ++s) {
      int out_c = cfg_.channels[s];
      add_conv(name(s, "entry"), in_c, out_c, store, rng);
      for (int u = 0; u < cfg_.units[s]; ++u) {
        add_conv(unit_name(s, u, "c1"), out_c, out_c, store, rng);
        add_conv(unit_name(s, u, "c2"), out_c, out_c, store, rng);
      }
      in_c = out_c;
    }
  }

  // [1, H, W] -> [W/block, D]
  Tensor forward(const Tensor& image, ParameterStore& store, bool training, Rng& rng) const {
    Tensor x = image;
    for (size_t s = 0; s < cfg_.channels.size(); ++s) {
      x = relu(conv_norm(x, name(s, "entry"), store));
      x = maxpool2d(x, cfg_.pools[s].first, cfg_.pools[s].second);
      x = dropout(x, cfg_.dropout, rng, training);
      for (int u = 0; u < cfg_.units[s]; ++u) {
        Tensor h = relu(conv_norm(x, unit_name(s, u, "c1"), store));
        h = conv_norm(h, unit_name(s, u, "c2"), store);
        x = relu(add(x, h));
      }
    }
    if (x.dim(1) != 1)
      throw GeometryMismatchError("backbone: output height " + std::to_string(x.dim(1)) +
                                  ", expected 1");
    int d = x.dim(0), L = x.dim(2);
    return transpose(reshape(x, {d, L}));
  }

  const BackboneConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string name(size_t stage, const char* tag) const {
    return prefix_ + "s" + std::to_string(stage) + "." + tag;
  }
  std::string unit_name(size_t stage, int unit, const char* tag) const {
    return prefix_ + "s" + std::to_string(stage) + ".u" + std::to_string(unit) + "." + tag;
  }

  static void add_conv(const std::string& base, int in_c, int out_c, ParameterStore& store,
                       Rng& rng) {
    float std = std::sqrt(2.0f / float(in_c * 9));
    store.add(base + ".w", Tensor::randn({out_c, in_c, 3, 3}, rng, std));
    store.add(base + ".b", Tensor::zeros({out_c}));
    store.add(base + ".ng", Tensor::filled({out_c}, 1.0f));
    store.add(base + ".nb", Tensor::zeros({out_c}));
  }

  // 3x3 conv followed by a layer norm across channels at every position.
  Tensor conv_norm(const Tensor& x, const std::string& base, ParameterStore& store) const {
    Tensor y = conv2d(x, store.get(base + ".w").tensor, store.get(base + ".b").tensor, 1);
    int c = y.dim(0), h = y.dim(1), w = y.dim(2);
    Tensor rows = transpose(reshape(y, {c, h * w}));  // [HW, C]
    rows = layer_norm(rows, store.get(base + ".ng").tensor, store.get(base + ".nb").tensor);
    return reshape(transpose(rows), {c, h, w});
  }

  BackboneConfig cfg_;
  std::string prefix_;
};

// Linear projection to per-frame class log-probs; classes are the vocabulary
// characters plus the CTC blank.
class CtcHead {
 public:
  CtcHead(int feature_dim, int class_count, ParameterStore& store, Rng& rng,
          std::string prefix = "ctc_head.")
      : prefix_(std::move(prefix)), classes_(class_count) {
    float std = std::sqrt(1.0f / float(feature_dim));
    store.add(prefix_ + "w", Tensor::randn({feature_dim, class_count}, rng, std));
    store.add(prefix_ + "b", Tensor::zeros({class_count}));
  }

  Tensor log_probs(const Tensor& features, ParameterStore& store) const {
    Tensor z = add(matmul(features, store.get(prefix_ + "w").tensor), store.get(prefix_ + "b").tensor);
    return log_softmax_rows(z);
  }

  int class_count() const { return classes_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  int classes_;
};

// Full text-line recognizer: backbone features -> CTC log-probs. Frames that
// cover only right-padding are dropped before the loss and the decoder: they
// carry no per-line information, and letting CTC place symbols there invites
// a content-independent shortcut alignment.
class OcrModel {
 public:
  OcrModel(const BackboneConfig& cfg, const Vocabulary& vocab, int img_height, int block_width,
           uint64_t init_seed)
      : blank_(vocab.ctc_blank()), block_width_(block_width) {
    Rng rng = make_rng(init_seed, "ocr_init");
    backbone_ = std::make_unique<Backbone>(cfg, img_height, block_width, store_, rng);
    head_ = std::make_unique<CtcHead>(cfg.feature_dim(), vocab.char_count() + 1, store_, rng);
  }

  // Log-probs over the line's valid frames only.
  Tensor log_probs(const GlyphImage& img, bool training, Rng& rng) {
    Tensor feat = backbone_->forward(image_to_tensor(img), store_, training, rng);
    int vw = img.valid_width > 0 ? img.valid_width : img.width;
    int vf = std::min(feat.dim(0), valid_block_count(vw, block_width_));
    if (vf < feat.dim(0)) feat = transpose(slice_cols(transpose(feat), 0, vf));
    return head_->log_probs(feat, store_);
  }

  Tensor loss(const GlyphImage& img, const std::vector<int>& target, bool training, Rng& rng) {
    return ctc_loss(log_probs(img, training, rng), target, blank_);
  }

  std::vector<int> decode(const GlyphImage& img) {
    NoGradGuard ng;
    Rng dummy = make_rng(0, "eval");
    return ctc_greedy_decode(log_probs(img, false, dummy), blank_);
  }

  ParameterStore& store() { return store_; }
  Backbone& backbone() { return *backbone_; }
  CtcHead& head() { return *head_; }
  int blank() const { return blank_; }

 private:
  ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<CtcHead> head_;
  int blank_;
  int block_width_;
};

}  // namespace cloze
