#pragma once

// Run configuration: one JSON document drives data generation, both training
// stages, and evaluation, so a single seed + config pair reproduces a run
// end to end.

#include "json.hpp"

#include "cloze/augmentation.hpp"
#include "cloze/fusion.hpp"

namespace cloze {

struct ShardSpec {
  std::string name = "synth";
  double weight = 1.0;
  float ligature_mult = 1.0f;  // scales the configured ligature probability
  float ink_mult = 1.0f;       // scales the ink-level ceiling
};

struct RunConfig {
  uint64_t seed = 42;

  // geometry & rendering
  GlyphGenConfig glyphs;  // ligature/confusion probabilities filled from below
  int max_width = 0;      // 0 = derive from glyph config and answer lengths

  // data
  int vocab_size = 16;
  int train_lines = 500;
  int dev_lines = 50;
  int test_lines = 400;
  double test_error_frac = 0.15;
  int answer_min_len = 2;
  int answer_max_len = 4;
  double ligature_prob = 0.2;
  double confusion_glyph_prob = 0.3;
  std::vector<ShardSpec> shards = {{"synth", 0.6, 1.0f, 1.0f},
                                   {"hw", 0.3, 1.5f, 1.2f},
                                   {"app", 0.1, 0.5f, 0.8f}};
  AugmentConfig augment;

  // model
  BackboneConfig backbone;
  ModelConfig model;

  // training
  double lr_pretrain = 3e-3;
  int epochs_pretrain = 15;
  double lr_correct = 1e-3;
  int epochs_correct = 14;
  int batch_size = 4;
  double weight_decay = 1e-4;

  // Longest content string any image may show: answers go up to
  // answer_max_len; corrupted test content may carry one extra character.
  int max_content_len() const { return answer_max_len + 1; }

  int resolved_max_width() const {
    if (max_width > 0) {
      if (max_width % glyphs.block_width != 0)
        throw GeometryMismatchError("max_width " + std::to_string(max_width) +
                                    " not a multiple of block width " +
                                    std::to_string(glyphs.block_width));
      return max_width;
    }
    int n = max_content_len();
    int w = n * glyphs.max_char_width() +
            (n - 1) * (glyphs.gap + std::max(0, glyphs.ligature_widen));
    int b = glyphs.block_width;
    return ((w + b - 1) / b) * b;
  }

  int image_len() const { return resolved_max_width() / glyphs.block_width; }

  void validate() const {
    model.validate();
    backbone.validate(glyphs.img_height, glyphs.block_width);
    augment.validate();
    if (answer_min_len < 1 || answer_max_len < answer_min_len)
      throw std::invalid_argument("answer length range invalid");
    if (answer_max_len + 1 > model.max_text_len)
      throw GeometryMismatchError("answers of length " + std::to_string(answer_max_len) +
                                  " do not fit text length " + std::to_string(model.max_text_len));
    if (test_error_frac < 0 || test_error_frac > 1)
      throw std::invalid_argument("test_error_frac must be in [0,1]");
    if (shards.empty()) throw std::invalid_argument("at least one shard required");
    double tot = 0;
    for (const auto& s : shards) {
      if (s.weight < 0) throw std::invalid_argument("negative shard weight");
      tot += s.weight;
    }
    if (tot <= 0) throw std::invalid_argument("shard weights sum to zero");
  }

  // Stable digest of everything that shapes parameter geometry; checkpoints
  // refuse to load across a mismatch.
  uint64_t config_hash() const {
    std::string key;
    auto put = [&key](const std::string& s) { key += s + ";"; };
    put(std::to_string(glyphs.img_height));
    put(std::to_string(glyphs.block_width));
    put(std::to_string(resolved_max_width()));
    put(std::to_string(vocab_size));
    for (int c : backbone.channels) put("c" + std::to_string(c));
    for (int u : backbone.units) put("u" + std::to_string(u));
    for (auto& p : backbone.pools) put("p" + std::to_string(p.first) + "x" + std::to_string(p.second));
    put(std::to_string(model.model_dim));
    put(std::to_string(model.text_embed_dim));
    put(std::to_string(model.heads));
    put(std::to_string(model.encoder_blocks));
    put(std::to_string(model.fusion_blocks));
    put(std::to_string(model.ffn_mult));
    put(std::to_string(model.max_text_len));
    put(text_self_attn_name(model.text_self_attn));
    return hash_bytes(key.data(), key.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json shards_j = nlohmann::json::array();
    for (const auto& s : shards)
      shards_j.push_back({{"name", s.name},
                          {"weight", s.weight},
                          {"ligature_mult", s.ligature_mult},
                          {"ink_mult", s.ink_mult}});
    return nlohmann::json{
        {"seed", seed},
        {"geometry",
         {{"img_height", glyphs.img_height},
          {"block_width", glyphs.block_width},
          {"max_width", max_width}}},
        {"glyphs",
         {{"grid_cols", glyphs.grid_cols},
          {"grid_rows", glyphs.grid_rows},
          {"cell_h", glyphs.cell_h},
          {"base_char_width", glyphs.base_char_width},
          {"gap", glyphs.gap},
          {"ligature_overlap", glyphs.ligature_overlap},
          {"ligature_widen", glyphs.ligature_widen},
          {"wscale_min", glyphs.wscale_min},
          {"wscale_max", glyphs.wscale_max},
          {"ink_max", glyphs.ink_max},
          {"glyph_seed", glyphs.glyph_seed}}},
        {"data",
         {{"vocab_size", vocab_size},
          {"train_lines", train_lines},
          {"dev_lines", dev_lines},
          {"test_lines", test_lines},
          {"test_error_frac", test_error_frac},
          {"answer_min_len", answer_min_len},
          {"answer_max_len", answer_max_len},
          {"ligature_prob", ligature_prob},
          {"confusion_glyph_prob", confusion_glyph_prob},
          {"shards", shards_j}}},
        {"augment",
         {{"max_sub", augment.max_sub},
          {"max_del", augment.max_del},
          {"max_ins", augment.max_ins}}},
        {"backbone",
         {{"channels", backbone.channels},
          {"units", backbone.units},
          {"pools", backbone.pools},
          {"dropout", backbone.dropout}}},
        {"model",
         {{"model_dim", model.model_dim},
          {"text_embed_dim", model.text_embed_dim},
          {"heads", model.heads},
          {"encoder_blocks", model.encoder_blocks},
          {"fusion_blocks", model.fusion_blocks},
          {"ffn_mult", model.ffn_mult},
          {"max_text_len", model.max_text_len},
          {"dropout", model.dropout},
          {"text_self_attn", text_self_attn_name(model.text_self_attn)}}},
        {"train",
         {{"lr_pretrain", lr_pretrain},
          {"epochs_pretrain", epochs_pretrain},
          {"lr_correct", lr_correct},
          {"epochs_correct", epochs_correct},
          {"batch_size", batch_size},
          {"weight_decay", weight_decay}}}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
      if (j.contains("geometry")) {
        const auto& g = j.at("geometry");
        if (g.contains("img_height")) c.glyphs.img_height = g.at("img_height").get<int>();
        if (g.contains("block_width")) c.glyphs.block_width = g.at("block_width").get<int>();
        if (g.contains("max_width")) c.max_width = g.at("max_width").get<int>();
      }
      if (j.contains("glyphs")) {
        const auto& g = j.at("glyphs");
        auto get_i = [&](const char* k, int& dst) { if (g.contains(k)) dst = g.at(k).get<int>(); };
        auto get_f = [&](const char* k, float& dst) { if (g.contains(k)) dst = g.at(k).get<float>(); };
        get_i("grid_cols", c.glyphs.grid_cols);
        get_i("grid_rows", c.glyphs.grid_rows);
        get_i("cell_h", c.glyphs.cell_h);
        get_i("base_char_width", c.glyphs.base_char_width);
        get_i("gap", c.glyphs.gap);
        get_i("ligature_overlap", c.glyphs.ligature_overlap);
        get_i("ligature_widen", c.glyphs.ligature_widen);
        get_f("wscale_min", c.glyphs.wscale_min);
        get_f("wscale_max", c.glyphs.wscale_max);
        get_f("ink_max", c.glyphs.ink_max);
        if (g.contains("glyph_seed")) c.glyphs.glyph_seed = g.at("glyph_seed").get<uint64_t>();
      }
      if (j.contains("data")) {
        const auto& d = j.at("data");
        if (d.contains("vocab_size")) c.vocab_size = d.at("vocab_size").get<int>();
        if (d.contains("train_lines")) c.train_lines = d.at("train_lines").get<int>();
        if (d.contains("dev_lines")) c.dev_lines = d.at("dev_lines").get<int>();
        if (d.contains("test_lines")) c.test_lines = d.at("test_lines").get<int>();
        if (d.contains("test_error_frac")) c.test_error_frac = d.at("test_error_frac").get<double>();
        if (d.contains("answer_min_len")) c.answer_min_len = d.at("answer_min_len").get<int>();
        if (d.contains("answer_max_len")) c.answer_max_len = d.at("answer_max_len").get<int>();
        if (d.contains("ligature_prob")) c.ligature_prob = d.at("ligature_prob").get<double>();
        if (d.contains("confusion_glyph_prob"))
          c.confusion_glyph_prob = d.at("confusion_glyph_prob").get<double>();
        if (d.contains("shards")) {
          c.shards.clear();
          for (const auto& s : d.at("shards"))
            c.shards.push_back(ShardSpec{s.at("name").get<std::string>(),
                                         s.at("weight").get<double>(),
                                         s.value("ligature_mult", 1.0f),
                                         s.value("ink_mult", 1.0f)});
        }
      }
      if (j.contains("augment")) {
        const auto& a = j.at("augment");
        if (a.contains("max_sub")) c.augment.max_sub = a.at("max_sub").get<int>();
        if (a.contains("max_del")) c.augment.max_del = a.at("max_del").get<int>();
        if (a.contains("max_ins")) c.augment.max_ins = a.at("max_ins").get<int>();
      }
      if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        if (b.contains("channels")) c.backbone.channels = b.at("channels").get<std::vector<int>>();
        if (b.contains("units")) c.backbone.units = b.at("units").get<std::vector<int>>();
        if (b.contains("pools"))
          c.backbone.pools = b.at("pools").get<std::vector<std::pair<int, int>>>();
        if (b.contains("dropout")) c.backbone.dropout = b.at("dropout").get<float>();
      }
      if (j.contains("model")) {
        const auto& m = j.at("model");
        if (m.contains("model_dim")) c.model.model_dim = m.at("model_dim").get<int>();
        if (m.contains("text_embed_dim")) c.model.text_embed_dim = m.at("text_embed_dim").get<int>();
        if (m.contains("heads")) c.model.heads = m.at("heads").get<int>();
        if (m.contains("encoder_blocks")) c.model.encoder_blocks = m.at("encoder_blocks").get<int>();
        if (m.contains("fusion_blocks")) c.model.fusion_blocks = m.at("fusion_blocks").get<int>();
        if (m.contains("ffn_mult")) c.model.ffn_mult = m.at("ffn_mult").get<int>();
        if (m.contains("max_text_len")) c.model.max_text_len = m.at("max_text_len").get<int>();
        if (m.contains("dropout")) c.model.dropout = m.at("dropout").get<float>();
        if (m.contains("text_self_attn"))
          c.model.text_self_attn = text_self_attn_from_name(m.at("text_self_attn").get<std::string>());
      }
      if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("lr_pretrain")) c.lr_pretrain = t.at("lr_pretrain").get<double>();
        if (t.contains("epochs_pretrain")) c.epochs_pretrain = t.at("epochs_pretrain").get<int>();
        if (t.contains("lr_correct")) c.lr_correct = t.at("lr_correct").get<double>();
        if (t.contains("epochs_correct")) c.epochs_correct = t.at("epochs_correct").get<int>();
        if (t.contains("batch_size")) c.batch_size = t.at("batch_size").get<int>();
        if (t.contains("weight_decay")) c.weight_decay = t.at("weight_decay").get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("bad run config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw IoError("config " + path.string() + " is not valid JSON");
    return from_json(j);
  }
};

}  // namespace cloze
