// Command-line front end: generate data, pretrain the recognizer, train the
// correction model, evaluate, run single samples, dump attention, ablate.

#include <iostream>

#include "CLI11.hpp"

#include "cloze/pipeline.hpp"

namespace {

struct Overrides {
  // values are applied only when the matching flag was passed
  uint64_t seed = 0;
  int train_lines = 0, dev_lines = 0, test_lines = 0, vocab_size = 0;
  double ligature_prob = 0, confusion_glyph_prob = 0, test_error_frac = 0;
  int max_sub = 0, max_del = 0, max_ins = 0;
  int epochs_pretrain = 0, epochs_correct = 0, batch_size = 0;
  double lr_pretrain = 0, lr_correct = 0, weight_decay = 0;
  int encoder_blocks = 0, fusion_blocks = 0;
  std::string text_self_attn;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "master RNG seed");
  cmd->add_option("--train-lines", ov.train_lines, "clean training lines before expansion");
  cmd->add_option("--dev-lines", ov.dev_lines, "dev lines");
  cmd->add_option("--test-lines", ov.test_lines, "test lines");
  cmd->add_option("--vocab-size", ov.vocab_size, "synthetic vocabulary size");
  cmd->add_option("--ligature-prob", ov.ligature_prob, "merge/split probability per gap");
  cmd->add_option("--confusion-glyph-prob", ov.confusion_glyph_prob,
                  "probability of drawing a confusable glyph");
  cmd->add_option("--test-error-frac", ov.test_error_frac, "fraction of test lines with errors");
  cmd->add_option("--max-sub", ov.max_sub, "max substitution negatives per line");
  cmd->add_option("--max-del", ov.max_del, "max deletion negatives per line");
  cmd->add_option("--max-ins", ov.max_ins, "max insertion negatives per line");
  cmd->add_option("--epochs-pretrain", ov.epochs_pretrain, "recognizer epochs");
  cmd->add_option("--epochs-train", ov.epochs_correct, "correction-model epochs");
  cmd->add_option("--batch-size", ov.batch_size, "batch size");
  cmd->add_option("--lr-pretrain", ov.lr_pretrain, "peak recognizer learning rate");
  cmd->add_option("--lr-train", ov.lr_correct, "peak correction learning rate");
  cmd->add_option("--weight-decay", ov.weight_decay, "AdamW weight decay");
  cmd->add_option("--encoder-blocks", ov.encoder_blocks, "image self-attention blocks");
  cmd->add_option("--fusion-blocks", ov.fusion_blocks, "cross-attention blocks");
  cmd->add_option("--text-self-attn", ov.text_self_attn, "text self-attention: block|once|off");
}

cloze::RunConfig build_config(const CLI::App* cmd, const std::string& config_path,
                              const Overrides& ov) {
  cloze::RunConfig cfg =
      config_path.empty() ? cloze::RunConfig{} : cloze::RunConfig::load(config_path);
  auto passed = [cmd](const char* flag) { return cmd->count(flag) > 0; };
  if (passed("--seed")) cfg.seed = ov.seed;
  if (passed("--train-lines")) cfg.train_lines = ov.train_lines;
  if (passed("--dev-lines")) cfg.dev_lines = ov.dev_lines;
  if (passed("--test-lines")) cfg.test_lines = ov.test_lines;
  if (passed("--vocab-size")) cfg.vocab_size = ov.vocab_size;
  if (passed("--ligature-prob")) cfg.ligature_prob = ov.ligature_prob;
  if (passed("--confusion-glyph-prob")) cfg.confusion_glyph_prob = ov.confusion_glyph_prob;
  if (passed("--test-error-frac")) cfg.test_error_frac = ov.test_error_frac;
  if (passed("--max-sub")) cfg.augment.max_sub = ov.max_sub;
  if (passed("--max-del")) cfg.augment.max_del = ov.max_del;
  if (passed("--max-ins")) cfg.augment.max_ins = ov.max_ins;
  if (passed("--epochs-pretrain")) cfg.epochs_pretrain = ov.epochs_pretrain;
  if (passed("--epochs-train")) cfg.epochs_correct = ov.epochs_correct;
  if (passed("--batch-size")) cfg.batch_size = ov.batch_size;
  if (passed("--lr-pretrain")) cfg.lr_pretrain = ov.lr_pretrain;
  if (passed("--lr-train")) cfg.lr_correct = ov.lr_correct;
  if (passed("--weight-decay")) cfg.weight_decay = ov.weight_decay;
  if (passed("--encoder-blocks")) cfg.model.encoder_blocks = ov.encoder_blocks;
  if (passed("--fusion-blocks")) cfg.model.fusion_blocks = ov.fusion_blocks;
  if (passed("--text-self-attn"))
    cfg.model.text_self_attn = cloze::text_self_attn_from_name(ov.text_self_attn);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handwriting fill-in-the-blank checker"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, log_path, ocr_ckpt, model_ckpt, image_path, answer;
  bool no_pretrain = false;
  Overrides ov;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config (flags win over file values)");
    add_override_flags(cmd, ov);
    return cmd;
  };

  auto* gen = add_common(app.add_subcommand("gen-data", "generate a synthetic dataset"));
  gen->add_option("--out", out_path, "dataset directory")->required();

  auto* pre = add_common(app.add_subcommand("pretrain", "pretrain the recognizer with CTC"));
  pre->add_option("--data", data_dir, "dataset directory")->required();
  pre->add_option("--out", out_path, "output checkpoint")->required();
  pre->add_option("--log", log_path, "JSONL epoch log");

  auto* trn = add_common(app.add_subcommand("train", "train the correction model"));
  trn->add_option("--data", data_dir, "dataset directory")->required();
  trn->add_option("--pretrained", ocr_ckpt, "recognizer checkpoint to initialize the backbone");
  trn->add_flag("--no-pretrain", no_pretrain, "keep the randomly initialized frozen backbone");
  trn->add_option("--out", out_path, "output checkpoint")->required();
  trn->add_option("--log", log_path, "JSONL epoch log");

  auto* ev = add_common(app.add_subcommand("eval", "evaluate on the test split"));
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--model", model_ckpt, "correction checkpoint")->required();
  ev->add_option("--ocr", ocr_ckpt, "recognizer checkpoint for the baseline")->required();
  ev->add_option("--out", out_path, "report directory");

  auto* cor = add_common(app.add_subcommand("correct", "label one image/answer pair"));
  cor->add_option("--data", data_dir, "dataset directory (vocabulary + geometry)")->required();
  cor->add_option("--model", model_ckpt, "correction checkpoint")->required();
  cor->add_option("--image", image_path, "PGM line image")->required();
  cor->add_option("--answer", answer, "reference answer text")->required();

  auto* viz = add_common(app.add_subcommand("viz-attn", "dump attention maps for one sample"));
  viz->add_option("--data", data_dir, "dataset directory")->required();
  viz->add_option("--model", model_ckpt, "correction checkpoint")->required();
  viz->add_option("--image", image_path, "PGM line image")->required();
  viz->add_option("--answer", answer, "reference answer text")->required();
  viz->add_option("--out", out_path, "output directory")->required();

  auto* abl = add_common(app.add_subcommand("ablate", "retrain and score model variants"));
  abl->add_option("--data", data_dir, "dataset directory")->required();
  abl->add_option("--ocr", ocr_ckpt, "recognizer checkpoint for backbone init");
  abl->add_option("--out", out_path, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      cloze::RunConfig cfg = build_config(gen, config_path, ov);
      cloze::gen_dataset(cfg, out_path, &std::cerr);
    } else if (pre->parsed()) {
      cloze::RunConfig cfg = build_config(pre, config_path, ov);
      auto res = cloze::pretrain_ocr(cfg, data_dir, out_path, log_path, &std::cerr);
      std::cerr << "final dev cer: " << res.final_dev_metric << "\n";
    } else if (trn->parsed()) {
      cloze::RunConfig cfg = build_config(trn, config_path, ov);
      if (no_pretrain && !ocr_ckpt.empty())
        throw cloze::IoError("--no-pretrain conflicts with --pretrained");
      if (!no_pretrain && ocr_ckpt.empty())
        throw cloze::IoError("pass --pretrained <ckpt> or --no-pretrain");
      cloze::train_correction(cfg, data_dir, no_pretrain ? "" : ocr_ckpt, out_path, log_path,
                              &std::cerr);
    } else if (ev->parsed()) {
      cloze::RunConfig cfg = build_config(ev, config_path, ov);
      auto res = cloze::evaluate(cfg, data_dir, model_ckpt, ocr_ckpt, out_path, nullptr);
      std::cout << cloze::MetricsReport::table({res.correction, res.baseline});
    } else if (cor->parsed()) {
      cloze::RunConfig cfg = build_config(cor, config_path, ov);
      std::cout << cloze::correct_one(cfg, data_dir, model_ckpt, image_path, answer).dump() << "\n";
    } else if (viz->parsed()) {
      cloze::RunConfig cfg = build_config(viz, config_path, ov);
      std::cout << cloze::viz_attention(cfg, data_dir, model_ckpt, image_path, answer, out_path).dump()
                << "\n";
    } else if (abl->parsed()) {
      cloze::RunConfig cfg = build_config(abl, config_path, ov);
      cloze::run_ablation(cfg, data_dir, ocr_ckpt, out_path, {}, &std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
