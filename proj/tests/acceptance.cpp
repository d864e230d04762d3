// Acceptance gate: exercises every promised behavior of the pipeline at its
// stated tolerance and prints one [PASS]/[FAIL] line per criterion, plus a
// short detail string. Exit code is the number of failed criteria.
//
// The checks deliberately re-derive expected values through independent
// oracles (exhaustive path enumeration, a full-matrix Levenshtein DP, central
// finite differences) rather than through the library's own primitives.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cloze/pipeline.hpp"
#include "testutil.hpp"

using namespace cloze;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return std::string(buf);
}

// Runs one criterion body; the body returns a detail string and throws on
// violation. A criterion also fails when it overruns its runtime budget.
void criterion(int num, const std::string& label, double budget_s,
               const std::function<std::string()>& body) {
  auto t0 = clk::now();
  std::string detail;
  bool ok = true;
  try {
    detail = body();
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  double el = std::chrono::duration<double>(clk::now() - t0).count();
  if (el > budget_s) {
    ok = false;
    detail += fmt(" [over budget: %.1fs > %.0fs]", el, budget_s);
  }
  if (!ok) ++g_failures;
  std::printf("[%s] criterion %d: %s (%.1fs) %s\n", ok ? "PASS" : "FAIL", num, label.c_str(), el,
              detail.c_str());
  std::fflush(stdout);
}

fs::path work_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "clozecheck-acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// ---------------------------------------------------------------------------
// 1. CTC oracle equivalence

std::string run_ctc_oracle() {
  int combos = 0;
  double max_dp = 0.0;
  for (int T = 1; T <= 4; ++T) {
    for (int V = 1; V <= 3; ++V) {
      const int K = V + 1;  // V symbols + blank
      const int blank = V;
      Rng rng = make_rng(101, "ctc-oracle", uint64_t(T * 8 + V));
      std::vector<std::vector<double>> lp(size_t(T), std::vector<double>(size_t(K), 0.0));
      for (auto& row : lp) {
        double mx = -1e30;
        for (auto& v : row) {
          v = rand_uniform(rng, -2.0, 2.0);
          mx = std::max(mx, v);
        }
        double denom = 0.0;
        for (double v : row) denom += std::exp(v - mx);
        double logz = mx + std::log(denom);
        for (auto& v : row) v -= logz;  // exact log-softmax in double
      }
      for (const auto& target : testutil::all_strings(V, 2)) {
        ++combos;
        int min_frames = int(target.size());
        for (size_t i = 1; i < target.size(); ++i)
          if (target[i] == target[i - 1]) ++min_frames;  // repeats need a blank
        if (T < min_frames) {
          bool threw = false;
          try {
            (void)ctc_loss_logspace(lp, target, blank);
          } catch (const TargetTooLongError&) {
            threw = true;
          }
          expect(threw, fmt("infeasible target (T=%d, |target|=%zu) not rejected", T, target.size()));
          continue;
        }
        double nll = ctc_loss_logspace(lp, target, blank);
        double oracle = testutil::ctc_nll_bruteforce(lp, target, blank);
        double dp = std::abs(std::exp(-nll) - std::exp(-oracle));
        max_dp = std::max(max_dp, dp);
        expect(dp <= 1e-9, fmt("path probability off by %.3e (T=%d V=%d)", dp, T, V));
      }
    }
  }
  return fmt("%d (frames, vocab, target) combos, max |dP| %.2e", combos, max_dp);
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness: every op, then the full fusion model

struct OpCase {
  std::string name;
  std::vector<Tensor> leaves;
  std::function<Tensor()> loss;
  double eps = 2e-3;
};

Tensor rand_t(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Rng rng = make_rng(seed, "opgrad");
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<float> v(size_t(n), 0.0f);
  for (auto& x : v) x = rand_uniform(rng, lo, hi);
  return Tensor::from_values(shape, std::move(v));
}

// Values with pairwise gaps >= 0.05 so max pooling and relu stay away from
// decision boundaries under the probe step.
Tensor spread_t(Shape shape, uint64_t seed) {
  int n = 1;
  for (int d : shape) n *= d;
  std::vector<int> order(size_t(n), 0);
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  Rng rng = make_rng(seed, "spread");
  fisher_yates(order, rng);
  std::vector<float> v(size_t(n), 0.0f);
  for (int i = 0; i < n; ++i) v[size_t(i)] = -0.8f + 0.07f * float(order[size_t(i)]);
  return Tensor::from_values(shape, std::move(v));
}

std::string run_gradient_checks() {
  std::vector<OpCase> cases;
  auto quad = [](const Tensor& y) { return mean(mul(y, y)); };

  {
    OpCase c{"add", {rand_t({3, 4}, 1), rand_t({3, 4}, 2)}, nullptr, 1e-2};
    c.loss = [c2 = c.leaves]() { return mean(mul(add(c2[0], c2[1]), add(c2[0], c2[1]))); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"add broadcast", {rand_t({3, 4}, 3), rand_t({4}, 4)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(add(l[0], l[1])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"mul", {rand_t({3, 4}, 5), rand_t({3, 4}, 6)}, nullptr, 2e-3};
    c.loss = [l = c.leaves]() { return mean(mul(l[0], l[1])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"scale", {rand_t({2, 5}, 7)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(scale(l[0], -1.7f)); };
    cases.push_back(std::move(c));
  }
  {
    // Keep every input at least 0.2 away from the relu kink.
    Tensor x = rand_t({3, 4}, 8, 0.2f, 1.0f);
    for (size_t i = 0; i < x.values().size(); i += 2) x.values()[i] *= -1.0f;
    OpCase c{"relu", {x}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(relu(l[0])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"matmul", {rand_t({3, 4}, 9), rand_t({4, 2}, 10)}, nullptr, 2e-3};
    c.loss = [l = c.leaves, quad]() { return quad(matmul(l[0], l[1])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"transpose", {rand_t({3, 4}, 11)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(matmul(transpose(l[0]), l[0])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"reshape", {rand_t({3, 4}, 12)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(reshape(l[0], {2, 6})); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"slice_cols", {rand_t({3, 6}, 13)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(slice_cols(l[0], 1, 4)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"concat_cols", {rand_t({3, 2}, 14), rand_t({3, 3}, 15)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(concat_cols({l[0], l[1], l[0]})); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"sum", {rand_t({3, 4}, 16)}, nullptr, 1e-2};
    c.loss = [l = c.leaves]() { return sum(mul(l[0], l[0])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"mean", {rand_t({3, 4}, 17)}, nullptr, 1e-2};
    c.loss = [l = c.leaves]() { return mean(mul(l[0], l[0])); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"softmax_rows", {rand_t({3, 5}, 18)}, nullptr, 2e-3};
    Tensor w = rand_t({3, 5}, 19);
    c.loss = [l = c.leaves, w]() { return mean(mul(softmax_rows(l[0]), w)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"log_softmax_rows", {rand_t({3, 5}, 20)}, nullptr, 2e-3};
    Tensor w = rand_t({3, 5}, 21);
    c.loss = [l = c.leaves, w]() { return mean(mul(log_softmax_rows(l[0]), w)); };
    cases.push_back(std::move(c));
  }
  {
    Tensor mask = Tensor::zeros({5});
    mask.values()[4] = -std::numeric_limits<float>::infinity();
    OpCase c{"masked_softmax", {rand_t({3, 5}, 22)}, nullptr, 2e-3};
    Tensor w = rand_t({3, 5}, 23);
    c.loss = [l = c.leaves, w, mask]() { return mean(mul(masked_softmax(l[0], &mask), w)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"layer_norm", {rand_t({3, 6}, 24), rand_t({6}, 25, 0.5f, 1.5f), rand_t({6}, 26)},
             nullptr, 2e-3};
    Tensor w = rand_t({3, 6}, 27);
    c.loss = [l = c.leaves, w]() { return mean(mul(layer_norm(l[0], l[1], l[2]), w)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"dropout", {rand_t({4, 4}, 28)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() {
      Rng r = make_rng(29, "dropmask");  // same mask on every probe
      return quad(dropout(l[0], 0.4f, r, true));
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"embedding_lookup", {rand_t({5, 3}, 30)}, nullptr, 1e-2};
    std::vector<int> ids{0, 2, 1, 2, 4};  // repeated id exercises grad accumulation
    c.loss = [l = c.leaves, ids, quad]() { return quad(embedding_lookup(l[0], ids)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"conv2d", {rand_t({2, 4, 6}, 31), rand_t({3, 2, 3, 3}, 32), rand_t({3}, 33)},
             nullptr, 2e-3};
    c.loss = [l = c.leaves, quad]() { return quad(conv2d(l[0], l[1], l[2], 1)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"maxpool2d", {spread_t({2, 4, 6}, 34)}, nullptr, 1e-2};
    c.loss = [l = c.leaves, quad]() { return quad(maxpool2d(l[0], 2, 2)); };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"cross_entropy_rows", {rand_t({4, 5}, 35)}, nullptr, 2e-3};
    std::vector<int> targets{1, 0, 3, 2};
    std::vector<uint8_t> valid{1, 1, 0, 1};
    c.loss = [l = c.leaves, targets, valid]() {
      return cross_entropy_rows(l[0], targets, valid);
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"ctc_loss", {rand_t({4, 4}, 36)}, nullptr, 2e-3};
    std::vector<int> target{1, 0};
    c.loss = [l = c.leaves, target]() {
      return ctc_loss(log_softmax_rows(l[0]), target, 3);
    };
    cases.push_back(std::move(c));
  }

  double max_rel_ops = 0.0;
  for (auto& c : cases) {
    auto res = testutil::check_gradients(c.leaves, c.loss, c.eps, 1e-4);
    max_rel_ops = std::max(max_rel_ops, res.max_rel);
    expect(res.bad == 0, fmt("op '%s': %d gradient entries over 1e-4 (max rel %.2e)",
                             c.name.c_str(), res.bad, res.max_rel));
  }

  // Full model at toy sizes: 4 image blocks, 5 text slots, width 8, two
  // cross-attention fusion blocks.
  Vocabulary vocab = Vocabulary::synthetic(3);
  BackboneConfig bb;
  bb.channels = {2, 3, 4, 4};
  bb.units = {1, 0, 1, 0};
  bb.pools = {{2, 2}, {2, 2}, {2, 2}, {4, 1}};
  bb.dropout = 0.0f;
  ModelConfig mc;
  mc.model_dim = 8;
  mc.text_embed_dim = 6;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.fusion_blocks = 2;
  mc.ffn_mult = 2;
  mc.max_text_len = 5;
  mc.dropout = 0.0f;
  CorrectionModel m(bb, mc, vocab, 32, 32, 8, 9);

  // Evaluate at a well-conditioned point: fresh tiny inits put layer norms on
  // near-constant rows where curvature swamps a central difference.
  Rng rr = make_rng(42, "recond");
  for (auto& p : m.store().params()) {
    for (auto& v : p.tensor.values()) v = rand_uniform(rr, -0.3f, 0.3f);
    if (p.name.size() > 3 && p.name.substr(p.name.size() - 3) == ".ng")
      for (auto& v : p.tensor.values()) v += v >= 0.0f ? 0.5f : -0.5f;
  }

  GlyphImage img = GlyphImage::blank(32, 32);
  Rng prng = make_rng(2, "pix");
  for (auto& p : img.pixels) p = rand_uniform(prng, 0.0f, 1.0f);
  img.valid_width = 24;

  LabelSeq labels{EditLabel::O, EditLabel::BSub, EditLabel::ISub};
  std::vector<Tensor> leaves;
  int n_params = 0;
  for (auto& p : m.store().params()) {
    leaves.push_back(p.tensor);
    n_params += p.tensor.numel();
  }
  Rng rng = make_rng(0, "r");
  auto res = testutil::check_gradients(
      leaves,
      [&] {
        Tensor lg = m.logits(img, 3, {1, 2}, false, rng);
        return m.loss(lg, labels);
      },
      1e-3, 1e-4);
  expect(res.bad == 0,
         fmt("full model: %d gradient entries over 1e-4 (max rel %.2e)", res.bad, res.max_rel));
  return fmt("%zu ops + full model (%d params), max rel %.2e / %.2e", cases.size(), n_params,
             max_rel_ops, res.max_rel);
}

// ---------------------------------------------------------------------------
// 3. Alignment oracle

void check_pair(const std::vector<int>& content, const std::vector<int>& answer) {
  Alignment<int> a = align_sequences(content, answer);
  int oracle = testutil::edit_distance_oracle(content, answer);
  expect(a.edit_count == oracle,
         fmt("edit count %d != DP oracle %d", a.edit_count, oracle));
  expect(a.labels.size() == answer.size() + 1, "label count != answer length + 1");
  expect(bio_well_formed(a.labels), "labels not BIO well-formed");
  std::vector<int> round = apply_labels(answer, a.labels, a.subs, a.adds);
  expect(round == content, "apply_labels does not round-trip to the content");
}

std::string run_alignment_oracle() {
  auto pool = testutil::all_strings(3, 4);
  long pairs = 0;
  for (const auto& content : pool)
    for (const auto& answer : pool) {
      check_pair(content, answer);
      ++pairs;
    }

  Rng rng = make_rng(303, "align-rand");
  for (int i = 0; i < 10000; ++i) {
    int cl = rand_int(rng, 5, 12), al = rand_int(rng, 5, 12), k = rand_int(rng, 2, 26);
    std::vector<int> content(size_t(cl), 0), answer(size_t(al), 0);
    for (auto& v : content) v = rand_int(rng, 0, k - 1);
    for (auto& v : answer) v = rand_int(rng, 0, k - 1);
    check_pair(content, answer);
    ++pairs;
  }
  return fmt("%ld pairs: edit counts match DP, all round-trip", pairs);
}

// ---------------------------------------------------------------------------
// 4. Canonical label sequences

std::string labels_str(const LabelSeq& l) {
  std::string out;
  for (size_t i = 0; i < l.size(); ++i) {
    if (i) out += ' ';
    out += label_name(l[i]);
  }
  return out;
}

std::string run_canonical_labels() {
  auto check = [](const std::string& content, const std::string& answer,
                  const std::string& want) {
    std::string got = labels_str(derive_labels(testutil::to_ids(content), testutil::to_ids(answer)));
    expect(got == want, "(" + content + ", " + answer + ") -> '" + got + "', want '" + want + "'");
  };
  check("ABXD", "ABCD", "O O O B-sub O");
  check("HIJKLMN", "ABCDEFG", "O B-sub I-sub I-sub I-sub I-sub I-sub I-sub");
  check("axbycd", "abcd", "O B-add B-add O O");
  check("GHIJ", "GHIJ", "O O O O O");
  return "4 canonical (content, answer) label sequences reproduced";
}

// ---------------------------------------------------------------------------
// 5. Negative-sample augmentation contract

std::string run_augmentation_contract() {
  // Direct expansion: counts per family must stay inside the configured
  // [1, 3] draw, every negative must disagree with the content, and its
  // stored labels must equal an independent re-derivation.
  Vocabulary vocab = Vocabulary::synthetic(16);
  ConfusionSet confusion = ConfusionSet::paired(vocab);
  AugmentConfig acfg;
  acfg.max_sub = 3;
  acfg.max_del = 3;
  acfg.max_ins = 3;
  Rng rng = make_rng(505, "accept-aug");
  long negatives = 0, lines = 0;
  while (negatives < 1000) {
    ++lines;
    int len = rand_int(rng, 2, 4);
    std::vector<int> ids(size_t(len), 0);
    for (auto& v : ids) v = rand_int(rng, 0, vocab.char_count() - 1);
    AugmentStats st;
    auto negs = make_negatives(ids, ids, vocab, confusion, acfg, rng, &st);
    expect(st.made_sub >= 1 && st.made_sub <= 3, "substitution count outside [1,3]");
    expect(st.made_del >= 1 && st.made_del <= 3, "deletion count outside [1,3]");
    expect(st.made_ins >= 1 && st.made_ins <= 3, "insertion count outside [1,3]");
    expect(int(negs.size()) == st.made_sub + st.made_del + st.made_ins,
           "family counts do not add up to the expansion");
    for (const auto& n : negs) {
      expect(n.answer != ids, "negative answer equals the content (y would be 0)");
      Alignment<int> re = align_sequences(ids, n.answer);
      expect(re.labels == n.alignment.labels, "stored labels != recomputed labels");
      bool any = false;
      for (auto l : n.alignment.labels) any = any || l != EditLabel::O;
      expect(any, "negative carries an all-O labeling");
      ++negatives;
    }
  }

  // Dataset-level: every generated negative keeps y=1, reuses its parent
  // line's image file untouched, and stores labels that re-derive exactly.
  RunConfig cfg;
  cfg.train_lines = 334;
  cfg.dev_lines = 2;
  cfg.test_lines = 2;
  fs::path dir = work_root() / "augment-data";
  gen_dataset(cfg, dir);
  DataEnv env = load_data_env(dir);
  auto manifest = load_manifest(dir / "manifest-train.jsonl");
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : manifest) by_id[s.id] = &s;
  long ds_negatives = 0;
  for (const auto& s : manifest) {
    auto cut = s.id.find("-n");
    if (cut == std::string::npos) continue;
    ++ds_negatives;
    expect(s.y == 1, "dataset negative with y != 1");
    auto parent = by_id.find(s.id.substr(0, cut));
    expect(parent != by_id.end(), "negative without a parent line");
    expect(parent->second->image == s.image, "negative does not share the parent image");
    expect(parent->second->y == 0, "parent of a negative is not a clean line");
    expect(fs::exists(dir / s.image), "negative image file missing");
    LabelSeq re = derive_labels(encode_text(s.content, env.vocab), encode_text(s.answer, env.vocab));
    expect(labels_to_names(re) == s.labels, "dataset negative labels != recomputed labels");
  }
  expect(ds_negatives >= 1000, fmt("only %ld dataset negatives generated", ds_negatives));
  return fmt("%ld direct (%ld lines) + %ld dataset negatives all consistent", negatives, lines,
             ds_negatives);
}

// ---------------------------------------------------------------------------
// 6. Attention masking and padded-pixel invariance

std::string run_masking_invariants() {
  // (a) attention rows on random batches.
  Vocabulary vocab = Vocabulary::synthetic(6);
  BackboneConfig bb;
  bb.channels = {2, 3, 4, 6};
  bb.units = {1, 1, 1, 1};
  bb.pools = {{2, 2}, {2, 2}, {2, 2}, {4, 1}};
  bb.dropout = 0.0f;
  ModelConfig mc;
  mc.model_dim = 16;
  mc.text_embed_dim = 8;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.fusion_blocks = 2;
  mc.ffn_mult = 2;
  mc.max_text_len = 6;
  mc.dropout = 0.0f;
  CorrectionModel m(bb, mc, vocab, 32, 64, 8, 606);

  Rng rng = make_rng(607, "mask-batches");
  long rows = 0, zeros = 0;
  for (int trial = 0; trial < 30; ++trial) {
    Tensor feats = rand_t({8, bb.feature_dim()}, uint64_t(700 + trial));
    int vb = rand_int(rng, 1, 8);
    int alen = rand_int(rng, 1, mc.max_text_len - 1);
    std::vector<int> answer(size_t(alen), 0);
    for (auto& a : answer) a = rand_int(rng, 0, vocab.char_count() - 1);

    AttnExport ex;
    Rng frng = make_rng(608, "fwd");
    int valid_len = 0;
    (void)m.logits_from_features(feats, vb, answer, false, frng, &ex, &valid_len);

    auto check_matrix = [&](const AttnMatrix& mat, int valid_keys, const char* kind) {
      for (int h = 0; h < mat.heads; ++h)
        for (int i = 0; i < mat.lq; ++i) {
          double s = 0.0;
          for (int j = 0; j < mat.lk; ++j) {
            float w = mat.at(h, i, j);
            if (j >= valid_keys) {
              expect(w == 0.0f, fmt("%s: padded key %d carries weight %g", kind, j, w));
              ++zeros;
            }
            s += double(w);
          }
          if (i < valid_len)
            expect(std::abs(s - 1.0) <= 1e-6,
                   fmt("%s: row %d sums to %.9f, not 1 +- 1e-6", kind, i, s));
          else
            expect(s == 0.0, fmt("%s: padded query row %d not zeroed", kind, i));
          ++rows;
        }
    };
    for (const auto& mat : ex.cross) check_matrix(mat, vb, "cross");
    for (const auto& mat : ex.text_self) check_matrix(mat, valid_len, "text-self");
  }

  // (b) pixels in the padded region, beyond the receptive margin of the last
  // valid block, must not move any valid image-encoding row.
  BackboneConfig small;
  small.channels = {2, 3};
  small.units = {1, 1};
  small.pools = {{2, 2}, {2, 2}};
  small.dropout = 0.0f;
  ModelConfig smc = mc;
  smc.model_dim = 8;
  smc.encoder_blocks = 1;
  smc.fusion_blocks = 1;
  CorrectionModel pm(small, smc, vocab, 4, 32, 4, 609);

  GlyphImage img = GlyphImage::blank(4, 32);
  Rng prng = make_rng(610, "pix");
  for (auto& p : img.pixels) p = rand_uniform(prng, 0.0f, 1.0f);
  const int vb = 2;
  img.valid_width = vb * 4;
  const int margin = small.receptive_margin_px();
  const int x0 = img.valid_width + margin;
  expect(x0 < img.width, "image too narrow for a beyond-margin perturbation");

  auto s_img_rows = [&](const GlyphImage& g) {
    NoGradGuard ngg;
    Rng r = make_rng(0, "eval");
    Tensor s = pm.encode_image(pm.backbone_features(g, false, r), vb, false, r);
    return std::vector<float>(s.values().begin(),
                              s.values().begin() + size_t(vb) * size_t(smc.model_dim));
  };
  auto base = s_img_rows(img);

  GlyphImage poked = img;
  for (int y = 0; y < poked.height; ++y)
    for (int x = x0; x < poked.width; ++x) poked.at(y, x) = 1.0f - poked.at(y, x);
  auto after = s_img_rows(poked);
  expect(after == base, "beyond-margin padded pixels changed a valid image row");

  GlyphImage inside = img;
  inside.at(1, 2) = 1.0f - inside.at(1, 2);
  expect(s_img_rows(inside) != base, "in-content perturbation had no effect (vacuous check)");

  return fmt("%ld attention rows checked, %ld padded weights exactly 0; "
             "pixel invariance holds beyond %dpx margin",
             rows, zeros, margin);
}

// ---------------------------------------------------------------------------
// 7. Overfit capacity

std::string run_overfit() {
  // (a) correction model memorizes 50 samples to span F1 >= 0.99.
  RunConfig cfg;
  cfg.train_lines = 13;  // 13 lines -> 52 samples; the first 50 are used
  cfg.dev_lines = 2;
  cfg.test_lines = 2;
  fs::path dir = work_root() / "overfit-data";
  gen_dataset(cfg, dir);
  DataEnv env = load_data_env(dir);
  auto all = prep_split(env, "train", cfg.glyphs.block_width);
  expect(all.size() >= 50, "expected at least 50 training samples");
  std::vector<PreppedSample> train(all.begin(), all.begin() + 50);
  ImageCache images(env.dir);

  CorrectionModel model(cfg.backbone, cfg.model, env.vocab, cfg.glyphs.img_height,
                        cfg.resolved_max_width(), cfg.glyphs.block_width, cfg.seed);
  model.freeze_backbone();
  std::unordered_map<std::string, Tensor> feats;
  {
    NoGradGuard ng;
    Rng frng = make_rng(0, "feat");
    for (const auto& p : train)
      if (!feats.count(p.meta.image))
        feats.emplace(p.meta.image, model.backbone_features(images.get(p.meta), false, frng));
  }

  const int max_epochs = 200, batch = 4;
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  int n = int(train.size());
  int bpe = (n + batch - 1) / batch;
  int64_t total_steps = int64_t(max_epochs) * bpe, step = 0;
  Rng trng = make_rng(cfg.seed, "overfit-cor");
  double f1 = 0.0;
  int epochs_a = 0;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::vector<int> order(size_t(n), 0);
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
    Rng erng = make_rng(cfg.seed, "overfit-epoch", uint64_t(epoch));
    fisher_yates(order, erng);
    for (int b = 0; b < bpe; ++b) {
      int lo = b * batch, hi = std::min(n, lo + batch);
      model.store().zero_grad();
      for (int k = lo; k < hi; ++k) {
        const auto& p = train[size_t(order[size_t(k)])];
        Tensor lg = model.logits_from_features(feats.at(p.meta.image), p.valid_blocks,
                                               p.answer_ids, true, trng);
        backward(scale(model.loss(lg, p.labels), 1.0f / float(hi - lo)));
      }
      opt.step(model.store(), cosine_anneal(cfg.lr_correct, step, total_steps));
      ++step;
    }
    MetricsAccumulator acc;
    for (const auto& p : train)
      acc.add(model.predict_from_features(feats.at(p.meta.image), p.valid_blocks, p.answer_ids),
              p.labels);
    f1 = acc.report("overfit").span_f1;
    epochs_a = epoch + 1;
    if (f1 >= 0.99) break;
  }
  expect(f1 >= 0.99, fmt("span F1 %.4f after %d epochs (need >= 0.99 within 200)", f1, epochs_a));

  // (b) recognizer memorizes 200 lines to CER < 0.05 within 15 epochs.
  RunConfig ocfg;
  ocfg.train_lines = 200;
  ocfg.dev_lines = 2;
  ocfg.test_lines = 2;
  ocfg.augment.max_sub = 0;
  ocfg.augment.max_del = 0;
  ocfg.augment.max_ins = 0;
  fs::path odir = work_root() / "overfit-ocr";
  gen_dataset(ocfg, odir);
  DataEnv oenv = load_data_env(odir);
  auto lines = prep_split(oenv, "train", ocfg.glyphs.block_width);
  expect(lines.size() == 200, fmt("expected 200 clean lines, have %zu", lines.size()));
  ImageCache oimages(oenv.dir);

  OcrModel ocr(ocfg.backbone, oenv.vocab, ocfg.glyphs.img_height, ocfg.glyphs.block_width,
               ocfg.seed);
  AdamW oopt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  const int omax = 15, obatch = 2;
  int on = int(lines.size());
  int obpe = (on + obatch - 1) / obatch;
  int64_t ototal = int64_t(omax) * obpe, ostep = 0;
  Rng orng = make_rng(ocfg.seed, "overfit-ocr");
  double cer = 1.0;
  int epochs_b = 0;
  for (int epoch = 0; epoch < omax; ++epoch) {
    std::vector<int> order(size_t(on), 0);
    for (int i = 0; i < on; ++i) order[size_t(i)] = i;
    Rng erng = make_rng(ocfg.seed, "overfit-ocr-epoch", uint64_t(epoch));
    fisher_yates(order, erng);
    for (int b = 0; b < obpe; ++b) {
      int lo = b * obatch, hi = std::min(on, lo + obatch);
      ocr.store().zero_grad();
      for (int k = lo; k < hi; ++k) {
        const auto& p = lines[size_t(order[size_t(k)])];
        backward(scale(ocr.loss(oimages.get(p.meta), p.content_ids, true, orng),
                       1.0f / float(hi - lo)));
      }
      oopt.step(ocr.store(), cosine_anneal(ocfg.lr_pretrain, ostep, ototal));
      ++ostep;
    }
    double s = 0.0;
    for (const auto& p : lines) s += char_error_rate(p.content_ids, ocr.decode(oimages.get(p.meta)));
    cer = s / double(on);
    epochs_b = epoch + 1;
    if (cer < 0.05) break;
  }
  expect(cer < 0.05, fmt("train CER %.4f after %d epochs (need < 0.05 within 15)", cer, epochs_b));

  return fmt("span F1 %.3f in %d epochs; train CER %.4f in %d epochs", f1, epochs_a, cer,
             epochs_b);
}

// ---------------------------------------------------------------------------
// 8-10. Benchmark: multimodal correction vs decode-then-compare baseline

struct BenchRun {
  EvalResult with_pretrain;
  EvalResult no_pretrain;
  double pretrain_cer = 0.0;
  double secs_main = 0.0, secs_ablation = 0.0;
};

const BenchRun& benchmark() {
  static const BenchRun run = [] {
    BenchRun r;
    RunConfig cfg;  // benchmark defaults: seed 42, 2000 train / 400 test samples
    fs::path root = work_root() / "benchmark";
    auto t0 = clk::now();
    gen_dataset(cfg, root / "data");
    TrainResult pre = pretrain_ocr(cfg, root / "data", root / "ocr.ckpt");
    r.pretrain_cer = pre.final_dev_metric;
    train_correction(cfg, root / "data", root / "ocr.ckpt", root / "cor.ckpt");
    r.with_pretrain = evaluate(cfg, root / "data", root / "cor.ckpt", root / "ocr.ckpt");
    auto t1 = clk::now();
    train_correction(cfg, root / "data", {}, root / "cor-scratch.ckpt");
    r.no_pretrain = evaluate(cfg, root / "data", root / "cor-scratch.ckpt", root / "ocr.ckpt");
    auto t2 = clk::now();
    r.secs_main = std::chrono::duration<double>(t1 - t0).count();
    r.secs_ablation = std::chrono::duration<double>(t2 - t1).count();
    return r;
  }();
  return run;
}

std::string run_benchmark_gain() {
  const BenchRun& r = benchmark();
  const MetricsReport& c = r.with_pretrain.correction;
  const MetricsReport& b = r.with_pretrain.baseline;
  expect(c.samples == 400 && b.samples == 400, "test split is not 400 samples");
  expect(c.accuracy >= b.accuracy + 0.05,
         fmt("accuracy gain %.4f -> %.4f is under 5 points", b.accuracy, c.accuracy));
  expect(c.error_precision > b.error_precision,
         fmt("error precision %.4f does not exceed baseline %.4f", c.error_precision,
             b.error_precision));
  return fmt("acc %.4f vs %.4f (+%.1f pts), errP %.4f > %.4f (ocr dev cer %.3f)", c.accuracy,
             b.accuracy, 100.0 * (c.accuracy - b.accuracy), c.error_precision, b.error_precision,
             r.pretrain_cer);
}

std::string run_pretrain_ablation() {
  const BenchRun& r = benchmark();
  double with = r.with_pretrain.correction.accuracy;
  double without = r.no_pretrain.correction.accuracy;
  expect(without < with,
         fmt("accuracy without pretraining (%.4f) not strictly below %.4f", without, with));
  return fmt("accuracy %.4f (pretrained) vs %.4f (from scratch)", with, without);
}

std::string run_baseline_bias() {
  const BenchRun& r = benchmark();
  double base = r.with_pretrain.baseline.error_recall;
  double corr = r.with_pretrain.correction.error_recall;
  expect(base >= corr, fmt("baseline error recall %.4f below correction %.4f", base, corr));
  return fmt("error recall %.4f (baseline) >= %.4f (correction)", base, corr);
}

// ---------------------------------------------------------------------------
// 11. End-to-end determinism

void collect_files(const fs::path& root, std::map<std::string, fs::path>& out) {
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = e.path();
}

void compare_numbers(const nlohmann::json& a, const nlohmann::json& b, const std::string& where) {
  expect(a.type() == b.type(), "metric types diverge at " + where);
  if (a.is_object()) {
    expect(a.size() == b.size(), "metric keys diverge at " + where);
    for (auto it = a.begin(); it != a.end(); ++it)
      compare_numbers(it.value(), b.at(it.key()), where + "." + it.key());
  } else if (a.is_array()) {
    expect(a.size() == b.size(), "metric array sizes diverge at " + where);
    for (size_t i = 0; i < a.size(); ++i)
      compare_numbers(a[i], b[i], where + "[" + std::to_string(i) + "]");
  } else if (a.is_number()) {
    double x = a.get<double>(), y = b.get<double>();
    double rel = std::abs(x - y) / std::max(1.0, std::max(std::abs(x), std::abs(y)));
    expect(rel <= 1e-6, fmt("metric %s diverges: %.9g vs %.9g", where.c_str(), x, y));
  } else {
    expect(a == b, "non-numeric metric diverges at " + where);
  }
}

std::string run_determinism() {
  RunConfig cfg;
  cfg.train_lines = 24;
  cfg.dev_lines = 4;
  cfg.test_lines = 12;
  cfg.epochs_pretrain = 3;
  cfg.epochs_correct = 3;

  nlohmann::json reports[2];
  fs::path dirs[2];
  for (int i = 0; i < 2; ++i) {
    fs::path root = work_root() / ("determinism-" + std::to_string(i));
    dirs[i] = root / "data";
    gen_dataset(cfg, dirs[i]);
    pretrain_ocr(cfg, dirs[i], root / "ocr.ckpt");
    train_correction(cfg, dirs[i], root / "ocr.ckpt", root / "cor.ckpt");
    EvalResult ev = evaluate(cfg, dirs[i], root / "cor.ckpt", root / "ocr.ckpt");
    reports[i] = nlohmann::json{{"correction", ev.correction.to_json()},
                                {"baseline", ev.baseline.to_json()}};
  }

  std::map<std::string, fs::path> a, b;
  collect_files(dirs[0], a);
  collect_files(dirs[1], b);
  expect(a.size() == b.size(), "runs produced different file sets");
  long files = 0;
  for (const auto& [rel, pa] : a) {
    auto it = b.find(rel);
    expect(it != b.end(), "missing file in second run: " + rel);
    expect(read_text_file(pa) == read_text_file(it->second), "dataset bytes differ: " + rel);
    ++files;
  }
  compare_numbers(reports[0], reports[1], "report");
  return fmt("%ld dataset files byte-identical, all metrics within 1e-6", files);
}

}  // namespace

int main() {
  std::printf("acceptance gate\n");
  std::fflush(stdout);

  criterion(1, "ctc matches exhaustive path enumeration", 10.0, run_ctc_oracle);
  criterion(2, "gradients match central finite differences", 60.0, run_gradient_checks);
  criterion(3, "alignment matches an independent edit-distance DP", 30.0, run_alignment_oracle);
  criterion(4, "canonical label sequences reproduced", 10.0, run_canonical_labels);
  criterion(5, "negative augmentation contract", 120.0, run_augmentation_contract);
  criterion(6, "attention masking and padded-pixel invariance", 60.0, run_masking_invariants);
  criterion(7, "overfit capacity (correction + recognizer)", 600.0, run_overfit);
  criterion(8, "multimodal correction beats the decode-and-compare baseline", 1800.0,
            run_benchmark_gain);
  criterion(9, "pretraining ablation scores strictly lower", 1800.0, run_pretrain_ablation);
  criterion(10, "baseline over-flags errors (recall bias)", 60.0, run_baseline_bias);
  criterion(11, "same seed reproduces bytes and metrics", 600.0, run_determinism);

  std::printf("%d criteria failed\n", g_failures);
  return g_failures;
}
