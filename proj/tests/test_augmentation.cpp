#include <catch2/catch_amalgamated.hpp>

#include "cloze/augmentation.hpp"

using namespace cloze;

namespace {

struct Setup {
  Vocabulary vocab = Vocabulary::synthetic(8);
  ConfusionSet confusion = ConfusionSet::paired(Vocabulary::synthetic(8));
};

}  // namespace

TEST_CASE("default config expands one pair into exactly three negatives") {
  Setup s;
  AugmentConfig cfg;  // max 1 per family
  REQUIRE(cfg.min_negatives() == 3);
  REQUIRE(cfg.max_negatives() == 3);
  std::vector<int> content{0, 2, 4};
  Rng rng = make_rng(1, "aug");
  AugmentStats st;
  auto negs = make_negatives(content, content, s.vocab, s.confusion, cfg, rng, &st);
  REQUIRE(negs.size() == 3);
  REQUIRE(st.made_sub == 1);
  REQUIRE(st.made_del == 1);
  REQUIRE(st.made_ins == 1);

  for (const auto& n : negs) {
    REQUIRE(reduce_binary(n.alignment.labels) == 1);  // every negative is an error
    REQUIRE(bio_well_formed(n.alignment.labels));
    REQUIRE(n.alignment.labels.size() == n.answer.size() + 1);
    REQUIRE(n.alignment.labels == derive_labels(content, n.answer));
    REQUIRE(apply_alignment(n.answer, n.alignment) == content);  // round trip
  }
}

TEST_CASE("corruption families map to their label families") {
  Setup s;
  std::vector<int> content{0, 2, 4, 6};
  Rng rng = make_rng(2, "aug");

  AugmentConfig sub_only;
  sub_only.max_del = sub_only.max_ins = 0;
  auto subs = make_negatives(content, content, s.vocab, s.confusion, sub_only, rng);
  REQUIRE(subs.size() == 1);
  REQUIRE(subs[0].answer.size() == content.size());
  int bsub = 0;
  for (auto l : subs[0].alignment.labels) {
    REQUIRE((l == EditLabel::O || l == EditLabel::BSub));
    bsub += l == EditLabel::BSub;
  }
  REQUIRE(bsub == 1);
  // The swapped character prefers the confusion partner (even id 2k <-> 2k+1).
  int pos = -1;
  for (size_t i = 0; i < content.size(); ++i)
    if (subs[0].answer[i] != content[i]) pos = int(i);
  REQUIRE(pos >= 0);
  REQUIRE(subs[0].answer[size_t(pos)] == (content[size_t(pos)] ^ 1));

  AugmentConfig del_only;
  del_only.max_sub = del_only.max_ins = 0;
  auto dels = make_negatives(content, content, s.vocab, s.confusion, del_only, rng);
  REQUIRE(dels.size() == 1);
  REQUIRE(dels[0].answer.size() == content.size() - 1);
  // A character missing from the answer shows up as an addition span.
  int badd = 0;
  for (auto l : dels[0].alignment.labels) badd += l == EditLabel::BAdd;
  REQUIRE(badd == 1);

  AugmentConfig ins_only;
  ins_only.max_sub = ins_only.max_del = 0;
  auto inss = make_negatives(content, content, s.vocab, s.confusion, ins_only, rng);
  REQUIRE(inss.size() == 1);
  REQUIRE(inss[0].answer.size() == content.size() + 1);
  // An extra answer character is labeled for deletion.
  int bdel = 0;
  for (auto l : inss[0].alignment.labels) bdel += l == EditLabel::BDel;
  REQUIRE(bdel == 1);
}

TEST_CASE("edge cases skip instead of emitting degenerate answers") {
  Setup s;
  Rng rng = make_rng(3, "aug");

  // Single-character answer: deletion would empty it.
  AugmentStats st1;
  auto n1 = make_negatives({0}, {0}, s.vocab, s.confusion, AugmentConfig{}, rng, &st1);
  REQUIRE(st1.skipped_would_empty == 1);
  REQUIRE(st1.made_del == 0);
  REQUIRE(n1.size() == 2);  // sub + ins still fire

  // Empty answer (pure-addition positive): only insertion applies.
  AugmentStats st2;
  auto n2 = make_negatives({0, 2}, {}, s.vocab, s.confusion, AugmentConfig{}, rng, &st2);
  REQUIRE(st2.skipped_empty_answer == 2);
  REQUIRE(st2.made_ins == 1);
  REQUIRE(n2.size() == 1);
  REQUIRE(n2[0].answer.size() == 1);

  // Length cap: insertion would exceed it.
  AugmentConfig capped;
  capped.max_answer_len = 3;
  AugmentStats st3;
  auto n3 = make_negatives({0, 2, 4}, {0, 2, 4}, s.vocab, s.confusion, capped, rng, &st3);
  REQUIRE(st3.skipped_too_long == 1);
  REQUIRE(st3.made_ins == 0);
  REQUIRE(n3.size() == 2);

  AugmentConfig bad;
  bad.max_sub = -1;
  REQUIRE_THROWS_AS(make_negatives({0}, {0}, s.vocab, s.confusion, bad, rng),
                    std::invalid_argument);
}

TEST_CASE("multi-round budgets stay within the configured bounds") {
  Setup s;
  AugmentConfig cfg;
  cfg.max_sub = 3;
  cfg.max_del = 2;
  cfg.max_ins = 4;
  std::vector<int> content{0, 2, 4, 6, 1};
  int lo = 1000, hi = -1;
  Rng rng = make_rng(4, "aug");
  for (int rep = 0; rep < 200; ++rep) {
    auto negs = make_negatives(content, content, s.vocab, s.confusion, cfg, rng);
    lo = std::min(lo, int(negs.size()));
    hi = std::max(hi, int(negs.size()));
    for (const auto& n : negs) REQUIRE(reduce_binary(n.alignment.labels) == 1);
  }
  REQUIRE(lo >= cfg.min_negatives());
  REQUIRE(hi <= cfg.max_negatives());
  REQUIRE(hi > lo);  // the per-family draw actually varies
}

TEST_CASE("augmentation is a pure function of the rng stream") {
  Setup s;
  std::vector<int> content{0, 2, 4};
  std::vector<int> answer{0, 3, 4};
  auto run = [&] {
    Rng rng = make_rng(99, "aug");
    return make_negatives(content, answer, s.vocab, s.confusion, AugmentConfig{}, rng);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].answer == b[i].answer);
    REQUIRE(a[i].alignment.labels == b[i].alignment.labels);
  }
}

TEST_CASE("negatives derived from an already wrong answer stay consistent") {
  Setup s;
  std::vector<int> content{0, 2, 4, 6};
  std::vector<int> answer{0, 3, 4};  // already differs from the content
  Rng rng = make_rng(5, "aug");
  auto negs = make_negatives(content, answer, s.vocab, s.confusion, AugmentConfig{}, rng);
  for (const auto& n : negs) {
    REQUIRE(n.alignment.labels == derive_labels(content, n.answer));
    REQUIRE(apply_alignment(n.answer, n.alignment) == content);
    REQUIRE(reduce_binary(n.alignment.labels) == 1);
  }
}
