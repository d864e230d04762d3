#pragma once

// Negative-sample synthesis. Each correct (content, answer) pair is expanded
// with single-edit corruptions of the ANSWER text while the handwriting and
// its image stay untouched: confusable substitutions, character drops, and
// character insertions. Labels are re-derived against the unchanged content,
// so every emitted sample is consistent by construction.

#include "cloze/vocab.hpp"
#include "cloze/alignment.hpp"

namespace cloze {

struct AugmentConfig {
  // Per family, the number of corrupted copies is drawn uniformly in
  // [1, max_*]; 0 disables the family.
  int max_sub = 1;
  int max_del = 1;
  int max_ins = 1;
  int max_answer_len = 0;  // 0 = unlimited; insertions beyond this are skipped

  void validate() const {
    if (max_sub < 0 || max_del < 0 || max_ins < 0)
      throw std::invalid_argument("augment maxima must be >= 0");
  }

  int min_negatives() const { return (max_sub > 0) + (max_del > 0) + (max_ins > 0); }
  int max_negatives() const { return max_sub + max_del + max_ins; }
};

struct AugmentStats {
  int made_sub = 0, made_del = 0, made_ins = 0;
  int skipped_would_empty = 0;  // deletion from a 1-char answer
  int skipped_too_long = 0;     // insertion past max_answer_len
  int skipped_empty_answer = 0; // sub/del need at least one character
};

struct NegativeSample {
  std::vector<int> answer;
  Alignment<int> alignment;
};

// Expands one clean pair into negatives. `content_ids` is what the image
// shows; `answer_ids` is the reference text being corrupted.
inline std::vector<NegativeSample> make_negatives(const std::vector<int>& content_ids,
                                                  const std::vector<int>& answer_ids,
                                                  const Vocabulary& vocab,
                                                  const ConfusionSet& confusion,
                                                  const AugmentConfig& cfg, Rng& rng,
                                                  AugmentStats* stats = nullptr) {
  cfg.validate();
  AugmentStats local;
  AugmentStats& st = stats ? *stats : local;
  std::vector<NegativeSample> out;

  auto emit = [&](std::vector<int> corrupted) {
    Alignment<int> al = align_sequences(content_ids, corrupted);
    out.push_back(NegativeSample{std::move(corrupted), std::move(al)});
  };

  int len = int(answer_ids.size());

  if (cfg.max_sub > 0) {
    int rounds = rand_int(rng, 1, cfg.max_sub);
    for (int r = 0; r < rounds; ++r) {
      if (len == 0) {
        ++st.skipped_empty_answer;
        continue;
      }
      std::vector<int> a = answer_ids;
      int pos = rand_int(rng, 0, len - 1);
      a[size_t(pos)] = sample_substitute(a[size_t(pos)], confusion, vocab, rng);
      emit(std::move(a));
      ++st.made_sub;
    }
  }

  if (cfg.max_del > 0) {
    int rounds = rand_int(rng, 1, cfg.max_del);
    for (int r = 0; r < rounds; ++r) {
      if (len == 0) {
        ++st.skipped_empty_answer;
        continue;
      }
      if (len == 1) {
        ++st.skipped_would_empty;
        continue;
      }
      std::vector<int> a = answer_ids;
      int pos = rand_int(rng, 0, len - 1);
      a.erase(a.begin() + pos);
      emit(std::move(a));
      ++st.made_del;
    }
  }

  if (cfg.max_ins > 0) {
    int rounds = rand_int(rng, 1, cfg.max_ins);
    for (int r = 0; r < rounds; ++r) {
      if (cfg.max_answer_len > 0 && len + 1 > cfg.max_answer_len) {
        ++st.skipped_too_long;
        continue;
      }
      std::vector<int> a = answer_ids;
      int slot = rand_int(rng, 0, len);  // inclusive: may append
      int ch = rand_int(rng, 0, vocab.char_count() - 1);
      a.insert(a.begin() + slot, ch);
      emit(std::move(a));
      ++st.made_ins;
    }
  }

  return out;
}

}  // namespace cloze
