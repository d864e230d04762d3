#pragma once

// Sequence labeling over answer characters by minimum edit distance against
// the handwritten content. Position 0 is the leading placeholder slot; the
// remaining positions map 1:1 onto answer characters.
//
//   O      answer char matches content
//   B/I-sub answer char must be replaced (payload: replacement char)
//   B/I-del answer char absent from content
//   B-add  one or more content chars inserted after this position (payload)
//
// Ties between optimal scripts are broken by walking the alignment left to
// right and preferring match > substitution > deletion > insertion. An
// insertion gap directly after a substituted position is inexpressible in
// this label space, so such scripts are normalized by shifting the insertion
// one slot left (sub(a->x) + ins(Y) == ins([x]+Y[:-1]) + sub(a->Y.back())),
// which preserves cost and the produced string.

#include <cstdint>
#include <map>

#include "cloze/common.hpp"

namespace cloze {

enum class EditLabel : uint8_t { O = 0, BSub, ISub, BDel, IDel, BAdd };
inline constexpr int kLabelCount = 6;

inline const char* label_name(EditLabel l) {
  switch (l) {
    case EditLabel::O: return "O";
    case EditLabel::BSub: return "B-sub";
    case EditLabel::ISub: return "I-sub";
    case EditLabel::BDel: return "B-del";
    case EditLabel::IDel: return "I-del";
    case EditLabel::BAdd: return "B-add";
  }
  return "?";
}

inline EditLabel label_from_name(std::string_view name) {
  for (int i = 0; i < kLabelCount; ++i)
    if (name == label_name(EditLabel(i))) return EditLabel(i);
  throw IoError("unknown label name '" + std::string(name) + "'");
}

using LabelSeq = std::vector<EditLabel>;

// Full alignment: labels plus the payloads needed to reconstruct the content.
template <typename Ch>
struct Alignment {
  LabelSeq labels;                        // size answer.size() + 1
  std::map<int, Ch> subs;                 // position -> replacement char
  std::map<int, std::vector<Ch>> adds;    // position -> chars inserted after it
  int edit_count = 0;                     // subs + dels + inserted chars
};

inline bool is_sub(EditLabel l) { return l == EditLabel::BSub || l == EditLabel::ISub; }
inline bool is_del(EditLabel l) { return l == EditLabel::BDel || l == EditLabel::IDel; }

// 0 = every position O ("right"), 1 = any edit present ("wrong").
inline int reduce_binary(const LabelSeq& labels) {
  for (EditLabel l : labels)
    if (l != EditLabel::O) return 1;
  return 0;
}

inline bool bio_well_formed(const LabelSeq& labels) {
  if (labels.empty()) return false;
  if (labels[0] != EditLabel::O && labels[0] != EditLabel::BAdd) return false;
  for (size_t i = 0; i < labels.size(); ++i) {
    EditLabel l = labels[i];
    if (l == EditLabel::ISub && !(i > 0 && is_sub(labels[i - 1]))) return false;
    if (l == EditLabel::IDel && !(i > 0 && is_del(labels[i - 1]))) return false;
  }
  return true;
}

template <typename Ch>
Alignment<Ch> align_sequences(const std::vector<Ch>& content, const std::vector<Ch>& answer) {
  const int m = int(answer.size());
  const int n = int(content.size());

  // dist[i][j] = edit distance between answer[i:] and content[j:].
  std::vector<std::vector<int>> dist(size_t(m) + 1, std::vector<int>(size_t(n) + 1, 0));
  for (int i = m; i >= 0; --i) {
    for (int j = n; j >= 0; --j) {
      if (i == m) {
        dist[i][j] = n - j;
      } else if (j == n) {
        dist[i][j] = m - i;
      } else {
        int best = dist[i + 1][j + 1] + (answer[size_t(i)] == content[size_t(j)] ? 0 : 1);
        best = std::min(best, dist[i + 1][j] + 1);  // delete answer char
        best = std::min(best, dist[i][j + 1] + 1);  // insert content char
        dist[i][j] = best;
      }
    }
  }

  // Walk (0,0) -> (m,n) along optimal moves, preferring
  // match > sub > del > ins at every step.
  enum class Op : uint8_t { Match, Sub, Del, Ins };
  struct Step {
    Op op;
    int pos;  // answer position 1..m for match/sub/del, gap slot 0..m for ins
    int j;    // content index consumed (match/sub/ins)
  };
  std::vector<Step> steps;
  int i = 0, j = 0;
  while (i < m || j < n) {
    int here = dist[i][j];
    if (i < m && j < n && answer[size_t(i)] == content[size_t(j)] && dist[i + 1][j + 1] == here) {
      steps.push_back({Op::Match, i + 1, j});
      ++i, ++j;
    } else if (i < m && j < n && answer[size_t(i)] != content[size_t(j)] &&
               dist[i + 1][j + 1] + 1 == here) {
      steps.push_back({Op::Sub, i + 1, j});
      ++i, ++j;
    } else if (i < m && dist[i + 1][j] + 1 == here) {
      steps.push_back({Op::Del, i + 1, -1});
      ++i;
    } else {
      steps.push_back({Op::Ins, i, j});
      ++j;
    }
  }

  Alignment<Ch> out;
  out.labels.assign(size_t(m) + 1, EditLabel::O);
  std::map<int, Ch> raw_subs;
  std::vector<uint8_t> deleted(size_t(m) + 1, 0);
  for (const Step& s : steps) {
    switch (s.op) {
      case Op::Match: break;
      case Op::Sub: raw_subs[s.pos] = content[size_t(s.j)]; break;
      case Op::Del: deleted[size_t(s.pos)] = 1; break;
      case Op::Ins: out.adds[s.pos].push_back(content[size_t(s.j)]); break;
    }
  }

  // Normalize insertion gaps that follow a substituted position.
  for (int g = m; g >= 1; --g) {
    auto it = out.adds.find(g);
    if (it == out.adds.end()) continue;
    int p = g;
    while (p >= 1 && raw_subs.count(p)) {
      auto& payload = out.adds[p];
      std::vector<Ch> shifted;
      shifted.push_back(raw_subs[p]);
      shifted.insert(shifted.end(), payload.begin(), payload.end() - 1);
      raw_subs[p] = payload.back();
      out.adds.erase(p);
      auto prev = out.adds.find(p - 1);
      if (prev == out.adds.end()) {
        out.adds[p - 1] = std::move(shifted);
      } else {
        prev->second.insert(prev->second.end(), shifted.begin(), shifted.end());
      }
      --p;
    }
    if (p >= 1 && deleted[size_t(p)])
      throw std::logic_error("alignment: insertion landed on a deleted position");
  }

  for (auto& [pos, ch] : raw_subs) out.subs[pos] = ch;
  for (int p = 1; p <= m; ++p) {
    if (out.subs.count(p)) {
      bool chain = p > 1 && is_sub(out.labels[size_t(p) - 1]) && !out.adds.count(p - 1);
      out.labels[size_t(p)] = chain ? EditLabel::ISub : EditLabel::BSub;
    } else if (deleted[size_t(p)]) {
      bool chain = p > 1 && is_del(out.labels[size_t(p) - 1]) && !out.adds.count(p - 1);
      out.labels[size_t(p)] = chain ? EditLabel::IDel : EditLabel::BDel;
    }
  }
  for (auto& [pos, payload] : out.adds) {
    out.labels[size_t(pos)] = EditLabel::BAdd;  // overrides O on a matched position
    out.edit_count += int(payload.size());
  }
  out.edit_count += int(out.subs.size());
  for (int p = 1; p <= m; ++p) out.edit_count += deleted[size_t(p)] ? 1 : 0;
  return out;
}

template <typename Ch>
LabelSeq derive_labels(const std::vector<Ch>& content, const std::vector<Ch>& answer) {
  return align_sequences(content, answer).labels;
}

// Replays an alignment onto the answer; returns the reconstructed content.
// Throws InconsistentScriptError when payloads and labels disagree.
template <typename Ch>
std::vector<Ch> apply_labels(const std::vector<Ch>& answer, const LabelSeq& labels,
                             const std::map<int, Ch>& subs,
                             const std::map<int, std::vector<Ch>>& adds) {
  const int m = int(answer.size());
  if (int(labels.size()) != m + 1)
    throw InconsistentScriptError("labels size " + std::to_string(labels.size()) +
                                  " != answer size + 1 = " + std::to_string(m + 1));
  for (const auto& [pos, ch] : subs) {
    (void)ch;
    if (pos < 1 || pos > m || !is_sub(labels[size_t(pos)]))
      throw InconsistentScriptError("sub payload at position " + std::to_string(pos) +
                                    " without a sub label");
  }
  for (const auto& [pos, payload] : adds) {
    if (pos < 0 || pos > m || labels[size_t(pos)] != EditLabel::BAdd || payload.empty())
      throw InconsistentScriptError("add payload at position " + std::to_string(pos) +
                                    " inconsistent with labels");
  }

  std::vector<Ch> out;
  for (int p = 0; p <= m; ++p) {
    EditLabel l = labels[size_t(p)];
    if (p == 0) {
      if (l != EditLabel::O && l != EditLabel::BAdd)
        throw InconsistentScriptError("position 0 carries label " + std::string(label_name(l)));
    } else if (is_sub(l)) {
      auto it = subs.find(p);
      if (it == subs.end())
        throw InconsistentScriptError("missing sub payload at position " + std::to_string(p));
      out.push_back(it->second);
    } else if (is_del(l)) {
      // answer char absent from content
    } else {
      out.push_back(answer[size_t(p) - 1]);
    }
    if (l == EditLabel::BAdd) {
      auto it = adds.find(p);
      if (it == adds.end())
        throw InconsistentScriptError("missing add payload at position " + std::to_string(p));
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
  }
  return out;
}

template <typename Ch>
std::vector<Ch> apply_alignment(const std::vector<Ch>& answer, const Alignment<Ch>& a) {
  return apply_labels(answer, a.labels, a.subs, a.adds);
}

// Edit distance (used by CER and tests that only need the count).
template <typename Ch>
int levenshtein(const std::vector<Ch>& a, const std::vector<Ch>& b) {
  const size_t n = b.size();
  std::vector<int> row(n + 1);
  for (size_t j = 0; j <= n; ++j) row[j] = int(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = int(i);
    for (size_t j = 1; j <= n; ++j) {
      int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[n];
}

}  // namespace cloze
