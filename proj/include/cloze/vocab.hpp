#pragma once

// Character vocabulary with reserved special ids and the shape-similarity
// confusion map used for hard-negative substitutions.
//
// Id layout: chars occupy 0..n-1, then CTC_BLANK = n, BLK = n+1, PAD = n+2.
// The CTC head emits n+1 classes (chars + blank); the text embedding table
// has total_size() rows so BLK and PAD own rows too.

#include <map>
#include <unordered_map>

#include "cloze/common.hpp"

namespace cloze {

struct Vocabulary {
  std::vector<std::string> chars;  // one UTF-8 codepoint per entry
  std::unordered_map<std::string, int> id_of;

  int char_count() const { return int(chars.size()); }
  int ctc_blank() const { return char_count(); }
  int blk() const { return char_count() + 1; }
  int pad() const { return char_count() + 2; }
  int total_size() const { return char_count() + 3; }

  bool contains(std::string_view cp) const { return id_of.count(std::string(cp)) > 0; }

  int id(std::string_view cp) const {
    auto it = id_of.find(std::string(cp));
    if (it == id_of.end()) throw UnknownCharError("unknown character '" + std::string(cp) + "'");
    return it->second;
  }

  const std::string& chr(int id) const {
    if (id < 0 || id >= char_count())
      throw UnknownCharError("id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(char_count()) + " chars");
    return chars[size_t(id)];
  }

  static Vocabulary from_chars(std::vector<std::string> cps) {
    Vocabulary v;
    v.chars = std::move(cps);
    for (size_t i = 0; i < v.chars.size(); ++i) {
      if (v.chars[i].empty()) throw IoError("vocabulary entry " + std::to_string(i) + " is empty");
      auto [it, fresh] = v.id_of.emplace(v.chars[i], int(i));
      if (!fresh) throw IoError("duplicate vocabulary entry '" + v.chars[i] + "'");
    }
    return v;
  }

  // Synthetic desk-scale alphabet: 64 printable stand-ins whose glyphs are
  // procedurally generated; the codepoints themselves only matter for
  // manifests and logs.
  static Vocabulary synthetic(int n = 64) {
    static const std::string pool =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789#@";
    if (n < 1 || n > int(pool.size()))
      throw IoError("synthetic vocabulary size must be in [1," + std::to_string(pool.size()) + "]");
    std::vector<std::string> cps;
    for (int i = 0; i < n; ++i) cps.emplace_back(1, pool[size_t(i)]);
    return from_chars(std::move(cps));
  }

  // File format: one character per line, UTF-8, line order defines ids.
  static Vocabulary load(const std::filesystem::path& path) {
    std::vector<std::string> cps;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto split = utf8_split(line);
      if (split.size() != 1)
        throw IoError("vocabulary line '" + line + "' in " + path.string() +
                      " is not a single character");
      cps.push_back(split[0]);
    }
    return from_chars(std::move(cps));
  }

  void save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& c : chars) {
      out += c;
      out += '\n';
    }
    write_text_file(path, out);
  }
};

inline std::vector<int> encode_text(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  auto cps = utf8_split(text);
  ids.reserve(cps.size());
  for (size_t i = 0; i < cps.size(); ++i) {
    auto it = vocab.id_of.find(cps[i]);
    if (it == vocab.id_of.end())
      throw UnknownCharError("unknown character '" + cps[i] + "' at position " + std::to_string(i));
    ids.push_back(it->second);
  }
  return ids;
}

inline std::string decode_text(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) out += vocab.chr(id);
  return out;
}

// Removes any codepoints from `strip` (a string of codepoints, default empty).
inline std::string strip_punctuation(std::string_view text, std::string_view strip) {
  if (strip.empty()) return std::string(text);
  auto strip_cps = utf8_split(strip);
  std::string out;
  for (const auto& cp : utf8_split(text))
    if (std::find(strip_cps.begin(), strip_cps.end(), cp) == strip_cps.end()) out += cp;
  return out;
}

// ---------------------------------------------------------------------------
// Confusion set: char id -> shape-similar substitute ids. Symmetry is not
// required. Entries never map a char to itself and never leave the vocab.

struct ConfusionSet {
  std::map<int, std::vector<int>> subs;

  bool has(int id) const {
    auto it = subs.find(id);
    return it != subs.end() && !it->second.empty();
  }

  void add(int id, int sub, const Vocabulary& vocab) {
    if (id == sub) throw IoError("confusion entry maps '" + vocab.chr(id) + "' to itself");
    if (id < 0 || id >= vocab.char_count() || sub < 0 || sub >= vocab.char_count())
      throw IoError("confusion entry outside vocabulary");
    subs[id].push_back(sub);
  }

  // Adjacent pairing 2k <-> 2k+1; glyph generation makes these pairs
  // shape-similar by construction. An odd final char gets no entry.
  static ConfusionSet paired(const Vocabulary& vocab) {
    ConfusionSet cs;
    for (int i = 0; i + 1 < vocab.char_count(); i += 2) {
      cs.add(i, i + 1, vocab);
      cs.add(i + 1, i, vocab);
    }
    return cs;
  }

  // File format: `char<TAB>sub1,sub2,...` per line, UTF-8.
  static ConfusionSet load(const std::filesystem::path& path, const Vocabulary& vocab) {
    ConfusionSet cs;
    std::istringstream in(read_text_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw IoError("confusion line " + std::to_string(lineno) + " lacks a tab in " + path.string());
      int id = vocab.id(line.substr(0, tab));
      std::string rest = line.substr(tab + 1);
      size_t pos = 0;
      while (pos <= rest.size()) {
        size_t comma = rest.find(',', pos);
        std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!item.empty()) cs.add(id, vocab.id(item), vocab);
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (!cs.has(id))
        throw IoError("confusion line " + std::to_string(lineno) + " has no substitutes");
    }
    return cs;
  }

  void save(const std::filesystem::path& path, const Vocabulary& vocab) const {
    std::string out;
    for (const auto& [id, list] : subs) {
      if (list.empty()) continue;
      out += vocab.chr(id);
      out += '\t';
      for (size_t i = 0; i < list.size(); ++i) {
        if (i) out += ',';
        out += vocab.chr(list[i]);
      }
      out += '\n';
    }
    write_text_file(path, out);
  }
};

// Uniform draw from the confusion entry of `id`. Throws NoConfusionError when
// the char has no entry.
inline int sample_confusion(int id, const ConfusionSet& cs, Rng& rng) {
  auto it = cs.subs.find(id);
  if (it == cs.subs.end() || it->second.empty())
    throw NoConfusionError("no confusion entry for char id " + std::to_string(id));
  return it->second[size_t(rand_int(rng, 0, int(it->second.size()) - 1))];
}

// Confusion draw with the documented fallback: uniform random vocab char != id.
inline int sample_substitute(int id, const ConfusionSet& cs, const Vocabulary& vocab, Rng& rng) {
  try {
    return sample_confusion(id, cs, rng);
  } catch (const NoConfusionError&) {
    if (vocab.char_count() < 2) throw;
    int pick = rand_int(rng, 0, vocab.char_count() - 2);
    return pick >= id ? pick + 1 : pick;
  }
}

}  // namespace cloze
