#pragma once

// Sample records and JSONL manifest IO. A manifest line fully describes one
// (image, answer) pair: what the image shows, the reference answer, the
// per-position edit labels, and the binary "needs correction" flag.

#include "json.hpp"

#include "cloze/alignment.hpp"
#include "cloze/vocab.hpp"

namespace cloze {

struct Sample {
  std::string id;
  std::string image;    // path relative to the manifest directory
  std::string content;  // text the image actually shows
  std::string answer;   // reference text shown to the model
  std::vector<std::string> labels;
  int y = 0;  // 1 = answer and content disagree
  int valid_width = 0;
  std::string shard = "synth";
};

inline std::vector<std::string> labels_to_names(const LabelSeq& labels) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (auto l : labels) out.emplace_back(label_name(l));
  return out;
}

inline LabelSeq names_to_labels(const std::vector<std::string>& names) {
  LabelSeq out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(label_from_name(n));
  return out;
}

inline nlohmann::json sample_to_json(const Sample& s) {
  return nlohmann::json{{"id", s.id},       {"image", s.image},
                        {"content", s.content}, {"answer", s.answer},
                        {"labels", s.labels},   {"y", s.y},
                        {"valid_width", s.valid_width}, {"shard", s.shard}};
}

inline Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.image = j.at("image").get<std::string>();
    s.content = j.at("content").get<std::string>();
    s.answer = j.at("answer").get<std::string>();
    s.labels = j.at("labels").get<std::vector<std::string>>();
    s.y = j.at("y").get<int>();
    s.valid_width = j.at("valid_width").get<int>();
    s.shard = j.value("shard", std::string("synth"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad sample record: ") + e.what());
  }
  return s;
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) out += sample_to_json(s).dump() + "\n";
  write_text_file(path, out);
}

inline std::vector<Sample> load_manifest(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  std::vector<Sample> out;
  size_t at = 0, line_no = 0;
  while (at < text.size()) {
    size_t end = text.find('\n', at);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string line = text.substr(at, end - at);
    at = end + 1;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError("manifest " + path.string() + ": line " + std::to_string(line_no) +
                    " is not valid JSON");
    out.push_back(sample_from_json(j));
  }
  return out;
}

// Structural and semantic checks: label arity, BIO shape, y-consistency, and
// that the labels are exactly what the aligner derives for (content, answer).
inline void validate_sample(const Sample& s, const Vocabulary& vocab) {
  auto content_ids = encode_text(s.content, vocab);
  auto answer_ids = encode_text(s.answer, vocab);
  LabelSeq labels = names_to_labels(s.labels);
  if (labels.size() != answer_ids.size() + 1)
    throw InconsistentScriptError("sample " + s.id + ": " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(answer_ids.size()) +
                                  " answer characters");
  if (!bio_well_formed(labels))
    throw InconsistentScriptError("sample " + s.id + ": malformed BIO labels");
  LabelSeq derived = derive_labels(content_ids, answer_ids);
  if (derived != labels)
    throw InconsistentScriptError("sample " + s.id + ": labels do not match content/answer pair");
  if (s.y != reduce_binary(labels))
    throw InconsistentScriptError("sample " + s.id + ": y=" + std::to_string(s.y) +
                                  " inconsistent with labels");
  if (s.valid_width <= 0)
    throw InconsistentScriptError("sample " + s.id + ": non-positive valid_width");
}

}  // namespace cloze
