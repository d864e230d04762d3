#pragma once

// Evaluation: BIO span extraction, micro precision/recall/F1 at span and
// token granularity, and binary error-detection metrics where the positive
// class is "this sample needs correction" (y = 1).

#include "json.hpp"

#include "cloze/alignment.hpp"

namespace cloze {

enum class SpanKind : uint8_t { kSub, kDel, kAdd };

struct LabelSpan {
  SpanKind kind;
  int start, end;  // [start, end)
  bool operator==(const LabelSpan& o) const {
    return kind == o.kind && start == o.start && end == o.end;
  }
};

// Conll-style span reading: a stray I-x (no matching B-x before it) opens a
// new span, so imperfect predictions still evaluate sanely.
inline std::vector<LabelSpan> extract_spans(const LabelSeq& labels) {
  std::vector<LabelSpan> spans;
  size_t i = 0, n = labels.size();
  while (i < n) {
    EditLabel l = labels[i];
    if (l == EditLabel::O) {
      ++i;
      continue;
    }
    if (l == EditLabel::BAdd) {
      spans.push_back({SpanKind::kAdd, int(i), int(i) + 1});
      ++i;
      continue;
    }
    bool sub = (l == EditLabel::BSub || l == EditLabel::ISub);
    EditLabel cont = sub ? EditLabel::ISub : EditLabel::IDel;
    size_t j = i + 1;
    while (j < n && labels[j] == cont) ++j;
    spans.push_back({sub ? SpanKind::kSub : SpanKind::kDel, int(i), int(j)});
    i = j;
  }
  return spans;
}

namespace detail {
inline double safe_div(double num, double den) { return den > 0 ? num / den : 0.0; }
inline double f1_of(double p, double r) { return (p + r) > 0 ? 2 * p * r / (p + r) : 0.0; }
}  // namespace detail

struct PrCounts {
  long tp = 0, pred = 0, gold = 0;
  double precision() const { return detail::safe_div(double(tp), double(pred)); }
  double recall() const { return detail::safe_div(double(tp), double(gold)); }
  double f1() const { return detail::f1_of(precision(), recall()); }
};

struct BinaryCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
  double accuracy() const { return detail::safe_div(double(tp + tn), double(total())); }
  double precision() const { return detail::safe_div(double(tp), double(tp + fp)); }
  double recall() const { return detail::safe_div(double(tp), double(tp + fn)); }
  double f1() const { return detail::f1_of(precision(), recall()); }
};

struct MetricsReport {
  std::string name;
  long samples = 0;
  double accuracy = 0;
  double error_precision = 0, error_recall = 0, error_f1 = 0;
  double span_precision = 0, span_recall = 0, span_f1 = 0;
  double token_precision = 0, token_recall = 0, token_f1 = 0;
  double cer = -1;  // mean character error rate; < 0 when not applicable

  nlohmann::json to_json() const {
    nlohmann::json j{{"name", name},
                     {"samples", samples},
                     {"accuracy", accuracy},
                     {"error_precision", error_precision},
                     {"error_recall", error_recall},
                     {"error_f1", error_f1},
                     {"span_precision", span_precision},
                     {"span_recall", span_recall},
                     {"span_f1", span_f1},
                     {"token_precision", token_precision},
                     {"token_recall", token_recall},
                     {"token_f1", token_f1}};
    if (cer >= 0) j["cer"] = cer;
    return j;
  }

  static std::string table(const std::vector<MetricsReport>& rows) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-12s %7s %7s %7s %7s %7s %7s %7s\n", "model", "acc",
                  "err_p", "err_r", "err_f1", "span_f1", "tok_f1", "cer");
    out += buf;
    out += std::string(68, '-') + "\n";
    for (const auto& r : rows) {
      char cerbuf[16];
      if (r.cer >= 0)
        std::snprintf(cerbuf, sizeof cerbuf, "%7.4f", r.cer);
      else
        std::snprintf(cerbuf, sizeof cerbuf, "%7s", "-");
      std::snprintf(buf, sizeof buf, "%-12s %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f %s\n",
                    r.name.c_str(), r.accuracy, r.error_precision, r.error_recall, r.error_f1,
                    r.span_f1, r.token_f1, cerbuf);
      out += buf;
    }
    return out;
  }
};

class MetricsAccumulator {
 public:
  void add(const LabelSeq& pred, const LabelSeq& gold) {
    if (pred.size() != gold.size())
      throw LengthMismatchError("metrics: prediction has " + std::to_string(pred.size()) +
                                " labels, reference has " + std::to_string(gold.size()));
    ++n_;
    auto ps = extract_spans(pred), gs = extract_spans(gold);
    span_.pred += long(ps.size());
    span_.gold += long(gs.size());
    for (const auto& s : ps)
      if (std::find(gs.begin(), gs.end(), s) != gs.end()) ++span_.tp;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] != EditLabel::O) ++token_.pred;
      if (gold[i] != EditLabel::O) ++token_.gold;
      if (pred[i] != EditLabel::O && pred[i] == gold[i]) ++token_.tp;
    }
    int py = reduce_binary(pred), gy = reduce_binary(gold);
    if (py && gy) ++bin_.tp;
    else if (py && !gy) ++bin_.fp;
    else if (!py && gy) ++bin_.fn;
    else ++bin_.tn;
  }

  void add_cer(double c) {
    cer_sum_ += c;
    ++cer_n_;
  }

  const BinaryCounts& binary() const { return bin_; }
  const PrCounts& spans() const { return span_; }
  const PrCounts& tokens() const { return token_; }
  long count() const { return n_; }

  MetricsReport report(std::string name) const {
    MetricsReport r;
    r.name = std::move(name);
    r.samples = n_;
    r.accuracy = bin_.accuracy();
    r.error_precision = bin_.precision();
    r.error_recall = bin_.recall();
    r.error_f1 = bin_.f1();
    r.span_precision = span_.precision();
    r.span_recall = span_.recall();
    r.span_f1 = span_.f1();
    r.token_precision = token_.precision();
    r.token_recall = token_.recall();
    r.token_f1 = token_.f1();
    if (cer_n_ > 0) r.cer = cer_sum_ / double(cer_n_);
    return r;
  }

 private:
  PrCounts span_, token_;
  BinaryCounts bin_;
  long n_ = 0;
  double cer_sum_ = 0;
  long cer_n_ = 0;
};

}  // namespace cloze
