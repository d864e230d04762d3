#include <catch2/catch_amalgamated.hpp>

#include "cloze/metrics.hpp"

using namespace cloze;

using L = EditLabel;

TEST_CASE("span extraction groups runs by family") {
  REQUIRE(extract_spans({L::O, L::O}).empty());

  auto s1 = extract_spans({L::O, L::BSub, L::ISub, L::ISub, L::O});
  REQUIRE(s1 == std::vector<LabelSpan>{{SpanKind::kSub, 1, 4}});

  auto s2 = extract_spans({L::BDel, L::IDel, L::O, L::BSub});
  REQUIRE(s2 == std::vector<LabelSpan>{{SpanKind::kDel, 0, 2}, {SpanKind::kSub, 3, 4}});

  // Additions never extend: consecutive B-add marks are separate spans.
  auto s3 = extract_spans({L::O, L::BAdd, L::BAdd, L::O});
  REQUIRE(s3 == std::vector<LabelSpan>{{SpanKind::kAdd, 1, 2}, {SpanKind::kAdd, 2, 3}});

  // Adjacent B-sub starts two spans; a stray I-del opens its own span.
  auto s4 = extract_spans({L::BSub, L::BSub, L::IDel, L::IDel});
  REQUIRE(s4 == std::vector<LabelSpan>{{SpanKind::kSub, 0, 1},
                                       {SpanKind::kSub, 1, 2},
                                       {SpanKind::kDel, 2, 4}});
}

TEST_CASE("pr counts handle zero denominators") {
  PrCounts empty;
  REQUIRE(empty.precision() == 0.0);
  REQUIRE(empty.recall() == 0.0);
  REQUIRE(empty.f1() == 0.0);

  PrCounts c{3, 4, 6};
  REQUIRE(c.precision() == Catch::Approx(0.75));
  REQUIRE(c.recall() == Catch::Approx(0.5));
  REQUIRE(c.f1() == Catch::Approx(0.6));

  BinaryCounts b{2, 1, 1, 6};
  REQUIRE(b.total() == 10);
  REQUIRE(b.accuracy() == Catch::Approx(0.8));
  REQUIRE(b.precision() == Catch::Approx(2.0 / 3));
  REQUIRE(b.recall() == Catch::Approx(2.0 / 3));
}

TEST_CASE("accumulator scores spans, tokens, and detection together") {
  MetricsAccumulator acc;
  // Perfect match, one sub span.
  acc.add({L::O, L::BSub, L::ISub}, {L::O, L::BSub, L::ISub});
  // Clean sample predicted clean.
  acc.add({L::O, L::O}, {L::O, L::O});
  // Missed error entirely.
  acc.add({L::O, L::O, L::O}, {L::O, L::BAdd, L::O});
  // False alarm with a wrong span.
  acc.add({L::BDel, L::O}, {L::O, L::O});

  REQUIRE(acc.count() == 4);
  REQUIRE(acc.binary().tp == 1);
  REQUIRE(acc.binary().tn == 1);
  REQUIRE(acc.binary().fn == 1);
  REQUIRE(acc.binary().fp == 1);

  REQUIRE(acc.spans().tp == 1);
  REQUIRE(acc.spans().pred == 2);
  REQUIRE(acc.spans().gold == 2);

  REQUIRE(acc.tokens().tp == 2);
  REQUIRE(acc.tokens().pred == 3);
  REQUIRE(acc.tokens().gold == 3);

  MetricsReport r = acc.report("demo");
  REQUIRE(r.samples == 4);
  REQUIRE(r.accuracy == Catch::Approx(0.5));
  REQUIRE(r.error_precision == Catch::Approx(0.5));
  REQUIRE(r.error_recall == Catch::Approx(0.5));
  REQUIRE(r.span_f1 == Catch::Approx(0.5));
  REQUIRE(r.token_f1 == Catch::Approx(2.0 / 3));
  REQUIRE(r.cer == -1);  // no CER recorded

  REQUIRE_THROWS_AS(acc.add({L::O}, {L::O, L::O}), LengthMismatchError);
}

TEST_CASE("span credit requires kind and both boundaries") {
  MetricsAccumulator acc;
  acc.add({L::O, L::BSub, L::ISub, L::O}, {L::O, L::BSub, L::ISub, L::ISub});  // short by one
  REQUIRE(acc.spans().tp == 0);
  acc.add({L::BDel, L::O}, {L::BSub, L::O});  // right place, wrong kind
  REQUIRE(acc.spans().tp == 0);
  acc.add({L::BAdd, L::O}, {L::BAdd, L::O});
  REQUIRE(acc.spans().tp == 1);
}

TEST_CASE("cer averages over recorded values only") {
  MetricsAccumulator acc;
  acc.add({L::O}, {L::O});
  acc.add_cer(0.2);
  acc.add_cer(0.4);
  REQUIRE(acc.report("x").cer == Catch::Approx(0.3));
}

TEST_CASE("report serialization") {
  MetricsAccumulator acc;
  acc.add({L::O, L::BSub}, {L::O, L::BSub});
  acc.add_cer(0.125);
  MetricsReport r = acc.report("demo");
  auto j = r.to_json();
  REQUIRE(j["name"] == "demo");
  REQUIRE(j["samples"] == 1);
  REQUIRE(j["accuracy"] == 1.0);
  REQUIRE(j["cer"] == 0.125);

  MetricsReport no_cer;
  no_cer.name = "n";
  REQUIRE_FALSE(no_cer.to_json().contains("cer"));

  std::string tbl = MetricsReport::table({r, no_cer});
  REQUIRE(tbl.find("demo") != std::string::npos);
  REQUIRE(tbl.find("0.1250") != std::string::npos);
  REQUIRE(tbl.find("model") != std::string::npos);
}
