#include <cmath>

#include "doctest.h"
#include "editlab/metrics.hpp"

using namespace editlab;

namespace {

LedgerRow row(int edit, int gap, ProbeKind kind, bool ok) {
  LedgerRow r;
  r.edit = edit;
  r.gap = gap;
  r.kind = kind;
  r.ok = ok;
  return r;
}

// hand-scored fixture: ten outcomes per kind at gap 0, known success counts
std::vector<LedgerRow> fixture() {
  std::vector<LedgerRow> ledger;
  struct KindPlan {
    ProbeKind kind;
    int successes;
  };
  // counted by hand below: 7/10, 6/10, 5/10, 8/10, 9/10, 4/10, 3/10
  for (KindPlan plan : {KindPlan{ProbeKind::vis_rel, 7}, KindPlan{ProbeKind::text_rel, 6},
                        KindPlan{ProbeKind::text_gen, 5}, KindPlan{ProbeKind::image_gen, 8},
                        KindPlan{ProbeKind::text_loc, 9}, KindPlan{ProbeKind::image_loc, 4},
                        KindPlan{ProbeKind::comp, 3}}) {
    for (int i = 0; i < 10; ++i) {
      ledger.push_back(row(i, 0, plan.kind, i < plan.successes));
    }
  }
  return ledger;
}

}  // namespace

TEST_CASE("reliability fractions are exact counts") {
  std::vector<LedgerRow> ledger = fixture();
  MetricValue vis = reliability(ledger, EditKind::visual, 0);
  CHECK(vis.fraction == 0.7);
  CHECK(vis.successes == 7);
  CHECK(vis.samples == 10);
  MetricValue tex = reliability(ledger, EditKind::textual, 0);
  CHECK(tex.fraction == 0.6);

  std::vector<LedgerRow> all_ok(5, row(0, 0, ProbeKind::vis_rel, true));
  CHECK(reliability(all_ok, EditKind::visual, 0).fraction == 1.0);
  std::vector<LedgerRow> three_of_five = {
      row(0, 0, ProbeKind::vis_rel, true),  row(1, 0, ProbeKind::vis_rel, true),
      row(2, 0, ProbeKind::vis_rel, true),  row(3, 0, ProbeKind::vis_rel, false),
      row(4, 0, ProbeKind::vis_rel, false),
  };
  CHECK(reliability(three_of_five, EditKind::visual, 0).fraction == 0.6);
}

TEST_CASE("generality and locality read their own probe kinds") {
  std::vector<LedgerRow> ledger = fixture();
  CHECK(generality(ledger, ProbeKind::text_gen, 0).fraction == 0.5);
  CHECK(generality(ledger, ProbeKind::image_gen, 0).fraction == 0.8);
  CHECK(locality(ledger, ProbeKind::text_loc, 0).fraction == 0.9);
  CHECK(locality(ledger, ProbeKind::image_loc, 0).fraction == 0.4);
  CHECK(comp_rel(ledger, 0).fraction == 0.3);
  CHECK_THROWS_AS(generality(ledger, ProbeKind::vis_rel, 0), PreconditionError);
  CHECK_THROWS_AS(locality(ledger, ProbeKind::comp, 0), PreconditionError);
}

TEST_CASE("undefined metrics raise instead of defaulting") {
  std::vector<LedgerRow> ledger = fixture();
  CHECK_THROWS_AS(reliability(ledger, EditKind::visual, 10), UndefinedMetricError);
  CHECK_THROWS_AS(comp_rel({}, 0), UndefinedMetricError);
  CHECK_THROWS_AS(kur(0.5, 0.0, 0.0), UndefinedMetricError);
}

TEST_CASE("kur arithmetic") {
  CHECK(kur(0.5, 1.0, 1.0) == 0.5);
  CHECK(kur(0.75, 0.7, 0.8) == doctest::Approx(1.0).epsilon(1e-12));
  // reported values: average CompRel 84.02 alongside KUR 1.26 implies the
  // unimodal sum; recomputing closes the loop
  double implied_sum = 2.0 * 84.02 / 1.26;
  CHECK(std::abs(kur(84.02, implied_sum / 2.0, implied_sum / 2.0) - 1.26) < 0.01);
}

TEST_CASE("evaluate_run aggregates per gap, averages, and reproduces bytes") {
  std::vector<LedgerRow> ledger = fixture();
  // add a second gap with different outcomes
  for (const LedgerRow& r : fixture()) {
    LedgerRow shifted = r;
    shifted.gap = 10;
    shifted.ok = r.edit < 5;  // 5/10 everywhere
    ledger.push_back(shifted);
  }
  MetricsReport rep = evaluate_run(ledger, "hybrid_no_connector", {0, 10});
  CHECK(rep.row_for(0).vis_rel.fraction == 0.7);
  CHECK(rep.row_for(10).vis_rel.fraction == 0.5);
  CHECK(rep.averaged().vis_rel.fraction == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(rep.averaged().vis_rel.samples == 20);
  CHECK(rep.row_for(0).kur_value == doctest::Approx(2.0 * 0.3 / 1.3).epsilon(1e-12));

  std::string csv1 = report_csv({rep});
  std::string csv2 = report_csv({evaluate_run(ledger, "hybrid_no_connector", {0, 10})});
  CHECK(csv1 == csv2);
  CHECK(csv1.find("hybrid_no_connector,avg,") != std::string::npos);
}

TEST_CASE("gap schedules must be nonnegative and strictly increasing") {
  std::vector<LedgerRow> ledger = fixture();
  CHECK_THROWS_AS(evaluate_run(ledger, "x", {0, 0}), PreconditionError);
  CHECK_THROWS_AS(evaluate_run(ledger, "x", {10, 5}), PreconditionError);
  CHECK_THROWS_AS(evaluate_run(ledger, "x", {}), PreconditionError);
}
