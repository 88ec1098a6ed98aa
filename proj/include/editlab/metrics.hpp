#pragma once

#include <string>

#include "editlab/editor.hpp"

namespace editlab {

struct MetricValue {
  double fraction = 0.0;
  int64_t successes = 0;
  int64_t samples = 0;
};

// Exact success counts from the ledger. Zero samples raise
// UndefinedMetricError; a metric is never silently 0 or 1.
MetricValue metric_from_ledger(const std::vector<LedgerRow>& ledger, ProbeKind kind, int gap);

MetricValue reliability(const std::vector<LedgerRow>& ledger, EditKind kind, int gap);
MetricValue generality(const std::vector<LedgerRow>& ledger, ProbeKind kind, int gap);
MetricValue locality(const std::vector<LedgerRow>& ledger, ProbeKind kind, int gap);
MetricValue comp_rel(const std::vector<LedgerRow>& ledger, int gap);

// 2 * comp / (vis + text); unit-agnostic.
double kur(double comp_rel_value, double vis_rel_value, double text_rel_value);

struct MetricsRow {
  int gap = 0;  // -1 marks the gap-averaged row
  MetricValue vis_rel, text_rel, text_gen, image_gen, text_loc, image_loc, comp;
  double kur_value = 0.0;
};

struct MetricsReport {
  std::string strategy;
  std::vector<int> gaps;
  std::vector<MetricsRow> rows;  // one per gap plus the gap-averaged row

  const MetricsRow& row_for(int gap) const;
  const MetricsRow& averaged() const { return row_for(-1); }
};

MetricsReport evaluate_run(const std::vector<LedgerRow>& ledger, const std::string& strategy,
                           const std::vector<int>& gaps);

std::string report_csv(const std::vector<MetricsReport>& reports);

}  // namespace editlab
