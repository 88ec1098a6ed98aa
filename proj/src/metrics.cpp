#include "editlab/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "editlab/errors.hpp"

namespace editlab {

MetricValue metric_from_ledger(const std::vector<LedgerRow>& ledger, ProbeKind kind, int gap) {
  MetricValue v;
  for (const LedgerRow& row : ledger) {
    if (row.kind != kind || row.gap != gap) continue;
    ++v.samples;
    if (row.ok) ++v.successes;
  }
  if (v.samples == 0) {
    throw UndefinedMetricError(std::string("no ledger entries for ") + to_string(kind) +
                               " at gap " + std::to_string(gap));
  }
  v.fraction = static_cast<double>(v.successes) / static_cast<double>(v.samples);
  return v;
}

MetricValue reliability(const std::vector<LedgerRow>& ledger, EditKind kind, int gap) {
  return metric_from_ledger(ledger, kind == EditKind::visual ? ProbeKind::vis_rel
                                                             : ProbeKind::text_rel, gap);
}

MetricValue generality(const std::vector<LedgerRow>& ledger, ProbeKind kind, int gap) {
  if (kind != ProbeKind::text_gen && kind != ProbeKind::image_gen) {
    throw PreconditionError("generality expects a generality probe kind");
  }
  return metric_from_ledger(ledger, kind, gap);
}

MetricValue locality(const std::vector<LedgerRow>& ledger, ProbeKind kind, int gap) {
  if (kind != ProbeKind::text_loc && kind != ProbeKind::image_loc) {
    throw PreconditionError("locality expects a locality probe kind");
  }
  return metric_from_ledger(ledger, kind, gap);
}

MetricValue comp_rel(const std::vector<LedgerRow>& ledger, int gap) {
  return metric_from_ledger(ledger, ProbeKind::comp, gap);
}

double kur(double comp_rel_value, double vis_rel_value, double text_rel_value) {
  double denom = vis_rel_value + text_rel_value;
  if (denom <= 0.0) throw UndefinedMetricError("KUR denominator vis+text is zero");
  return 2.0 * comp_rel_value / denom;
}

const MetricsRow& MetricsReport::row_for(int gap) const {
  for (const MetricsRow& r : rows) {
    if (r.gap == gap) return r;
  }
  throw UndefinedMetricError("report has no row for gap " + std::to_string(gap));
}

MetricsReport evaluate_run(const std::vector<LedgerRow>& ledger, const std::string& strategy,
                           const std::vector<int>& gaps) {
  if (gaps.empty()) throw PreconditionError("empty gap schedule");
  for (size_t i = 1; i < gaps.size(); ++i) {
    if (gaps[i] <= gaps[i - 1] || gaps[0] < 0) {
      throw PreconditionError("gap schedule must be nonnegative and strictly increasing");
    }
  }
  MetricsReport report;
  report.strategy = strategy;
  report.gaps = gaps;
  for (int gap : gaps) {
    MetricsRow row;
    row.gap = gap;
    row.vis_rel = metric_from_ledger(ledger, ProbeKind::vis_rel, gap);
    row.text_rel = metric_from_ledger(ledger, ProbeKind::text_rel, gap);
    row.text_gen = metric_from_ledger(ledger, ProbeKind::text_gen, gap);
    row.image_gen = metric_from_ledger(ledger, ProbeKind::image_gen, gap);
    row.text_loc = metric_from_ledger(ledger, ProbeKind::text_loc, gap);
    row.image_loc = metric_from_ledger(ledger, ProbeKind::image_loc, gap);
    row.comp = metric_from_ledger(ledger, ProbeKind::comp, gap);
    row.kur_value = kur(row.comp.fraction, row.vis_rel.fraction, row.text_rel.fraction);
    report.rows.push_back(row);
  }
  MetricsRow avg;
  avg.gap = -1;
  auto accumulate = [&](MetricValue MetricsRow::* field) {
    MetricValue v;
    double frac = 0.0;
    for (const MetricsRow& r : report.rows) {
      frac += (r.*field).fraction;
      v.successes += (r.*field).successes;
      v.samples += (r.*field).samples;
    }
    v.fraction = frac / static_cast<double>(report.rows.size());
    return v;
  };
  avg.vis_rel = accumulate(&MetricsRow::vis_rel);
  avg.text_rel = accumulate(&MetricsRow::text_rel);
  avg.text_gen = accumulate(&MetricsRow::text_gen);
  avg.image_gen = accumulate(&MetricsRow::image_gen);
  avg.text_loc = accumulate(&MetricsRow::text_loc);
  avg.image_loc = accumulate(&MetricsRow::image_loc);
  avg.comp = accumulate(&MetricsRow::comp);
  avg.kur_value = kur(avg.comp.fraction, avg.vis_rel.fraction, avg.text_rel.fraction);
  report.rows.push_back(avg);
  return report;
}

std::string report_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "strategy,gap,vis_rel,text_rel,text_gen,image_gen,text_loc,image_loc,comp_rel,kur,"
     << "vis_rel_n,text_rel_n,text_gen_n,image_gen_n,text_loc_n,image_loc_n,comp_n\n";
  char buf[64];
  auto frac = [&](const MetricValue& v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v.fraction);
    return std::string(buf);
  };
  for (const MetricsReport& rep : reports) {
    for (const MetricsRow& r : rep.rows) {
      os << rep.strategy << ',' << (r.gap < 0 ? std::string("avg") : std::to_string(r.gap)) << ','
         << frac(r.vis_rel) << ',' << frac(r.text_rel) << ',' << frac(r.text_gen) << ','
         << frac(r.image_gen) << ',' << frac(r.text_loc) << ',' << frac(r.image_loc) << ','
         << frac(r.comp) << ',';
      std::snprintf(buf, sizeof(buf), "%.6f", r.kur_value);
      os << buf << ',' << r.vis_rel.samples << ',' << r.text_rel.samples << ','
         << r.text_gen.samples << ',' << r.image_gen.samples << ',' << r.text_loc.samples << ','
         << r.image_loc.samples << ',' << r.comp.samples << '\n';
    }
  }
  return os.str();
}

}  // namespace editlab
