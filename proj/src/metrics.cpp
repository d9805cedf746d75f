#include "looptrans/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace looptrans::metrics {

namespace {

void check_heatmap(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v) || v < 0) throw ContractError(std::string(what) + ": heatmap values must be finite and non-negative");
}

std::vector<double> to_distribution(const Tensor& t) {
  std::vector<double> p(t.size());
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    p[i] = t[i] + kDistEps;
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

void check_pair(const Tensor& pred, const Tensor& gt, const char* what) {
  if (pred.size() != gt.size() || pred.size() == 0)
    throw ShapeError(std::string(what) + ": prediction and ground truth sizes differ");
  check_heatmap(pred, what);
  check_heatmap(gt, what);
}

}  // namespace

double kld(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "kld");
  const auto p = to_distribution(pred);
  const auto q = to_distribution(gt);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += q[i] * std::log(q[i] / p[i]);
  return s;
}

double sim(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt, "sim");
  const auto p = to_distribution(pred);
  const auto q = to_distribution(gt);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], q[i]);
  return s;
}

MetricValue nss(const Tensor& pred, const BinaryGrid& fix, NssNormalization norm) {
  if (pred.size() != fix.size() || pred.size() == 0) throw ShapeError("nss: prediction and fixation sizes differ");
  const double n = static_cast<double>(pred.size());
  double mean = 0.0;
  for (double v : pred.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : pred.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return {0.0, true};
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (fix.cells[i]) s += (pred[i] - mean) / sd;
  const std::size_t nfix = fix.count();
  if (norm == NssNormalization::PerFixation) return nfix == 0 ? MetricValue{0.0, true} : MetricValue{s / nfix, false};
  return {s / n, nfix == 0};
}

MetricValue auc_j(const Tensor& pred, const BinaryGrid& fix) {
  if (pred.size() != fix.size() || pred.size() == 0) throw ShapeError("auc_j: prediction and fixation sizes differ");
  std::vector<double> on, off;
  for (std::size_t i = 0; i < pred.size(); ++i) (fix.cells[i] ? on : off).push_back(pred[i]);
  if (on.empty() || off.empty()) return {0.5, true};
  std::sort(on.begin(), on.end(), std::greater<>());
  std::sort(off.begin(), off.end(), std::greater<>());

  // Sweep thresholds from high to low over distinct fixation values.
  double area = 0.0, prev_tp = 0.0, prev_fp = 0.0;
  std::size_t i_on = 0, i_off = 0;
  while (i_on < on.size()) {
    const double t = on[i_on];
    while (i_on < on.size() && on[i_on] >= t) ++i_on;
    while (i_off < off.size() && off[i_off] >= t) ++i_off;
    const double tp = static_cast<double>(i_on) / on.size();
    const double fp = static_cast<double>(i_off) / off.size();
    area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
  }
  area += (1.0 - prev_fp) * (1.0 + prev_tp) / 2.0;
  return {area, false};
}

BinaryGrid binarize(const Tensor& gt, double fraction) {
  if (gt.rank() != 2) throw ShapeError("binarize: expected an H×W map");
  BinaryGrid g(gt.dim(0), gt.dim(1));
  const double mx = gt.size() ? *std::max_element(gt.data().begin(), gt.data().end()) : 0.0;
  if (mx <= 0) return g;
  for (std::size_t i = 0; i < gt.size(); ++i) g.cells[i] = gt[i] >= fraction * mx ? 1 : 0;
  return g;
}

const char* bucket_name(AreaBucket b) {
  switch (b) {
    case AreaBucket::Small: return "small";
    case AreaBucket::Middle: return "middle";
    case AreaBucket::Big: return "big";
  }
  return "?";
}

AreaBucket area_bucket(const BinaryGrid& fix) {
  const double frac = fix.size() ? static_cast<double>(fix.count()) / static_cast<double>(fix.size()) : 0.0;
  if (frac > 0.10) return AreaBucket::Big;
  if (frac >= 0.03) return AreaBucket::Middle;
  return AreaBucket::Small;
}

namespace {

struct Accum {
  Scores sum;
  std::size_t n = 0;
  void add(const Scores& s) {
    sum.kld += s.kld;
    sum.sim += s.sim;
    sum.nss += s.nss;
    sum.auc_j += s.auc_j;
    ++n;
  }
  Scores mean() const {
    if (n == 0) return {};
    const double k = static_cast<double>(n);
    return {sum.kld / k, sum.sim / k, sum.nss / k, sum.auc_j / k};
  }
};

}  // namespace

DatasetReport evaluate_dataset(const std::vector<EvalItem>& items, const EvalOptions& opts) {
  DatasetReport r;
  r.samples.resize(items.size());
  const auto n = static_cast<std::ptrdiff_t>(items.size());
  // Exceptions must not escape the parallel region.
  std::vector<std::string> errors(items.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& it = items[i];
      const BinaryGrid fix = it.fix ? *it.fix : binarize(it.gt.reshaped({it.gt.dim(0), it.gt.size() / it.gt.dim(0)}),
                                                         opts.binarize_fraction);
      auto& s = r.samples[i];
      s.sample_id = it.sample_id;
      s.label = it.label;
      s.bucket = area_bucket(fix);
      s.scores.kld = kld(it.pred, it.gt);
      s.scores.sim = sim(it.pred, it.gt);
      const auto nv = nss(it.pred, fix, opts.nss_norm);
      const auto av = auc_j(it.pred, fix);
      s.scores.nss = nv.value;
      s.scores.auc_j = av.value;
      s.degenerate = nv.degenerate || av.degenerate;
    } catch (const std::exception& e) {
      errors[i] = items[i].sample_id + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw ContractError("evaluate_dataset: " + e);

  Accum all;
  std::map<std::size_t, Accum> cls;
  std::map<AreaBucket, Accum> bkt;
  for (const auto& s : r.samples) {
    all.add(s.scores);
    cls[s.label].add(s.scores);
    bkt[s.bucket].add(s.scores);
  }
  r.mean = all.mean();
  for (const auto& [k, a] : cls) r.by_class[k] = a.mean();
  for (const auto& [k, a] : bkt) r.by_bucket[k] = a.mean();
  return r;
}

std::string format_report(const DatasetReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "sample_id,label,bucket,kld,sim,nss,auc_j\n";
  for (const auto& s : r.samples)
    os << s.sample_id << ',' << s.label << ',' << bucket_name(s.bucket) << ',' << s.scores.kld << ',' << s.scores.sim
       << ',' << s.scores.nss << ',' << s.scores.auc_j << '\n';
  os << "mean,,," << r.mean.kld << ',' << r.mean.sim << ',' << r.mean.nss << ',' << r.mean.auc_j << '\n';
  for (const auto& [c, s] : r.by_class)
    os << "class_mean," << c << ",," << s.kld << ',' << s.sim << ',' << s.nss << ',' << s.auc_j << '\n';
  for (const auto& [b, s] : r.by_bucket)
    os << "bucket_mean,," << bucket_name(b) << ',' << s.kld << ',' << s.sim << ',' << s.nss << ',' << s.auc_j << '\n';
  return os.str();
}

}  // namespace looptrans::metrics
