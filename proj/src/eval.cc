#include "boolgen/eval.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace boolgen {

double f_beta(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

TopicEval evaluate_topic(std::string topic_id, std::set<std::string> retrieved,
                         std::set<std::string> relevant, bool truncated) {
  TopicEval e;
  e.topic_id = std::move(topic_id);
  e.truncated = truncated;
  std::size_t hits = 0;
  for (const auto& pmid : retrieved) hits += relevant.count(pmid);
  e.precision = retrieved.empty() ? 0.0 : static_cast<double>(hits) / retrieved.size();
  e.recall = relevant.empty() ? 0.0 : static_cast<double>(hits) / relevant.size();
  // P == R gives F = P exactly instead of going through the formula.
  if (e.precision == e.recall) {
    e.f1 = e.f3 = e.precision;
  } else {
    e.f1 = f_beta(e.precision, e.recall, 1.0);
    e.f3 = f_beta(e.precision, e.recall, 3.0);
  }
  if (truncated) {
    e.warning = "retrieved set truncated; recall is a lower bound";
  } else if (relevant.empty()) {
    e.warning = "no relevant documents; recall set to 0";
  }
  e.retrieved = std::move(retrieved);
  e.relevant = std::move(relevant);
  return e;
}

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::kPrecision: return "precision";
    case Metric::kRecall: return "recall";
    case Metric::kF1: return "f1";
    case Metric::kF3: return "f3";
  }
  return "recall";
}

double metric_value(const TopicEval& eval, Metric metric) {
  switch (metric) {
    case Metric::kPrecision: return eval.precision;
    case Metric::kRecall: return eval.recall;
    case Metric::kF1: return eval.f1;
    case Metric::kF3: return eval.f3;
  }
  return 0.0;
}

double MacroMetrics::get(Metric metric) const {
  switch (metric) {
    case Metric::kPrecision: return precision;
    case Metric::kRecall: return recall;
    case Metric::kF1: return f1;
    case Metric::kF3: return f3;
  }
  return 0.0;
}

RunSummary macro_average(std::vector<TopicEval> per_topic) {
  if (per_topic.empty()) throw EmptyRun();
  std::sort(per_topic.begin(), per_topic.end(),
            [](const TopicEval& a, const TopicEval& b) { return a.topic_id < b.topic_id; });
  RunSummary s;
  for (const auto& e : per_topic) {
    s.macro.precision += e.precision;
    s.macro.recall += e.recall;
    s.macro.f1 += e.f1;
    s.macro.f3 += e.f3;
  }
  const double n = static_cast<double>(per_topic.size());
  s.macro.precision /= n;
  s.macro.recall /= n;
  s.macro.f1 /= n;
  s.macro.f3 /= n;
  s.n_topics = per_topic.size();
  s.per_topic = std::move(per_topic);
  return s;
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw LengthMismatch(fmt::format("paired samples differ in length ({} vs {})", a.size(), b.size()));
  }
  if (a.size() < 2) throw LengthMismatch("paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];

  TTestResult r;
  r.df = static_cast<int>(n) - 1;
  const bool all_equal = std::all_of(d.begin(), d.end(), [&](double v) { return v == d[0]; });
  if (all_equal) {
    if (d[0] == 0.0) return r;  // t = 0, p = 1
    r.degenerate = true;
    r.t = d[0] > 0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
    r.raw_p = 0.0;
    return r;
  }
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.raw_p = student_t_two_sided_p(r.t, r.df);
  return r;
}

double bonferroni(double raw_p, int m) { return std::min(1.0, raw_p * m); }

// ---------------------------------------------------------------------------
// Tables

TopicSetMismatch::TopicSetMismatch(std::vector<std::string> differing)
    : Error(fmt::format("runs cover different topics: {}", fmt::join(differing, ", "))),
      differing_(std::move(differing)) {}

namespace {

std::vector<std::string> topic_ids(const RunSummary& s) {
  std::vector<std::string> ids;
  for (const auto& e : s.per_topic) ids.push_back(e.topic_id);
  return ids;
}

std::vector<double> values(const RunSummary& s, Metric m) {
  std::vector<double> v;
  for (const auto& e : s.per_topic) v.push_back(metric_value(e, m));
  return v;
}

struct Pending {
  char family;
  std::string baseline_id;
  std::string candidate_id;
  Metric metric;
  TTestResult test;
};

}  // namespace

TableReport build_table(const std::vector<Cell>& cells, const std::optional<RunSummary>& baseline,
                        double alpha) {
  TableReport rep;
  rep.significance.alpha = alpha;
  if (baseline) rep.baseline = baseline->macro;

  // Every participant must cover the same topics.
  std::vector<std::vector<std::string>> sets;
  for (const auto& c : cells) sets.push_back(topic_ids(c.summary));
  if (baseline) sets.push_back(topic_ids(*baseline));
  if (!sets.empty()) {
    std::set<std::string> all, common(sets[0].begin(), sets[0].end());
    for (const auto& s : sets) {
      all.insert(s.begin(), s.end());
      std::set<std::string> next;
      for (const auto& id : s) {
        if (common.count(id)) next.insert(id);
      }
      common = std::move(next);
    }
    std::vector<std::string> differing;
    for (const auto& id : all) {
      if (!common.count(id)) differing.push_back(id);
    }
    if (!differing.empty()) throw TopicSetMismatch(std::move(differing));
  }

  for (const auto& c : cells) {
    if (std::find(rep.labels.begin(), rep.labels.end(), c.label) == rep.labels.end()) {
      rep.labels.push_back(c.label);
    }
    if (std::find(rep.backends.begin(), rep.backends.end(), c.backend_id) == rep.backends.end()) {
      rep.backends.push_back(c.backend_id);
    }
    rep.cells[c.id()] = &c;
  }

  const bool can_test = !cells.empty() && cells.front().summary.n_topics >= 2;
  std::vector<Pending> pending;
  auto compare = [&](char family, const Cell& cand, const std::string& base_id,
                     const RunSummary& base, Metric m) {
    auto cv = values(cand.summary, m), bv = values(base, m);
    pending.push_back({family, base_id, cand.id(), m, paired_t_test(cv, bv)});
  };
  // Best member of a group by macro value; ties keep the first in input order.
  auto best_of = [&](const std::vector<const Cell*>& group, Metric m) {
    const Cell* best = group.front();
    for (const Cell* c : group) {
      if (c->summary.macro.get(m) > best->summary.macro.get(m)) best = c;
    }
    return best;
  };

  if (can_test) {
    for (Metric m : kAllMetrics) {
      for (const auto& backend : rep.backends) {
        std::vector<const Cell*> group;
        for (const auto& c : cells) {
          if (c.backend_id == backend) group.push_back(&c);
        }
        if (group.size() < 2) continue;
        const Cell* best = best_of(group, m);
        for (const Cell* c : group) {
          if (c != best) compare('a', *c, best->id(), best->summary, m);
        }
      }
      for (const auto& label : rep.labels) {
        std::vector<const Cell*> group;
        for (const auto& c : cells) {
          if (c.label == label) group.push_back(&c);
        }
        if (group.size() < 2) continue;
        const Cell* best = best_of(group, m);
        for (const Cell* c : group) {
          if (c != best) compare('b', *c, best->id(), best->summary, m);
        }
      }
      if (baseline) {
        for (const auto& c : cells) compare('c', c, "manual", *baseline, m);
      }
    }
  }

  for (const auto& p : pending) ++rep.significance.family_sizes[{p.metric, p.family}];
  for (const auto& p : pending) {
    const int m = rep.significance.family_sizes[{p.metric, p.family}];
    const double adj = bonferroni(p.test.raw_p, m);
    const bool sig = adj < alpha;
    rep.significance.comparisons.push_back(
        {p.family, p.baseline_id, p.candidate_id, p.metric, p.test.t, p.test.raw_p, adj, sig});
    if (sig) {
      auto& mk = rep.markers[{p.metric, p.candidate_id}];
      if (mk.find(p.family) == std::string::npos) {
        mk.push_back(p.family);
        std::sort(mk.begin(), mk.end());
      }
    }
  }
  return rep;
}

namespace {

std::string family_header(const TableReport& rep, Metric m) {
  std::string out = fmt::format("alpha={}", rep.significance.alpha);
  for (char f : {'a', 'b', 'c'}) {
    auto it = rep.significance.family_sizes.find({m, f});
    out += fmt::format(" m({})={}", f, it == rep.significance.family_sizes.end() ? 0 : it->second);
  }
  return out;
}

}  // namespace

std::string TableReport::to_csv() const {
  std::string out;
  out += "# markers: a = vs best prompt for the backend, b = vs best backend for the prompt, "
         "c = vs manual baseline; paired t-test, Bonferroni per (metric, family)\n";
  for (Metric m : kAllMetrics) out += fmt::format("# {}: {}\n", to_string(m), family_header(*this, m));
  out += "prompt,backend,n_topics,precision,recall,f1,f3,"
         "markers_precision,markers_recall,markers_f1,markers_f3\n";
  for (const auto& label : labels) {
    for (const auto& backend : backends) {
      auto it = cells.find(label + "/" + backend);
      if (it == cells.end()) continue;
      const Cell& c = *it->second;
      out += fmt::format("{},{},{}", c.label, c.backend_id, c.summary.n_topics);
      for (Metric m : kAllMetrics) out += fmt::format(",{:.6f}", c.summary.macro.get(m));
      for (Metric m : kAllMetrics) {
        auto mk = markers.find({m, c.id()});
        out += "," + (mk == markers.end() ? std::string() : mk->second);
      }
      out += "\n";
    }
  }
  if (baseline) {
    out += "manual,,";
    for (Metric m : kAllMetrics) out += fmt::format(",{:.6f}", baseline->get(m));
    out += ",,,,\n";
  }
  return out;
}

std::string TableReport::to_text() const {
  std::size_t label_w = 6;
  for (const auto& l : labels) label_w = std::max(label_w, l.size());
  std::size_t col_w = 10;
  for (const auto& b : backends) col_w = std::max(col_w, b.size() + 1);

  std::string out;
  for (Metric m : kAllMetrics) {
    out += fmt::format("{} [{}]\n", to_string(m), family_header(*this, m));
    out += fmt::format("{:<{}}", "prompt", label_w);
    for (const auto& b : backends) out += fmt::format(" {:>{}}", b, col_w);
    out += "\n";
    for (const auto& label : labels) {
      out += fmt::format("{:<{}}", label, label_w);
      for (const auto& backend : backends) {
        auto it = cells.find(label + "/" + backend);
        std::string cell;
        if (it != cells.end()) {
          cell = fmt::format("{:.4f}", it->second->summary.macro.get(m));
          auto mk = markers.find({m, it->second->id()});
          if (mk != markers.end()) cell += mk->second;
        }
        out += fmt::format(" {:>{}}", cell, col_w);
      }
      out += "\n";
    }
    if (baseline) {
      out += fmt::format("{:<{}} {:>{}}\n", "manual", label_w,
                         fmt::format("{:.4f}", baseline->get(m)), col_w);
    }
    out += "\n";
  }
  return out;
}

std::string variability_csv(const std::vector<Cell>& cells) {
  std::string out = "topic,prompt,backend,recall\n";
  for (const auto& c : cells) {
    for (const auto& e : c.summary.per_topic) {
      out += fmt::format("{},{},{},{}\n", e.topic_id, c.label, c.backend_id, e.recall);
    }
  }
  return out;
}

std::vector<TopicEval> evaluate_topics(const std::vector<RunInput>& runs,
                                       const std::map<std::string, std::set<std::string>>& qrels) {
  std::vector<TopicEval> out(runs.size());
  static const std::set<std::string> kNone;
  const long long n = static_cast<long long>(runs.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < n; ++i) {
    const auto& r = runs[static_cast<std::size_t>(i)];
    auto it = qrels.find(r.topic_id);
    out[static_cast<std::size_t>(i)] =
        evaluate_topic(r.topic_id, r.retrieved, it == qrels.end() ? kNone : it->second, r.truncated);
  }
  return out;
}

}  // namespace boolgen
