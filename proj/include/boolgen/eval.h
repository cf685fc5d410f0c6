#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "boolgen/error.h"

namespace boolgen {

struct TopicEval {
  std::string topic_id;
  std::set<std::string> retrieved;
  std::set<std::string> relevant;
  bool truncated = false;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double f3 = 0.0;
  std::optional<std::string> warning;
};

// (1+b^2)PR / (b^2 P + R); 0 when P = R = 0.
double f_beta(double precision, double recall, double beta);

// Empty retrieved gives P = 0, empty relevant gives R = 0. A truncated
// retrieved set still yields metrics, with a warning attached.
TopicEval evaluate_topic(std::string topic_id, std::set<std::string> retrieved,
                         std::set<std::string> relevant, bool truncated = false);

enum class Metric { kPrecision, kRecall, kF1, kF3 };
inline constexpr Metric kAllMetrics[] = {Metric::kPrecision, Metric::kRecall, Metric::kF1,
                                         Metric::kF3};

std::string_view to_string(Metric metric);
double metric_value(const TopicEval& eval, Metric metric);

struct MacroMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double f3 = 0.0;

  double get(Metric metric) const;
};

struct RunSummary {
  std::vector<TopicEval> per_topic;
  MacroMetrics macro;
  std::size_t n_topics = 0;
};

class EmptyRun : public Error {
 public:
  EmptyRun() : Error("cannot average an empty run") {}
};

// Unweighted mean over topics. per_topic is kept sorted by topic id.
RunSummary macro_average(std::vector<TopicEval> per_topic);

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

struct TTestResult {
  double t = 0.0;
  double raw_p = 1.0;
  int df = 0;
  // All differences equal and non-zero: t is infinite, p reported as 0.
  bool degenerate = false;
};

// Two-sided paired t-test on a - b. Throws LengthMismatch when sizes differ or
// fewer than two pairs are given.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// I_x(a, b) by the Lentz continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

double bonferroni(double raw_p, int m);

// Marker families: 'a' best prompt for the same backend, 'b' best backend for
// the same prompt, 'c' the manual baseline.
struct Comparison {
  char family;
  std::string baseline_id;
  std::string candidate_id;
  Metric metric;
  double t_statistic;
  double raw_p;
  double adjusted_p;
  bool significant;
};

struct SignificanceReport {
  std::vector<Comparison> comparisons;
  double alpha = 0.05;
  // (metric, family) -> correction family size
  std::map<std::pair<Metric, char>, int> family_sizes;
};

// One evaluated (prompt label, backend) run.
struct Cell {
  std::string label;
  std::string backend_id;
  RunSummary summary;

  std::string id() const { return label + "/" + backend_id; }
};

class TopicSetMismatch : public Error {
 public:
  explicit TopicSetMismatch(std::vector<std::string> differing);
  const std::vector<std::string>& differing() const { return differing_; }

 private:
  std::vector<std::string> differing_;
};

struct TableReport {
  std::vector<std::string> labels;    // rows, first-seen order
  std::vector<std::string> backends;  // columns, first-seen order
  std::map<std::string, const Cell*> cells;  // id -> cell
  std::optional<MacroMetrics> baseline;
  SignificanceReport significance;
  // (metric, cell id) -> sorted marker letters
  std::map<std::pair<Metric, std::string>, std::string> markers;

  std::string to_csv() const;
  std::string to_text() const;
};

// Throws TopicSetMismatch when cells (or the baseline) cover different
// topics. The returned report points into `cells`.
TableReport build_table(const std::vector<Cell>& cells, const std::optional<RunSummary>& baseline,
                        double alpha = 0.05);

// Long-format rows (topic, prompt, backend, recall) for variability plots.
std::string variability_csv(const std::vector<Cell>& cells);

// Parallel per-topic evaluation of many runs; output aligned with input.
struct RunInput {
  std::string topic_id;
  std::set<std::string> retrieved;
  bool truncated = false;
};
std::vector<TopicEval> evaluate_topics(const std::vector<RunInput>& runs,
                                       const std::map<std::string, std::set<std::string>>& qrels);

}  // namespace boolgen
