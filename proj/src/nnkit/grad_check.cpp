#include "nnkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace nnkit {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const Closure& closure, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  const Evaluation base = closure(true);
  std::vector<Matrix> analytic;
  for (const Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p.value.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (options.max_entries_per_parameter > 0 && idx.size() > options.max_entries_per_parameter) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_parameter);
      std::sort(idx.begin(), idx.end());
    }
    for (Eigen::Index k : idx) {
      double& x = p.value.data()[k];
      const double saved = x;
      const double h = options.step;
      auto at = [&](double offset) {
        x = saved + offset;
        return closure(false);
      };
      double numeric = 0.0;
      bool crossed = false;
      if (options.stencil == 4) {
        const Evaluation p2 = at(2 * h), p1 = at(h), m1 = at(-h), m2 = at(-2 * h);
        numeric = (-p2.loss + 8.0 * p1.loss - 8.0 * m1.loss + m2.loss) / (12.0 * h);
        for (const Evaluation* ev : {&p2, &p1, &m1, &m2}) crossed = crossed || ev->signature != base.signature;
      } else {
        const Evaluation plus = at(h), minus = at(-h);
        numeric = (plus.loss - minus.loss) / (2.0 * h);
        crossed = plus.signature != base.signature || minus.signature != base.signature;
      }
      x = saved;

      GradCheckEntry e{p.name, k % p.value.rows(), k / p.value.rows(), analytic[pi].data()[k], numeric, 0.0};
      e.relative_error = relative_error(e.analytic, e.numeric);
      if (crossed) {
        ++report.excluded;
        report.excluded_entries.push_back(e);
        continue;
      }
      ++report.checked;
      if (e.relative_error > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
        if (e.relative_error >= report.worst.relative_error) report.worst = e;
      }
      if (e.relative_error >= options.tolerance) report.failures.push_back(e);
    }
  }
  report.passed = report.failures.empty();
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace nnkit
