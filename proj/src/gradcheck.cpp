#include "nowcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nowcast/autodiff.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& loss,
                                  const std::vector<GradProbe>& probes, double tol, double h) {
  std::vector<bool> restore_flag;
  for (const auto& p : probes) {
    restore_flag.push_back(p.tensor.requires_grad());
    auto t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }

  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> value = loss();
    tape.backward(value);
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    auto t = probes[k].tensor;
    const std::size_t i = probes[k].index;
    const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
    auto data = t.mutable_data();
    const double saved = data[i];
    data[i] = saved + h;
    const double plus = loss().item();
    data[i] = saved - h;
    const double minus = loss().item();
    data[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double rel = gradient_relative_error(analytic, numeric);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = k;
    }
    report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic - numeric));
    ++report.checked;
  }
  for (std::size_t k = 0; k < probes.size(); ++k) {
    auto t = probes[k].tensor;
    t.zero_grad();
    t.set_requires_grad(restore_flag[k]);
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  Tensor<double> x, double tol, double h) {
  std::vector<GradProbe> probes;
  probes.reserve(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) probes.push_back({x, i});
  return finite_diff_check([&] { return f(x); }, probes, tol, h);
}

}  // namespace nowcast
