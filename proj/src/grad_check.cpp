#include "leal/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace leal {

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.value.values());
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
  if (values.size() != params.size()) throw std::invalid_argument("restore: snapshot does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = Tensor(params[i].value).mutable_data();
    if (dst.size() != values[i].size()) throw DimensionError("restore: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

GradCheckResult grad_check(const std::function<Tensor()>& f, const ParamList& params, double eps) {
  if (!(eps > 0.0) || eps > 1e-3) throw std::invalid_argument("grad_check: eps must lie in (0, 1e-3]");
  for (const auto& p : params) p.value.impl()->requires_grad = true;
  zero_grads(params);
  {
    Tape tape;
    auto scope = tape.record();
    Tensor out = f();
    if (!std::isfinite(out.item())) throw std::runtime_error("grad_check: objective is not finite");
    tape.backward(out);
  }
  GradCheckResult result;
  for (const auto& p : params) {
    const std::vector<double> analytic = p.value.grad();
    auto values = Tensor(p.value).mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("grad_check: objective is not finite near " + p.name);
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  zero_grads(params);
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.clone();
  ParamList params{{"x", leaf}};
  return grad_check([&] { return f(leaf); }, params, eps).max_rel_error;
}

}  // namespace leal
