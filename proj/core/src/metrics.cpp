#include "hfo/metrics.hpp"

#include <cmath>

#include "hfo/common.hpp"

namespace hfo {

RrResult resection_ratio(const std::vector<Prediction>& preds,
                         const std::set<std::string>& resected) {
  std::size_t path = 0, path_in = 0;
  for (const auto& p : preds) {
    if (p.label != 1) continue;
    ++path;
    if (resected.count(p.event.channel) != 0) ++path_in;
  }
  if (path == 0) return {1.0, true};
  return {double(path_in) / double(path), false};
}

std::optional<double> specificity(const std::vector<Prediction>& preds,
                                  const std::set<std::string>& resected) {
  std::size_t preserved = 0, nonpath = 0;
  for (const auto& p : preds) {
    if (resected.count(p.event.channel) != 0) continue;
    ++preserved;
    if (p.label == 0) ++nonpath;
  }
  if (preserved == 0) return std::nullopt;
  return double(nonpath) / double(preserved);
}

OutcomeModel fit_logistic(const std::vector<double>& x, const std::vector<int>& y,
                          const std::vector<double>& weights) {
  const std::size_t n = x.size();
  if (n == 0 || y.size() != n || weights.size() != n) {
    throw ValidationError("logistic fit inputs must align and be non-empty");
  }
  // 1/L step from the trace bound on the weighted Hessian.
  double lipschitz = 0.0;
  for (std::size_t i = 0; i < n; ++i) lipschitz += 0.25 * weights[i] * (x[i] * x[i] + 1.0);
  const double step = 1.0 / lipschitz;

  OutcomeModel m;
  const long max_iters = 100000;
  for (long it = 0; it < max_iters; ++it) {
    double gw = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = m.weight * x[i] + m.bias;
      const double p = 1.0 / (1.0 + std::exp(-s));
      const double r = weights[i] * (p - double(y[i]));
      gw += r * x[i];
      gb += r;
    }
    m.grad_norm = std::sqrt(gw * gw + gb * gb);
    m.iterations = it;
    if (m.grad_norm < 1e-8) {
      m.converged = true;
      return m;
    }
    m.weight -= step * gw;
    m.bias -= step * gb;
  }
  m.iterations = max_iters;
  return m;
}

OutcomeModel fit_outcome_model(const std::vector<double>& rr, const std::vector<int>& success) {
  const std::size_t n = rr.size();
  if (n == 0 || success.size() != n) throw ValidationError("outcome model inputs must align");
  std::size_t n1 = 0;
  for (int s : success) {
    if (s != 0 && s != 1) throw ValidationError("outcomes must be 0 or 1");
    n1 += std::size_t(s);
  }
  const std::size_t n0 = n - n1;
  if (n0 == 0 || n1 == 0) {
    throw ValidationError("outcome model needs both outcome classes");
  }
  const double w1 = double(n) / (2.0 * double(n1));
  const double w0 = double(n) / (2.0 * double(n0));
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = success[i] == 1 ? w1 : w0;
  return fit_logistic(rr, success, weights);
}

double outcome_probability(const OutcomeModel& model, double rr) {
  return 1.0 / (1.0 + std::exp(-(model.weight * rr + model.bias)));
}

int outcome_label(const OutcomeModel& model, double rr) {
  return outcome_probability(model, rr) > 0.5 ? 1 : 0;
}

AccF1 accuracy_f1(const std::vector<int>& predicted, const std::vector<int>& truth, int positive) {
  const std::size_t n = predicted.size();
  if (n == 0 || truth.size() != n) {
    throw ValidationError("accuracy inputs must align and be non-empty");
  }
  std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (predicted[i] == truth[i]) ++correct;
    const bool pp = predicted[i] == positive, tt = truth[i] == positive;
    if (pp && tt) ++tp;
    if (pp && !tt) ++fp;
    if (!pp && tt) ++fn;
  }
  AccF1 out;
  out.acc = double(correct) / double(n);
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) {
    out.f1 = 0.0;
    out.f1_degenerate = true;
  } else {
    out.f1 = 2.0 * double(tp) / double(denom);
  }
  return out;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("mean of empty sequence");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= double(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(acc / double(values.size()));
  return out;
}

}  // namespace hfo
