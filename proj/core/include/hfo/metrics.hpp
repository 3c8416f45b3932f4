#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hfo/classifier.hpp"

namespace hfo {

struct RrResult {
  double value = 1.0;
  bool missing = false;  // no pathological predictions; value imputed as 1.0
};

// Pathological predictions on resected channels / all pathological
// predictions, for one subject's predictions.
RrResult resection_ratio(const std::vector<Prediction>& preds,
                         const std::set<std::string>& resected);

// Non-pathological predictions on preserved channels / all predictions on
// preserved channels. Empty when the subject has no preserved-region events.
std::optional<double> specificity(const std::vector<Prediction>& preds,
                                  const std::set<std::string>& resected);

struct OutcomeModel {
  double weight = 0.0;
  double bias = 0.0;
  long iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;  // gradient norm < 1e-8 within the iteration cap
};

// Weighted single-feature logistic regression by full-batch gradient descent
// with a fixed 1/L step. y[i] = 1 for surgical success.
OutcomeModel fit_logistic(const std::vector<double>& x, const std::vector<int>& y,
                          const std::vector<double>& weights);

// Balanced class weights n_total / (2 * n_class).
OutcomeModel fit_outcome_model(const std::vector<double>& rr, const std::vector<int>& success);

double outcome_probability(const OutcomeModel& model, double rr);
// probability strictly above 0.5 predicts success.
int outcome_label(const OutcomeModel& model, double rr);

struct AccF1 {
  double acc = 0.0;
  double f1 = 0.0;
  bool f1_degenerate = false;  // no positives predicted or present; f1 forced to 0
};

// positive selects the class treated as positive for F1 (default: success=1).
AccF1 accuracy_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                  int positive = 1);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (N-denominator)
};

MeanStd mean_std(const std::vector<double>& values);

}  // namespace hfo
