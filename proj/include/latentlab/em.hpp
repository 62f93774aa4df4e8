// Generic expectation-maximization driver.
//
// A model plugs in three callbacks: an E-step that computes the posterior
// over latents under the current parameters, an M-step that maximizes the
// expected complete-data log-likelihood given that posterior, and the
// objective (observed-data log-likelihood, or an ELBO). The driver records
// the objective after every iteration and rejects decreases beyond a small
// slack, since a correct EM pair can never lower it.

#pragma once

#include "latentlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace latentlab {

struct EmConfig {
  int max_iters = 500;
  /// Stop when |delta| / max(1, |objective|) < rel_tol.
  double rel_tol = 1e-7;
  /// Also stop when |delta| < abs_tol.
  double abs_tol = 1e-10;
  std::uint64_t seed = 0;
  /// Allowed objective decrease between iterations.
  double monotone_slack = 1e-8;

  void validate() const {
    if (max_iters < 1) throw InvalidArgument("EmConfig: max_iters must be >= 1");
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0) || !(monotone_slack >= 0.0))
      throw InvalidArgument("EmConfig: tolerances must be positive");
  }
};

struct FitReport {
  std::vector<double> objective_trace;
  bool converged = false;
  int iters = 0;
  double final_objective = kNegInf;
  /// Objective of the starting parameters, before the first iteration.
  double initial_objective = kNegInf;
  /// Non-fatal events such as empty-component rescues, tagged by iteration.
  std::vector<std::string> events;
};

/// Thrown when an iteration lowers the objective by more than the slack.
class MonotonicityError : public NumericError {
public:
  MonotonicityError(int iteration, double before, double after)
      : NumericError(describe(iteration, before, after)), iteration_(iteration),
        before_(before), after_(after) {}

  [[nodiscard]] int iteration() const noexcept { return iteration_; }
  [[nodiscard]] double before() const noexcept { return before_; }
  [[nodiscard]] double after() const noexcept { return after_; }

private:
  static std::string describe(int iteration, double before, double after) {
    std::ostringstream os;
    os.precision(17);
    os << "EM objective decreased at iteration " << iteration << ": " << before << " -> "
       << after;
    return os.str();
  }

  int iteration_;
  double before_;
  double after_;
};

/// Collects M-step events. A flagged iteration (e.g. a component was
/// re-seeded) is exempt from the monotonicity check.
class EmEvents {
public:
  void record(std::string what) {
    notes_.push_back(std::move(what));
    flagged_ = true;
  }
  [[nodiscard]] bool take_flag() { return std::exchange(flagged_, false); }
  [[nodiscard]] std::vector<std::string> &notes() { return notes_; }

private:
  std::vector<std::string> notes_;
  bool flagged_ = false;
};

template <class M>
concept EmModel = requires(M &model, const typename M::Params &params,
                           const typename M::Posterior &posterior, EmEvents &events) {
  { model.e_step(params) } -> std::same_as<typename M::Posterior>;
  { model.m_step(posterior, params, events) } -> std::same_as<typename M::Params>;
  { model.objective(params) } -> std::convertible_to<double>;
};

template <EmModel M>
std::pair<typename M::Params, FitReport> run_em(M &model, typename M::Params params,
                                                const EmConfig &cfg) {
  cfg.validate();
  FitReport report;
  EmEvents events;
  double previous = model.objective(params);
  if (!std::isfinite(previous)) throw NumericError("EM: initial objective is not finite");
  report.initial_objective = previous;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    const auto posterior = model.e_step(params);
    params = model.m_step(posterior, params, events);
    const double current = model.objective(params);
    if (!std::isfinite(current)) throw NumericError("EM: objective became non-finite");
    const bool flagged = events.take_flag();
    for (auto &note : events.notes())
      report.events.push_back("iteration " + std::to_string(iter) + ": " + note);
    events.notes().clear();
    if (!flagged && current < previous - cfg.monotone_slack)
      throw MonotonicityError(iter, previous, current);

    report.objective_trace.push_back(current);
    report.iters = iter;
    report.final_objective = current;
    const double delta = std::abs(current - previous);
    previous = current;
    if (!flagged && (delta / std::max(1.0, std::abs(current)) < cfg.rel_tol ||
                     delta < cfg.abs_tol)) {
      report.converged = true;
      break;
    }
  }
  return {std::move(params), std::move(report)};
}

}  // namespace latentlab
