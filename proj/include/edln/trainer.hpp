#pragma once

#include "edln/objectives.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace edln {

enum class Algorithm {
  kSgd,
  kFullBatchGd,
  kGradientFlow,
  /// Full-batch descent on L + eta_S S.
  kEntropicExplicit,
  /// The eta_S -> 0+ limit: minimize S on the set L = min L. Each step
  /// projects back onto the constraint with minimum-norm Gauss-Newton steps
  /// and then takes a backtracking step along the tangent part of grad S.
  kEntropicConstrained,
};

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

struct TrainConfig {
  Algorithm algorithm = Algorithm::kSgd;
  /// Step size; integration step for gradient flow; initial step for the
  /// constrained mode.
  double learning_rate = 0.01;
  int batch_size = 32;
  int steps = 1000;
  double weight_decay = 0.0;
  double entropic_coeff = 0.0;
  ExpectationMode expectation_mode = ExpectationMode::kAnalytic;
  /// Size of the fixed batch used by full-batch modes under Monte-Carlo expectation.
  int mc_samples = 4096;
  int record_every = 100;
  /// 0 disables sharpness in the trace.
  int sharpness_every = 0;
  /// 0 disables checkpoints (the final network is always returned).
  int checkpoint_every = 0;
  EntropyGradient entropy_gradient = EntropyGradient::kAnalytic;
  /// Constrained mode: stop projecting once L - min L <= tol * min L.
  double constraint_tol = 1e-12;
  /// Constrained mode: stop when the tangent gradient norm falls below this
  /// fraction of S.
  double stationarity_tol = 1e-10;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

struct TraceRow {
  int step = 0;
  double loss = 0.0;
  double entropy = 0.0;
  /// NaN when not measured at this row.
  double sharpness = 0.0;
  /// |Q_i(t) - Q_i(0)|_F per interface.
  std::vector<double> drift;
};

struct Checkpoint {
  int step = 0;
  EdlnNetwork net;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  std::vector<Checkpoint> checkpoints;
  /// Steps actually taken (constrained mode may stop early at stationarity).
  int steps_taken = 0;

  std::string csv() const;
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  EdlnNetwork net;
  TrainTrace trace;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int step, EdlnNetwork last_finite, TrainTrace trace)
      : std::runtime_error(what), step_(step), last_finite_(std::move(last_finite)),
        trace_(std::move(trace)) {}
  int step() const { return step_; }
  const EdlnNetwork& last_finite() const { return last_finite_; }
  const TrainTrace& trace() const { return trace_; }

 private:
  int step_;
  EdlnNetwork last_finite_;
  TrainTrace trace_;
};

/// Trains on the view `tag`. Trace losses and entropies are analytic
/// population values regardless of the expectation mode used for steps.
TrainResult train(const EdlnNetwork& net, const DataModel& dm, const std::string& tag,
                  const TrainConfig& cfg);

/// Moves `net` onto {L = min L} by minimum-norm Gauss-Newton steps on the
/// whitened residual (F - F_opt) chol(E[x x^T]).
EdlnNetwork project_to_constraint(const EdlnNetwork& net, const Expectation& ex,
                                  double tol = 1e-12, int max_iters = 100);

}  // namespace edln
