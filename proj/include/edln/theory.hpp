#pragma once

#include "edln/objectives.hpp"

namespace edln {

/// Raised when a construction is asked for inputs outside the family it
/// is defined on (non-commuting data for the weight-decay root, feature
/// noise for the closed form, ...).
class UnsupportedCaseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Weight product W_D ... W_1 at every global minimum of the view's loss:
/// (M^O)^{-1} Phi V* Z^{-1} (M^I)^{-1}.
Matrix global_min_target(const DataModel& dm, const std::string& tag, const EdlnNetwork& net);

/// Minimizer of S on the loss constraint.
///
/// Whitened coordinates: U_0 = M^I Z sqrt(Sigma_x), U_{D+1} = sqrt(Sigma_eps') M^O
/// with Sigma_eps' = Phi Sigma_eps Phi, and
///   W~_1 = W_1 U_0,   W~_D = U_{D+1} W_D,   W~_i = W_i otherwise.
/// On the constraint W~_D ... W~_1 = V_bar = sqrt(Sigma_eps') Phi V* sqrt(Sigma_x) and
///   S / 4 = sum_i |W~_D .. W~_{i+1}|^2 |W~_{i-1} .. W~_1|^2
/// where the empty products at the two ends are replaced by beta_out = |U_{D+1}|^2
/// and beta_in = |U_0|^2. With V_bar = E_l S E_r (rank r, sigma = tr S) the
/// minimizer is
///   W~_1 = c_1 R_1 sqrt(S) E_r,  W~_i = c R_i R_{i-1}^T,  W~_D = c_D E_l sqrt(S) R_{D-1}^T,
///   c = (sigma^2 / (beta_in beta_out))^{1/(2D)},  c_1 = c sqrt(beta_in / sigma),
///   c_D = c sqrt(beta_out / sigma),
/// which makes all D terms of S equal. R_i are d_i x r with orthonormal columns.
struct ClosedFormSolution {
  std::string tag;
  Matrix v_bar;
  Matrix e_l;               // output_dim x r
  Vector singular_values;   // r
  Matrix e_r;               // r x input_dim
  std::vector<Matrix> rotations;   // R_1 .. R_{D-1}
  std::vector<Matrix> w_bar;       // W~_1 .. W~_D
  /// Per interface i = 1..D-1: 1 / E|h_{i-1}|^2 and 1 / E|grad_{h_{i+1}} l|^2
  /// (up to the common factor 4).
  std::vector<double> a_h;
  std::vector<double> a_g;
  /// h_i(Z x) = layer_scales[i-1] * R_i sqrt(S) E_r sqrt(Sigma_x)^+ x
  std::vector<double> layer_scales;
  Matrix sqrt_sigma_x;
  EdlnNetwork network;

  int depth() const { return network.depth(); }
  Eigen::Index rank() const { return singular_values.size(); }
  const std::vector<Matrix>& raw_weights() const { return network.weights(); }
  /// W~_i ... W~_1
  Matrix whitened_prefix(int i) const;
  /// W~_D ... W~_{i+1}
  Matrix whitened_suffix(int i) const;
};

/// Builds the solution inside the embeddings and widths of `shell` (its
/// weights are ignored). rank_cap < 0 keeps the full rank of V_bar.
ClosedFormSolution closed_form_platonic(const DataModel& dm, const std::string& tag,
                                        const EdlnNetwork& shell, std::uint64_t rotation_seed,
                                        Eigen::Index rank_cap = -1);

/// Same, with explicit gauge matrices R_1..R_{D-1} (d_i x r, orthonormal columns).
ClosedFormSolution closed_form_with_rotations(const DataModel& dm, const std::string& tag,
                                              const EdlnNetwork& shell,
                                              const std::vector<Matrix>& rotations,
                                              Eigen::Index rank_cap = -1);

/// Closed form built on the rank-r truncation of V_bar. r = rank reproduces
/// closed_form_platonic, r = 0 gives the zero network.
ClosedFormSolution low_rank_saddle(const DataModel& dm, const std::string& tag,
                                   const EdlnNetwork& shell, Eigen::Index r,
                                   std::uint64_t rotation_seed);

/// x (base coordinates) -> R_i sqrt(S) E_r sqrt(Sigma_x)^+ x for hidden layer i.
Matrix whitened_representation_map(const ClosedFormSolution& sol, int layer);

struct InterfaceBalance {
  int interface = 0;
  /// W_i E[g_K^T g_K] W_i^T  vs  W_{i+1}^T E[g_K g_K^T] W_{i+1},  K = W_{i+1} W_i
  double gradient_balance = 0.0;
  /// a_h W_i E[h_{i-1} h_{i-1}^T] W_i^T  vs  a_g W_{i+1}^T A^T Sigma_eps A W_{i+1}
  double layer_condition = 0.0;
  /// diag E[g_i g_i^T]  vs  diag E[g_{i+1}^T g_{i+1}]
  double rowcol = 0.0;
};

struct BalanceReport {
  std::vector<InterfaceBalance> interfaces;
  /// The layer condition assumes f - y = eps; false when the loss is more
  /// than 1e-6 (relative) above the noise floor.
  bool on_constraint = false;
  double max_residual() const;
};

BalanceReport balance_report(const EdlnNetwork& net, const Expectation& ex);

/// Q_i = W_{i+1}^T W_{i+1} - W_i W_i^T for i = 1..D-1.
std::vector<Matrix> conserved_quantities(const EdlnNetwork& net);

/// W_{i+1} <- W_{i+1} T,  W_i <- T^{-1} W_i.
EdlnNetwork transform_interface(const EdlnNetwork& net, int i, const Matrix& t);

/// transform_interface with T = I + magnitude * G / |G|_F for Gaussian G,
/// resampled (at most 10 draws) while T is badly conditioned.
EdlnNetwork non_platonic_transform(const EdlnNetwork& net, int i, std::uint64_t t_seed,
                                   double magnitude);

/// D copies of the principal D-th root of V* Z^{-1}. Requires square dims,
/// symmetric commuting V* and Z, no label transform and V* Z^{-1} PSD.
std::vector<Matrix> weight_decay_closed_form(const DataModel& dm, const std::string& tag, int depth);

/// Removes the gauge W_i -> O_i W_i O_{i-1}^T (O_0 = O_D = I) that best
/// matches `reference`, one interface at a time by orthogonal Procrustes.
std::vector<Matrix> gauge_align(const std::vector<Matrix>& weights,
                                const std::vector<Matrix>& reference);

/// Minimizer of S along the rescaling of row j of W_i against column j of
/// W_{i+1}: lambda* = log(E|grad W_i^{j:}|^2 / E|grad W_{i+1}^{:j}|^2) / 4.
double optimal_rescaling(const EdlnNetwork& net, const Expectation& ex, int i, Eigen::Index j);

}  // namespace edln
