#pragma once

#include "edln/objectives.hpp"

namespace edln {

/// Gram comparison of two representations over a shared probe set.
struct AlignmentReport {
  Matrix gram_a;
  Matrix gram_b;
  /// <G_A, G_B> / <G_A, G_A>
  double c0 = 0.0;
  /// |<G_A, G_B>| / (|G_A| |G_B|); NaN when degenerate.
  double score = 0.0;
  /// Same cosine on doubly centered Grams; NaN when a centered Gram vanishes.
  double cka = 0.0;
  /// A Gram matrix is zero (to 1e-14 relative to the representation scale).
  bool degenerate = false;
};

/// Compares two Gram matrices directly.
AlignmentReport compare_grams(Matrix gram_a, Matrix gram_b);

/// h_i of net_a on probes_a against h_j of net_b on probes_b (columns are
/// the two views of the same base samples). Layers are 1..D.
AlignmentReport alignment(const EdlnNetwork& net_a, int layer_a, const EdlnNetwork& net_b,
                          int layer_b, const Matrix& probes_a, const Matrix& probes_b);

AlignmentReport alignment(const EdlnNetwork& net_a, int layer_a, const EdlnNetwork& net_b,
                          int layer_b, const PairedBatch& probes, const std::string& tag_a,
                          const std::string& tag_b);

/// Score matrix over layer pairs. By default only hidden layers 1..D-1 take
/// part; the last layer's output (M^O)^{-1} f depends on the frozen output
/// embedding. Nets of depth 1 then contribute their single layer.
Matrix pairwise_alignment(const EdlnNetwork& net_a, const EdlnNetwork& net_b,
                          const Matrix& probes_a, const Matrix& probes_b,
                          bool include_output_layer = false);

/// Layers that pairwise_alignment uses for a network.
std::vector<int> alignment_layers(const EdlnNetwork& net, bool include_output_layer = false);

/// Extremes of a score matrix, ignoring NaN entries.
double min_score(const Matrix& scores);
double max_score(const Matrix& scores);

struct SharpnessEstimate {
  double top_eigenvalue = 0.0;
  int iterations = 0;
  /// Relative change of the last Rayleigh quotient.
  double residual = 0.0;
  bool converged = false;
};

/// Hessian-vector product of L by central differences of the analytic gradient.
Vector hessian_vector_product(const EdlnNetwork& net, const Expectation& ex, const Vector& v);

/// Largest Hessian eigenvalue of L by power iteration on finite-difference
/// Hessian-vector products (shifted when the dominant eigenvalue is negative).
SharpnessEstimate sharpness(const EdlnNetwork& net, const Expectation& ex, double tol = 1e-9,
                            int max_iters = 2000, std::uint64_t seed = 0);

}  // namespace edln
