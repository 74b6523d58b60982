#pragma once

#include "school/common.hpp"

#include <Eigen/SparseCore>

#include <filesystem>
#include <span>
#include <vector>

namespace school {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Row-stochastic k-sparse affinity over target nodes.
///
/// Row i holds the k nearest candidates of node i (self excluded, ties broken
/// by lower index) with weights from the closed-form simplex solution. The
/// per-row alpha_i and lambda_i that produced the weights are kept, together
/// with their mean alpha for diagnostics.
struct AffinityMatrix {
    Index k = 0;
    std::vector<Index> neighbors;  // n * k, row-major, ascending distance
    std::vector<double> weights;   // n * k, aligned with neighbors
    std::vector<double> alpha_row;
    std::vector<double> lambda;
    std::vector<char> degenerate;  // rows that fell back to uniform weights
    double alpha = 0.0;
    SparseRowMatrix matrix;  // n x n, zero weights pruned

    Index size() const { return matrix.rows(); }

    /// Test and tooling helper: wraps an arbitrary dense row-stochastic matrix.
    static AffinityMatrix from_dense(const Matrix& s);
};

/// L_S = D - (S + S^T) / 2, with D the degree matrix of the symmetrized S.
struct Laplacian {
    SparseMatrix matrix;
    Vector degree;

    Index size() const { return matrix.rows(); }
    Matrix dense() const { return Matrix(matrix); }
};

/// d_ij = |h_i - h_j|^2 + beta |f_i - f_j|^2.
double pairwise_distance(const RowVector& h_i, const RowVector& h_j, const RowVector& f_i, const RowVector& f_j,
                         double beta);

struct RowAlpha {
    double alpha = 0.0;   // alpha_i
    double lambda = 0.0;  // lambda_i
    bool degenerate = false;
};

/// alpha_i = (k/2) d_{k+1} - (1/2) sum_{j<=k} d_j and
/// lambda_i = 1/k + sum_{j<=k} d_j / (2 k alpha_i) for one ascending row of at
/// least k+1 distances. A row with alpha_i <= 0 (all of the first k+1
/// distances tied) is flagged degenerate and given lambda_i = 1/k.
RowAlpha compute_row_alpha(std::span<const double> sorted_distances, Index k);

struct AlphaSolution {
    double alpha = 0.0;  // mean of alpha_i
    std::vector<double> alpha_row;
    std::vector<double> lambda;
    std::vector<char> degenerate;
};

AlphaSolution compute_alpha(const std::vector<std::vector<double>>& sorted_rows, Index k);

/// s_j = max(lambda - d_j / (2 alpha), 0).
std::vector<double> solve_affinity_row(std::span<const double> distances, double alpha, double lambda);

/// Exact k-NN affinity from semantic representations H and assignment rows
/// F (may have zero columns, in which case beta is irrelevant).
AffinityMatrix build_affinity(const Matrix& h, const Matrix& f, double beta, Index k, int threads = thread_budget());

Laplacian laplacian(const AffinityMatrix& s);

/// Z = S H.
Matrix propagate(const AffinityMatrix& s, const Matrix& h);

/// Writes (i, j, s_ij) triplets for every stored entry.
void export_affinity(const AffinityMatrix& s, const std::filesystem::path& path);

/// Fraction of total row mass whose endpoints share a group id.
double intra_group_mass(const AffinityMatrix& s, std::span<const int> groups);

}  // namespace school
