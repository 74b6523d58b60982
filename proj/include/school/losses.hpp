#pragma once

#include "school/affinity.hpp"
#include "school/common.hpp"

#include <span>
#include <vector>

namespace school {

/// Column means of Y below this are clamped before the log.
inline constexpr double kEntropyFloor = 1e-8;

struct SpectralLoss {
    double value = 0.0;
    double smoothness = 0.0;  // (1/n^2) sum_ij s_ij |y_i - y_j|^2
    double entropy = 0.0;     // H(Y) over clamped column means
    Matrix grad_y;
};

/// (1/n^2) sum_ij s_ij |y_i - y_j|^2 - gamma H(Y), H(Y) = -sum_c p_c log p_c
/// with p_c the mean of column c of Y.
SpectralLoss spectral_loss(const AffinityMatrix& s, const Matrix& y, double gamma);

/// (2/n^2) Tr(Y^T L_S Y), the trace form of the smoothness term.
double spectral_trace(const Laplacian& l, const Matrix& y);

struct NodeConsistency {
    double value = 0.0;
    double alignment = 0.0;    // |Q - Q~|_F^2
    double decorrelation = 0.0;  // log sum exp(C)
    Matrix grad_q;
    Matrix grad_q_tilde;
};

/// |Q - Q~|_F^2 + eta log sum_{ij} exp(c_ij), C = Q^T Q + Q~^T Q~.
NodeConsistency node_consistency(const Matrix& q, const Matrix& q_tilde, double eta);

struct ClusterPool {
    Matrix centroids;            // clusters x d2
    std::vector<Index> sizes;
    std::vector<int> empty;      // ids of clusters with no members (zero centroid)
};

/// Average of Q rows per hard cluster id.
ClusterPool cluster_pool(const Matrix& q, std::span<const int> hard, Index clusters);

/// Gradient of the pooled centroids pushed back onto the rows of Q.
Matrix cluster_pool_backward(const ClusterPool& pool, std::span<const int> hard, const Matrix& grad_centroids);

struct ClusterConsistency {
    double value = 0.0;
    Matrix grad_q_tilde;
    Matrix grad_centroids;
};

/// sum_i |q~_i - q^_{y_i}|^2.
ClusterConsistency cluster_consistency(const Matrix& q_tilde, const Matrix& centroids, std::span<const int> hard);

inline double total_objective(double l_sp, double l_nc, double l_cc, double mu, double delta) {
    return l_sp + mu * l_nc + delta * l_cc;
}

struct LossReport {
    double l_sp = 0.0;
    double l_nc = 0.0;
    double l_cc = 0.0;
    double total = 0.0;
    double entropy = 0.0;
    int empty_clusters = 0;

    bool operator==(const LossReport&) const = default;
};

}  // namespace school
