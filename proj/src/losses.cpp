#include "school/losses.hpp"

#include <cmath>

namespace school {

SpectralLoss spectral_loss(const AffinityMatrix& s, const Matrix& y, double gamma) {
    const Index n = y.rows();
    if (s.size() != n) throw DimensionError("spectral_loss: S and Y sizes differ");
    SpectralLoss out;
    out.grad_y = Matrix::Zero(n, y.cols());
    const double inv_n2 = 1.0 / (static_cast<double>(n) * static_cast<double>(n));

    double smooth = 0.0;
    for (Index i = 0; i < s.matrix.outerSize(); ++i)
        for (SparseRowMatrix::InnerIterator it(s.matrix, i); it; ++it) {
            const Index j = it.col();
            const RowVector diff = y.row(i) - y.row(j);
            smooth += it.value() * diff.squaredNorm();
            const RowVector g = (2.0 * it.value() * inv_n2) * diff;
            out.grad_y.row(i) += g;
            out.grad_y.row(j) -= g;
        }
    out.smoothness = smooth * inv_n2;

    const RowVector means = y.colwise().mean();
    double entropy = 0.0;
    for (Index c = 0; c < y.cols(); ++c) {
        const double p = means(c);
        if (p > kEntropyFloor) {
            entropy -= p * std::log(p);
            // d(-gamma H)/dY_jc = gamma (log p + 1) / n
            out.grad_y.col(c).array() += gamma * (std::log(p) + 1.0) / static_cast<double>(n);
        } else {
            entropy -= kEntropyFloor * std::log(kEntropyFloor);
        }
    }
    out.entropy = entropy;
    out.value = out.smoothness - gamma * entropy;
    return out;
}

double spectral_trace(const Laplacian& l, const Matrix& y) {
    const double n = static_cast<double>(y.rows());
    const Matrix ly = l.matrix * y;
    return 2.0 / (n * n) * (y.transpose() * ly).trace();
}

NodeConsistency node_consistency(const Matrix& q, const Matrix& q_tilde, double eta) {
    if (q.rows() != q_tilde.rows() || q.cols() != q_tilde.cols())
        throw DimensionError("node_consistency: Q and Q~ shapes differ");
    NodeConsistency out;
    const Matrix diff = q - q_tilde;
    out.alignment = diff.squaredNorm();

    const Matrix c = q.transpose() * q + q_tilde.transpose() * q_tilde;
    const double shift = c.maxCoeff();
    const double sum = (c.array() - shift).exp().sum();
    out.decorrelation = shift + std::log(sum);
    // Flush underflowing entries to zero; denormals make the products below crawl.
    const Eigen::ArrayXXd logits = c.array() - out.decorrelation;
    const Matrix soft = (logits > -700.0).select(logits.exp(), 0.0).matrix();
    const Matrix sym = soft + soft.transpose();

    out.value = out.alignment + eta * out.decorrelation;
    out.grad_q = 2.0 * diff + eta * (q * sym);
    out.grad_q_tilde = -2.0 * diff + eta * (q_tilde * sym);
    return out;
}

ClusterPool cluster_pool(const Matrix& q, std::span<const int> hard, Index clusters) {
    if (static_cast<Index>(hard.size()) != q.rows()) throw DimensionError("cluster_pool: one cluster id per row required");
    ClusterPool out;
    out.centroids = Matrix::Zero(clusters, q.cols());
    out.sizes.assign(static_cast<std::size_t>(clusters), 0);
    for (Index i = 0; i < q.rows(); ++i) {
        const int c = hard[static_cast<std::size_t>(i)];
        if (c < 0 || c >= clusters)
            throw std::out_of_range("cluster_pool: cluster id " + std::to_string(c) + " outside [0, " +
                                    std::to_string(clusters) + ")");
        out.centroids.row(c) += q.row(i);
        ++out.sizes[static_cast<std::size_t>(c)];
    }
    for (Index c = 0; c < clusters; ++c) {
        const Index size = out.sizes[static_cast<std::size_t>(c)];
        if (size > 0)
            out.centroids.row(c) /= static_cast<double>(size);
        else
            out.empty.push_back(static_cast<int>(c));
    }
    return out;
}

Matrix cluster_pool_backward(const ClusterPool& pool, std::span<const int> hard, const Matrix& grad_centroids) {
    Matrix grad(static_cast<Index>(hard.size()), grad_centroids.cols());
    for (std::size_t i = 0; i < hard.size(); ++i) {
        const int c = hard[i];
        grad.row(static_cast<Index>(i)) = grad_centroids.row(c) / static_cast<double>(pool.sizes[static_cast<std::size_t>(c)]);
    }
    return grad;
}

ClusterConsistency cluster_consistency(const Matrix& q_tilde, const Matrix& centroids, std::span<const int> hard) {
    if (static_cast<Index>(hard.size()) != q_tilde.rows())
        throw DimensionError("cluster_consistency: one cluster id per row required");
    if (centroids.cols() != q_tilde.cols()) throw DimensionError("cluster_consistency: centroid width differs from Q~");
    ClusterConsistency out;
    out.grad_q_tilde = Matrix::Zero(q_tilde.rows(), q_tilde.cols());
    out.grad_centroids = Matrix::Zero(centroids.rows(), centroids.cols());
    for (Index i = 0; i < q_tilde.rows(); ++i) {
        const int c = hard[static_cast<std::size_t>(i)];
        if (c < 0 || c >= centroids.rows())
            throw std::out_of_range("cluster_consistency: cluster id " + std::to_string(c) + " out of range");
        const RowVector diff = q_tilde.row(i) - centroids.row(c);
        out.value += diff.squaredNorm();
        out.grad_q_tilde.row(i) = 2.0 * diff;
        out.grad_centroids.row(c) -= 2.0 * diff;
    }
    return out;
}

}  // namespace school
