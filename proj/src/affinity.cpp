#include "school/affinity.hpp"

#include "school/tsv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace school {

double pairwise_distance(const RowVector& h_i, const RowVector& h_j, const RowVector& f_i, const RowVector& f_j,
                         double beta) {
    if (h_i.size() != h_j.size() || f_i.size() != f_j.size())
        throw DimensionError("pairwise_distance: operand dimensions differ");
    if (beta < 0.0) throw std::invalid_argument("pairwise_distance: beta must be non-negative");
    double d = (h_i - h_j).squaredNorm();
    if (f_i.size() > 0) d += beta * (f_i - f_j).squaredNorm();
    return d;
}

RowAlpha compute_row_alpha(std::span<const double> sorted, Index k) {
    if (k < 1 || static_cast<Index>(sorted.size()) < k + 1)
        throw std::invalid_argument("compute_row_alpha: need at least k+1 sorted distances");
    double head = 0.0;
    for (Index j = 0; j < k; ++j) head += sorted[static_cast<std::size_t>(j)];
    const double next = sorted[static_cast<std::size_t>(k)];
    RowAlpha out;
    out.alpha = 0.5 * static_cast<double>(k) * next - 0.5 * head;
    if (!(out.alpha > 0.0)) {
        out.degenerate = true;
        out.lambda = 1.0 / static_cast<double>(k);
        return out;
    }
    out.lambda = 1.0 / static_cast<double>(k) + head / (2.0 * static_cast<double>(k) * out.alpha);
    return out;
}

AlphaSolution compute_alpha(const std::vector<std::vector<double>>& sorted_rows, Index k) {
    AlphaSolution out;
    out.alpha_row.reserve(sorted_rows.size());
    out.lambda.reserve(sorted_rows.size());
    out.degenerate.reserve(sorted_rows.size());
    for (const auto& row : sorted_rows) {
        const RowAlpha r = compute_row_alpha(row, k);
        out.alpha_row.push_back(r.alpha);
        out.lambda.push_back(r.lambda);
        out.degenerate.push_back(r.degenerate ? 1 : 0);
    }
    if (!sorted_rows.empty())
        out.alpha = std::accumulate(out.alpha_row.begin(), out.alpha_row.end(), 0.0) /
                    static_cast<double>(sorted_rows.size());
    return out;
}

std::vector<double> solve_affinity_row(std::span<const double> distances, double alpha, double lambda) {
    std::vector<double> s(distances.size());
    const double scale = 1.0 / (2.0 * alpha);
    for (std::size_t j = 0; j < distances.size(); ++j) s[j] = std::clamp(lambda - distances[j] * scale, 0.0, 1.0);
    return s;
}

namespace {

struct Candidate {
    double distance;
    Index index;
    bool operator<(const Candidate& o) const {
        return distance < o.distance || (distance == o.distance && index < o.index);
    }
};

/// Screens with Gram-matrix distances, then re-ranks a tolerance band of
/// candidates with the direct formula so ties resolve by index exactly.
class NeighborSearch {
public:
    NeighborSearch(const Matrix& h, const Matrix& f, double beta, Index k)
        : h_(h), f_(f), beta_(beta), k_(k), n_(h.rows()) {
        augmented_.resize(n_, h.cols() + f.cols());
        augmented_.leftCols(h.cols()) = h;
        if (f.cols() > 0) augmented_.rightCols(f.cols()) = std::sqrt(beta) * f;
        norms_ = augmented_.rowwise().squaredNorm();
        max_norm_ = n_ > 0 ? norms_.maxCoeff() : 0.0;
        block_ = std::clamp<Index>(static_cast<Index>(4'000'000 / std::max<Index>(n_, 1)), 1, 256);
    }

    Index block_size() const { return block_; }

    /// Fills neighbors/distances for rows [begin, end), k+1 per row.
    void run(Index begin, Index end, std::vector<Index>& idx_out, std::vector<double>& dist_out) const {
        const Index width = k_ + 1;
        std::vector<double> selection(static_cast<std::size_t>(n_));
        std::vector<Candidate> band;
        Matrix gram;
        for (Index r0 = begin; r0 < end; r0 += block_) {
            const Index rows = std::min(block_, end - r0);
            // n x rows, so that each query row is a contiguous column
            gram.noalias() = augmented_ * augmented_.middleRows(r0, rows).transpose();
            for (Index b = 0; b < rows; ++b) {
                const Index i = r0 + b;
                double* col = gram.col(b).data();
                for (Index j = 0; j < n_; ++j) col[j] = norms_(i) + norms_(j) - 2.0 * col[j];
                col[i] = std::numeric_limits<double>::infinity();

                std::copy(col, col + n_, selection.begin());
                std::nth_element(selection.begin(), selection.begin() + k_, selection.end());
                const double threshold = selection[static_cast<std::size_t>(k_)];
                const double tol = 1e-9 * (norms_(i) + max_norm_) + 1e-300;

                band.clear();
                for (Index j = 0; j < n_; ++j) {
                    if (j == i || col[j] > threshold + tol) continue;
                    band.push_back({exact(i, j), j});
                }
                std::partial_sort(band.begin(), band.begin() + width, band.end());
                for (Index t = 0; t < width; ++t) {
                    idx_out[static_cast<std::size_t>(i * width + t)] = band[static_cast<std::size_t>(t)].index;
                    dist_out[static_cast<std::size_t>(i * width + t)] = band[static_cast<std::size_t>(t)].distance;
                }
            }
        }
    }

private:
    double exact(Index i, Index j) const {
        double d = (h_.row(i) - h_.row(j)).squaredNorm();
        if (f_.cols() > 0) d += beta_ * (f_.row(i) - f_.row(j)).squaredNorm();
        return d;
    }

    const Matrix& h_;
    const Matrix& f_;
    double beta_;
    Index k_;
    Index n_;
    Matrix augmented_;
    Vector norms_;
    double max_norm_ = 0.0;
    Index block_ = 1;
};

}  // namespace

AffinityMatrix build_affinity(const Matrix& h, const Matrix& f, double beta, Index k, int threads) {
    const Index n = h.rows();
    if (f.cols() > 0 && f.rows() != n) throw DimensionError("build_affinity: H and F row counts differ");
    if (k < 1) throw ConfigError("build_affinity: k must be at least 1");
    if (k + 1 > n - 1)
        throw ConfigError("build_affinity: k = " + std::to_string(k) + " needs at least k+1 = " + std::to_string(k + 1) +
                          " other nodes, graph has " + std::to_string(n));
    if (beta < 0.0) throw ConfigError("build_affinity: beta must be non-negative");
    if (!h.allFinite() || !f.allFinite()) throw NumericalError("build_affinity: non-finite representations");

    const Index width = k + 1;
    std::vector<Index> idx(static_cast<std::size_t>(n * width));
    std::vector<double> dist(static_cast<std::size_t>(n * width));

    NeighborSearch search(h, f, beta, k);
    const Index block = search.block_size();
    const Index num_blocks = (n + block - 1) / block;
    const int workers = static_cast<int>(std::clamp<Index>(threads, 1, num_blocks));
    if (workers == 1) {
        search.run(0, n, idx, dist);
    } else {
        // Contiguous row ranges; each row is a pure function of the inputs.
        std::vector<std::thread> pool;
        const Index per = (num_blocks + workers - 1) / workers * block;
        for (int w = 0; w < workers; ++w) {
            const Index begin = std::min(n, w * per);
            const Index end = std::min(n, begin + per);
            if (begin >= end) break;
            pool.emplace_back([&, begin, end] { search.run(begin, end, idx, dist); });
        }
        for (auto& t : pool) t.join();
    }

    AffinityMatrix s;
    s.k = k;
    s.neighbors.resize(static_cast<std::size_t>(n * k));
    s.weights.resize(static_cast<std::size_t>(n * k));
    s.alpha_row.resize(static_cast<std::size_t>(n));
    s.lambda.resize(static_cast<std::size_t>(n));
    s.degenerate.resize(static_cast<std::size_t>(n));

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(n * k));
    double alpha_sum = 0.0;
    for (Index i = 0; i < n; ++i) {
        const std::span<const double> row(dist.data() + i * width, static_cast<std::size_t>(width));
        const RowAlpha ra = compute_row_alpha(row, k);
        s.alpha_row[static_cast<std::size_t>(i)] = ra.alpha;
        s.lambda[static_cast<std::size_t>(i)] = ra.lambda;
        s.degenerate[static_cast<std::size_t>(i)] = ra.degenerate ? 1 : 0;
        alpha_sum += ra.alpha;

        std::vector<double> w = ra.degenerate ? std::vector<double>(static_cast<std::size_t>(k), 1.0 / static_cast<double>(k))
                                              : solve_affinity_row(row.first(static_cast<std::size_t>(k)), ra.alpha, ra.lambda);
        for (Index t = 0; t < k; ++t) {
            const Index j = idx[static_cast<std::size_t>(i * width + t)];
            s.neighbors[static_cast<std::size_t>(i * k + t)] = j;
            s.weights[static_cast<std::size_t>(i * k + t)] = w[static_cast<std::size_t>(t)];
            if (w[static_cast<std::size_t>(t)] > 0.0) triplets.emplace_back(i, j, w[static_cast<std::size_t>(t)]);
        }
    }
    s.alpha = alpha_sum / static_cast<double>(n);
    s.matrix.resize(n, n);
    s.matrix.setFromTriplets(triplets.begin(), triplets.end());
    return s;
}

AffinityMatrix AffinityMatrix::from_dense(const Matrix& dense) {
    if (dense.rows() != dense.cols()) throw DimensionError("AffinityMatrix::from_dense: matrix must be square");
    AffinityMatrix s;
    const Index n = dense.rows();
    std::vector<Eigen::Triplet<double>> triplets;
    Index max_nnz = 0;
    for (Index i = 0; i < n; ++i) {
        Index nnz = 0;
        for (Index j = 0; j < n; ++j)
            if (dense(i, j) != 0.0) {
                triplets.emplace_back(i, j, dense(i, j));
                s.neighbors.push_back(j);
                s.weights.push_back(dense(i, j));
                ++nnz;
            }
        max_nnz = std::max(max_nnz, nnz);
    }
    s.k = max_nnz;
    s.matrix.resize(n, n);
    s.matrix.setFromTriplets(triplets.begin(), triplets.end());
    return s;
}

Laplacian laplacian(const AffinityMatrix& s) {
    const Index n = s.size();
    const SparseMatrix a = s.matrix;  // column-major copy
    SparseMatrix w = 0.5 * (a + SparseMatrix(a.transpose()));
    Laplacian l;
    l.degree = Vector::Zero(n);
    for (Index c = 0; c < w.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(w, c); it; ++it) l.degree(it.row()) += it.value();
    SparseMatrix d(n, n);
    std::vector<Eigen::Triplet<double>> diag;
    diag.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) diag.emplace_back(i, i, l.degree(i));
    d.setFromTriplets(diag.begin(), diag.end());
    l.matrix = d - w;
    return l;
}

Matrix propagate(const AffinityMatrix& s, const Matrix& h) {
    if (s.matrix.cols() != h.rows())
        throw DimensionError("propagate: S is " + std::to_string(s.matrix.rows()) + "x" + std::to_string(s.matrix.cols()) +
                             " but H has " + std::to_string(h.rows()) + " rows");
    return s.matrix * h;
}

void export_affinity(const AffinityMatrix& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write file: " + path.string());
    for (Index i = 0; i < s.matrix.outerSize(); ++i)
        for (SparseRowMatrix::InnerIterator it(s.matrix, i); it; ++it)
            out << it.row() << '\t' << it.col() << '\t' << tsv::format_double(it.value()) << '\n';
}

double intra_group_mass(const AffinityMatrix& s, std::span<const int> groups) {
    double intra = 0.0;
    double total = 0.0;
    for (Index i = 0; i < s.matrix.outerSize(); ++i)
        for (SparseRowMatrix::InnerIterator it(s.matrix, i); it; ++it) {
            total += it.value();
            if (groups[static_cast<std::size_t>(it.row())] == groups[static_cast<std::size_t>(it.col())])
                intra += it.value();
        }
    return total > 0.0 ? intra / total : 0.0;
}

}  // namespace school
