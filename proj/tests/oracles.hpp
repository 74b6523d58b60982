#pragma once

// Independent reference implementations. Deliberately naive: plain loops,
// std::vector storage, no code shared with the library beyond Matrix I/O.

#include "school/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using school::Index;
using school::Matrix;

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

/// Connected components of the support of W + W^T.
inline int component_count(const Matrix& w) {
    const int n = static_cast<int>(w.rows());
    UnionFind uf(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (w(i, j) != 0.0 || w(j, i) != 0.0) uf.unite(i, j);
    std::set<int> roots;
    for (int i = 0; i < n; ++i) roots.insert(uf.find(i));
    return static_cast<int>(roots.size());
}

inline double squared_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double distance2(const Matrix& a, Index i, const Matrix& b, Index j) {
    double s = 0.0;
    for (Index c = 0; c < a.cols(); ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
    return s;
}

/// Minimizer of |s - v|^2 over the probability simplex by enumerating every
/// support set and keeping the feasible candidate with the lowest objective.
inline std::vector<double> simplex_project_bruteforce(const std::vector<double>& v) {
    const int k = static_cast<int>(v.size());
    std::vector<double> best(k, 0.0);
    double best_obj = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        double sum = 0.0;
        int cnt = 0;
        for (int j = 0; j < k; ++j)
            if (mask & (1u << j)) sum += v[j], ++cnt;
        const double shift = (1.0 - sum) / cnt;
        std::vector<double> s(k, 0.0);
        bool ok = true;
        for (int j = 0; j < k; ++j)
            if (mask & (1u << j)) {
                s[j] = v[j] + shift;
                if (s[j] < -1e-15) ok = false;
            }
        if (!ok) continue;
        double obj = 0.0;
        for (int j = 0; j < k; ++j) obj += (s[j] - v[j]) * (s[j] - v[j]);
        if (obj < best_obj) best_obj = obj, best = s;
    }
    for (double& x : best) x = std::max(x, 0.0);
    return best;
}

/// Simplex QP min |s + d/(2 alpha)|^2.
inline std::vector<double> affinity_qp(const std::vector<double>& d, double alpha) {
    std::vector<double> v(d.size());
    for (std::size_t j = 0; j < d.size(); ++j) v[j] = -d[j] / (2.0 * alpha);
    return simplex_project_bruteforce(v);
}

/// Indices of the k nearest rows to row i (self excluded, ties by index).
inline std::vector<Index> knn_scan(const std::vector<double>& dist_row, Index self, Index k) {
    std::vector<Index> idx;
    for (Index j = 0; j < static_cast<Index>(dist_row.size()); ++j)
        if (j != self) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return dist_row[a] < dist_row[b]; });
    idx.resize(k);
    return idx;
}

/// Classical Gram-Schmidt Q and R.
inline std::pair<Matrix, Matrix> gram_schmidt(const Matrix& a) {
    const Index n = a.rows(), c = a.cols();
    Matrix q = Matrix::Zero(n, c), r = Matrix::Zero(c, c);
    for (Index j = 0; j < c; ++j) {
        std::vector<double> v(n);
        for (Index i = 0; i < n; ++i) v[i] = a(i, j);
        for (Index p = 0; p < j; ++p) {
            double dot = 0.0;
            for (Index i = 0; i < n; ++i) dot += q(i, p) * a(i, j);
            r(p, j) = dot;
            for (Index i = 0; i < n; ++i) v[i] -= dot * q(i, p);
        }
        r(j, j) = std::sqrt(squared_norm(v));
        for (Index i = 0; i < n; ++i) q(i, j) = v[i] / r(j, j);
    }
    return {q, r};
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (Index p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
            out(i, j) = s;
        }
    return out;
}

inline Matrix laplacian_dense(const Matrix& s) {
    const Index n = s.rows();
    Matrix l = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            const double w = 0.5 * (s(i, j) + s(j, i));
            l(i, j) -= w;
            l(i, i) += w;
        }
    return l;
}

/// (1/n^2) sum_ij s_ij |y_i - y_j|^2.
inline double smoothness(const Matrix& s, const Matrix& y) {
    const Index n = s.rows();
    double acc = 0.0;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) acc += s(i, j) * distance2(y, i, y, j);
    return acc / static_cast<double>(n * n);
}

inline double entropy_of_means(const Matrix& y) {
    double h = 0.0;
    for (Index c = 0; c < y.cols(); ++c) {
        double p = 0.0;
        for (Index i = 0; i < y.rows(); ++i) p += y(i, c);
        p = std::max(p / static_cast<double>(y.rows()), 1e-8);
        h -= p * std::log(p);
    }
    return h;
}

/// |Q - Q~|^2 + eta log sum exp(Q^T Q + Q~^T Q~), by double loops.
inline double node_consistency(const Matrix& q, const Matrix& qt, double eta) {
    double frob = 0.0;
    for (Index i = 0; i < q.rows(); ++i)
        for (Index j = 0; j < q.cols(); ++j) frob += (q(i, j) - qt(i, j)) * (q(i, j) - qt(i, j));
    double sum = 0.0;
    for (Index a = 0; a < q.cols(); ++a)
        for (Index b = 0; b < q.cols(); ++b) {
            double c = 0.0;
            for (Index i = 0; i < q.rows(); ++i) c += q(i, a) * q(i, b) + qt(i, a) * qt(i, b);
            sum += std::exp(c);
        }
    return frob + eta * std::log(sum);
}

inline Matrix group_means(const Matrix& q, const std::vector<int>& hard, int clusters) {
    std::map<int, std::vector<Index>> groups;
    for (Index i = 0; i < q.rows(); ++i) groups[hard[i]].push_back(i);
    Matrix out = Matrix::Zero(clusters, q.cols());
    for (const auto& [g, rows] : groups)
        for (Index i : rows)
            for (Index j = 0; j < q.cols(); ++j) out(g, j) += q(i, j) / static_cast<double>(rows.size());
    return out;
}

inline double cluster_consistency(const Matrix& qt, const Matrix& centroids, const std::vector<int>& hard) {
    double acc = 0.0;
    for (Index i = 0; i < qt.rows(); ++i) acc += distance2(qt, i, centroids, hard[i]);
    return acc;
}

struct F1 {
    double macro, micro;
};

/// Per-class precision/recall from explicit counting.
inline F1 f1(const std::vector<int>& truth, const std::vector<int>& pred) {
    std::set<int> classes(truth.begin(), truth.end());
    classes.insert(pred.begin(), pred.end());
    double macro = 0.0;
    long correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
    for (int c : classes) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (pred[i] == c && truth[i] == c) ++tp;
            else if (pred[i] == c) ++fp;
            else if (truth[i] == c) ++fn;
        }
        macro += tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    }
    return {macro / static_cast<double>(classes.size()), static_cast<double>(correct) / truth.size()};
}

/// NMI with arithmetic normalization, from integer pair counts.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    std::map<int, long> ca, cb;
    std::map<std::pair<int, int>, long> cab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++cab[{a[i], b[i]}];
    }
    if (ca.size() == 1 && cb.size() == 1) return 1.0;
    double ha = 0.0, hb = 0.0, mi = 0.0;
    for (auto [k, c] : ca) ha -= c / n * std::log(c / n);
    for (auto [k, c] : cb) hb -= c / n * std::log(c / n);
    for (auto [k, c] : cab) mi += c / n * std::log(n * c / (static_cast<double>(ca[k.first]) * cb[k.second]));
    return mi / (0.5 * (ha + hb));
}

/// Adjusted Rand index from explicit pair counting.
inline double ari(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size();
    double both = 0.0, in_a = 0.0, in_b = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool sa = a[i] == a[j], sb = b[i] == b[j];
            both += sa && sb;
            in_a += sa;
            in_b += sb;
        }
    const double pairs = static_cast<double>(n) * (n - 1) / 2.0;
    const double expected = in_a * in_b / pairs;
    const double max_index = 0.5 * (in_a + in_b);
    if (max_index == expected) return 1.0;
    return (both - expected) / (max_index - expected);
}

inline double silhouette(const Matrix& x, const std::vector<int>& lab) {
    const Index n = x.rows();
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        std::map<int, std::pair<double, int>> acc;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            auto& e = acc[lab[j]];
            e.first += std::sqrt(distance2(x, i, x, j));
            e.second += 1;
        }
        if (acc.find(lab[i]) == acc.end()) continue;  // singleton scores 0
        const double a = acc[lab[i]].first / acc[lab[i]].second;
        double b = std::numeric_limits<double>::infinity();
        for (auto& [g, e] : acc)
            if (g != lab[i]) b = std::min(b, e.first / e.second);
        const double m = std::max(a, b);
        total += m == 0.0 ? 0.0 : (b - a) / m;
    }
    return total / static_cast<double>(n);
}

/// Lowest inertia over every split of the rows into two non-empty groups.
inline double kmeans2_bruteforce(const Matrix& x, std::vector<int>* best_labels = nullptr) {
    const int n = static_cast<int>(x.rows());
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << (n - 1)); ++mask) {
        std::vector<int> lab(n);
        for (int i = 0; i < n; ++i) lab[i] = (mask >> i) & 1u;
        const Matrix mu = group_means(x, lab, 2);
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) inertia += distance2(x, i, mu, lab[i]);
        if (inertia < best) {
            best = inertia;
            if (best_labels) *best_labels = lab;
        }
    }
    return best;
}

/// Davies-Bouldin style measure written out directly.
inline double complexity(const Matrix& o, const std::vector<int>& lab) {
    std::set<int> cls(lab.begin(), lab.end());
    std::vector<int> ids(cls.begin(), cls.end());
    const int k = static_cast<int>(ids.size());
    const int maxid = *cls.rbegin() + 1;
    const Matrix mu = group_means(o, lab, maxid);
    std::vector<double> scatter(k);
    for (int a = 0; a < k; ++a) {
        double s = 0.0;
        int cnt = 0;
        for (Index i = 0; i < o.rows(); ++i)
            if (lab[i] == ids[a]) s += distance2(o, i, mu, ids[a]), ++cnt;
        scatter[a] = std::sqrt(s / cnt);
    }
    double total = 0.0;
    for (int a = 0; a < k; ++a) {
        double worst = 0.0;
        for (int b = 0; b < k; ++b)
            if (a != b) worst = std::max(worst, (scatter[a] + scatter[b]) / std::sqrt(distance2(mu, ids[a], mu, ids[b])));
        total += worst;
    }
    return total / k;
}

/// Every assignment of n nodes to at most m blocks in restricted-growth form.
inline std::vector<std::vector<int>> set_partitions(int n, int m) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(n, 0);
    auto rec = [&](auto&& self, int i, int used) -> void {
        if (i == n) {
            out.push_back(cur);
            return;
        }
        for (int b = 0; b <= std::min(used, m - 1); ++b) {
            cur[i] = b;
            self(self, i + 1, std::max(used, b + 1));
        }
    };
    rec(rec, 0, 0);
    return out;
}

/// sum_i W(V_i, complement) / |V_i|, straight from the definition.
inline double ratiocut(const Matrix& w, const std::vector<int>& part) {
    const int m = *std::max_element(part.begin(), part.end()) + 1;
    double total = 0.0;
    for (int b = 0; b < m; ++b) {
        double cut = 0.0;
        int size = 0;
        for (std::size_t i = 0; i < part.size(); ++i) {
            if (part[i] != b) continue;
            ++size;
            for (std::size_t j = 0; j < part.size(); ++j)
                if (part[j] != b) cut += w(i, j);
        }
        total += cut / size;
    }
    return total;
}

}  // namespace oracle
