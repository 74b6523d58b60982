#include "school/eval.hpp"

#include "school/tsv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>

namespace school {

Matrix concat_representation(const Matrix& z, const Matrix& z_tilde) {
    if (z.rows() != z_tilde.rows())
        throw DimensionError("concat_representation: " + std::to_string(z.rows()) + " vs " +
                             std::to_string(z_tilde.rows()) + " rows");
    Matrix out(z.rows(), z.cols() + z_tilde.cols());
    out << z, z_tilde;
    return out;
}

F1Scores f1_scores(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw DimensionError("f1_scores: length mismatch");
    if (truth.empty()) throw ValidationError("f1_scores: no samples");
    std::map<int, std::array<long, 3>> counts;  // tp, fp, fn
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == predicted[i]) {
            ++counts[truth[i]][0];
        } else {
            ++counts[predicted[i]][1];
            ++counts[truth[i]][2];
        }
    }
    F1Scores out;
    long tp = 0, fp = 0, fn = 0;
    for (const auto& [cls, c] : counts) {
        const double denom = 2.0 * c[0] + c[1] + c[2];
        out.macro += denom > 0 ? 2.0 * c[0] / denom : 0.0;
        tp += c[0];
        fp += c[1];
        fn += c[2];
    }
    out.macro /= static_cast<double>(counts.size());
    out.micro = 2.0 * tp / (2.0 * tp + fp + fn);
    return out;
}

Stat summarize(std::span<const double> values) {
    Stat s;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    for (double v : values) s.std += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(values.size()));
    return s;
}

namespace {

Matrix gather_rows(const Matrix& x, std::span<const Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= x.rows()) throw DimensionError("row index out of range");
        out.row(static_cast<Index>(i)) = x.row(rows[i]);
    }
    return out;
}

void softmax_rows(Matrix& logits) {
    for (Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - m).exp();
        logits.row(i) /= logits.row(i).sum();
    }
}

std::vector<int> compact_labels(std::span<const int> labels, int& count) {
    std::map<int, int> ids;
    for (int v : labels) ids.emplace(v, 0);
    int next = 0;
    for (auto& [v, id] : ids) id = next++;
    count = next;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids[labels[i]];
    return out;
}

Matrix contingency(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw DimensionError("clustering comparison: length mismatch");
    if (a.empty()) throw ValidationError("clustering comparison: no samples");
    int ca = 0, cb = 0;
    const auto ia = compact_labels(a, ca);
    const auto ib = compact_labels(b, cb);
    Matrix table = Matrix::Zero(ca, cb);
    for (std::size_t i = 0; i < a.size(); ++i) table(ia[i], ib[i]) += 1.0;
    return table;
}

double entropy_of(const Vector& counts, double n) {
    double h = 0.0;
    for (Index i = 0; i < counts.size(); ++i)
        if (counts(i) > 0) {
            const double p = counts(i) / n;
            h -= p * std::log(p);
        }
    return h;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

ProbeResult linear_probe(const Matrix& x, std::span<const int> labels, std::span<const Index> train,
                         std::span<const Index> test, const ProbeOptions& options) {
    if (static_cast<Index>(labels.size()) != x.rows()) throw DimensionError("linear_probe: one label per row required");
    if (train.empty() || test.empty()) throw ValidationError("linear_probe: train and test splits must be non-empty");
    if (options.repeats < 1 || options.iterations < 0) throw ConfigError("linear_probe: bad repeat/iteration count");

    int classes = 0;
    for (Index i : train) {
        if (labels[static_cast<std::size_t>(i)] < 0) throw ValidationError("linear_probe: unlabeled node in train split");
        classes = std::max(classes, labels[static_cast<std::size_t>(i)] + 1);
    }
    for (Index i : test) {
        if (labels[static_cast<std::size_t>(i)] < 0) throw ValidationError("linear_probe: unlabeled node in test split");
        classes = std::max(classes, labels[static_cast<std::size_t>(i)] + 1);
    }
    std::vector<int> present(static_cast<std::size_t>(classes), 0);
    for (Index i : train) present[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] = 1;
    for (int c = 0; c < classes; ++c)
        if (!present[static_cast<std::size_t>(c)])
            throw ValidationError("linear_probe: class " + std::to_string(c) + " has no training example");

    Matrix xtr = gather_rows(x, train);
    Matrix xte = gather_rows(x, test);
    const RowVector mean = xtr.colwise().mean();
    RowVector scale = ((xtr.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
    for (Index j = 0; j < scale.size(); ++j)
        if (!(scale(j) > 0.0)) scale(j) = 1.0;
    xtr = (xtr.rowwise() - mean).array().rowwise() / scale.array();
    xte = (xte.rowwise() - mean).array().rowwise() / scale.array();

    const Index ntr = xtr.rows();
    Matrix onehot = Matrix::Zero(ntr, classes);
    for (Index i = 0; i < ntr; ++i) onehot(i, labels[static_cast<std::size_t>(train[static_cast<std::size_t>(i)])]) = 1.0;
    std::vector<int> truth(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) truth[i] = labels[static_cast<std::size_t>(test[i])];

    ProbeResult result;
    std::vector<double> macro, micro;
    for (int rep = 0; rep < options.repeats; ++rep) {
        Rng rng(options.seed + 1000003ULL * static_cast<std::uint64_t>(rep));
        Matrix w(x.cols(), classes);
        for (Index j = 0; j < w.cols(); ++j)
            for (Index i = 0; i < w.rows(); ++i) w(i, j) = 0.01 * rng.normal();
        RowVector b = RowVector::Zero(classes);
        for (int it = 0; it < options.iterations; ++it) {
            Matrix prob = xtr * w;
            prob.rowwise() += b;
            softmax_rows(prob);
            const Matrix delta = (prob - onehot) / static_cast<double>(ntr);
            w -= options.lr * (xtr.transpose() * delta);
            b -= options.lr * delta.colwise().sum();
        }
        Matrix logits = xte * w;
        logits.rowwise() += b;
        std::vector<int> pred(test.size());
        for (Index i = 0; i < logits.rows(); ++i) {
            Index best = 0;
            logits.row(i).maxCoeff(&best);
            pred[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
        const F1Scores f = f1_scores(truth, pred);
        result.runs.push_back(f);
        macro.push_back(f.macro);
        micro.push_back(f.micro);
    }
    result.macro_f1 = summarize(macro);
    result.micro_f1 = summarize(micro);
    return result;
}

KMeansResult kmeans(const Matrix& x, Index clusters, std::uint64_t seed, int restarts, int max_iterations) {
    const Index n = x.rows();
    if (clusters < 1) throw ConfigError("kmeans: need at least one cluster");
    if (n < clusters)
        throw ConfigError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(clusters) + " clusters");
    if (restarts < 1) throw ConfigError("kmeans: need at least one restart");

    const Vector norms = x.rowwise().squaredNorm();
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    Rng rng(seed);

    for (int attempt = 0; attempt < restarts; ++attempt) {
        // k-means++ seeding
        Matrix centroids(clusters, x.cols());
        centroids.row(0) = x.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
        Vector closest = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
        for (Index c = 1; c < clusters; ++c) {
            const double total = closest.sum();
            Index pick = 0;
            if (total > 0.0) {
                double target = rng.uniform() * total;
                for (pick = 0; pick < n - 1; ++pick) {
                    target -= closest(pick);
                    if (target < 0.0) break;
                }
            } else {
                pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
            }
            centroids.row(c) = x.row(pick);
            closest = closest.cwiseMin((x.rowwise() - centroids.row(c)).rowwise().squaredNorm());
        }

        std::vector<int> assign(static_cast<std::size_t>(n), -1);
        Vector dist(n);
        for (int it = 0; it < max_iterations; ++it) {
            const Matrix d2 = (-2.0 * (x * centroids.transpose())).colwise() + norms;
            const RowVector cn = centroids.rowwise().squaredNorm().transpose();
            bool changed = false;
            for (Index i = 0; i < n; ++i) {
                Index arg = 0;
                double val = d2(i, 0) + cn(0);
                for (Index c = 1; c < clusters; ++c)
                    if (d2(i, c) + cn(c) < val) {
                        val = d2(i, c) + cn(c);
                        arg = c;
                    }
                dist(i) = std::max(val, 0.0);
                if (assign[static_cast<std::size_t>(i)] != arg) {
                    assign[static_cast<std::size_t>(i)] = static_cast<int>(arg);
                    changed = true;
                }
            }
            Matrix sums = Matrix::Zero(clusters, x.cols());
            std::vector<Index> sizes(static_cast<std::size_t>(clusters), 0);
            for (Index i = 0; i < n; ++i) {
                sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
                ++sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
            }
            for (Index c = 0; c < clusters; ++c) {
                if (sizes[static_cast<std::size_t>(c)] > 0) {
                    centroids.row(c) = sums.row(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
                    continue;
                }
                Index far = 0;
                dist.maxCoeff(&far);
                centroids.row(c) = x.row(far);
                dist(far) = 0.0;
                changed = true;
            }
            if (!changed) break;
        }

        double inertia = 0.0;
        for (Index i = 0; i < n; ++i)
            inertia += (x.row(i) - centroids.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.labels = assign;
            best.centroids = centroids;
        }
    }
    return best;
}

double nmi(std::span<const int> a, std::span<const int> b) {
    const Matrix table = contingency(a, b);
    const double n = static_cast<double>(a.size());
    const Vector ra = table.rowwise().sum();
    const Vector cb = table.colwise().sum().transpose();
    const double ha = entropy_of(ra, n);
    const double hb = entropy_of(cb, n);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    double mi = 0.0;
    for (Index i = 0; i < table.rows(); ++i)
        for (Index j = 0; j < table.cols(); ++j)
            if (table(i, j) > 0) mi += table(i, j) / n * std::log(n * table(i, j) / (ra(i) * cb(j)));
    return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

double ari(std::span<const int> a, std::span<const int> b) {
    const Matrix table = contingency(a, b);
    const double n = static_cast<double>(a.size());
    double index = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (Index i = 0; i < table.rows(); ++i)
        for (Index j = 0; j < table.cols(); ++j) index += comb2(table(i, j));
    for (Index i = 0; i < table.rows(); ++i) sum_a += comb2(table.row(i).sum());
    for (Index j = 0; j < table.cols(); ++j) sum_b += comb2(table.col(j).sum());
    const double expected = sum_a * sum_b / comb2(n);
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

double silhouette(const Matrix& x, std::span<const int> assignment) {
    const Index n = x.rows();
    if (static_cast<Index>(assignment.size()) != n) throw DimensionError("silhouette: one cluster id per row required");
    int k = 0;
    const auto ids = compact_labels(assignment, k);
    if (k < 2) throw ValidationError("silhouette: needs at least two clusters");
    std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
    for (int c : ids) ++sizes[static_cast<std::size_t>(c)];

    double total = 0.0;
    std::vector<double> sums(static_cast<std::size_t>(k));
    for (Index i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (Index j = 0; j < n; ++j)
            if (j != i) sums[static_cast<std::size_t>(ids[static_cast<std::size_t>(j)])] += (x.row(i) - x.row(j)).norm();
        const int own = ids[static_cast<std::size_t>(i)];
        if (sizes[static_cast<std::size_t>(own)] <= 1) continue;  // singleton scores 0
        const double a = sums[static_cast<std::size_t>(own)] / static_cast<double>(sizes[static_cast<std::size_t>(own)] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c)
            if (c != own) b = std::min(b, sums[static_cast<std::size_t>(c)] / static_cast<double>(sizes[static_cast<std::size_t>(c)]));
        const double m = std::max(a, b);
        if (m > 0.0) total += (b - a) / m;
    }
    return total / static_cast<double>(n);
}

double complexity_measure(const Matrix& o, std::span<const int> labels) {
    if (static_cast<Index>(labels.size()) != o.rows()) throw DimensionError("complexity_measure: one label per row required");
    int k = 0;
    const auto ids = compact_labels(labels, k);
    if (k < 2) throw ValidationError("complexity_measure: needs at least two classes");

    Matrix mu = Matrix::Zero(k, o.cols());
    std::vector<double> sizes(static_cast<std::size_t>(k), 0.0);
    for (Index i = 0; i < o.rows(); ++i) {
        mu.row(ids[static_cast<std::size_t>(i)]) += o.row(i);
        sizes[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (int c = 0; c < k; ++c) mu.row(c) /= sizes[static_cast<std::size_t>(c)];
    std::vector<double> scatter(static_cast<std::size_t>(k), 0.0);
    for (Index i = 0; i < o.rows(); ++i) {
        const int c = ids[static_cast<std::size_t>(i)];
        scatter[static_cast<std::size_t>(c)] += (o.row(i) - mu.row(c)).squaredNorm();
    }
    for (int c = 0; c < k; ++c) scatter[static_cast<std::size_t>(c)] = std::sqrt(scatter[static_cast<std::size_t>(c)] / sizes[static_cast<std::size_t>(c)]);

    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        double worst = 0.0;
        for (int j = 0; j < k; ++j) {
            if (i == j) continue;
            const double sep = (mu.row(i) - mu.row(j)).norm();
            if (!(sep > 0.0))
                throw NumericalError("complexity_measure: classes " + std::to_string(i) + " and " + std::to_string(j) +
                                     " have coincident centroids");
            worst = std::max(worst, (scatter[static_cast<std::size_t>(i)] + scatter[static_cast<std::size_t>(j)]) / sep);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

EvalReport evaluate(const Matrix& representation, const HeteroGraph& graph, const EvalOptions& options,
                    const Matrix* cluster_representation) {
    if (!graph.has_labels()) throw ValidationError("evaluate: the graph has no labels");
    if (representation.rows() != graph.num_targets())
        throw DimensionError("evaluate: representation has " + std::to_string(representation.rows()) + " rows, graph has " +
                             std::to_string(graph.num_targets()) + " target nodes");
    if (options.repeats < 1) throw ConfigError("evaluate: need at least one repeat");

    std::vector<Index> labeled;
    for (Index i = 0; i < graph.num_targets(); ++i)
        if (graph.labels[static_cast<std::size_t>(i)] >= 0) labeled.push_back(i);
    const Matrix& clustered = cluster_representation ? *cluster_representation : representation;
    if (clustered.rows() != representation.rows()) throw DimensionError("evaluate: clustering representation has wrong row count");
    Matrix x(static_cast<Index>(labeled.size()), representation.cols());
    Matrix xc(static_cast<Index>(labeled.size()), clustered.cols());
    std::vector<int> y(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        x.row(static_cast<Index>(i)) = representation.row(labeled[i]);
        xc.row(static_cast<Index>(i)) = clustered.row(labeled[i]);
        y[i] = graph.labels[static_cast<std::size_t>(labeled[i])];
    }

    EvalReport report;
    std::set<int> classes(y.begin(), y.end());
    report.clusters = static_cast<Index>(classes.size());

    if (graph.train.empty() || graph.test.empty()) throw ValidationError("evaluate: the graph has no train/test split");
    ProbeOptions probe = options.probe;
    probe.repeats = options.repeats;
    probe.seed = options.seed;
    const ProbeResult pr = linear_probe(representation, graph.labels, graph.train, graph.test, probe);
    report.macro_f1 = pr.macro_f1;
    report.micro_f1 = pr.micro_f1;

    std::vector<double> nmis, aris;
    for (int rep = 0; rep < options.repeats; ++rep) {
        const KMeansResult km = kmeans(xc, report.clusters, options.seed + 7919ULL * static_cast<std::uint64_t>(rep),
                                       options.restarts);
        nmis.push_back(nmi(km.labels, y));
        aris.push_back(ari(km.labels, y));
    }
    report.nmi = summarize(nmis);
    report.ari = summarize(aris);
    report.silhouette = {silhouette(x, y), 0.0};
    report.complexity = {complexity_measure(x, y), 0.0};
    return report;
}

void write_eval_report(std::ostream& out, const EvalReport& r) {
    out << "metric\tmean\tstd\n";
    const std::pair<const char*, Stat> rows[] = {{"macro_f1", r.macro_f1}, {"micro_f1", r.micro_f1},
                                                 {"nmi", r.nmi},           {"ari", r.ari},
                                                 {"silhouette", r.silhouette}, {"complexity", r.complexity}};
    for (const auto& [name, s] : rows)
        out << name << '\t' << tsv::format_double(s.mean) << '\t' << tsv::format_double(s.std) << '\n';
}

void print_eval_summary(std::ostream& out, const EvalReport& r) {
    out << std::fixed << std::setprecision(4);
    out << "Macro-F1    " << r.macro_f1.mean << " +- " << r.macro_f1.std << '\n';
    out << "Micro-F1    " << r.micro_f1.mean << " +- " << r.micro_f1.std << '\n';
    out << "NMI         " << r.nmi.mean << " +- " << r.nmi.std << '\n';
    out << "ARI         " << r.ari.mean << " +- " << r.ari.std << '\n';
    out << "Silhouette  " << r.silhouette.mean << '\n';
    out << "Complexity  " << r.complexity.mean << '\n';
    out.unsetf(std::ios::floatfield);
}

}  // namespace school
