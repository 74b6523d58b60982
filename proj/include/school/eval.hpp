#pragma once

#include "school/common.hpp"
#include "school/graph.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace school {

/// [Z || Z~], row-wise.
Matrix concat_representation(const Matrix& z, const Matrix& z_tilde);

struct F1Scores {
    double macro = 0.0;
    double micro = 0.0;
};

/// Macro-F1 averages over every class occurring in truth or prediction;
/// micro-F1 pools the confusion counts.
F1Scores f1_scores(std::span<const int> truth, std::span<const int> predicted);

struct ProbeOptions {
    int iterations = 1000;
    double lr = 0.01;
    int repeats = 5;
    std::uint64_t seed = 0;
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation over repeats
};

Stat summarize(std::span<const double> values);

struct ProbeResult {
    Stat macro_f1;
    Stat micro_f1;
    std::vector<F1Scores> runs;
};

/// Multinomial logistic regression trained by full-batch gradient descent on
/// standardized inputs; scored on the test rows.
ProbeResult linear_probe(const Matrix& x, std::span<const int> labels, std::span<const Index> train,
                         std::span<const Index> test, const ProbeOptions& options = {});

struct KMeansResult {
    std::vector<int> labels;
    Matrix centroids;
    double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; the restart with the lowest
/// inertia wins.
KMeansResult kmeans(const Matrix& x, Index clusters, std::uint64_t seed, int restarts = 10, int max_iterations = 300);

/// Mutual information over the arithmetic mean of the two entropies.
double nmi(std::span<const int> a, std::span<const int> b);

/// Rand index adjusted for chance.
double ari(std::span<const int> a, std::span<const int> b);

double silhouette(const Matrix& x, std::span<const int> assignment);

/// (1/k) sum_i max_{j != i} (S_i + S_j) / |mu_i - mu_j| with
/// S_i = sqrt(mean_{o in class i} |o - mu_i|^2).
double complexity_measure(const Matrix& o, std::span<const int> labels);

struct EvalOptions {
    int repeats = 5;
    int restarts = 10;
    std::uint64_t seed = 0;
    ProbeOptions probe;
};

struct EvalReport {
    Stat macro_f1;
    Stat micro_f1;
    Stat nmi;
    Stat ari;
    Stat silhouette;
    Stat complexity;
    Index clusters = 0;
};

/// Every metric on the labeled target nodes. Silhouette and the complexity
/// measure are taken w.r.t. the class labels. k-means runs on
/// `cluster_representation` when given, else on `representation`.
EvalReport evaluate(const Matrix& representation, const HeteroGraph& graph, const EvalOptions& options = {},
                    const Matrix* cluster_representation = nullptr);

void write_eval_report(std::ostream& out, const EvalReport& report);
void print_eval_summary(std::ostream& out, const EvalReport& report);

}  // namespace school
