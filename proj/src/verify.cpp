#include "school/verify.hpp"

#include "school/encoders.hpp"
#include "school/losses.hpp"
#include "school/synthetic.hpp"
#include "school/tsv.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace school {

std::vector<double> qp_oracle(std::span<const double> d, double alpha) {
    if (!(alpha > 0.0)) throw ConfigError("qp_oracle: alpha must be positive");
    const std::size_t k = d.size();
    std::vector<double> v(k);
    for (std::size_t j = 0; j < k; ++j) v[j] = -d[j] / (2.0 * alpha);
    std::vector<double> u(v);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumulative = 0.0, theta = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        cumulative += u[j];
        const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
    }
    for (auto& x : v) x = std::max(x - theta, 0.0);
    return v;
}

std::vector<double> qp_projected_gradient(std::span<const double> d, double alpha, int iterations) {
    if (!(alpha > 0.0)) throw ConfigError("qp_projected_gradient: alpha must be positive");
    const std::size_t k = d.size();
    std::vector<double> s(k, 1.0 / static_cast<double>(k));
    std::vector<double> step(k);
    // f(s) = |s + d/(2 alpha)|^2 has Lipschitz gradient with constant 2
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t j = 0; j < k; ++j) step[j] = s[j] - 0.5 * 2.0 * (s[j] + d[j] / (2.0 * alpha));
        // project step onto the simplex by bisection on the shift
        double lo = *std::min_element(step.begin(), step.end()) - 1.0;
        double hi = *std::max_element(step.begin(), step.end());
        for (int b = 0; b < 200; ++b) {
            const double mid = 0.5 * (lo + hi);
            double total = 0.0;
            for (double x : step) total += std::max(x - mid, 0.0);
            (total > 1.0 ? lo : hi) = mid;
        }
        const double shift = 0.5 * (lo + hi);
        double change = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double next = std::max(step[j] - shift, 0.0);
            change = std::max(change, std::abs(next - s[j]));
            s[j] = next;
        }
        if (change < 1e-15) break;
    }
    return s;
}

namespace {

void require_symmetric(const Matrix& m, const char* who) {
    if (m.rows() != m.cols()) throw DimensionError(std::string(who) + ": matrix must be square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw ValidationError(std::string(who) + ": matrix is not symmetric");
}

}  // namespace

Index zero_eig_count(const Matrix& l, double tol, Index max_size) {
    require_symmetric(l, "zero_eig_count");
    if (l.rows() > max_size)
        throw ConfigError("zero_eig_count: n = " + std::to_string(l.rows()) + " exceeds the dense limit " +
                          std::to_string(max_size));
    Eigen::SelfAdjointEigenSolver<Matrix> es(l, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("zero_eig_count: eigensolver did not converge");
    return static_cast<Index>((es.eigenvalues().array() < tol).count());
}

Index zero_eig_count(const Laplacian& l, double tol, Index max_size) {
    if (l.size() > max_size)
        throw ConfigError("zero_eig_count: n = " + std::to_string(l.size()) + " exceeds the dense limit " +
                          std::to_string(max_size));
    return zero_eig_count(l.dense(), tol, max_size);
}

double kyfan_check(const Matrix& l, Index c) {
    require_symmetric(l, "kyfan_check");
    if (c < 1 || c > l.rows()) throw ConfigError("kyfan_check: c must lie in [1, n]");
    Eigen::SelfAdjointEigenSolver<Matrix> es(l);
    if (es.info() != Eigen::Success) throw NumericalError("kyfan_check: eigensolver did not converge");
    const Matrix f = es.eigenvectors().leftCols(c);
    const double trace = (f.transpose() * l * f).trace();
    const double bottom = es.eigenvalues().head(c).sum();
    return std::abs(trace - bottom);
}

RatioCutValues ratiocut_check(const Matrix& w, std::span<const int> partition) {
    require_symmetric(w, "ratiocut_check");
    const Index n = w.rows();
    if (static_cast<Index>(partition.size()) != n) throw ValidationError("ratiocut_check: partition must cover every node");
    int blocks = 0;
    for (int p : partition) {
        if (p < 0) throw ValidationError("ratiocut_check: negative block id");
        blocks = std::max(blocks, p + 1);
    }
    std::vector<Index> sizes(static_cast<std::size_t>(blocks), 0);
    for (int p : partition) ++sizes[static_cast<std::size_t>(p)];
    for (int b = 0; b < blocks; ++b)
        if (sizes[static_cast<std::size_t>(b)] == 0)
            throw ValidationError("ratiocut_check: block " + std::to_string(b) + " is empty");

    const Vector degree = w.rowwise().sum();
    const Matrix l = Matrix(degree.asDiagonal()) - w;
    Matrix h = Matrix::Zero(n, blocks);
    for (Index i = 0; i < n; ++i) {
        const int p = partition[static_cast<std::size_t>(i)];
        h(i, p) = 1.0 / std::sqrt(static_cast<double>(sizes[static_cast<std::size_t>(p)]));
    }
    RatioCutValues out;
    out.trace = (h.transpose() * l * h).trace();
    for (int b = 0; b < blocks; ++b) {
        double cut = 0.0;
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (partition[static_cast<std::size_t>(i)] == b && partition[static_cast<std::size_t>(j)] != b) cut += w(i, j);
        out.ratiocut += cut / static_cast<double>(sizes[static_cast<std::size_t>(b)]);
    }
    return out;
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double finite_difference_check(const std::function<double(const Matrix&)>& f, const Matrix& x, const Matrix& analytic,
                               double step) {
    if (analytic.rows() != x.rows() || analytic.cols() != x.cols())
        throw DimensionError("finite_difference_check: gradient shape differs from the point");
    double worst = 0.0;
    Matrix probe = x;
    for (Index j = 0; j < x.cols(); ++j)
        for (Index i = 0; i < x.rows(); ++i) {
            const double saved = probe(i, j);
            probe(i, j) = saved + step;
            const double up = f(probe);
            probe(i, j) = saved - step;
            const double down = f(probe);
            probe(i, j) = saved;
            worst = std::max(worst, relative_error(analytic(i, j), (up - down) / (2.0 * step)));
        }
    return worst;
}

const char* loss_term_name(LossTerm term) {
    switch (term) {
    case LossTerm::Spectral: return "l_sp";
    case LossTerm::NodeConsistency: return "l_nc";
    case LossTerm::ClusterConsistency: return "l_cc";
    case LossTerm::Total: return "objective";
    }
    return "?";
}

namespace {

double layer_margin(const DenseLayer& layer, const DenseCache& cache) {
    if (layer.activation != Activation::Relu || cache.input.size() == 0) return std::numeric_limits<double>::infinity();
    Matrix pre = cache.input * layer.weight;
    pre.rowwise() += layer.bias.row(0);
    return pre.cwiseAbs().minCoeff();
}

/// Smallest |pre-activation| over every ReLU unit of a recorded pass.
double relu_margin(const EncoderStack& stack, const EncoderTape& tape) {
    double m = layer_margin(stack.cluster_head, tape.cluster);
    for (std::size_t l = 0; l < stack.semantic.size(); ++l) m = std::min(m, layer_margin(stack.semantic[l], tape.semantic[l]));
    m = std::min(m, layer_margin(stack.projection_head, tape.proj_z));
    m = std::min(m, layer_margin(stack.projection_head, tape.proj_zt));
    for (std::size_t r = 0; r < stack.combiners.size(); ++r)
        m = std::min(m, layer_margin(stack.combiners[r], tape.hetero.combiner[r]));
    return m;
}

}  // namespace

GradientCheckResult gradient_check(LossTerm term, std::uint64_t seed, double step) {
    SyntheticSpec spec;
    spec.nodes = 12;
    spec.classes = 2;
    spec.feature_dim = 6;
    spec.authors_per_class = 2;
    spec.author_links = 2;
    spec.separation = 1.0;
    spec.seed = seed;
    const HeteroGraph graph = make_planted_graph(spec);

    TrainConfig cfg;
    cfg.k = 3;
    cfg.d1 = 8;
    cfg.d2 = 6;
    cfg.clusters = 2;
    cfg.seed = seed;
    const RelationNeighborhood nb = build_neighborhoods(graph);
    Rng rng(seed);
    EncoderStack stack = EncoderStack::create(stack_dims(cfg, cfg.clusters), graph, nb, rng);
    // Central differences are only meaningful away from ReLU kinks. Zero
    // biases put whole rows exactly on one, so biases are redrawn until every
    // pre-activation clears the margin.
    FrozenContext ctx;
    for (int attempt = 0;; ++attempt) {
        for (auto& ref : stack.parameters())
            if (ref.name.ends_with(".bias"))
                for (Index j = 0; j < ref.value->cols(); ++j) (*ref.value)(0, j) = rng.uniform(-0.1, 0.1);
        revive_dead_units(stack.cluster_head, mlp_forward(stack.semantic, graph.target().features), rng);
        ctx = freeze_context(stack, graph, cfg);
        EncoderTape tape = begin_forward(stack, graph, &ctx.r);
        finish_forward(stack, graph, nb, ctx.s, tape);
        if (relu_margin(stack, tape) > 1e-3 || attempt == 100) break;
    }
    EncoderStack grads;
    const double value = frozen_objective(stack, graph, nb, ctx, cfg.clusters, cfg, term, &grads);
    // central differences carry roundoff of order eps |L| / step
    const double floor = 1e-6 * std::max(1.0, std::abs(value));

    GradientCheckResult result;
    auto params = stack.parameters();
    const auto analytic = grads.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix& value = *params[p].value;
        for (Index j = 0; j < value.cols(); ++j)
            for (Index i = 0; i < value.rows(); ++i) {
                const double saved = value(i, j);
                value(i, j) = saved + step;
                const double up = frozen_objective(stack, graph, nb, ctx, cfg.clusters, cfg, term);
                value(i, j) = saved - step;
                const double down = frozen_objective(stack, graph, nb, ctx, cfg.clusters, cfg, term);
                value(i, j) = saved;
                const double err = relative_error((*analytic[p].value)(i, j), (up - down) / (2.0 * step), floor);
                ++result.entries;
                if (err > result.max_relative_error) {
                    result.max_relative_error = err;
                    result.worst_parameter = params[p].name + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
                }
            }
    }
    return result;
}

namespace {

VerificationResult make_result(std::string name, double discrepancy, double tolerance, std::string instance) {
    return {std::move(name), discrepancy <= tolerance, discrepancy, tolerance, std::move(instance)};
}

Matrix random_weights(Index n, double density, Rng& rng) {
    Matrix w = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j)
            if (rng.uniform() < density) w(i, j) = w(j, i) = rng.uniform(0.0, 1.0);
    return w;
}

Matrix laplacian_of(const Matrix& w) {
    const Vector degree = w.rowwise().sum();
    return Matrix(degree.asDiagonal()) - w;
}

}  // namespace

std::vector<VerificationResult> run_suite(SuiteScale scale, std::uint64_t seed) {
    const bool full = scale == SuiteScale::Full;
    std::vector<VerificationResult> out;
    Rng rng(seed);

    {   // closed form against the simplex projection
        const int rows = full ? 1000 : 200;
        double worst = 0.0;
        for (int r = 0; r < rows; ++r) {
            const Index k = 1 + static_cast<Index>(rng.below(10));
            std::vector<double> d(static_cast<std::size_t>(k + 1));
            for (auto& x : d) x = rng.uniform(0.0, 10.0);
            std::sort(d.begin(), d.end());
            const RowAlpha ra = compute_row_alpha(d, k);
            if (ra.degenerate) continue;
            const std::span<const double> head(d.data(), static_cast<std::size_t>(k));
            const auto closed = solve_affinity_row(head, ra.alpha, ra.lambda);
            const auto oracle = qp_oracle(head, ra.alpha);
            for (std::size_t j = 0; j < closed.size(); ++j) worst = std::max(worst, std::abs(closed[j] - oracle[j]));
        }
        out.push_back(make_result("closed_form_vs_qp", worst, 1e-6, "rows=" + std::to_string(rows)));
    }

    {   // row-stochastic, exactly k positives
        const int seeds = full ? 500 : 50;
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) {
            Rng local(seed + static_cast<std::uint64_t>(s));
            const Index n = 40;
            const Index k = 1 + static_cast<Index>(local.below(10));
            Matrix h(n, 5), f(n, 3);
            for (Index j = 0; j < h.cols(); ++j)
                for (Index i = 0; i < n; ++i) h(i, j) = local.normal();
            for (Index j = 0; j < f.cols(); ++j)
                for (Index i = 0; i < n; ++i) f(i, j) = local.normal();
            const AffinityMatrix a = build_affinity(h, f, 1.0, k, 1);
            for (Index i = 0; i < n; ++i) {
                double sum = 0.0;
                Index positive = 0;
                for (SparseRowMatrix::InnerIterator it(a.matrix, i); it; ++it) {
                    sum += it.value();
                    if (it.value() > 0.0) ++positive;
                }
                worst = std::max(worst, std::abs(sum - 1.0));
                if (positive != k) worst = std::max(worst, 1.0);
            }
        }
        out.push_back(make_result("row_stochastic_k_sparse", worst, 1e-9, "seeds=" + std::to_string(seeds)));
    }

    {   // orthogonal layer
        const int trials = full ? 200 : 40;
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const Index n = 20 + static_cast<Index>(rng.below(200));
            const Index c = 1 + static_cast<Index>(rng.below(8));
            Matrix p(n, c);
            for (Index j = 0; j < c; ++j)
                for (Index i = 0; i < n; ++i) p(i, j) = rng.normal();
            const OrthogonalResult o = orthogonal_layer(p);
            const Matrix gram = o.y.transpose() * o.y / static_cast<double>(n) - Matrix::Identity(c, c);
            worst = std::max(worst, gram.cwiseAbs().maxCoeff());
        }
        out.push_back(make_result("orthogonal_layer", worst, 1e-6, "trials=" + std::to_string(trials)));
    }

    {   // zero eigenvalues of block-diagonal affinity
        double worst = 0.0;
        const int trials = full ? 10 : 5;
        for (int t = 0; t < trials; ++t) {
            const Index m = 1 + t % 5;
            const Index size = full ? 60 : 20;
            Matrix w = Matrix::Zero(m * size, m * size);
            for (Index b = 0; b < m; ++b) {
                Matrix block = random_weights(size, 0.3, rng);
                for (Index i = 0; i + 1 < size; ++i) block(i, i + 1) = block(i + 1, i) = 0.5;  // keep connected
                w.block(b * size, b * size, size, size) = block;
            }
            const Index count = zero_eig_count(laplacian_of(w), 1e-8);
            worst = std::max(worst, std::abs(static_cast<double>(count - m)));
        }
        out.push_back(make_result("zero_eigenvalue_count", worst, 0.0, "trials=" + std::to_string(trials)));
    }

    {   // Ky Fan
        const int trials = full ? 100 : 20;
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const Index n = 5 + static_cast<Index>(rng.below(full ? 196 : 60));
            const Index c = 1 + static_cast<Index>(rng.below(5));
            worst = std::max(worst, kyfan_check(laplacian_of(random_weights(n, 0.2, rng)), std::min(c, n)));
        }
        out.push_back(make_result("ky_fan", worst, 1e-8, "trials=" + std::to_string(trials)));
    }

    {   // RatioCut identity over every partition into at most 3 parts
        const Index n_max = full ? 8 : 6;
        double worst = 0.0;
        long partitions = 0;
        for (Index n = 2; n <= n_max; ++n) {
            const Matrix w = random_weights(n, 0.7, rng);
            // restricted growth strings with at most 3 blocks
            std::vector<int> a(static_cast<std::size_t>(n), 0);
            while (true) {
                const RatioCutValues v = ratiocut_check(w, a);
                worst = std::max(worst, std::abs(v.trace - v.ratiocut));
                ++partitions;
                Index i = n - 1;
                while (i > 0) {
                    const int prefix_max = *std::max_element(a.begin(), a.begin() + i);
                    if (a[static_cast<std::size_t>(i)] <= prefix_max && a[static_cast<std::size_t>(i)] < 2) break;
                    --i;
                }
                if (i == 0) break;
                ++a[static_cast<std::size_t>(i)];
                std::fill(a.begin() + i + 1, a.end(), 0);
            }
        }
        out.push_back(make_result("ratiocut_trace", worst, 1e-10, "partitions=" + std::to_string(partitions)));
    }

    {   // gradients through the full stack
        const int seeds = full ? 20 : 3;
        for (LossTerm term : {LossTerm::Spectral, LossTerm::NodeConsistency, LossTerm::ClusterConsistency, LossTerm::Total}) {
            double worst = 0.0;
            for (int s = 0; s < seeds; ++s)
                worst = std::max(worst, gradient_check(term, seed + static_cast<std::uint64_t>(s)).max_relative_error);
            out.push_back(make_result(std::string("gradient_") + loss_term_name(term), worst, 1e-4,
                                      "seeds=" + std::to_string(seeds) + ",n=12"));
        }
    }

    {   // spectral term against the trace form
        const int trials = full ? 50 : 10;
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const Index n = 20 + static_cast<Index>(rng.below(80));
            const Index c = 2 + static_cast<Index>(rng.below(4));
            Matrix h(n, 4), y(n, c);
            for (Index j = 0; j < 4; ++j)
                for (Index i = 0; i < n; ++i) h(i, j) = rng.normal();
            for (Index j = 0; j < c; ++j)
                for (Index i = 0; i < n; ++i) y(i, j) = rng.normal();
            const AffinityMatrix a = build_affinity(h, y, 1.0, 5, 1);
            const SpectralLoss sp = spectral_loss(a, y, 0.0);
            worst = std::max(worst, std::abs(sp.smoothness - spectral_trace(laplacian(a), y)));
        }
        out.push_back(make_result("spectral_trace", worst, 1e-9, "trials=" + std::to_string(trials)));
    }
    return out;
}

void write_verification(std::ostream& out, const std::vector<VerificationResult>& results) {
    out << "check\tpass\tdiscrepancy\ttolerance\tinstance\n";
    for (const auto& r : results)
        out << r.name << '\t' << (r.pass ? "pass" : "FAIL") << '\t' << tsv::format_double(r.discrepancy) << '\t'
            << tsv::format_double(r.tolerance) << '\t' << r.instance << '\n';
}

}  // namespace school
