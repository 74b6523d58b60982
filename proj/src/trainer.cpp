#include "school/trainer.hpp"

#include "school/tsv.hpp"

#include <cmath>

namespace school {

void optimizer_step(EncoderStack& params, const EncoderStack& grads, AdamState& state, double lr) {
    auto p = params.parameters();
    const auto g = grads.parameters();
    if (p.size() != g.size()) throw DimensionError("optimizer_step: parameter and gradient lists differ in length");
    if (state.m.empty()) {
        for (const auto& ref : p) {
            state.m.push_back(Matrix::Zero(ref.value->rows(), ref.value->cols()));
            state.v.push_back(Matrix::Zero(ref.value->rows(), ref.value->cols()));
        }
    }
    if (state.m.size() != p.size()) throw DimensionError("optimizer_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Matrix& w = *p[i].value;
        const Matrix& d = *g[i].value;
        if (d.rows() != w.rows() || d.cols() != w.cols() || state.m[i].rows() != w.rows() ||
            state.m[i].cols() != w.cols())
            throw DimensionError("optimizer_step: gradient shape mismatch for " + p[i].name);
    }

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Matrix& d = *g[i].value;
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * d;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * d.cwiseProduct(d);
        const auto m_hat = state.m[i].array() / c1;
        const auto v_hat = state.v[i].array() / c2;
        p[i].value->array() -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    ++params.version;
}

double global_norm(const EncoderStack& grads) {
    double sq = 0.0;
    for (const auto& ref : grads.parameters()) sq += ref.value->squaredNorm();
    return std::sqrt(sq);
}

double clip_global_norm(EncoderStack& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& ref : grads.parameters()) *ref.value *= scale;
    }
    return norm;
}

ObjectiveEvaluation evaluate_objective(const EncoderTape& tape, const AffinityMatrix& s, std::span<const int> hard,
                                       Index clusters, const TrainConfig& cfg, LossTerm term) {
    if (tape.stage != 2) throw StateError("evaluate_objective: forward pass not finished");
    const SpectralLoss sp = spectral_loss(s, tape.assignment.y, cfg.gamma);
    const NodeConsistency nc = node_consistency(tape.q, tape.q_tilde, cfg.eta);
    const ClusterPool pool = cluster_pool(tape.q, hard, clusters);
    const ClusterConsistency cc = cluster_consistency(tape.q_tilde, pool.centroids, hard);

    ObjectiveEvaluation out;
    out.report.l_sp = sp.value;
    out.report.l_nc = nc.value;
    out.report.l_cc = cc.value;
    out.report.total = total_objective(sp.value, nc.value, cc.value, cfg.mu, cfg.delta);
    out.report.entropy = sp.entropy;
    out.report.empty_clusters = static_cast<int>(pool.empty.size());
    out.empty_clusters = pool.empty;

    auto pooled = [&](double weight) -> Matrix {
        if (!cfg.pool_gradient) return Matrix::Zero(tape.q.rows(), tape.q.cols());
        return weight * cluster_pool_backward(pool, hard, cc.grad_centroids);
    };

    switch (term) {
    case LossTerm::Spectral:
        out.value = sp.value;
        out.upstream.y = sp.grad_y;
        break;
    case LossTerm::NodeConsistency:
        out.value = nc.value;
        out.upstream.q = nc.grad_q;
        out.upstream.q_tilde = nc.grad_q_tilde;
        break;
    case LossTerm::ClusterConsistency:
        out.value = cc.value;
        out.upstream.q = pooled(1.0);
        out.upstream.q_tilde = cc.grad_q_tilde;
        break;
    case LossTerm::Total:
        out.value = out.report.total;
        out.upstream.y = sp.grad_y;
        out.upstream.q = cfg.mu * nc.grad_q + pooled(cfg.delta);
        out.upstream.q_tilde = cfg.mu * nc.grad_q_tilde + cfg.delta * cc.grad_q_tilde;
        break;
    }
    return out;
}

FrozenContext freeze_context(const EncoderStack& stack, const HeteroGraph& graph, const TrainConfig& cfg) {
    EncoderTape tape = begin_forward(stack, graph);
    FrozenContext ctx;
    ctx.s = build_affinity(tape.h, tape.assignment.y, cfg.beta, cfg.k);
    ctx.r = tape.assignment.r;
    ctx.hard = tape.assignment.hard;
    return ctx;
}

double frozen_objective(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                        const FrozenContext& ctx, Index clusters, const TrainConfig& cfg, LossTerm term,
                        EncoderStack* grads) {
    EncoderTape tape = begin_forward(stack, graph, &ctx.r);
    finish_forward(stack, graph, nb, ctx.s, tape);
    const ObjectiveEvaluation ev = evaluate_objective(tape, ctx.s, ctx.hard, clusters, cfg, term);
    if (grads) *grads = backward(stack, graph, nb, ctx.s, tape, ev.upstream);
    return ev.value;
}

Embeddings embed(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                 const TrainConfig& cfg) {
    EncoderTape tape = begin_forward(stack, graph);
    Embeddings out;
    out.s = build_affinity(tape.h, tape.assignment.y, cfg.beta, cfg.k);
    finish_forward(stack, graph, nb, out.s, tape);
    out.h = std::move(tape.h);
    out.y = std::move(tape.assignment.y);
    out.hard = std::move(tape.assignment.hard);
    out.z = std::move(tape.z);
    out.z_tilde = std::move(tape.z_tilde);
    return out;
}

void write_log_header(std::ostream& out) { out << "epoch\tl_sp\tl_nc\tl_cc\ttotal\tentropy\n"; }

void write_log_row(std::ostream& out, int epoch, const LossReport& r) {
    out << epoch << '\t' << tsv::format_double(r.l_sp) << '\t' << tsv::format_double(r.l_nc) << '\t'
        << tsv::format_double(r.l_cc) << '\t' << tsv::format_double(r.total) << '\t' << tsv::format_double(r.entropy)
        << '\n';
}

Index resolve_clusters(const TrainConfig& cfg, const HeteroGraph& graph) {
    const Index c = cfg.clusters > 0 ? cfg.clusters : graph.num_classes;
    if (c < 1) throw ConfigError("number of clusters c is not set and the graph has no labels");
    if (c > graph.num_targets()) throw ConfigError("more clusters than target nodes");
    return c;
}

StackDims stack_dims(const TrainConfig& cfg, Index clusters) {
    StackDims dims;
    dims.d1 = cfg.d1;
    dims.d2 = cfg.d2;
    dims.clusters = clusters;
    dims.hidden = cfg.hidden;
    return dims;
}

Trainer::Trainer(const HeteroGraph& graph, TrainConfig cfg) : graph_(graph), cfg_(std::move(cfg)) {
    cfg_.validate();
    clusters_ = resolve_clusters(cfg_, graph_);
    if (cfg_.k + 1 > graph_.num_targets() - 1)
        throw ConfigError("k = " + std::to_string(cfg_.k) + " needs at least k + 2 target nodes");
    nb_ = build_neighborhoods(graph_);
    Rng init(cfg_.seed);
    stack_ = EncoderStack::create(stack_dims(cfg_, clusters_), graph_, nb_, init);
    state_.rng.reseed(cfg_.seed ^ 0x5851f42d4c957f2dULL);
}

void Trainer::revive_cluster_units() {
    const Matrix h = mlp_forward(stack_.semantic, graph_.target().features);
    if (const int revived = revive_dead_units(stack_.cluster_head, h, state_.rng); revived > 0) {
        ++stack_.version;
        warnings_.push_back("epoch " + std::to_string(state_.epoch + 1) + ": re-initialized " +
                            std::to_string(revived) + " inactive cluster unit(s)");
    }
}

LossReport Trainer::train_epoch() {
    revive_cluster_units();

    EncoderTape tape = begin_forward(stack_, graph_);
    if (!affinity_ || state_.epoch % cfg_.rebuild_period == 0)
        affinity_ = build_affinity(tape.h, tape.assignment.y, cfg_.beta, cfg_.k);
    finish_forward(stack_, graph_, nb_, *affinity_, tape);

    const ObjectiveEvaluation ev =
        evaluate_objective(tape, *affinity_, tape.assignment.hard, clusters_, cfg_, LossTerm::Total);
    const std::pair<const char*, double> terms[] = {
        {"l_sp", ev.report.l_sp}, {"l_nc", ev.report.l_nc}, {"l_cc", ev.report.l_cc}};
    for (const auto& [name, value] : terms)
        if (!std::isfinite(value))
            throw NumericalError(std::string(name) + " is not finite at epoch " + std::to_string(state_.epoch + 1));
    if (!ev.empty_clusters.empty())
        warnings_.push_back("epoch " + std::to_string(state_.epoch + 1) + ": " +
                            std::to_string(ev.empty_clusters.size()) + " empty cluster(s)");

    EncoderStack grads = backward(stack_, graph_, nb_, *affinity_, tape, ev.upstream);
    for (const auto& ref : grads.parameters())
        if (!all_finite(*ref.value))
            throw NumericalError("gradient of " + ref.name + " is not finite at epoch " +
                                 std::to_string(state_.epoch + 1));
    clip_global_norm(grads, cfg_.clip_norm);
    optimizer_step(stack_, grads, state_.adam, cfg_.lr);
    ++state_.epoch;
    return ev.report;
}

FitResult Trainer::fit(std::ostream* log, const EpochCallback& on_epoch) {
    FitResult result;
    if (log) write_log_header(*log);
    EncoderStack best = stack_;
    for (int e = 0; e < cfg_.max_epochs; ++e) {
        revive_cluster_units();
        EncoderStack before = stack_;
        const LossReport report = train_epoch();
        result.log.push_back(report);
        ++result.epochs_run;
        if (log) write_log_row(*log, state_.epoch, report);
        if (report.total < state_.best_objective) {
            state_.best_objective = report.total;
            state_.best_epoch = state_.epoch;
            state_.since_improvement = 0;
            best = std::move(before);
        } else {
            ++state_.since_improvement;
        }
        if (on_epoch) on_epoch(state_.epoch, stack_, report);
        if (state_.since_improvement >= cfg_.patience) {
            result.early_stopped = true;
            break;
        }
    }
    const std::uint64_t version = stack_.version + 1;
    stack_ = std::move(best);
    stack_.version = version;
    affinity_.reset();

    const Embeddings emb = embed(stack_, graph_, nb_, cfg_);
    result.stack = stack_;
    result.affinity = emb.s;
    result.best_epoch = state_.best_epoch;
    result.best_objective = state_.best_objective;
    result.warnings = warnings_;
    return result;
}

}  // namespace school
