#pragma once

#include "school/affinity.hpp"
#include "school/common.hpp"
#include "school/config.hpp"
#include "school/encoders.hpp"
#include "school/graph.hpp"
#include "school/losses.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace school {

/// First and second Adam moments, one entry per parameter tensor.
struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction. Throws DimensionError when a
/// gradient does not match its parameter.
void optimizer_step(EncoderStack& params, const EncoderStack& grads, AdamState& state, double lr);

/// Rescales `grads` so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_global_norm(EncoderStack& grads, double max_norm);

double global_norm(const EncoderStack& grads);

enum class LossTerm { Spectral, NodeConsistency, ClusterConsistency, Total };

struct ObjectiveEvaluation {
    LossReport report;
    double value = 0.0;  // value of the selected term
    UpstreamGradients upstream;
    std::vector<int> empty_clusters;
};

/// Loss values and their gradients w.r.t. Y, Q and Q~ from a completed
/// tape. `hard` is the cluster assignment used for pooling.
ObjectiveEvaluation evaluate_objective(const EncoderTape& tape, const AffinityMatrix& s, std::span<const int> hard,
                                       Index clusters, const TrainConfig& cfg, LossTerm term = LossTerm::Total);

/// Everything that the alternation holds fixed during one gradient step.
struct FrozenContext {
    AffinityMatrix s;
    Matrix r;
    std::vector<int> hard;
};

/// Freezes S, R and the hard assignment at the current parameters.
FrozenContext freeze_context(const EncoderStack& stack, const HeteroGraph& graph, const TrainConfig& cfg);

/// Objective value (and optionally its parameter gradient) with the context
/// frozen.
double frozen_objective(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                        const FrozenContext& ctx, Index clusters, const TrainConfig& cfg, LossTerm term,
                        EncoderStack* grads = nullptr);

struct TrainState {
    int epoch = 0;
    double best_objective = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int since_improvement = 0;
    AdamState adam;
    Rng rng;
};

/// Representations of the target nodes at fixed parameters.
struct Embeddings {
    Matrix h;
    Matrix y;
    std::vector<int> hard;
    Matrix z;
    Matrix z_tilde;
    AffinityMatrix s;
};

Embeddings embed(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                 const TrainConfig& cfg);

struct FitResult {
    EncoderStack stack;  // parameters of the best epoch
    AffinityMatrix affinity;  // rebuilt at the best parameters
    std::vector<LossReport> log;
    int epochs_run = 0;
    int best_epoch = -1;
    double best_objective = 0.0;
    bool early_stopped = false;
    std::vector<std::string> warnings;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, int epoch, const LossReport& report);

class Trainer {
public:
    Trainer(const HeteroGraph& graph, TrainConfig cfg);

    /// One alternation step: Y, then S from (H, Y), then Z, Z~, Q, Q~, the
    /// losses and a single optimizer step. Returns the losses before the step.
    LossReport train_epoch();

    using EpochCallback = std::function<void(int epoch, const EncoderStack& stack, const LossReport& report)>;

    /// Runs until max_epochs or until the objective has not improved for
    /// `patience` epochs, then restores the best parameters.
    FitResult fit(std::ostream* log = nullptr, const EpochCallback& on_epoch = {});

    const EncoderStack& stack() const { return stack_; }
    EncoderStack& stack() { return stack_; }
    const TrainConfig& config() const { return cfg_; }
    const RelationNeighborhood& neighborhoods() const { return nb_; }
    const HeteroGraph& graph() const { return graph_; }
    TrainState& state() { return state_; }
    Index clusters() const { return clusters_; }
    const std::optional<AffinityMatrix>& affinity() const { return affinity_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    void revive_cluster_units();

    const HeteroGraph& graph_;
    TrainConfig cfg_;
    Index clusters_ = 0;
    RelationNeighborhood nb_;
    EncoderStack stack_;
    TrainState state_;
    std::optional<AffinityMatrix> affinity_;
    std::vector<std::string> warnings_;
};

/// Resolves c: the configured value, else the label class count.
Index resolve_clusters(const TrainConfig& cfg, const HeteroGraph& graph);

StackDims stack_dims(const TrainConfig& cfg, Index clusters);

}  // namespace school
