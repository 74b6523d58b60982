#pragma once

#include "school/affinity.hpp"
#include "school/common.hpp"
#include "school/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace school {

enum class Activation { None, Relu };

/// y = act(x W + b) with W stored in_dim x out_dim and b as a 1 x out_dim row.
/// A DenseLayer also serves as its own gradient accumulator.
struct DenseLayer {
    Matrix weight;
    Matrix bias;
    Activation activation = Activation::Relu;

    Index in_dim() const { return weight.rows(); }
    Index out_dim() const { return weight.cols(); }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    static DenseLayer glorot(Index in_dim, Index out_dim, Activation act, Rng& rng);
    static DenseLayer zeros_like(const DenseLayer& other);
};

struct DenseCache {
    Matrix input;
    Matrix output;
};

Matrix dense_forward(const DenseLayer& layer, const Matrix& x, DenseCache* cache = nullptr);

/// Accumulates parameter gradients into `grad` and returns dL/dx (empty when
/// need_input_grad is false).
Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& grad_out, DenseLayer& grad,
                      bool need_input_grad = true);

using Mlp = std::vector<DenseLayer>;
using MlpCache = std::vector<DenseCache>;

/// H = sigma(g(X)) through every layer of the stack.
Matrix mlp_forward(const Mlp& layers, const Matrix& x, MlpCache* cache = nullptr);
Matrix mlp_backward(const Mlp& layers, const MlpCache& cache, const Matrix& grad_out, Mlp& grads,
                    bool need_input_grad = true);

/// Y = sqrt(n) P R^{-1} with P = E R the thin QR of P, diag(R) >= 0.
struct OrthogonalResult {
    Matrix y;
    Matrix r;
    double condition = 0.0;  // sigma_max / sigma_min of P
};

/// Throws RankError when sigma_min(P) <= 1e-8 sigma_max(P).
OrthogonalResult orthogonal_layer(const Matrix& p);

/// Applies Y = sqrt(n) P R^{-1} for a given (frozen) R.
Matrix apply_orthogonal(const Matrix& p, const Matrix& r);

/// dL/dP for Y = sqrt(n) P R^{-1} with R held constant.
Matrix orthogonal_backward(const Matrix& r, const Matrix& grad_y);

struct ClusterAssignment {
    Matrix p;  // head output before orthogonalization
    Matrix y;
    Matrix r;
    std::vector<int> hard;  // argmax per row, lowest index on ties
};

std::vector<int> row_argmax(const Matrix& y);

ClusterAssignment cluster_assign(const DenseLayer& head, const Matrix& h, DenseCache* cache = nullptr);

/// Redraws output units of `head` that are inactive on every row of `input`
/// (so their ReLU column is identically zero). Returns the number revived.
int revive_dead_units(DenseLayer& head, const Matrix& input, Rng& rng);

struct StackDims {
    Index d1 = 64;
    Index d2 = 64;
    Index clusters = 3;
    std::vector<Index> hidden;  // hidden widths of g, empty for a single layer
};

/// Parameters of every encoder: g (semantic MLP), p (cluster head),
/// q (shared projection head), per-type input projections and per-relation
/// combiners of the heterogeneous encoder.
struct EncoderStack {
    Mlp semantic;
    DenseLayer cluster_head;
    DenseLayer projection_head;
    std::vector<std::string> type_names;
    std::vector<DenseLayer> type_projections;
    std::vector<std::string> relation_names;
    std::vector<DenseLayer> combiners;

    /// Bumped on every parameter update; forward tapes record it.
    std::uint64_t version = 0;

    struct ParamRef {
        std::string name;
        Matrix* value;
    };
    struct ConstParamRef {
        std::string name;
        const Matrix* value;
    };

    std::vector<ParamRef> parameters();
    std::vector<ConstParamRef> parameters() const;
    Index parameter_count() const;

    const DenseLayer& type_projection(const std::string& type) const;

    /// Seeded construction in a fixed order.
    static EncoderStack create(const StackDims& dims, const HeteroGraph& graph, const RelationNeighborhood& nb, Rng& rng);
    static EncoderStack zeros_like(const EncoderStack& other);
};

struct HeteroCache {
    std::vector<Matrix> type_outputs;  // f_theta applied to every node of each type
    std::vector<DenseCache> combiner;  // per relation
    bool filled = false;
};

/// z~_i = 1/|R| sum_r relu(W_r [f(x_i) || sum_{j in N_{i,r}} f(x_j)] + b_r).
Matrix hetero_encode(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                     HeteroCache* cache = nullptr);
void hetero_backward(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                     const HeteroCache& cache, const Matrix& grad_zt, EncoderStack& grads);

/// Shared projection head q applied to Z and Z~.
Matrix project(const DenseLayer& q, const Matrix& m, DenseCache* cache = nullptr);

/// Every activation of one forward pass through the stack.
///
/// The pass runs in two stages because the affinity is computed from the
/// stage-one outputs: begin_forward produces H, P and Y; finish_forward
/// takes the affinity and produces Z, Z~, Q and Q~.
struct EncoderTape {
    std::uint64_t version = 0;
    int stage = 0;

    MlpCache semantic;
    DenseCache cluster;
    Matrix h;
    ClusterAssignment assignment;

    Matrix z;
    Matrix z_tilde;
    HeteroCache hetero;
    DenseCache proj_z;
    DenseCache proj_zt;
    Matrix q;
    Matrix q_tilde;
};

/// `frozen_r`, when given, replaces the QR factor (used by gradient checks so
/// that finite differences see the same linear map as the backward pass).
EncoderTape begin_forward(const EncoderStack& stack, const HeteroGraph& graph, const Matrix* frozen_r = nullptr);
void finish_forward(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                    const AffinityMatrix& s, EncoderTape& tape);

struct UpstreamGradients {
    Matrix y;        // dL/dY, n x c (may be empty)
    Matrix q;        // dL/dQ, n x d2 (may be empty)
    Matrix q_tilde;  // dL/dQ~, n x d2 (may be empty)
};

/// Parameter gradients for the given upstream gradients. S, R and the hard
/// assignment are constants. Throws StateError if the tape is incomplete or
/// the stack changed since it was recorded.
EncoderStack backward(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                      const AffinityMatrix& s, const EncoderTape& tape, const UpstreamGradients& up);

/// Versioned TSV dump keyed by parameter name; values round-trip exactly.
void save_checkpoint(const std::filesystem::path& path, const EncoderStack& stack,
                     const std::map<std::string, std::string>& meta);

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, Matrix> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into a stack of matching architecture. Throws ConfigError
/// on missing names or shape mismatches.
void load_parameters(const Checkpoint& ckpt, EncoderStack& stack);

}  // namespace school
