#pragma once

#include "school/common.hpp"

#include <Eigen/SparseCore>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace school {

/// How a node type without a features file gets its input representation.
enum class MissingFeatures { OneHot, Constant };

enum class FeatureKind {
    Dense,     ///< features loaded from features_<type>.tsv
    OneHot,    ///< implicit identity, never materialized
    Constant,  ///< a single column of ones
};

struct NodeType {
    std::string name;
    Index count = 0;
    FeatureKind kind = FeatureKind::Dense;
    Matrix features;  // count x dim; empty for OneHot

    Index feature_dim() const { return kind == FeatureKind::OneHot ? count : features.cols(); }
};

/// A typed, directed edge list. The name encodes the endpoint types as
/// "<source>-<target>" with an optional ".<tag>" suffix.
struct Relation {
    std::string name;
    std::string source_type;
    std::string target_type;
    std::vector<std::pair<Index, Index>> edges;
};

struct HeteroGraph {
    std::vector<NodeType> node_types;
    std::vector<Relation> relations;
    std::string target_type;
    std::vector<int> labels;  // one per target node, -1 when unlabeled; empty if no labels
    int num_classes = 0;
    std::vector<Index> train;
    std::vector<Index> test;

    const NodeType& type(const std::string& name) const;
    std::size_t type_index(const std::string& name) const;
    bool has_type(const std::string& name) const;
    const NodeType& target() const { return type(target_type); }
    Index num_targets() const { return target().count; }
    bool has_labels() const { return !labels.empty(); }

    /// Checks every data-model invariant. Throws ValidationError.
    void validate() const;
};

struct LoadOptions {
    MissingFeatures missing_features = MissingFeatures::OneHot;
    int num_classes = 0;  ///< 0 infers max(label) + 1
};

/// Reads the on-disk directory format:
///   meta.tsv             name, count, feature_dim (first row is the target type)
///   features_<type>.tsv  one row per node (omitted when feature_dim is 0)
///   edges_<rel>.tsv      src, dst
///   labels.tsv           node, class        (optional)
///   split.tsv            node, train|test   (optional)
/// Duplicate edges are dropped; everything else is validated.
HeteroGraph load_graph(const std::filesystem::path& dir, const LoadOptions& options = {});

/// Writes the directory format. Synthesized feature kinds are written with
/// feature_dim 0 so they are re-synthesized on load.
void save_graph(const HeteroGraph& graph, const std::filesystem::path& dir);

/// Splits a relation name "<source>-<target>[.<tag>]" into endpoint types.
std::pair<std::string, std::string> parse_relation_name(const std::string& name);

/// One-hop neighbors of every target node through one relation.
struct RelationNeighbors {
    std::string relation;
    std::string neighbor_type;
    std::vector<std::vector<Index>> lists;           // sorted, deduplicated
    Eigen::SparseMatrix<double, Eigen::RowMajor> adjacency;  // n_target x count(neighbor_type), 0/1
};

struct RelationNeighborhood {
    std::vector<RelationNeighbors> relations;

    std::size_t total_size() const;
};

/// Neighbor lists for each relation incident to the target type, indexed by
/// target node regardless of the relation's direction. For a relation from
/// the target type to itself the outgoing direction is used.
RelationNeighborhood build_neighborhoods(const HeteroGraph& graph);

}  // namespace school
