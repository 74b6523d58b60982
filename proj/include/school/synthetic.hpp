#pragma once

#include "school/common.hpp"
#include "school/graph.hpp"

#include <cstdint>
#include <string>

namespace school {

/// Planted-partition heterogeneous graph: target "paper" nodes in equal
/// blocks, "author" nodes owned by one block each, one "subject" per block.
struct SyntheticSpec {
    Index nodes = 300;
    Index classes = 3;
    Index feature_dim = 16;
    Index authors_per_class = 20;
    Index author_links = 3;      // author edges per paper
    double separation = 6.0;     // distance scale between block means
    double noise = 1.0;          // per-coordinate feature noise
    double intra_prob = 0.9;     // probability an edge stays in the block
    double train_fraction = 0.2;
    std::uint64_t seed = 0;

    /// Parses "key=value" pairs separated by commas, e.g. "n=300,c=3,seed=1".
    static SyntheticSpec parse(const std::string& text);
};

HeteroGraph make_planted_graph(const SyntheticSpec& spec);

}  // namespace school
