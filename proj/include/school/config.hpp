#pragma once

#include "school/common.hpp"
#include "school/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace school {

enum class ClusterInput { Concat, Z };

/// Every hyperparameter of a training run. Defaults apply where the method
/// leaves a value open; all of them can be set from a config file or flags.
struct TrainConfig {
    Index k = 10;          // neighbors per affinity row
    Index clusters = 0;    // c; 0 takes the class count from the labels
    Index d1 = 64;
    Index d2 = 64;
    std::vector<Index> hidden;  // extra hidden layers of the semantic MLP

    double beta = 1.0;   // weight of the assignment distance in d_ij
    double gamma = 1.0;  // entropy weight in the spectral loss
    double eta = 1.0;    // decorrelation weight in node consistency
    double mu = 1.0;     // node-consistency weight
    double delta = 1.0;  // cluster-consistency weight

    double lr = 1e-3;
    double clip_norm = 5.0;
    int max_epochs = 500;
    int patience = 30;
    std::uint64_t seed = 0;
    int rebuild_period = 1;  // epochs between affinity rebuilds
    bool pool_gradient = true;  // let cluster consistency reach Q through the centroids
    int checkpoint_every = 0;   // 0 writes only best and final checkpoints

    MissingFeatures missing_features = MissingFeatures::OneHot;
    ClusterInput cluster_input = ClusterInput::Concat;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    /// Applies one "key value" setting (keys as in the config file).
    void set(const std::string& key, const std::string& value);

    std::map<std::string, std::string> to_map() const;
    static TrainConfig from_map(const std::map<std::string, std::string>& values);

    /// Dimension presets: acm, yelp, dblp, aminer, photo, computers.
    static TrainConfig preset(const std::string& dataset);
};

/// Reads "key<TAB>value" lines into a config, starting from `base`.
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

}  // namespace school
