#include "school/config.hpp"

#include "school/tsv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace school {

namespace {

double to_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v))
        throw ConfigError("config '" + key + "': not a finite number: '" + value + "'");
    return v;
}

long long to_int(const std::string& key, const std::string& value) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("config '" + key + "': not an integer: '" + value + "'");
    return v;
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true" || value == "yes") return true;
    if (value == "0" || value == "false" || value == "no") return false;
    throw ConfigError("config '" + key + "': not a boolean: '" + value + "'");
}

std::string join(const std::vector<Index>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(k >= 1, "k must be at least 1");
    require(clusters >= 0, "c must be non-negative (0 infers it from labels)");
    require(d1 >= 1 && d2 >= 1, "d1 and d2 must be positive");
    for (Index h : hidden) require(h >= 1, "hidden widths must be positive");
    require(beta >= 0 && gamma >= 0 && eta >= 0 && mu >= 0 && delta >= 0, "beta, gamma, eta, mu, delta must be non-negative");
    require(lr >= 0, "learning rate must be non-negative");
    require(clip_norm > 0, "clip-norm must be positive");
    require(max_epochs >= 1, "max-epochs must be at least 1");
    require(patience >= 1, "patience must be at least 1");
    require(rebuild_period >= 1, "rebuild-period must be at least 1");
    require(checkpoint_every >= 0, "checkpoint-every must be non-negative");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "k") k = to_int(key, value);
    else if (key == "c") clusters = to_int(key, value);
    else if (key == "d1") d1 = to_int(key, value);
    else if (key == "d2") d2 = to_int(key, value);
    else if (key == "hidden") {
        hidden.clear();
        if (!value.empty())
            for (const auto& part : tsv::split(value, ',')) hidden.push_back(to_int(key, part));
    }
    else if (key == "beta") beta = to_double(key, value);
    else if (key == "gamma") gamma = to_double(key, value);
    else if (key == "eta") eta = to_double(key, value);
    else if (key == "mu") mu = to_double(key, value);
    else if (key == "delta") delta = to_double(key, value);
    else if (key == "lr") lr = to_double(key, value);
    else if (key == "clip-norm") clip_norm = to_double(key, value);
    else if (key == "max-epochs") max_epochs = static_cast<int>(to_int(key, value));
    else if (key == "patience") patience = static_cast<int>(to_int(key, value));
    else if (key == "seed") seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "rebuild-period") rebuild_period = static_cast<int>(to_int(key, value));
    else if (key == "pool-gradient") pool_gradient = to_bool(key, value);
    else if (key == "checkpoint-every") checkpoint_every = static_cast<int>(to_int(key, value));
    else if (key == "missing-features") {
        if (value == "onehot") missing_features = MissingFeatures::OneHot;
        else if (value == "constant") missing_features = MissingFeatures::Constant;
        else throw ConfigError("missing-features must be onehot or constant");
    } else if (key == "cluster-input") {
        if (value == "concat") cluster_input = ClusterInput::Concat;
        else if (value == "z") cluster_input = ClusterInput::Z;
        else throw ConfigError("cluster-input must be concat or z");
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    return {
        {"k", std::to_string(k)},
        {"c", std::to_string(clusters)},
        {"d1", std::to_string(d1)},
        {"d2", std::to_string(d2)},
        {"hidden", join(hidden)},
        {"beta", tsv::format_double(beta)},
        {"gamma", tsv::format_double(gamma)},
        {"eta", tsv::format_double(eta)},
        {"mu", tsv::format_double(mu)},
        {"delta", tsv::format_double(delta)},
        {"lr", tsv::format_double(lr)},
        {"clip-norm", tsv::format_double(clip_norm)},
        {"max-epochs", std::to_string(max_epochs)},
        {"patience", std::to_string(patience)},
        {"seed", std::to_string(seed)},
        {"rebuild-period", std::to_string(rebuild_period)},
        {"pool-gradient", pool_gradient ? "true" : "false"},
        {"checkpoint-every", std::to_string(checkpoint_every)},
        {"missing-features", missing_features == MissingFeatures::OneHot ? "onehot" : "constant"},
        {"cluster-input", cluster_input == ClusterInput::Concat ? "concat" : "z"},
    };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& values) {
    TrainConfig cfg;
    for (const auto& [key, value] : values) cfg.set(key, value);
    return cfg;
}

TrainConfig TrainConfig::preset(const std::string& dataset) {
    struct Dims {
        const char* name;
        Index d1, d2, c;
    };
    static constexpr Dims table[] = {
        {"acm", 512, 64, 3},      {"yelp", 256, 256, 3},    {"dblp", 128, 256, 4},
        {"aminer", 256, 256, 4},  {"photo", 1024, 256, 8},  {"computers", 1024, 256, 10},
    };
    for (const auto& row : table)
        if (dataset == row.name) {
            TrainConfig cfg;
            cfg.d1 = row.d1;
            cfg.d2 = row.d2;
            cfg.clusters = row.c;
            return cfg;
        }
    throw ConfigError("unknown dataset preset '" + dataset + "'");
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
    for (const auto& row : tsv::read(path)) {
        if (row.fields.size() == 1) {
            base.set(row.fields[0], "");
            continue;
        }
        if (row.fields.size() != 2)
            throw FormatError(path.string() + ":" + std::to_string(row.line) + ": expected key<TAB>value");
        if (row.fields[0] == "preset") {
            const TrainConfig p = TrainConfig::preset(row.fields[1]);
            base.d1 = p.d1;
            base.d2 = p.d2;
            base.clusters = p.clusters;
            continue;
        }
        base.set(row.fields[0], row.fields[1]);
    }
    return base;
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write file: " + path.string());
    for (const auto& [k, v] : cfg.to_map()) out << k << '\t' << v << '\n';
}

}  // namespace school
