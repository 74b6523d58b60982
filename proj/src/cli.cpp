#include "school/cli.hpp"

#include "school/affinity.hpp"
#include "school/encoders.hpp"
#include "school/eval.hpp"
#include "school/synthetic.hpp"
#include "school/trainer.hpp"
#include "school/tsv.hpp"
#include "school/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace school {

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Hyperparameter flags shared by train and sweep.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<Index> k, clusters, d1, d2;
    std::optional<double> mu, delta, beta, gamma, eta, lr;
    std::optional<int> patience, max_epochs, rebuild_period, checkpoint_every;
    std::vector<std::string> settings;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "Config file (key<TAB>value lines)");
        cmd->add_option("--seed", seed, "Random seed");
        cmd->add_option("--k", k, "Neighbors per affinity row");
        cmd->add_option("--c", clusters, "Number of clusters (default: label classes)");
        cmd->add_option("--d1", d1, "Representation width");
        cmd->add_option("--d2", d2, "Projection width");
        cmd->add_option("--mu", mu, "Node-consistency weight");
        cmd->add_option("--delta", delta, "Cluster-consistency weight");
        cmd->add_option("--beta", beta, "Assignment-distance weight in the affinity");
        cmd->add_option("--gamma", gamma, "Entropy weight");
        cmd->add_option("--eta", eta, "Decorrelation weight");
        cmd->add_option("--lr", lr, "Learning rate");
        cmd->add_option("--patience", patience, "Early-stopping patience (epochs)");
        cmd->add_option("--max-epochs", max_epochs, "Maximum number of epochs");
        cmd->add_option("--rebuild-period", rebuild_period, "Epochs between affinity rebuilds");
        cmd->add_option("--checkpoint-every", checkpoint_every, "Write epoch checkpoints every N epochs");
        cmd->add_option("--set", settings, "Any config key as key=value (repeatable)");
    }

    TrainConfig resolve() const {
        TrainConfig cfg = config.empty() ? TrainConfig{} : load_config(config);
        for (const auto& s : settings) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        if (seed) cfg.seed = *seed;
        if (k) cfg.k = *k;
        if (clusters) cfg.clusters = *clusters;
        if (d1) cfg.d1 = *d1;
        if (d2) cfg.d2 = *d2;
        if (mu) cfg.mu = *mu;
        if (delta) cfg.delta = *delta;
        if (beta) cfg.beta = *beta;
        if (gamma) cfg.gamma = *gamma;
        if (eta) cfg.eta = *eta;
        if (lr) cfg.lr = *lr;
        if (patience) cfg.patience = *patience;
        if (max_epochs) cfg.max_epochs = *max_epochs;
        if (rebuild_period) cfg.rebuild_period = *rebuild_period;
        if (checkpoint_every) cfg.checkpoint_every = *checkpoint_every;
        cfg.validate();
        return cfg;
    }
};

HeteroGraph load_dataset(const std::string& dir, const TrainConfig& cfg) {
    if (dir.empty()) throw ConfigError("--data is required");
    LoadOptions opts;
    opts.missing_features = cfg.missing_features;
    return load_graph(dir, opts);
}

std::map<std::string, std::string> checkpoint_meta(const TrainConfig& cfg, const HeteroGraph& graph, Index clusters) {
    std::map<std::string, std::string> meta;
    for (const auto& [k, v] : cfg.to_map()) meta["cfg." + k] = v;
    meta["target_type"] = graph.target_type;
    meta["target_count"] = std::to_string(graph.num_targets());
    meta["feature_dim"] = std::to_string(graph.target().feature_dim());
    meta["clusters"] = std::to_string(clusters);
    return meta;
}

TrainConfig config_from_meta(const std::map<std::string, std::string>& meta) {
    std::map<std::string, std::string> values;
    for (const auto& [k, v] : meta)
        if (k.rfind("cfg.", 0) == 0) values[k.substr(4)] = v;
    return TrainConfig::from_map(values);
}

struct LoadedModel {
    TrainConfig cfg;
    HeteroGraph graph;
    RelationNeighborhood nb;
    EncoderStack stack;
};

LoadedModel load_model(const std::string& data, const std::string& checkpoint) {
    if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (!fs::exists(checkpoint)) throw FormatError("checkpoint not found: " + checkpoint);
    const Checkpoint ckpt = read_checkpoint(checkpoint);
    LoadedModel m;
    m.cfg = config_from_meta(ckpt.meta);
    m.graph = load_dataset(data, m.cfg);
    auto meta = [&](const std::string& key) {
        const auto it = ckpt.meta.find(key);
        if (it == ckpt.meta.end()) throw ConfigError("checkpoint lacks '" + key + "'");
        return it->second;
    };
    if (meta("target_type") != m.graph.target_type || meta("target_count") != std::to_string(m.graph.num_targets()) ||
        meta("feature_dim") != std::to_string(m.graph.target().feature_dim()))
        throw ConfigError("checkpoint was trained on a different dataset (target " + meta("target_type") + " x" +
                          meta("target_count") + ", " + meta("feature_dim") + " features)");
    const Index clusters = tsv::parse_int(meta("clusters"), checkpoint, 0);
    m.nb = build_neighborhoods(m.graph);
    Rng rng(0);
    m.stack = EncoderStack::create(stack_dims(m.cfg, clusters), m.graph, m.nb, rng);
    load_parameters(ckpt, m.stack);
    return m;
}

Matrix cluster_input(const TrainConfig& cfg, const Embeddings& e) {
    return cfg.cluster_input == ClusterInput::Z ? e.z : concat_representation(e.z, e.z_tilde);
}

struct TrainOutcome {
    FitResult fit;
    Embeddings embeddings;
};

TrainOutcome train_run(const HeteroGraph& graph, const TrainConfig& cfg, const fs::path& dir, std::ostream& err,
                       RunManifest& manifest) {
    fs::create_directories(dir);
    manifest.outputs = {"config.tsv", "train_log.tsv", "best.ckpt", "affinity.tsv", "embeddings.tsv"};
    manifest.write(dir / "manifest.tsv");
    save_config(cfg, dir / "config.tsv");

    Trainer trainer(graph, cfg);
    const auto meta = checkpoint_meta(cfg, graph, trainer.clusters());
    std::ofstream log(dir / "train_log.tsv");
    if (!log) throw FormatError("cannot write " + (dir / "train_log.tsv").string());
    auto on_epoch = [&](int epoch, const EncoderStack& stack, const LossReport&) {
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
            save_checkpoint(dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), stack, meta);
    };
    TrainOutcome out;
    out.fit = trainer.fit(&log, on_epoch);
    for (const auto& w : out.fit.warnings) err << "warning: " << w << '\n';

    auto best_meta = meta;
    best_meta["best_epoch"] = std::to_string(out.fit.best_epoch);
    best_meta["best_objective"] = tsv::format_double(out.fit.best_objective);
    save_checkpoint(dir / "best.ckpt", out.fit.stack, best_meta);
    out.embeddings = embed(out.fit.stack, graph, trainer.neighborhoods(), cfg);
    export_affinity(out.embeddings.s, dir / "affinity.tsv");
    tsv::write_matrix(dir / "embeddings.tsv", concat_representation(out.embeddings.z, out.embeddings.z_tilde));
    return out;
}

EvalReport eval_run(const HeteroGraph& graph, const TrainConfig& cfg, const Embeddings& e, const fs::path& dir) {
    EvalOptions opts;
    opts.seed = cfg.seed;
    const Matrix rep = concat_representation(e.z, e.z_tilde);
    const Matrix clustered = cluster_input(cfg, e);
    const EvalReport report = evaluate(rep, graph, opts, &clustered);
    std::ofstream f(dir / "eval.tsv");
    if (!f) throw FormatError("cannot write " + (dir / "eval.tsv").string());
    write_eval_report(f, report);
    return report;
}

int cmd_prepare(const std::string& source, const std::string& out_dir, std::optional<std::uint64_t> seed,
                std::ostream& out) {
    if (source.empty()) throw ConfigError("prepare: --source is empty");
    if (out_dir.empty()) throw ConfigError("prepare: --out is required");
    HeteroGraph graph;
    if (source == "synthetic" || source.rfind("synthetic:", 0) == 0) {
        SyntheticSpec spec = SyntheticSpec::parse(source.size() > 10 ? source.substr(10) : "");
        if (seed) spec.seed = *seed;
        graph = make_planted_graph(spec);
    } else {
        if (!fs::is_directory(source)) throw FormatError("prepare: source is neither a directory nor a synthetic spec: " + source);
        graph = load_graph(source);
    }
    fs::create_directories(out_dir);
    save_graph(graph, out_dir);
    RunManifest m;
    m.command = "prepare";
    m.dataset = source;
    m.seed = seed.value_or(0);
    m.input_hash = fs::exists(source) ? content_hash(source) : content_hash(out_dir);
    m.started = m.finished = utc_now();
    m.outputs = {"meta.tsv"};
    m.write(fs::path(out_dir) / "manifest.tsv");
    out << "wrote " << out_dir << " (" << graph.num_targets() << " " << graph.target_type << " nodes, "
        << graph.relations.size() << " relations)\n";
    return exit_code::ok;
}

std::vector<double> parse_values(const std::string& name, const std::string& list) {
    std::set<double> unique;
    for (const auto& v : tsv::split(list, ',')) {
        if (v.empty()) continue;
        try {
            unique.insert(tsv::parse_double(v, "--grid", 0));
        } catch (const FormatError&) {
            throw ConfigError("--grid: bad value '" + v + "' for " + name);
        }
    }
    return {unique.begin(), unique.end()};
}

}  // namespace

void RunManifest::write(const fs::path& path) const {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "command\t" << command << '\n';
    f << "dataset\t" << dataset << '\n';
    f << "seed\t" << seed << '\n';
    f << "input_hash\t" << input_hash << '\n';
    f << "started\t" << started << '\n';
    f << "finished\t" << finished << '\n';
    for (const auto& o : outputs) f << "output\t" << o << '\n';
    for (const auto& [k, v] : config) f << "config\t" << k << '\t' << v << '\n';
}

RunManifest RunManifest::read(const fs::path& path) {
    RunManifest m;
    for (const auto& row : tsv::read(path)) {
        const auto& f = row.fields;
        auto value = [&](std::size_t i) { return i < f.size() ? f[i] : std::string(); };
        if (f[0] == "command") m.command = value(1);
        else if (f[0] == "dataset") m.dataset = value(1);
        else if (f[0] == "seed") m.seed = static_cast<std::uint64_t>(tsv::parse_int(value(1), path, row.line));
        else if (f[0] == "input_hash") m.input_hash = value(1);
        else if (f[0] == "started") m.started = value(1);
        else if (f[0] == "finished") m.finished = value(1);
        else if (f[0] == "output") m.outputs.push_back(value(1));
        else if (f[0] == "config") m.config[value(1)] = value(2);
    }
    return m;
}

std::string content_hash(const fs::path& path) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const char* data, std::size_t size) {
        for (std::size_t i = 0; i < size; ++i) {
            h ^= static_cast<unsigned char>(data[i]);
            h *= 0x100000001b3ULL;
        }
    };
    std::vector<fs::path> files;
    if (fs::is_regular_file(path)) {
        files.push_back(path);
    } else if (fs::is_directory(path)) {
        for (const auto& entry : fs::recursive_directory_iterator(path))
            if (entry.is_regular_file() && entry.path().filename() != "manifest.tsv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        const std::string name = fs::is_directory(path) ? fs::relative(file, path).generic_string() : file.filename().string();
        mix(name.data(), name.size());
        std::ifstream in(file, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        const std::string bytes = buf.str();
        mix(bytes.data(), bytes.size());
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Self-supervised clustering and representation learning on heterogeneous graphs", "school"};
    app.require_subcommand(1);

    std::string source, out_dir, data, checkpoint, scale = "small", grid;
    std::optional<std::uint64_t> prep_seed, eval_seed;
    std::uint64_t verify_seed = 0;
    Overrides train_flags, sweep_flags;

    auto* prepare = app.add_subcommand("prepare", "Write a dataset directory (synthetic or normalized copy)");
    prepare->add_option("--source,--data", source, "Dataset directory or synthetic[:n=..,c=..,seed=..]")->required();
    prepare->add_option("--out", out_dir, "Output directory")->required();
    prepare->add_option("--seed", prep_seed, "Seed for the synthetic generator");

    auto* train = app.add_subcommand("train", "Fit the model and write a run directory");
    train->add_option("--data", data, "Dataset directory")->required();
    train->add_option("--out", out_dir, "Run directory")->required();
    train_flags.attach(train);

    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
    evalc->add_option("--data", data, "Dataset directory")->required();
    evalc->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    evalc->add_option("--out", out_dir, "Directory for eval.tsv (default: next to the checkpoint)");
    evalc->add_option("--seed", eval_seed, "Seed for probe and k-means repeats");

    auto* verify = app.add_subcommand("verify", "Run the numerical oracle suite");
    verify->add_option("--scale", scale, "small or full")->check(CLI::IsMember({"small", "full"}));
    verify->add_option("--seed", verify_seed, "Seed for random instances");
    verify->add_option("--out", out_dir, "Directory for verify.tsv");

    auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a hyperparameter grid");
    sweep->add_option("--data", data, "Dataset directory")->required();
    sweep->add_option("--out", out_dir, "Sweep directory")->required();
    sweep->add_option("--grid", grid, "e.g. \"mu=0.01,1,100;delta=0.1,10\" (keys: mu, delta, k, beta)")->required();
    sweep_flags.attach(sweep);

    auto* exportc = app.add_subcommand("export", "Write embeddings and the affinity of a checkpoint");
    exportc->add_option("--data", data, "Dataset directory")->required();
    exportc->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    exportc->add_option("--out", out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_code::ok : exit_code::usage;
    }

    try {
        if (*prepare) return cmd_prepare(source, out_dir, prep_seed, out);

        if (*train) {
            const TrainConfig cfg = train_flags.resolve();
            const HeteroGraph graph = load_dataset(data, cfg);
            RunManifest m;
            m.command = "train";
            m.config = cfg.to_map();
            m.dataset = data;
            m.seed = cfg.seed;
            m.input_hash = content_hash(data);
            m.started = utc_now();
            const TrainOutcome t = train_run(graph, cfg, out_dir, err, m);
            m.finished = utc_now();
            m.write(fs::path(out_dir) / "manifest.tsv");
            out << "trained " << t.fit.epochs_run << " epochs, best objective " << t.fit.best_objective << " at epoch "
                << t.fit.best_epoch << "\n";
            return exit_code::ok;
        }

        if (*evalc) {
            LoadedModel model = load_model(data, checkpoint);
            if (eval_seed) model.cfg.seed = *eval_seed;
            const fs::path dir = out_dir.empty() ? fs::path(checkpoint).parent_path() : fs::path(out_dir);
            if (!dir.empty()) fs::create_directories(dir);
            const Embeddings e = embed(model.stack, model.graph, model.nb, model.cfg);
            const EvalReport report = eval_run(model.graph, model.cfg, e, dir.empty() ? fs::path(".") : dir);
            print_eval_summary(out, report);
            return exit_code::ok;
        }

        if (*verify) {
            const auto results = run_suite(scale == "full" ? SuiteScale::Full : SuiteScale::Small, verify_seed);
            write_verification(out, results);
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                std::ofstream f(fs::path(out_dir) / "verify.tsv");
                write_verification(f, results);
            }
            const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass; });
            return ok ? exit_code::ok : exit_code::verification;
        }

        if (*sweep) {
            const TrainConfig base = sweep_flags.resolve();
            std::vector<std::pair<std::string, std::vector<double>>> axes;
            for (const auto& part : tsv::split(grid, ';')) {
                if (part.empty()) continue;
                const auto eq = part.find('=');
                if (eq == std::string::npos) throw ConfigError("--grid: expected name=values, got '" + part + "'");
                const std::string name = part.substr(0, eq);
                if (name != "mu" && name != "delta" && name != "k" && name != "beta")
                    throw ConfigError("--grid: unknown parameter '" + name + "'");
                if (std::any_of(axes.begin(), axes.end(), [&](const auto& a) { return a.first == name; }))
                    throw ConfigError("--grid: parameter '" + name + "' given twice");
                auto values = parse_values(name, part.substr(eq + 1));
                if (values.empty()) throw ConfigError("--grid: no values for '" + name + "'");
                axes.emplace_back(name, std::move(values));
            }
            if (axes.empty()) throw ConfigError("--grid is empty");

            const HeteroGraph graph = load_dataset(data, base);
            fs::create_directories(out_dir);
            std::ofstream summary(fs::path(out_dir) / "summary.tsv");
            summary << "cell";
            for (const auto& a : axes) summary << '\t' << a.first;
            summary << "\tmacro_f1\tmacro_f1_std\trun_dir\n";

            std::vector<std::size_t> pos(axes.size(), 0);
            for (int cell = 0;; ++cell) {
                TrainConfig cfg = base;
                std::string label = "cell_" + std::to_string(cell);
                for (std::size_t a = 0; a < axes.size(); ++a) {
                    const double v = axes[a].second[pos[a]];
                    cfg.set(axes[a].first, axes[a].first == "k" ? std::to_string(static_cast<Index>(v)) : tsv::format_double(v));
                }
                cfg.validate();
                const fs::path dir = fs::path(out_dir) / label;
                RunManifest m;
                m.command = "sweep";
                m.config = cfg.to_map();
                m.dataset = data;
                m.seed = cfg.seed;
                m.input_hash = content_hash(data);
                m.started = utc_now();
                const TrainOutcome t = train_run(graph, cfg, dir, err, m);
                const EvalReport report = eval_run(graph, cfg, t.embeddings, dir);
                m.outputs.push_back("eval.tsv");
                m.finished = utc_now();
                m.write(dir / "manifest.tsv");

                summary << cell;
                for (std::size_t a = 0; a < axes.size(); ++a) summary << '\t' << tsv::format_double(axes[a].second[pos[a]]);
                summary << '\t' << tsv::format_double(report.macro_f1.mean) << '\t'
                        << tsv::format_double(report.macro_f1.std) << '\t' << label << '\n';
                out << label << " macro_f1 " << report.macro_f1.mean << '\n';

                std::size_t a = axes.size();
                while (a > 0) {
                    --a;
                    if (++pos[a] < axes[a].second.size()) break;
                    pos[a] = 0;
                    if (a == 0) return exit_code::ok;
                }
            }
        }

        if (*exportc) {
            const LoadedModel model = load_model(data, checkpoint);
            fs::create_directories(out_dir);
            const Embeddings e = embed(model.stack, model.graph, model.nb, model.cfg);
            const fs::path dir(out_dir);
            tsv::write_matrix(dir / "z.tsv", e.z);
            tsv::write_matrix(dir / "z_tilde.tsv", e.z_tilde);
            tsv::write_matrix(dir / "embeddings.tsv", concat_representation(e.z, e.z_tilde));
            tsv::write_matrix(dir / "y.tsv", e.y);
            export_affinity(e.s, dir / "affinity.tsv");
            out << "exported " << e.z.rows() << " rows to " << out_dir << '\n';
            return exit_code::ok;
        }
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return exit_code::numerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::usage;
    }
    return exit_code::usage;
}

}  // namespace school
