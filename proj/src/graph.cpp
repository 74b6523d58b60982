#include "school/graph.hpp"

#include "school/tsv.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace school {

namespace fs = std::filesystem;

const NodeType& HeteroGraph::type(const std::string& name) const { return node_types[type_index(name)]; }

std::size_t HeteroGraph::type_index(const std::string& name) const {
    for (std::size_t i = 0; i < node_types.size(); ++i)
        if (node_types[i].name == name) return i;
    throw ValidationError("unknown node type '" + name + "'");
}

bool HeteroGraph::has_type(const std::string& name) const {
    return std::any_of(node_types.begin(), node_types.end(), [&](const NodeType& t) { return t.name == name; });
}

std::pair<std::string, std::string> parse_relation_name(const std::string& name) {
    std::string base = name;
    if (const auto dot = base.find('.'); dot != std::string::npos) base = base.substr(0, dot);
    const auto dash = base.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == base.size() || base.find('-', dash + 1) != std::string::npos)
        throw FormatError("relation name '" + name + "' is not of the form <source>-<target>[.<tag>]");
    return {base.substr(0, dash), base.substr(dash + 1)};
}

void HeteroGraph::validate() const {
    if (node_types.empty()) throw ValidationError("graph has no node types");
    std::set<std::string> names;
    for (const auto& t : node_types) {
        if (!names.insert(t.name).second) throw ValidationError("duplicate node type '" + t.name + "'");
        if (t.count < 0) throw ValidationError("negative node count for type '" + t.name + "'");
        if (t.kind != FeatureKind::OneHot && t.features.rows() != t.count)
            throw ValidationError("feature rows for type '" + t.name + "' do not match node count");
        if (t.kind != FeatureKind::OneHot && !t.features.allFinite())
            throw ValidationError("non-finite features for type '" + t.name + "'");
    }
    const NodeType& tgt = type(target_type);
    if (tgt.kind != FeatureKind::Dense || tgt.features.cols() == 0)
        throw ValidationError("target type '" + target_type + "' must carry a dense feature matrix");

    for (const auto& rel : relations) {
        const Index src_count = type(rel.source_type).count;
        const Index dst_count = type(rel.target_type).count;
        for (const auto& [s, d] : rel.edges) {
            if (s < 0 || s >= src_count || d < 0 || d >= dst_count)
                throw ValidationError("relation '" + rel.name + "': edge (" + std::to_string(s) + ", " +
                                      std::to_string(d) + ") out of range [" + std::to_string(src_count) + " x " +
                                      std::to_string(dst_count) + "]");
            if (rel.source_type == target_type && rel.target_type == target_type && s == d)
                throw ValidationError("relation '" + rel.name + "': self-loop on target node " + std::to_string(s));
        }
    }

    const Index n = tgt.count;
    if (has_labels()) {
        if (static_cast<Index>(labels.size()) != n) throw ValidationError("label vector size differs from target count");
        for (Index i = 0; i < n; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            if (y < -1 || y >= num_classes)
                throw ValidationError("label " + std::to_string(y) + " of node " + std::to_string(i) +
                                      " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    auto check_split = [&](const std::vector<Index>& ids, const char* which) {
        for (Index i : ids) {
            if (i < 0 || i >= n) throw ValidationError(std::string(which) + " split index " + std::to_string(i) + " out of range");
            if (seen[static_cast<std::size_t>(i)]++)
                throw ValidationError("node " + std::to_string(i) + " appears more than once across train/test splits");
            if (!has_labels() || labels[static_cast<std::size_t>(i)] < 0)
                throw ValidationError(std::string(which) + " split node " + std::to_string(i) + " has no label");
        }
    };
    check_split(train, "train");
    check_split(test, "test");
}

namespace {

void dedup_edges(std::vector<std::pair<Index, Index>>& edges) {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

}  // namespace

HeteroGraph load_graph(const fs::path& dir, const LoadOptions& options) {
    if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    HeteroGraph g;

    const fs::path meta = dir / "meta.tsv";
    for (const auto& row : tsv::read(meta)) {
        if (row.fields.size() != 3)
            throw FormatError(meta.string() + ":" + std::to_string(row.line) + ": expected name, count, feature_dim");
        NodeType t;
        t.name = row.fields[0];
        if (t.name.empty() || t.name.find_first_of("-./") != std::string::npos)
            throw FormatError(meta.string() + ":" + std::to_string(row.line) + ": invalid type name '" + t.name + "'");
        t.count = tsv::parse_int(row.fields[1], meta, row.line);
        const Index dim = tsv::parse_int(row.fields[2], meta, row.line);
        if (t.count < 0 || dim < 0) throw FormatError(meta.string() + ":" + std::to_string(row.line) + ": negative size");
        if (dim > 0) {
            t.kind = FeatureKind::Dense;
            t.features = tsv::read_matrix(dir / ("features_" + t.name + ".tsv"), t.count, dim);
        } else if (options.missing_features == MissingFeatures::OneHot) {
            t.kind = FeatureKind::OneHot;
        } else {
            t.kind = FeatureKind::Constant;
            t.features = Matrix::Ones(t.count, 1);
        }
        g.node_types.push_back(std::move(t));
    }
    if (g.node_types.empty()) throw FormatError(meta.string() + ": no node types declared");
    g.target_type = g.node_types.front().name;

    std::vector<fs::path> edge_files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string file = entry.path().filename().string();
        if (entry.is_regular_file() && file.rfind("edges_", 0) == 0 && entry.path().extension() == ".tsv")
            edge_files.push_back(entry.path());
    }
    std::sort(edge_files.begin(), edge_files.end());
    for (const auto& path : edge_files) {
        Relation rel;
        const std::string file = path.filename().string();
        rel.name = file.substr(6, file.size() - 6 - 4);
        std::tie(rel.source_type, rel.target_type) = parse_relation_name(rel.name);
        if (!g.has_type(rel.source_type) || !g.has_type(rel.target_type))
            throw ValidationError(path.string() + ": relation references an undeclared node type");
        for (const auto& row : tsv::read(path)) {
            if (row.fields.size() != 2)
                throw FormatError(path.string() + ":" + std::to_string(row.line) + ": expected two columns");
            rel.edges.emplace_back(tsv::parse_int(row.fields[0], path, row.line),
                                   tsv::parse_int(row.fields[1], path, row.line));
        }
        dedup_edges(rel.edges);
        g.relations.push_back(std::move(rel));
    }

    const Index n = g.node_types.front().count;
    const fs::path labels = dir / "labels.tsv";
    if (fs::exists(labels)) {
        g.labels.assign(static_cast<std::size_t>(n), -1);
        int max_label = -1;
        for (const auto& row : tsv::read(labels)) {
            if (row.fields.size() != 2)
                throw FormatError(labels.string() + ":" + std::to_string(row.line) + ": expected node, class");
            const auto node = tsv::parse_int(row.fields[0], labels, row.line);
            const auto cls = tsv::parse_int(row.fields[1], labels, row.line);
            if (node < 0 || node >= n)
                throw ValidationError(labels.string() + ":" + std::to_string(row.line) + ": node index " +
                                      std::to_string(node) + " out of range");
            if (cls < 0 || (options.num_classes > 0 && cls >= options.num_classes))
                throw ValidationError(labels.string() + ":" + std::to_string(row.line) + ": label " + std::to_string(cls) +
                                      " outside [0, c)");
            g.labels[static_cast<std::size_t>(node)] = static_cast<int>(cls);
            max_label = std::max(max_label, static_cast<int>(cls));
        }
        g.num_classes = options.num_classes > 0 ? options.num_classes : max_label + 1;
    }

    const fs::path split = dir / "split.tsv";
    if (fs::exists(split)) {
        for (const auto& row : tsv::read(split)) {
            if (row.fields.size() != 2)
                throw FormatError(split.string() + ":" + std::to_string(row.line) + ": expected node, train|test");
            const Index node = tsv::parse_int(row.fields[0], split, row.line);
            if (row.fields[1] == "train")
                g.train.push_back(node);
            else if (row.fields[1] == "test")
                g.test.push_back(node);
            else
                throw FormatError(split.string() + ":" + std::to_string(row.line) + ": unknown split '" + row.fields[1] + "'");
        }
    }

    g.validate();
    return g;
}

void save_graph(const HeteroGraph& graph, const fs::path& dir) {
    graph.validate();
    fs::create_directories(dir);
    // Stale edge files from an earlier save would be picked up on load.
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string file = entry.path().filename().string();
        if (file.rfind("edges_", 0) == 0 || file.rfind("features_", 0) == 0) fs::remove(entry.path());
    }

    auto open = [&](const std::string& name) {
        std::ofstream out(dir / name);
        if (!out) throw FormatError("cannot write file: " + (dir / name).string());
        return out;
    };

    // target type first
    std::vector<const NodeType*> order;
    order.push_back(&graph.target());
    for (const auto& t : graph.node_types)
        if (t.name != graph.target_type) order.push_back(&t);

    {
        auto meta = open("meta.tsv");
        for (const NodeType* t : order) {
            const Index dim = t->kind == FeatureKind::Dense ? t->features.cols() : 0;
            meta << t->name << '\t' << t->count << '\t' << dim << '\n';
        }
    }
    for (const NodeType* t : order)
        if (t->kind == FeatureKind::Dense && t->features.cols() > 0)
            tsv::write_matrix(dir / ("features_" + t->name + ".tsv"), t->features);
    for (const auto& rel : graph.relations) {
        auto out = open("edges_" + rel.name + ".tsv");
        for (const auto& [s, d] : rel.edges) out << s << '\t' << d << '\n';
    }
    fs::remove(dir / "labels.tsv");
    fs::remove(dir / "split.tsv");
    if (graph.has_labels()) {
        auto out = open("labels.tsv");
        for (std::size_t i = 0; i < graph.labels.size(); ++i)
            if (graph.labels[i] >= 0) out << i << '\t' << graph.labels[i] << '\n';
    }
    if (!graph.train.empty() || !graph.test.empty()) {
        auto out = open("split.tsv");
        for (Index i : graph.train) out << i << "\ttrain\n";
        for (Index i : graph.test) out << i << "\ttest\n";
    }
}

std::size_t RelationNeighborhood::total_size() const {
    std::size_t total = 0;
    for (const auto& r : relations)
        for (const auto& list : r.lists) total += list.size();
    return total;
}

RelationNeighborhood build_neighborhoods(const HeteroGraph& graph) {
    RelationNeighborhood out;
    const Index n = graph.num_targets();
    for (const auto& rel : graph.relations) {
        const bool from_target = rel.source_type == graph.target_type;
        const bool to_target = rel.target_type == graph.target_type;
        if (!from_target && !to_target) continue;

        RelationNeighbors nb;
        nb.relation = rel.name;
        nb.neighbor_type = from_target ? rel.target_type : rel.source_type;
        nb.lists.resize(static_cast<std::size_t>(n));
        for (const auto& [s, d] : rel.edges) {
            if (from_target)
                nb.lists[static_cast<std::size_t>(s)].push_back(d);
            else
                nb.lists[static_cast<std::size_t>(d)].push_back(s);
        }
        std::vector<Eigen::Triplet<double>> triplets;
        for (Index i = 0; i < n; ++i) {
            auto& list = nb.lists[static_cast<std::size_t>(i)];
            std::sort(list.begin(), list.end());
            list.erase(std::unique(list.begin(), list.end()), list.end());
            for (Index j : list) triplets.emplace_back(i, j, 1.0);
        }
        nb.adjacency.resize(n, graph.type(nb.neighbor_type).count);
        nb.adjacency.setFromTriplets(triplets.begin(), triplets.end());
        out.relations.push_back(std::move(nb));
    }
    return out;
}

}  // namespace school
