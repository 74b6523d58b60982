#include "school/synthetic.hpp"

#include "school/tsv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace school {

SyntheticSpec SyntheticSpec::parse(const std::string& text) {
    SyntheticSpec spec;
    if (text.empty()) return spec;
    for (const auto& item : tsv::split(text, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("synthetic spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        try {
            if (key == "n") spec.nodes = tsv::parse_int(value, "spec", 0);
            else if (key == "c") spec.classes = tsv::parse_int(value, "spec", 0);
            else if (key == "dim") spec.feature_dim = tsv::parse_int(value, "spec", 0);
            else if (key == "authors") spec.authors_per_class = tsv::parse_int(value, "spec", 0);
            else if (key == "links") spec.author_links = tsv::parse_int(value, "spec", 0);
            else if (key == "sep") spec.separation = tsv::parse_double(value, "spec", 0);
            else if (key == "noise") spec.noise = tsv::parse_double(value, "spec", 0);
            else if (key == "intra") spec.intra_prob = tsv::parse_double(value, "spec", 0);
            else if (key == "train") spec.train_fraction = tsv::parse_double(value, "spec", 0);
            else if (key == "seed") spec.seed = static_cast<std::uint64_t>(tsv::parse_int(value, "spec", 0));
            else throw ConfigError("synthetic spec: unknown key '" + key + "'");
        } catch (const FormatError& e) {
            throw ConfigError("synthetic spec: " + std::string(e.what()));
        }
    }
    return spec;
}

HeteroGraph make_planted_graph(const SyntheticSpec& spec) {
    if (spec.classes < 1 || spec.nodes < spec.classes) throw ConfigError("synthetic graph needs n >= c >= 1");
    if (spec.feature_dim < 1 || spec.authors_per_class < 1 || spec.author_links < 0)
        throw ConfigError("synthetic graph: dimensions must be positive");
    if (spec.intra_prob < 0 || spec.intra_prob > 1 || spec.train_fraction < 0 || spec.train_fraction > 1)
        throw ConfigError("synthetic graph: probabilities must lie in [0, 1]");

    Rng rng(spec.seed);
    const Index n = spec.nodes;
    const Index c = spec.classes;

    std::vector<int> block(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) block[static_cast<std::size_t>(i)] = static_cast<int>(i * c / n);

    Matrix means(c, spec.feature_dim);
    for (Index b = 0; b < c; ++b)
        for (Index d = 0; d < spec.feature_dim; ++d) means(b, d) = spec.separation * rng.normal();

    HeteroGraph g;
    g.target_type = "paper";
    NodeType paper{"paper", n, FeatureKind::Dense, Matrix(n, spec.feature_dim)};
    for (Index i = 0; i < n; ++i)
        for (Index d = 0; d < spec.feature_dim; ++d)
            paper.features(i, d) = means(block[static_cast<std::size_t>(i)], d) + spec.noise * rng.normal();
    const Index authors = spec.authors_per_class * c;
    g.node_types.push_back(std::move(paper));
    g.node_types.push_back({"author", authors, FeatureKind::OneHot, Matrix()});
    g.node_types.push_back({"subject", c, FeatureKind::OneHot, Matrix()});

    auto pick_block = [&](int own) -> Index {
        if (c == 1 || rng.uniform() < spec.intra_prob) return own;
        Index other = static_cast<Index>(rng.below(static_cast<std::uint64_t>(c - 1)));
        return other >= own ? other + 1 : other;
    };

    Relation pa{"paper-author", "paper", "author", {}};
    Relation ps{"paper-subject", "paper", "subject", {}};
    for (Index i = 0; i < n; ++i) {
        const int own = block[static_cast<std::size_t>(i)];
        for (Index l = 0; l < spec.author_links; ++l) {
            const Index b = pick_block(own);
            const Index a = b * spec.authors_per_class +
                            static_cast<Index>(rng.below(static_cast<std::uint64_t>(spec.authors_per_class)));
            pa.edges.emplace_back(i, a);
        }
        ps.edges.emplace_back(i, pick_block(own));
    }
    std::sort(pa.edges.begin(), pa.edges.end());
    pa.edges.erase(std::unique(pa.edges.begin(), pa.edges.end()), pa.edges.end());
    g.relations.push_back(std::move(pa));
    g.relations.push_back(std::move(ps));

    g.labels = block;
    g.num_classes = static_cast<int>(c);

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    g.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    g.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(g.train.begin(), g.train.end());
    std::sort(g.test.begin(), g.test.end());
    g.validate();
    return g;
}

}  // namespace school
