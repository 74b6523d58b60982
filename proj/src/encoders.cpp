#include "school/encoders.hpp"

#include "school/tsv.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace school {

DenseLayer DenseLayer::glorot(Index in_dim, Index out_dim, Activation act, Rng& rng) {
    DenseLayer layer;
    layer.activation = act;
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    layer.weight.resize(in_dim, out_dim);
    // row-major fill order so the draw sequence does not depend on storage
    for (Index i = 0; i < in_dim; ++i)
        for (Index j = 0; j < out_dim; ++j) layer.weight(i, j) = rng.uniform(-bound, bound);
    layer.bias = Matrix::Zero(1, out_dim);
    return layer;
}

DenseLayer DenseLayer::zeros_like(const DenseLayer& other) {
    DenseLayer layer;
    layer.activation = other.activation;
    layer.weight = Matrix::Zero(other.weight.rows(), other.weight.cols());
    layer.bias = Matrix::Zero(other.bias.rows(), other.bias.cols());
    return layer;
}

Matrix dense_forward(const DenseLayer& layer, const Matrix& x, DenseCache* cache) {
    if (x.cols() != layer.in_dim())
        throw DimensionError("dense layer expects " + std::to_string(layer.in_dim()) + " input columns, got " +
                             std::to_string(x.cols()));
    Matrix out = x * layer.weight;
    out.rowwise() += layer.bias.row(0);
    if (layer.activation == Activation::Relu) out = out.cwiseMax(0.0);
    if (cache) {
        cache->input = x;
        cache->output = out;
    }
    return out;
}

Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& grad_out, DenseLayer& grad,
                      bool need_input_grad) {
    if (grad_out.rows() != cache.output.rows() || grad_out.cols() != cache.output.cols())
        throw DimensionError("dense_backward: upstream gradient shape does not match layer output");
    Matrix g = grad_out;
    if (layer.activation == Activation::Relu) g.array() *= (cache.output.array() > 0.0).cast<double>();
    grad.weight.noalias() += cache.input.transpose() * g;
    grad.bias += g.colwise().sum();
    if (!need_input_grad) return {};
    return g * layer.weight.transpose();
}

Matrix mlp_forward(const Mlp& layers, const Matrix& x, MlpCache* cache) {
    if (layers.empty()) throw ConfigError("mlp_forward: empty layer stack");
    if (cache) cache->assign(layers.size(), {});
    Matrix cur = x;
    for (std::size_t l = 0; l < layers.size(); ++l)
        cur = dense_forward(layers[l], cur, cache ? &(*cache)[l] : nullptr);
    return cur;
}

Matrix mlp_backward(const Mlp& layers, const MlpCache& cache, const Matrix& grad_out, Mlp& grads, bool need_input_grad) {
    if (cache.size() != layers.size()) throw StateError("mlp_backward: cache does not match layer stack");
    Matrix g = grad_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const bool want = need_input_grad || l > 0;
        g = dense_backward(layers[l], cache[l], g, grads[l], want);
    }
    return g;
}

OrthogonalResult orthogonal_layer(const Matrix& p) {
    const Index n = p.rows();
    const Index c = p.cols();
    if (c == 0 || n < c)
        throw RankError("orthogonal_layer: P is " + std::to_string(n) + "x" + std::to_string(c) +
                            ", needs at least as many rows as columns",
                        std::numeric_limits<double>::infinity());
    if (!p.allFinite()) throw NumericalError("orthogonal_layer: non-finite P");

    Eigen::HouseholderQR<Matrix> qr(p);
    Matrix r = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
    for (Index i = 0; i < c; ++i)
        if (r(i, i) < 0.0) r.row(i) *= -1.0;

    Eigen::JacobiSVD<Matrix> svd(r);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(c - 1);
    const double condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(smax > 0.0) || smin <= 1e-8 * smax)
        throw RankError("orthogonal_layer: P is rank deficient (condition estimate " + std::to_string(condition) + ")",
                        condition);

    OrthogonalResult out;
    out.y = apply_orthogonal(p, r);
    out.r = std::move(r);
    out.condition = condition;
    return out;
}

Matrix apply_orthogonal(const Matrix& p, const Matrix& r) {
    if (r.rows() != p.cols() || r.cols() != p.cols()) throw DimensionError("apply_orthogonal: R does not match P");
    const double scale = std::sqrt(static_cast<double>(p.rows()));
    Matrix y = r.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(p);
    y *= scale;
    return y;
}

Matrix orthogonal_backward(const Matrix& r, const Matrix& grad_y) {
    const double scale = std::sqrt(static_cast<double>(grad_y.rows()));
    Matrix g = scale * grad_y;
    // dP = sqrt(n) dY R^{-T}
    return r.transpose().triangularView<Eigen::Lower>().solve<Eigen::OnTheRight>(g);
}

std::vector<int> row_argmax(const Matrix& y) {
    std::vector<int> hard(static_cast<std::size_t>(y.rows()), 0);
    for (Index i = 0; i < y.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < y.cols(); ++j)
            if (y(i, j) > y(i, best)) best = j;
        hard[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return hard;
}

ClusterAssignment cluster_assign(const DenseLayer& head, const Matrix& h, DenseCache* cache) {
    ClusterAssignment out;
    out.p = dense_forward(head, h, cache);
    OrthogonalResult ortho = orthogonal_layer(out.p);
    out.y = std::move(ortho.y);
    out.r = std::move(ortho.r);
    out.hard = row_argmax(out.y);
    return out;
}

int revive_dead_units(DenseLayer& head, const Matrix& input, Rng& rng) {
    const Matrix pre = (input * head.weight).rowwise() + head.bias.row(0);
    const double bound = std::sqrt(6.0 / static_cast<double>(head.in_dim() + head.out_dim()));
    int revived = 0;
    for (Index j = 0; j < head.out_dim(); ++j) {
        if (pre.rows() == 0 || pre.col(j).maxCoeff() > 0.0) continue;
        for (Index i = 0; i < head.in_dim(); ++i) head.weight(i, j) = rng.uniform(-bound, bound);
        head.bias(0, j) = 0.0;
        const Vector col = input * head.weight.col(j);
        if (col.maxCoeff() <= 0.0) head.weight.col(j) *= -1.0;
        ++revived;
    }
    return revived;
}

std::vector<EncoderStack::ParamRef> EncoderStack::parameters() {
    std::vector<ParamRef> out;
    auto add = [&](const std::string& prefix, DenseLayer& layer) {
        out.push_back({prefix + ".weight", &layer.weight});
        out.push_back({prefix + ".bias", &layer.bias});
    };
    for (std::size_t l = 0; l < semantic.size(); ++l) add("semantic." + std::to_string(l), semantic[l]);
    add("cluster_head", cluster_head);
    add("projection_head", projection_head);
    for (std::size_t t = 0; t < type_projections.size(); ++t) add("type." + type_names[t], type_projections[t]);
    for (std::size_t r = 0; r < combiners.size(); ++r) add("relation." + relation_names[r], combiners[r]);
    return out;
}

std::vector<EncoderStack::ConstParamRef> EncoderStack::parameters() const {
    std::vector<ConstParamRef> out;
    for (auto& p : const_cast<EncoderStack*>(this)->parameters()) out.push_back({p.name, p.value});
    return out;
}

Index EncoderStack::parameter_count() const {
    Index total = 0;
    for (const auto& p : parameters()) total += p.value->size();
    return total;
}

const DenseLayer& EncoderStack::type_projection(const std::string& type) const {
    for (std::size_t t = 0; t < type_names.size(); ++t)
        if (type_names[t] == type) return type_projections[t];
    throw ConfigError("no input projection configured for node type '" + type + "'");
}

EncoderStack EncoderStack::create(const StackDims& dims, const HeteroGraph& graph, const RelationNeighborhood& nb,
                                  Rng& rng) {
    if (dims.d1 < 1 || dims.d2 < 1 || dims.clusters < 1) throw ConfigError("encoder dimensions must be positive");
    EncoderStack s;
    Index in = graph.target().feature_dim();
    for (Index width : dims.hidden) {
        if (width < 1) throw ConfigError("hidden widths must be positive");
        s.semantic.push_back(DenseLayer::glorot(in, width, Activation::Relu, rng));
        in = width;
    }
    s.semantic.push_back(DenseLayer::glorot(in, dims.d1, Activation::Relu, rng));
    s.cluster_head = DenseLayer::glorot(dims.d1, dims.clusters, Activation::Relu, rng);
    s.projection_head = DenseLayer::glorot(dims.d1, dims.d2, Activation::Relu, rng);

    for (const auto& t : graph.node_types) {
        const bool used = t.name == graph.target_type ||
                          std::any_of(nb.relations.begin(), nb.relations.end(),
                                      [&](const RelationNeighbors& r) { return r.neighbor_type == t.name; });
        if (!used) continue;
        s.type_names.push_back(t.name);
        s.type_projections.push_back(DenseLayer::glorot(t.feature_dim(), dims.d1, Activation::None, rng));
    }
    for (const auto& r : nb.relations) {
        s.relation_names.push_back(r.relation);
        s.combiners.push_back(DenseLayer::glorot(2 * dims.d1, dims.d1, Activation::Relu, rng));
    }
    return s;
}

EncoderStack EncoderStack::zeros_like(const EncoderStack& other) {
    EncoderStack s;
    for (const auto& l : other.semantic) s.semantic.push_back(DenseLayer::zeros_like(l));
    s.cluster_head = DenseLayer::zeros_like(other.cluster_head);
    s.projection_head = DenseLayer::zeros_like(other.projection_head);
    s.type_names = other.type_names;
    for (const auto& l : other.type_projections) s.type_projections.push_back(DenseLayer::zeros_like(l));
    s.relation_names = other.relation_names;
    for (const auto& l : other.combiners) s.combiners.push_back(DenseLayer::zeros_like(l));
    return s;
}

namespace {

std::size_t projection_slot(const EncoderStack& stack, const std::string& type) {
    for (std::size_t t = 0; t < stack.type_names.size(); ++t)
        if (stack.type_names[t] == type) return t;
    throw ConfigError("no input projection configured for node type '" + type + "'");
}

Matrix project_type(const DenseLayer& layer, const NodeType& type) {
    if (type.kind == FeatureKind::OneHot) {
        if (layer.in_dim() != type.count)
            throw ConfigError("one-hot projection for '" + type.name + "' has wrong input size");
        Matrix out = layer.weight;
        out.rowwise() += layer.bias.row(0);
        return out;
    }
    return dense_forward(layer, type.features);
}

}  // namespace

Matrix hetero_encode(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                     HeteroCache* cache) {
    if (nb.relations.empty())
        throw ConfigError("heterogeneous encoder needs at least one relation incident to the target type");
    if (stack.combiners.size() != nb.relations.size())
        throw ConfigError("encoder has " + std::to_string(stack.combiners.size()) + " relation combiners but the graph has " +
                          std::to_string(nb.relations.size()) + " target relations");

    std::vector<Matrix> outputs(stack.type_projections.size());
    auto type_output = [&](const std::string& name) -> const Matrix& {
        const std::size_t slot = projection_slot(stack, name);
        if (outputs[slot].size() == 0) outputs[slot] = project_type(stack.type_projections[slot], graph.type(name));
        return outputs[slot];
    };

    const Matrix& self = type_output(graph.target_type);
    const Index n = self.rows();
    const Index d1 = self.cols();
    Matrix acc = Matrix::Zero(n, stack.combiners.empty() ? d1 : stack.combiners.front().out_dim());
    if (cache) cache->combiner.assign(nb.relations.size(), {});

    for (std::size_t r = 0; r < nb.relations.size(); ++r) {
        const auto& rel = nb.relations[r];
        if (stack.relation_names[r] != rel.relation)
            throw ConfigError("relation order mismatch: encoder has '" + stack.relation_names[r] + "', graph has '" +
                              rel.relation + "'");
        const Matrix& neighbor = type_output(rel.neighbor_type);
        Matrix concat(n, 2 * d1);
        concat.leftCols(d1) = self;
        concat.rightCols(d1) = rel.adjacency * neighbor;
        acc += dense_forward(stack.combiners[r], concat, cache ? &cache->combiner[r] : nullptr);
    }
    acc /= static_cast<double>(nb.relations.size());
    if (cache) {
        cache->type_outputs = std::move(outputs);
        cache->filled = true;
    }
    return acc;
}

void hetero_backward(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                     const HeteroCache& cache, const Matrix& grad_zt, EncoderStack& grads) {
    if (!cache.filled || cache.combiner.size() != nb.relations.size())
        throw StateError("hetero_backward: no matching forward pass");
    const Index d1 = stack.combiners.front().out_dim();
    std::vector<Matrix> type_grads(stack.type_projections.size());
    auto slot_grad = [&](std::size_t slot, Index rows) -> Matrix& {
        if (type_grads[slot].size() == 0) type_grads[slot] = Matrix::Zero(rows, d1);
        return type_grads[slot];
    };

    const Matrix g_rel = grad_zt / static_cast<double>(nb.relations.size());
    const std::size_t target_slot = projection_slot(stack, graph.target_type);
    for (std::size_t r = 0; r < nb.relations.size(); ++r) {
        const auto& rel = nb.relations[r];
        const Matrix g_concat = dense_backward(stack.combiners[r], cache.combiner[r], g_rel, grads.combiners[r]);
        slot_grad(target_slot, g_concat.rows()) += g_concat.leftCols(d1);
        const std::size_t ns = projection_slot(stack, rel.neighbor_type);
        slot_grad(ns, rel.adjacency.cols()) += rel.adjacency.transpose() * g_concat.rightCols(d1);
    }

    for (std::size_t t = 0; t < type_grads.size(); ++t) {
        if (type_grads[t].size() == 0) continue;
        const NodeType& type = graph.type(stack.type_names[t]);
        DenseLayer& g = grads.type_projections[t];
        if (type.kind == FeatureKind::OneHot)
            g.weight += type_grads[t];
        else
            g.weight.noalias() += type.features.transpose() * type_grads[t];
        g.bias += type_grads[t].colwise().sum();
    }
}

Matrix project(const DenseLayer& q, const Matrix& m, DenseCache* cache) { return dense_forward(q, m, cache); }

EncoderTape begin_forward(const EncoderStack& stack, const HeteroGraph& graph, const Matrix* frozen_r) {
    EncoderTape tape;
    tape.version = stack.version;
    tape.h = mlp_forward(stack.semantic, graph.target().features, &tape.semantic);
    if (frozen_r) {
        tape.assignment.p = dense_forward(stack.cluster_head, tape.h, &tape.cluster);
        tape.assignment.y = apply_orthogonal(tape.assignment.p, *frozen_r);
        tape.assignment.r = *frozen_r;
        tape.assignment.hard = row_argmax(tape.assignment.y);
    } else {
        tape.assignment = cluster_assign(stack.cluster_head, tape.h, &tape.cluster);
    }
    tape.stage = 1;
    return tape;
}

void finish_forward(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                    const AffinityMatrix& s, EncoderTape& tape) {
    if (tape.stage != 1 || tape.version != stack.version)
        throw StateError("finish_forward: tape was not started on the current parameters");
    tape.z = propagate(s, tape.h);
    tape.z_tilde = hetero_encode(stack, graph, nb, &tape.hetero);
    tape.q = project(stack.projection_head, tape.z, &tape.proj_z);
    tape.q_tilde = project(stack.projection_head, tape.z_tilde, &tape.proj_zt);
    tape.stage = 2;
}

EncoderStack backward(const EncoderStack& stack, const HeteroGraph& graph, const RelationNeighborhood& nb,
                      const AffinityMatrix& s, const EncoderTape& tape, const UpstreamGradients& up) {
    if (tape.stage != 2) throw StateError("backward: no completed forward pass");
    if (tape.version != stack.version) throw StateError("backward: parameters changed since the forward pass");

    EncoderStack grads = EncoderStack::zeros_like(stack);
    Matrix grad_h = Matrix::Zero(tape.h.rows(), tape.h.cols());

    if (up.y.size() > 0) {
        const Matrix grad_p = orthogonal_backward(tape.assignment.r, up.y);
        grad_h += dense_backward(stack.cluster_head, tape.cluster, grad_p, grads.cluster_head);
    }
    if (up.q.size() > 0) {
        const Matrix grad_z = dense_backward(stack.projection_head, tape.proj_z, up.q, grads.projection_head);
        grad_h.noalias() += s.matrix.transpose() * grad_z;
    }
    if (up.q_tilde.size() > 0) {
        const Matrix grad_zt = dense_backward(stack.projection_head, tape.proj_zt, up.q_tilde, grads.projection_head);
        hetero_backward(stack, graph, nb, tape.hetero, grad_zt, grads);
    }
    mlp_backward(stack.semantic, tape.semantic, grad_h, grads.semantic, false);
    return grads;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderStack& stack,
                     const std::map<std::string, std::string>& meta) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write checkpoint: " + path.string());
    out << "school-checkpoint\t1\n";
    for (const auto& [k, v] : meta) out << "meta\t" << k << '\t' << v << '\n';
    for (const auto& p : stack.parameters()) {
        out << "tensor\t" << p.name << '\t' << p.value->rows() << '\t' << p.value->cols() << '\n';
        tsv::write_matrix(out, *p.value);
    }
    if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const auto rows = tsv::read(path);
    if (rows.empty() || rows[0].fields.size() != 2 || rows[0].fields[0] != "school-checkpoint")
        throw FormatError(path.string() + ": not a checkpoint file");
    if (rows[0].fields[1] != "1") throw FormatError(path.string() + ": unsupported checkpoint version " + rows[0].fields[1]);
    Checkpoint ckpt;
    std::size_t i = 1;
    while (i < rows.size()) {
        const auto& f = rows[i].fields;
        if (f[0] == "meta" && f.size() == 3) {
            ckpt.meta[f[1]] = f[2];
            ++i;
        } else if (f[0] == "tensor" && f.size() == 4) {
            const Index r = tsv::parse_int(f[2], path, rows[i].line);
            const Index c = tsv::parse_int(f[3], path, rows[i].line);
            if (i + 1 + static_cast<std::size_t>(r) > rows.size())
                throw FormatError(path.string() + ": truncated tensor '" + f[1] + "'");
            Matrix m(r, c);
            for (Index a = 0; a < r; ++a) {
                const auto& row = rows[i + 1 + static_cast<std::size_t>(a)];
                if (static_cast<Index>(row.fields.size()) != c)
                    throw FormatError(path.string() + ":" + std::to_string(row.line) + ": wrong column count");
                for (Index b = 0; b < c; ++b) m(a, b) = tsv::parse_double(row.fields[static_cast<std::size_t>(b)], path, row.line);
            }
            ckpt.tensors[f[1]] = std::move(m);
            i += 1 + static_cast<std::size_t>(r);
        } else {
            throw FormatError(path.string() + ":" + std::to_string(rows[i].line) + ": unexpected record '" + f[0] + "'");
        }
    }
    return ckpt;
}

void load_parameters(const Checkpoint& ckpt, EncoderStack& stack) {
    auto params = stack.parameters();
    if (params.size() != ckpt.tensors.size())
        throw ConfigError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (auto& p : params) {
        const auto it = ckpt.tensors.find(p.name);
        if (it == ckpt.tensors.end()) throw ConfigError("checkpoint lacks tensor '" + p.name + "'");
        if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols())
            throw ConfigError("checkpoint tensor '" + p.name + "' is " + std::to_string(it->second.rows()) + "x" +
                              std::to_string(it->second.cols()) + ", model expects " + std::to_string(p.value->rows()) +
                              "x" + std::to_string(p.value->cols()));
        *p.value = it->second;
    }
    ++stack.version;
}

}  // namespace school
