#include "zegnn/spatial_graph.hpp"

#include "zegnn/error.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace zegnn {

SpatialGraph::SpatialGraph(int k, const std::vector<std::vector<int>>& adjacency, std::vector<int> origin)
    : k_(k), origin_(std::move(origin)) {
    const int n = static_cast<int>(adjacency.size());
    row_ptr_.assign(1, 0);
    row_ptr_.reserve(n + 1);
    for (int i = 0; i < n; ++i) {
        std::vector<int> nb = adjacency[i];
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        for (int j : nb) {
            if (j == i || j < 0 || j >= n) throw ParameterError("SpatialGraph: invalid neighbour index");
        }
        col_idx_.insert(col_idx_.end(), nb.begin(), nb.end());
        row_ptr_.push_back(static_cast<int>(col_idx_.size()));
    }
    if (origin_.empty()) {
        origin_.resize(n);
        std::iota(origin_.begin(), origin_.end(), 0);
    } else if (static_cast<int>(origin_.size()) != n) {
        throw ParameterError("SpatialGraph: origin size mismatch");
    }
    for (int i = 0; i < n; ++i) {
        for (int j : neighbors(i)) {
            if (!has_edge(j, i)) throw ParameterError("SpatialGraph: adjacency is not symmetric");
        }
    }
}

bool SpatialGraph::has_edge(int i, int j) const {
    const auto nb = neighbors(i);
    return std::binary_search(nb.begin(), nb.end(), j);
}

Matrix SpatialGraph::adjacency_dense() const {
    Matrix a = Matrix::Zero(n(), n());
    for (int i = 0; i < n(); ++i) {
        for (int j : neighbors(i)) a(i, j) = 1.0;
    }
    return a;
}

Matrix SpatialGraph::diffusion_dense() const {
    Matrix d = Matrix::Zero(n(), n());
    for (int i = 0; i < n(); ++i) {
        if (degree(i) == 0) {
            d(i, i) = 1.0;
            continue;
        }
        const double w = 1.0 / degree(i);
        for (int j : neighbors(i)) d(i, j) = w;
    }
    return d;
}

std::vector<std::vector<int>> knn_indices(const Matrix& coords, int k) {
    const int n = static_cast<int>(coords.rows());
    if (coords.cols() != 2) throw ParameterError("knn: coords must be N x 2");
    if (k < 0 || k >= n) throw ParameterError("knn: need 0 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
    if (!coords.allFinite()) throw ParameterError("knn: non-finite coordinates");
    std::vector<std::vector<int>> out(n);
    std::vector<std::pair<double, int>> cand(n - 1);
    for (int i = 0; i < n; ++i) {
        int c = 0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = coords(i, 0) - coords(j, 0);
            const double dy = coords(i, 1) - coords(j, 1);
            cand[c++] = {dx * dx + dy * dy, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        out[i].reserve(k);
        for (int m = 0; m < k; ++m) out[i].push_back(cand[m].second);
    }
    return out;
}

SpatialGraph build_knn_graph(const Matrix& coords, int k) {
    if (k < 1) throw ParameterError("build_knn_graph: k must be positive");
    const auto knn = knn_indices(coords, k);
    std::vector<std::vector<int>> adj(knn.size());
    for (size_t i = 0; i < knn.size(); ++i) {
        for (int j : knn[i]) {
            adj[i].push_back(j);
            adj[j].push_back(static_cast<int>(i));
        }
    }
    return SpatialGraph(k, adj);
}

SpatialGraph edgeless_graph(int n) {
    return SpatialGraph(0, std::vector<std::vector<int>>(n));
}

Matrix diffuse(const SpatialGraph& graph, const Matrix& values) {
    if (values.rows() != graph.n()) throw ParameterError("diffuse: row count does not match graph");
    Matrix out(values.rows(), values.cols());
    for (int i = 0; i < graph.n(); ++i) {
        const auto nb = graph.neighbors(i);
        if (nb.empty()) {
            out.row(i) = values.row(i);
            continue;
        }
        auto row = out.row(i);
        row.setZero();
        for (int j : nb) row += values.row(j);
        row /= static_cast<double>(nb.size());
    }
    return out;
}

Matrix diffuse_transpose(const SpatialGraph& graph, const Matrix& values) {
    if (values.rows() != graph.n()) throw ParameterError("diffuse_transpose: row count does not match graph");
    Matrix out = Matrix::Zero(values.rows(), values.cols());
    for (int i = 0; i < graph.n(); ++i) {
        const auto nb = graph.neighbors(i);
        if (nb.empty()) {
            out.row(i) += values.row(i);
            continue;
        }
        const double w = 1.0 / static_cast<double>(nb.size());
        for (int j : nb) out.row(j) += w * values.row(i);
    }
    return out;
}

double morans_i(const Vector& values, const SpatialGraph& graph) {
    const int n = graph.n();
    if (values.size() != n) throw ParameterError("morans_i: length does not match graph");
    const double mean = values.mean();
    const Vector d = values.array() - mean;
    const double denom = d.squaredNorm();
    if (!(denom > 0.0)) throw DegenerateError("morans_i: constant values");
    double num = 0.0;
    double w_total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j : graph.neighbors(i)) {
            num += d(i) * d(j);
            w_total += 1.0;
        }
    }
    if (w_total == 0.0) throw DegenerateError("morans_i: graph has no edges");
    return (static_cast<double>(n) / w_total) * num / denom;
}

namespace {

int grid_bin(double v, double lo, double hi, int grid) {
    const double range = hi - lo;
    if (!(range > 0.0)) return 0;
    int bin = 0;
    for (int m = 1; m < grid; ++m) {
        if (v >= lo + range * m / grid) bin = m;
    }
    return bin;
}

}  // namespace

BlockPartition block_partition(const Matrix& coords, int grid, int folds, std::uint64_t seed) {
    if (grid < 1 || folds < 1) throw ParameterError("block_partition: grid and folds must be positive");
    if (coords.cols() != 2 || coords.rows() == 0) throw ParameterError("block_partition: coords must be N x 2");
    const int n = static_cast<int>(coords.rows());
    const double x_lo = coords.col(0).minCoeff(), x_hi = coords.col(0).maxCoeff();
    const double y_lo = coords.col(1).minCoeff(), y_hi = coords.col(1).maxCoeff();

    BlockPartition part;
    part.folds = folds;
    part.block_id.resize(n);
    for (int i = 0; i < n; ++i) {
        const int bx = grid_bin(coords(i, 0), x_lo, x_hi, grid);
        const int by = grid_bin(coords(i, 1), y_lo, y_hi, grid);
        part.block_id[i] = by * grid + bx;
    }

    const int blocks = grid * grid;
    constexpr int kMaxRetries = 10;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(attempt);
        std::vector<int> order(blocks);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(s);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> block_fold(blocks);
        for (int p = 0; p < blocks; ++p) block_fold[order[p]] = p % folds;

        std::vector<int> fold_size(folds, 0);
        part.fold_id.resize(n);
        for (int i = 0; i < n; ++i) {
            part.fold_id[i] = block_fold[part.block_id[i]];
            ++fold_size[part.fold_id[i]];
        }
        if (std::all_of(fold_size.begin(), fold_size.end(), [](int c) { return c > 0; })) {
            part.seed_used = s;
            return part;
        }
    }
    throw DegenerateError("block_partition: empty fold after " + std::to_string(kMaxRetries) + " retries");
}

SpatialGraph training_subgraph(const SpatialGraph& graph, std::span<const int> test_ids) {
    const int n = graph.n();
    std::vector<char> is_test(n, 0);
    for (int t : test_ids) {
        if (t < 0 || t >= n) throw ParameterError("training_subgraph: test id out of range");
        is_test[t] = 1;
    }
    std::vector<int> new_id(n, -1);
    std::vector<int> origin;
    for (int i = 0; i < n; ++i) {
        if (!is_test[i]) {
            new_id[i] = static_cast<int>(origin.size());
            origin.push_back(graph.origin()[i]);
        }
    }
    if (origin.empty()) throw ParameterError("training_subgraph: every node is a test node");
    std::vector<std::vector<int>> adj(origin.size());
    for (int i = 0; i < n; ++i) {
        if (is_test[i]) continue;
        for (int j : graph.neighbors(i)) {
            if (!is_test[j]) adj[new_id[i]].push_back(new_id[j]);
        }
    }
    return SpatialGraph(graph.k(), adj, std::move(origin));
}

std::string format_edge_list(const SpatialGraph& graph) {
    std::string out = "i,j\n";
    for (int i = 0; i < graph.n(); ++i) {
        for (int j : graph.neighbors(i)) {
            if (i < j) out += std::to_string(i) + "," + std::to_string(j) + "\n";
        }
    }
    return out;
}

}  // namespace zegnn
