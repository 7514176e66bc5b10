#pragma once

#include "zegnn/tabular_io.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace zegnn {

// Symmetric binary kNN adjacency stored as CSR, plus the random-walk
// diffusion operator D^-1 A. Nodes without neighbours diffuse to themselves.
class SpatialGraph {
public:
    SpatialGraph() = default;
    // `adjacency[i]` lists the neighbours of i; must already be symmetric.
    SpatialGraph(int k, const std::vector<std::vector<int>>& adjacency, std::vector<int> origin = {});

    int n() const { return static_cast<int>(row_ptr_.size()) - 1; }
    int k() const { return k_; }
    int degree(int i) const { return row_ptr_[i + 1] - row_ptr_[i]; }
    std::span<const int> neighbors(int i) const {
        return {col_idx_.data() + row_ptr_[i], static_cast<size_t>(degree(i))};
    }
    bool has_edge(int i, int j) const;
    long long edge_count() const { return static_cast<long long>(col_idx_.size()) / 2; }

    // Id of each node in the graph it was derived from (identity for a fresh graph).
    const std::vector<int>& origin() const { return origin_; }

    // Dense copies, for tests and small-N oracles.
    Matrix adjacency_dense() const;
    Matrix diffusion_dense() const;

private:
    int k_ = 0;
    std::vector<int> row_ptr_{0};
    std::vector<int> col_idx_;
    std::vector<int> origin_;
};

// The k Euclidean-nearest neighbours of every point, self excluded, ordered by
// (distance, index). Ties go to the smaller index.
std::vector<std::vector<int>> knn_indices(const Matrix& coords, int k);

// Edge (i,j) iff j in N_k(i) or i in N_k(j). Throws ParameterError if k >= N.
SpatialGraph build_knn_graph(const Matrix& coords, int k);

// Graph with no edges; diffusion is the identity.
SpatialGraph edgeless_graph(int n);

// Returns D^-1 A * values.
Matrix diffuse(const SpatialGraph& graph, const Matrix& values);
// Returns (D^-1 A)^T * values; the adjoint of diffuse.
Matrix diffuse_transpose(const SpatialGraph& graph, const Matrix& values);

// Global Moran's I with binary weights w_ij = A_ij.
double morans_i(const Vector& values, const SpatialGraph& graph);

struct BlockPartition {
    std::vector<int> block_id;  // 0 .. grid*grid-1, row-major over (y-bin, x-bin)
    std::vector<int> fold_id;   // 0 .. folds-1
    int folds = 0;
    // Seed actually used after empty-fold retries.
    std::uint64_t seed_used = 0;
};

// Equal-width grid x grid blocks over the bounding box; intervals are
// half-open except the last one per axis. Blocks are shuffled by seed and
// dealt round-robin into folds.
BlockPartition block_partition(const Matrix& coords, int grid, int folds, std::uint64_t seed);

// Induced graph on the nodes not in `test_ids`, with every edge touching a
// test node dropped. origin() maps back to ids of `graph`.
SpatialGraph training_subgraph(const SpatialGraph& graph, std::span<const int> test_ids);

// "i,j" rows with i < j.
std::string format_edge_list(const SpatialGraph& graph);

}  // namespace zegnn
