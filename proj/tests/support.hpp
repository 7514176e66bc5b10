#pragma once

#include "zegnn/model.hpp"
#include "zegnn/spatial_graph.hpp"
#include "zegnn/tabular_io.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

namespace zegnn::test {

inline Matrix random_matrix(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) m(r, c) = nd(rng);
    }
    return m;
}

inline Matrix random_coords(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix m(n, 2);
    for (int i = 0; i < n; ++i) {
        m(i, 0) = u(rng);
        m(i, 1) = u(rng);
    }
    return m;
}

// A small standardized problem with its own graph.
struct Instance {
    SpatialGraph graph;
    ModelInputs in;
};

inline Instance make_instance(int n, int pe, int ps, int k, std::uint64_t seed) {
    Instance inst;
    inst.graph = build_knn_graph(random_coords(n, seed), k);
    inst.in.x_burden = random_matrix(n, pe, seed + 1);
    inst.in.x_capacity = random_matrix(n, ps, seed + 2);
    inst.in.coords = random_matrix(n, 2, seed + 3);
    inst.in.graph = &inst.graph;
    return inst;
}

// ForwardOutputs identities, 1e-9.
inline void check_forward_invariants(const ForwardOutputs& out) {
    const double tol = 1e-9;
    const auto n = out.F.size();
    const auto K = out.P.cols();
    REQUIRE(out.P.rows() == n);
    REQUIRE(out.T.size() == K);
    for (Eigen::Index k = 0; k < K; ++k) CHECK(out.T(k) > 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        CHECK(std::abs(out.P.row(i).sum() - 1.0) <= tol);
        CHECK(out.P.row(i).minCoeff() >= 0.0);
        CHECK(out.H_norm(i) >= -tol);
        CHECK(out.H_norm(i) <= 1.0 + tol);
        double f = 0.0, e = 0.0, s = 0.0, t = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            CHECK(out.F_reg(i, k) == out.E_reg(i, k) - out.T(k) * out.S_reg(i, k));
            f += out.P(i, k) * out.F_reg(i, k);
            e += out.P(i, k) * out.E_reg(i, k);
            s += out.P(i, k) * out.S_reg(i, k);
            t += out.P(i, k) * out.T(k);
        }
        CHECK(std::abs(out.T_eff(i) - t) <= tol);
        CHECK(std::abs(out.F(i) - (f + out.T_eff(i) * out.H_norm(i))) <= tol);
        CHECK(std::abs(out.E_mix(i) - e) <= tol);
        CHECK(std::abs(out.S_mix(i) - s) <= tol);
        if (K == 1) {
            CHECK(out.H_norm(i) == 0.0);
            CHECK(out.P(i, 0) == 1.0);
            CHECK(out.F(i) == out.F_reg(i, 0));
        }
    }
}

inline ForwardOutputs checked_forward(const ZegnnParams& params, const ModelInputs& in) {
    ForwardOutputs out = forward(params, in);
    check_forward_invariants(out);
    return out;
}

}  // namespace zegnn::test
