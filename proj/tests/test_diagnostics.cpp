#include "support.hpp"

#include "zegnn/diagnostics.hpp"
#include "zegnn/error.hpp"
#include "zegnn/synthetic_data.hpp"

#include <algorithm>
#include <random>

using namespace zegnn;
using namespace zegnn::test;

namespace {

ZegnnParams small_params(int pe, int ps, int K, std::uint64_t seed) {
    ModelConfig c;
    c.p_burden = pe;
    c.p_capacity = ps;
    c.regimes = K;
    c.hidden = 12;
    c.gate_hidden = 10;
    return init_params(c, seed);
}

SensitivityAtlas atlas_from(const Matrix& gF, const Matrix& gE, const Matrix& gS, const Vector& H) {
    SensitivityAtlas a;
    a.gF = gF;
    a.gE = gE;
    a.gS = gS;
    a.H_norm = H;
    return a;
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("K = 1: gF = gE - T gS at every node") {
    const Instance inst = make_instance(40, 2, 2, 5, 3);
    ZegnnParams p = small_params(2, 2, 1, 4);
    p.tau_raw(0) = 0.4;
    const SensitivityAtlas a = sensitivity_fields(p, inst.in);
    const double T = positive_transform(p.tau_raw)(0);
    CHECK((a.gF - (a.gE - T * a.gS)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(a.H_norm.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sensitivities agree with small forward differences") {
    const Instance inst = make_instance(50, 3, 2, 6, 11);
    const ZegnnParams p = small_params(3, 2, 3, 12);
    const SensitivityAtlas a = sensitivity_fields(p, inst.in);
    const FiniteDifferenceResult fd = finite_difference_check(p, inst.in, a, 1e-6);
    REQUIRE(fd.corr.size() == 5);
    for (int j = 0; j < 5; ++j) {
        CHECK(fd.max_abs_error[j] <= 1e-4);
        REQUIRE(fd.corr[j].has_value());
        CHECK(*fd.corr[j] > 0.999);
    }
    CHECK_THROWS_AS(finite_difference_check(p, inst.in, a, 0.0), ParameterError);
}

TEST_CASE("linear surrogate: forward differences are exact at any step") {
    const Instance inst = make_instance(30, 2, 1, 4, 21);
    ZegnnParams p = small_params(2, 1, 1, 22);
    // rectifiers never switch off, so E and S are affine in the inputs
    p.burden_encoder.b.setConstant(100.0);
    p.capacity_encoder.b.setConstant(100.0);
    const SensitivityAtlas a = sensitivity_fields(p, inst.in);
    const FiniteDifferenceResult fd = finite_difference_check(p, inst.in, a, 0.5);
    for (int j = 0; j < 3; ++j) {
        CHECK(fd.max_abs_error[j] <= 1e-9);
        CHECK((a.gF.col(j).array() - a.gF(0, j)).abs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("pearson: sign, affine invariance, degenerate input") {
    const Vector a = random_matrix(20, 1, 1).col(0);
    const Vector b = random_matrix(20, 1, 2).col(0);
    CHECK(*pearson(a, a) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(*pearson(a, (-3.0 * a.array() + 1.0).matrix()) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(*pearson(a, b) == doctest::Approx(*pearson((2.0 * a.array() + 5.0).matrix(), b)).epsilon(1e-12));
    CHECK_FALSE(pearson(a, Vector::Constant(20, 2.0)).has_value());
    CHECK_THROWS_AS(pearson(a, Vector::Zero(3)), ParameterError);
}

TEST_CASE("importance summary closed forms and D_E edge cases") {
    Matrix gF(4, 3), gE(4, 3), gS(4, 3);
    gF << 1, 0, -2, -1, 0, 2, 3, 0, 2, -3, 0, -2;
    gE << 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1;
    gS << 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1;
    const auto rows = importance_summary(atlas_from(gF, gE, gS, Vector::Zero(4)));
    CHECK(rows[0].I_F == doctest::Approx(2.0));
    CHECK(*rows[0].D_E == 1.0);
    CHECK_FALSE(rows[1].D_E.has_value());
    CHECK(*rows[2].D_E == doctest::Approx(0.5));
    CHECK(rows[0].median_abs_gF == doctest::Approx(2.0));
    CHECK(rows[0].name == "x1");
}

TEST_CASE("core importance: zero weight, uniform weight, full-entropy nodes") {
    Matrix g(3, 1);
    g << 1, -2, 6;
    const SensitivityAtlas a = atlas_from(g, g, g, Vector::Zero(3));
    CHECK(*core_importance(a, Vector::Zero(3))[0] == doctest::Approx(3.0));
    CHECK_FALSE(core_importance(a, Vector::Ones(3))[0].has_value());
    Vector H(3);
    H << 0.0, 1.0, 0.5;
    CHECK(*core_importance(a, H)[0] == doctest::Approx((1.0 + 3.0) / 1.5));
    CHECK_THROWS_AS(core_importance(a, Vector::Zero(2)), ParameterError);
}

TEST_CASE("role reversal index") {
    Vector same(4);
    same << 1, 2, 3, 4;
    CHECK(role_reversal_index(same, 0.0) == 0.0);
    Vector half(4);
    half << 1, -2, 3, -4;
    CHECK(role_reversal_index(half, 0.0) == 1.0);
    Vector quarter(4);
    quarter << 1, 2, 3, -4;
    CHECK(role_reversal_index(quarter, 0.0) == doctest::Approx(0.5));
    Vector tiny(4);
    tiny << 1e-9, -1e-9, 1, 2;
    CHECK(role_reversal_index(tiny, 1e-6) == 0.0);
    CHECK(role_reversal_index(Vector::Zero(5), 0.0) == 0.0);
    CHECK_THROWS_AS(role_reversal_index(same, -1.0), ParameterError);

    // invariant to sign flips, positive scaling (with the default screen) and permutation
    const Vector g = random_matrix(101, 1, 5).col(0);
    const SensitivityAtlas a = atlas_from(g, g, g, Vector::Zero(101));
    const double base = role_reversal_index(a)[0];
    CHECK(role_reversal_index(atlas_from(-g, g, g, Vector::Zero(101)))[0] == base);
    CHECK(role_reversal_index(atlas_from(7.5 * g, g, g, Vector::Zero(101)))[0] == base);
    Vector perm = g;
    std::reverse(perm.data(), perm.data() + perm.size());
    CHECK(role_reversal_index(atlas_from(perm, g, g, Vector::Zero(101)))[0] == base);
}

TEST_CASE("gradient matching: truth against itself, shuffled null, missing truth") {
    ScenarioSpec spec;
    spec.kind = ScenarioKind::Nonlinear;
    spec.lattice_side = 30;
    spec.seed = 3;
    const Scenario sc = generate_scenario(spec);
    REQUIRE(sc.data.truth.has_value());
    const GroundTruthFields& t = *sc.data.truth;
    SensitivityAtlas self = atlas_from(t.grad_F, t.grad_E, t.grad_S, Vector::Zero(t.grad_F.rows()));
    const auto rows = gradient_matching(self, t);
    REQUIRE(rows.size() == 5);
    for (const GradientMatch& m : rows) {
        if (m.corr_F) CHECK(*m.corr_F == doctest::Approx(1.0).epsilon(1e-12));
        if (m.core_sign_agreement) CHECK(*m.core_sign_agreement == 1.0);
    }

    std::vector<int> order(t.grad_F.rows());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::mt19937_64 rng(9);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix shuffled(t.grad_F.rows(), t.grad_F.cols());
    for (size_t i = 0; i < order.size(); ++i) shuffled.row(i) = t.grad_F.row(order[i]);
    self.gF = shuffled;
    for (const GradientMatch& m : gradient_matching(self, t)) {
        if (m.corr_F) CHECK(std::abs(*m.corr_F) < 0.25);
    }

    CHECK_THROWS_AS(gradient_matching(self, std::nullopt), DegenerateError);
}

TEST_CASE("csv exports have the documented headers and row counts") {
    const Instance inst = make_instance(6, 1, 1, 3, 2);
    const ZegnnParams p = small_params(1, 1, 2, 3);
    const SensitivityAtlas a = sensitivity_fields(p, inst.in, {"a", "b"});
    const std::string atlas = atlas_long_csv(a, inst.in.coords);
    CHECK(atlas.rfind("node_id,x,y,variable,gF,gE,gS\n", 0) == 0);
    CHECK(std::count(atlas.begin(), atlas.end(), '\n') == 1 + 12);
    const std::string probs = regime_probability_csv(forward(p, inst.in).P);
    CHECK(std::count(probs.begin(), probs.end(), '\n') == 1 + 12);
    CHECK(probs.find("\n0,2,") != std::string::npos);
    const std::string summary = summary_csv(full_summary(a));
    CHECK(summary.rfind("variable,I_F,I_E,I_S,D_E,I_core,RRI,median_abs_gF\n", 0) == 0);
    CHECK(summary.find("\nb,") != std::string::npos);
    CHECK(entropy_csv(a.H_norm, inst.in.coords).rfind("node_id,x,y,H_norm\n", 0) == 0);
}

}  // TEST_SUITE
