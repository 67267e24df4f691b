#include <doctest.h>

#include "immpc/internal_model.hpp"

#include <algorithm>
#include <numbers>
#include <random>

using namespace immpc;
using Mat = Matrix<double>;
using Vec = Vector<double>;
using std::numbers::pi;

namespace {

std::vector<std::complex<double>> sorted(const ComplexVector<double>& v) {
  std::vector<std::complex<double>> out(v.data(), v.data() + v.size());
  std::sort(out.begin(), out.end(), [](auto a, auto b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return out;
}

Vec gaussian(std::mt19937& rng, Index n) {
  std::normal_distribution<double> g;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

}  // namespace

TEST_CASE("signal generator structure") {
  SUBCASE("constant only") {
    const auto gen = build_generator<double>({}, true);
    CHECK(gen.dimension() == 1);
    CHECK(gen.S()(0, 0) == 1.0);
    CHECK(gen.C_S()(0) == 1.0);
  }
  SUBCASE("quarter rotation") {
    const auto gen = build_generator<double>({pi / 2}, false);
    CHECK(gen.dimension() == 2);
    CHECK(gen.S()(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(gen.S()(0, 1) == doctest::Approx(-1.0));
    CHECK(gen.S()(1, 0) == doctest::Approx(1.0));
  }
  SUBCASE("constant plus ten-sample period") {
    const auto gen = build_generator<double>({2 * pi / 10}, true);
    CHECK(gen.dimension() == 3);
    CHECK(gen.S()(1, 1) == doctest::Approx(0.809017).epsilon(1e-6));
    CHECK(gen.S()(2, 1) == doctest::Approx(0.587785).epsilon(1e-6));
    CHECK(gen.C_S() == RowVector<double>((RowVector<double>(3) << 1, 1, 0).finished()));
    // basis(k) equals (C_S S^k)'
    Mat Sk = Mat::Identity(3, 3);
    for (Index k = 0; k < 12; ++k) {
      CHECK((gen.basis(k).transpose() - gen.C_S() * Sk).cwiseAbs().maxCoeff() < 1e-12);
      Sk = Sk * gen.S();
    }
  }
  SUBCASE("invalid frequencies") {
    CHECK_THROWS_AS(build_generator<double>({0.0}, true), std::invalid_argument);
    CHECK_THROWS_AS(build_generator<double>({pi}, true), std::invalid_argument);
    CHECK_THROWS_AS(build_generator<double>({0.3, 0.3}, true), std::invalid_argument);
    CHECK_THROWS_AS(build_generator<double>({}, false), std::invalid_argument);
  }
}

TEST_CASE("characteristic polynomial") {
  SUBCASE("integrator") {
    const auto p = char_poly(build_generator<double>({}, true));
    CHECK(p.degree() == 1);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -1.0);
  }
  SUBCASE("constant plus ten-sample sinusoid") {
    const auto p = char_poly(build_generator<double>({2 * pi / 10}, true));
    REQUIRE(p.degree() == 3);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == doctest::Approx(-2.618).epsilon(1e-3));
    CHECK(p[2] == doctest::Approx(2.618).epsilon(1e-3));
    CHECK(p[3] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-(1 + 2 * std::cos(2 * pi / 10))).epsilon(1e-15));
  }
  SUBCASE("constant plus quarter rotation") {
    const auto p = char_poly(build_generator<double>({pi / 2}, true));
    const Vec expect = (Vec(4) << 1, -1, 1, -1).finished();
    CHECK((p.coefficients() - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("roots equal the generator eigenvalues") {
    for (const auto& freqs : std::vector<std::vector<double>>{{0.3}, {0.2, 1.1}, {2 * pi / 10, 0.7, 2.5}})
      for (bool c : {true, false}) {
        const auto gen = build_generator<double>(freqs, c);
        const auto r = sorted(char_poly(gen).roots());
        Eigen::EigenSolver<Mat> es(gen.S(), false);
        const auto e = sorted(es.eigenvalues());
        REQUIRE(r.size() == e.size());
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - e[i]) < 1e-10);
      }
  }
}

TEST_CASE("annihilation") {
  const auto gen = build_generator<double>({2 * pi / 10}, true);
  const auto p = char_poly(gen);
  std::mt19937 rng(2);
  for (int k = 0; k < 10; ++k) CHECK(annihilation_check(p, gen, gaussian(rng, 3), 200) <= 1e-9);
  CHECK(annihilation_check(p, gen, Vec::Zero(3), 50) == 0.0);
  const Polynomial<double> wrong{1.0, -1.0};
  CHECK(annihilation_check(wrong, gen, (Vec(3) << 0, 1, 0).finished(), 50) > 0.1);
  CHECK_THROWS_AS(annihilation_check(p, gen, Vec::Zero(3), 3), std::invalid_argument);
}

TEST_CASE("inverse filter") {
  SUBCASE("first difference") {
    const auto f = MatrixFractionFilter<double>::identity(1, Polynomial<double>{1.0, -1.0});
    FilterState<double> st(f);
    (void)inverse_filter_step(f, st, Vec::Constant(1, 5));
    const Vec e = inverse_filter_step(f, st, Vec::Constant(1, 3));
    CHECK(e(0) == -2.0);
  }
  SUBCASE("constant streams vanish after the startup window") {
    const auto p = char_poly(build_generator<double>({0.4}, true));
    const auto f = MatrixFractionFilter<double>::identity(2, p);
    FilterState<double> st(f);
    for (int t = 0; t < 10; ++t) {
      CHECK(st.trusted() == (t >= p.degree()));
      const Vec e = inverse_filter_step(f, st, Vec::Constant(2, 7.5));
      if (t >= p.degree()) CHECK(e.cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("regulator references are annihilated") {
    const auto gen = build_generator<double>({2 * pi / 10, 0.9}, true);
    const auto f = MatrixFractionFilter<double>::identity(3, char_poly(gen));
    std::mt19937 rng(9);
    std::normal_distribution<double> g;
    Mat Pi1(3, gen.dimension());
    for (Index i = 0; i < Pi1.size(); ++i) Pi1.data()[i] = g(rng);
    Vec w = gaussian(rng, gen.dimension());
    FilterState<double> st(f);
    for (int t = 0; t < 40; ++t) {
      const Vec e = inverse_filter_step(f, st, Vec(Pi1 * w));
      if (t >= 5) CHECK(e.cwiseAbs().maxCoeff() < 1e-9);
      w = gen.S() * w;
    }
  }
}

TEST_CASE("forward filter") {
  SUBCASE("zero input from rest") {
    const auto f = MatrixFractionFilter<double>::identity(2, Polynomial<double>{1.0, -1.0});
    FilterState<double> st(f);
    for (int t = 0; t < 5; ++t) CHECK(forward_filter_step(f, st, Vec::Zero(2)).isZero());
  }
  SUBCASE("discrete integrator") {
    const auto f = MatrixFractionFilter<double>::identity(1, Polynomial<double>{1.0, -1.0});
    FilterState<double> st(f);
    for (int t = 0; t < 6; ++t) CHECK(forward_filter_step(f, st, Vec::Ones(1))(0) == double(t + 1));
  }
  SUBCASE("round trip with a dynamic numerator") {
    const auto p = char_poly(build_generator<double>({2 * pi / 10}, true));
    std::vector<Mat> Q{Mat::Identity(2, 2), (Mat(2, 2) << -0.5, 0.1, 0.0, -0.3).finished(),
                       0.06 * Mat::Identity(2, 2)};
    const MatrixFractionFilter<double> f(Q, p);
    std::mt19937 rng(4);
    FilterState<double> inv(f), fwd(f);
    for (int t = 0; t < 50; ++t) {
      const Vec u = gaussian(rng, 2);
      const Vec e = inverse_filter_step(f, inv, u);
      const Vec back = forward_filter_step(f, fwd, e);
      CHECK((back - u).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("inverse filter is linear in streams and histories") {
  const auto p = char_poly(build_generator<double>({1.3}, true));
  std::vector<Mat> Q{Mat::Identity(2, 2), -0.4 * Mat::Identity(2, 2)};
  const MatrixFractionFilter<double> f(Q, p);
  std::mt19937 rng(8);
  FilterState<double> a(f), b(f), s(f);
  for (int t = 0; t < 30; ++t) {
    const Vec x1 = gaussian(rng, 2), x2 = gaussian(rng, 2);
    const Vec e1 = inverse_filter_step(f, a, x1);
    const Vec e2 = inverse_filter_step(f, b, x2);
    const Vec es = inverse_filter_step<double>(f, s, x1 + x2);
    CHECK((es - e1 - e2).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("matrix fraction filter construction") {
  const auto p = char_poly(build_generator<double>({}, true));
  CHECK_THROWS_AS(MatrixFractionFilter<double>({Mat::Zero(2, 2)}, p), std::invalid_argument);
  CHECK_THROWS_AS(MatrixFractionFilter<double>({Mat::Identity(2, 2), Mat::Identity(3, 3)}, p),
                  std::invalid_argument);
  // Q(z) = 1 - z^{-1} shares the integrator zero with p.
  CHECK_THROWS_AS(MatrixFractionFilter<double>::scalar(1, Polynomial<double>{1.0, -1.0}, p),
                  std::invalid_argument);
}

TEST_CASE("companion realization") {
  SUBCASE("first order block") {
    const Mat Ae = companion_realization<double>({Mat::Identity(2, 2), -0.5 * Mat::Identity(2, 2)});
    CHECK((Ae - 0.5 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("static numerator") {
    CHECK(companion_realization<double>({Mat::Identity(3, 3)}).size() == 0);
  }
  SUBCASE("second order scalar") {
    const Mat Ae = companion_realization<double>({Mat::Ones(1, 1), Mat::Constant(1, 1, -1.5),
                                                  Mat::Constant(1, 1, 0.56)});
    const Mat expect = (Mat(2, 2) << 1.5, -0.56, 1, 0).finished();
    CHECK((Ae - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("singular leading coefficient") {
    CHECK_THROWS_AS(companion_realization<double>({Mat::Zero(1, 1), Mat::Ones(1, 1)}), std::invalid_argument);
  }
}

TEST_CASE("cancellation check") {
  const auto gen = build_generator<double>({2 * pi / 10}, true);
  const auto p = char_poly(gen);
  SUBCASE("four-tank with the sinusoid filter passes") {
    const auto d = discretize_euler(four_tank().continuous, 1.0);
    const auto Gx = MatrixFractionFilter<double>::identity(4, p);
    const auto Gu = MatrixFractionFilter<double>::identity(2, p);
    const auto r = cancellation_check(d, Gx, Gu);
    CHECK(r.ok);
    CHECK(r.issues.empty());
  }
  SUBCASE("plant pole on an internal-model zero fails") {
    DiscreteLTI<double> sys{Mat::Identity(1, 1), Mat::Ones(1, 1), Mat::Ones(1, 1), 1.0};
    const auto Gx = MatrixFractionFilter<double>::identity(1, p);
    const auto r = cancellation_check(sys, Gx, Gx);
    CHECK_FALSE(r.ok);
    REQUIRE_FALSE(r.offending.empty());
    CHECK(std::abs(r.offending.front() - std::complex<double>(1, 0)) < 1e-7);
  }
  SUBCASE("full cancellation Q(z) = p(z) I fails") {
    DiscreteLTI<double> sys{Mat::Constant(1, 1, 0.5), Mat::Ones(1, 1), Mat::Ones(1, 1), 1.0};
    std::vector<Mat> Q;
    for (Index i = 0; i <= p.degree(); ++i) Q.push_back(Mat::Constant(1, 1, p[i]));
    const auto Gc = MatrixFractionFilter<double>::unchecked(Q, p);
    const auto Gx = MatrixFractionFilter<double>::identity(1, p);
    const auto r = cancellation_check(sys, Gx, Gc);
    CHECK_FALSE(r.ok);
    CHECK(r.offending.size() >= 3);
  }
}
