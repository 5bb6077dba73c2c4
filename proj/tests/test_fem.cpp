#include <doctest.h>

#include "perfhom/errors.hpp"
#include "perfhom/fem.hpp"
#include "perfhom/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace perfhom;

namespace {

constexpr double kPi = 3.14159265358979323846;

TriMesh reference_triangle() {
    TriMesh mesh;
    mesh.nodes = {{0, 0}, {1, 0}, {0, 1}};
    mesh.tris = {{0, 1, 2}};
    return mesh;
}

TriMesh unit_square_mesh(double h) {
    PeriodicCell cell;
    cell.coefficient = [](double, double) { return Mat2{1, 0, 0, 1}; };
    return build_perforated_mesh({0, 0, 1, 1}, cell, 1.0, h).mesh;
}

double dense_entry(const SparseOperator& op, int i, int j) {
    for (int k = op.row_ptr[i]; k < op.row_ptr[i + 1]; ++k)
        if (op.col[k] == j) return op.val[k];
    return 0.0;
}

const CoefficientFn kIdentity = [](double, double) { return Mat2{1, 0, 0, 1}; };

} // namespace

TEST_SUITE("fem") {
    TEST_CASE("P1 stiffness element on the reference triangle") {
        const TriMesh mesh = reference_triangle();
        const SparseOperator K = assemble_stiffness(mesh, kIdentity, DofMap::all_nodes(mesh));
        const double expected[3][3] = {{1.0, -0.5, -0.5}, {-0.5, 0.5, 0.0}, {-0.5, 0.0, 0.5}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(dense_entry(K, i, j) == doctest::Approx(expected[i][j]).epsilon(1e-14));
        CHECK(K.symmetric);
    }

    TEST_CASE("stiffness is linear in the coefficient") {
        const TriMesh mesh = unit_square_mesh(0.25);
        const DofMap dm = DofMap::all_nodes(mesh);
        const SparseOperator K1 = assemble_stiffness(mesh, kIdentity, dm);
        const CoefficientFn scaled = [](double, double) { return Mat2{2.5, 0, 0, 2.5}; };
        const SparseOperator K2 = assemble_stiffness(mesh, scaled, dm);
        REQUIRE(K1.val.size() == K2.val.size());
        for (std::size_t k = 0; k < K1.val.size(); ++k)
            CHECK(K2.val[k] == doctest::Approx(2.5 * K1.val[k]).epsilon(1e-13));
    }

    TEST_CASE("constants lie in the stiffness kernel without Dirichlet data") {
        const TriMesh mesh = unit_square_mesh(0.125);
        const SparseOperator K = assemble_stiffness(mesh, kIdentity, DofMap::all_nodes(mesh));
        const std::vector<double> ones(mesh.nodes.size(), 1.0);
        for (double v : K.apply(ones)) CHECK(std::fabs(v) < 1e-12);
    }

    TEST_CASE("P1 mass element and partition of unity") {
        const TriMesh tri = reference_triangle();
        const SparseOperator Me = assemble_mass(tri, DofMap::all_nodes(tri));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(dense_entry(Me, i, j) ==
                      doctest::Approx(0.5 / 12.0 * (i == j ? 2 : 1)).epsilon(1e-14));

        const TriMesh mesh = unit_square_mesh(1.0 / 12.0);
        const SparseOperator M = assemble_mass(mesh, DofMap::all_nodes(mesh));
        const std::vector<double> ones(mesh.nodes.size(), 1.0);
        CHECK(M.quadratic_form(ones) == doctest::Approx(1.0).epsilon(1e-12));
        double total = 0.0;
        for (double v : M.val) total += v;
        CHECK(total == doctest::Approx(mesh.area()).epsilon(1e-12));
    }

    TEST_CASE("assembly is independent of element traversal order") {
        TriMesh mesh = unit_square_mesh(0.2);
        const DofMap dm = DofMap::all_nodes(mesh);
        const SparseOperator K = assemble_stiffness(mesh, kIdentity, dm);
        TriMesh shuffled = mesh;
        std::mt19937 gen(7);
        std::shuffle(shuffled.tris.begin(), shuffled.tris.end(), gen);
        const SparseOperator K2 = assemble_stiffness(shuffled, kIdentity, dm);
        REQUIRE(K.val.size() == K2.val.size());
        for (std::size_t k = 0; k < K.val.size(); ++k) {
            CHECK(K.col[k] == K2.col[k]);
            CHECK(K.val[k] == K2.val[k]); // bitwise: sorted accumulation order
        }
    }

    TEST_CASE("manufactured solution: O(h^2) L2 and O(h) H1 convergence") {
        auto solve_err = [](double h, double* h1err) {
            const TriMesh mesh = unit_square_mesh(h);
            const DofMap dm = DofMap::dirichlet(mesh);
            const SparseOperator K = assemble_stiffness(mesh, kIdentity, dm);
            const std::vector<double> b = assemble_load(mesh, dm, [](double x, double y) {
                return 2.0 * kPi * kPi * std::sin(kPi * x) * std::sin(kPi * y);
            });
            SolveReport rep;
            const std::vector<double> u = solve_spd(K, b, {}, &rep);
            CHECK(rep.relative_residual <= 1e-10);
            std::vector<double> err_nodal(mesh.nodes.size(), 0.0);
            const std::vector<double> u_nodes = dm.to_nodes(u);
            for (std::size_t v = 0; v < err_nodal.size(); ++v)
                err_nodal[v] = u_nodes[v] - std::sin(kPi * mesh.nodes[v].x) *
                                                std::sin(kPi * mesh.nodes[v].y);
            if (h1err) {
                const SparseOperator Kall =
                    assemble_stiffness(mesh, kIdentity, DofMap::all_nodes(mesh));
                *h1err = std::sqrt(Kall.quadratic_form(err_nodal));
            }
            return std::sqrt(nodal_l2_norm2(mesh, err_nodal));
        };
        double h1_8, h1_16, h1_32;
        const double e8 = solve_err(1.0 / 8, &h1_8);
        const double e16 = solve_err(1.0 / 16, &h1_16);
        const double e32 = solve_err(1.0 / 32, &h1_32);
        CHECK(e16 < 0.01);
        const double slope_l2 = 0.5 * (std::log2(e8 / e16) + std::log2(e16 / e32));
        const double slope_h1 = 0.5 * (std::log2(h1_8 / h1_16) + std::log2(h1_16 / h1_32));
        CHECK(slope_l2 == doctest::Approx(2.0).epsilon(0.1));
        CHECK(slope_h1 == doctest::Approx(1.0).epsilon(0.2));
    }

    TEST_CASE("solve_spd trivial cases") {
        SparseOperator I;
        I.n = 5;
        I.row_ptr = {0, 1, 2, 3, 4, 5};
        I.col = {0, 1, 2, 3, 4};
        I.val.assign(5, 1.0);
        const std::vector<double> b{1, -2, 3, 0.5, 4};
        SolveReport rep;
        const std::vector<double> x = solve_spd(I, b, {}, &rep);
        for (int i = 0; i < 5; ++i) CHECK(x[i] == doctest::Approx(b[i]).epsilon(1e-14));
        CHECK(rep.iterations == 1);

        const std::vector<double> zero(5, 0.0);
        for (double v : solve_spd(I, zero)) CHECK(v == 0.0);
    }

    TEST_CASE("incomplete Cholesky preconditioning agrees with Jacobi") {
        const TriMesh mesh = unit_square_mesh(1.0 / 24.0);
        const DofMap dm = DofMap::dirichlet(mesh);
        const SparseOperator K = assemble_stiffness(mesh, kIdentity, dm);
        const std::vector<double> b = assemble_load(
            mesh, dm, [](double x, double y) { return std::cos(3 * x) + y; });
        SolveReport rj, ri;
        const std::vector<double> xj = solve_spd(K, b, {}, &rj);
        const IncompleteCholesky ic = IncompleteCholesky::build(K);
        SolveOptions opts;
        opts.ic = &ic;
        const std::vector<double> xi = solve_spd(K, b, opts, &ri);
        CHECK(ri.iterations < rj.iterations);
        double diff = 0.0, norm = 0.0;
        for (std::size_t i = 0; i < xj.size(); ++i) {
            diff += (xj[i] - xi[i]) * (xj[i] - xi[i]);
            norm += xj[i] * xj[i];
        }
        CHECK(std::sqrt(diff / norm) < 1e-8);
    }

    TEST_CASE("l2 pairing examples and quadrature oracle") {
        const TriMesh mesh = unit_square_mesh(0.1);
        const std::vector<double> ones(mesh.nodes.size(), 1.0);
        CHECK(l2_pairing(mesh, ones, [](double, double) { return 1.0; }) ==
              doctest::Approx(1.0).epsilon(1e-12));
        CHECK(l2_pairing(mesh, ones, [](double x, double) { return x; }) ==
              doctest::Approx(0.5).epsilon(1e-12));

        // independent oracle: direct midpoint quadrature of (P1 u)(P1 phi),
        // exact for products of linears, evaluated element by element
        std::vector<double> u(mesh.nodes.size());
        for (std::size_t v = 0; v < u.size(); ++v)
            u[v] = std::sin(5 * mesh.nodes[v].x) + 0.3 * mesh.nodes[v].y;
        auto phi = [](double x, double y) { return std::cos(2 * x + y); };
        double oracle = 0.0;
        for (int t = 0; t < mesh.n_tris(); ++t) {
            const auto& tr = mesh.tris[t];
            const Vec2 p[3] = {mesh.nodes[tr[0]], mesh.nodes[tr[1]], mesh.nodes[tr[2]]};
            const double pv[3] = {phi(p[0].x, p[0].y), phi(p[1].x, p[1].y),
                                  phi(p[2].x, p[2].y)};
            const double area = mesh.tri_area(t);
            for (int e = 0; e < 3; ++e) {
                const int a = e, b2 = (e + 1) % 3;
                const double um = 0.5 * (u[tr[a]] + u[tr[b2]]);
                const double pm = 0.5 * (pv[a] + pv[b2]);
                oracle += area / 3.0 * um * pm;
            }
        }
        CHECK(l2_pairing(mesh, u, phi) == doctest::Approx(oracle).epsilon(1e-10));
    }

    TEST_CASE("smallest generalized eigenvalue matches the Dirichlet Laplacian") {
        const TriMesh mesh = unit_square_mesh(1.0 / 16.0);
        const DofMap dm = DofMap::dirichlet(mesh);
        const SparseOperator K = assemble_stiffness(mesh, kIdentity, dm);
        const SparseOperator M = assemble_mass(mesh, dm);
        const double lambda = smallest_generalized_eigenvalue(K, M, 60);
        CHECK(lambda == doctest::Approx(2.0 * kPi * kPi).epsilon(0.01));
    }

    TEST_CASE("measured ellipticity of an anisotropic coefficient") {
        const TriMesh mesh = unit_square_mesh(0.25);
        const CoefficientFn a = [](double, double) { return Mat2{2.0, 1.0, 0.0, 2.0}; };
        CHECK(measured_ellipticity(mesh, a) == doctest::Approx(1.5).epsilon(1e-12));
    }

    TEST_CASE("degenerate element raises AssemblyError") {
        TriMesh mesh = reference_triangle();
        mesh.nodes[2] = {2.0, 0.0}; // collinear
        CHECK_THROWS_AS(assemble_stiffness(mesh, kIdentity, DofMap::all_nodes(mesh)),
                        AssemblyError);
    }
}
