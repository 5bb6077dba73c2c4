#pragma once

#include "perfhom/fem.hpp"
#include "perfhom/geometry.hpp"

#include <iosfwd>
#include <vector>

namespace perfhom {

// Correctors chi^1, chi^2 on the cell mesh, the homogenized matrix B and the
// volume fraction theta = |Y*| / |Y|.
struct CellSolution {
    std::vector<double> chi1, chi2; // nodal fields, zero mean over Y*
    Mat2 B{};
    double theta = 1.0;
    double residual1 = 0.0, residual2 = 0.0; // relative corrector residuals
    double h = 0.0;
};

// Solve the periodic corrector problem in direction i (0 or 1):
//   for all Y-periodic v:  int_{Y*} a grad(chi^i - y_i) . grad v = 0,
// natural condition on the hole boundary, zero-mean normalization over Y*.
// The one-dimensional constant kernel is projected out of the CG iteration.
std::vector<double> solve_corrector(const CellMesh& cell_mesh, const PeriodicCell& cell,
                                    int direction, double* residual = nullptr);

// beta_ij = 1/|Y| [ int_{Y*} a_ij - int_{Y*} sum_k a_kj d(chi^i)/dy_k ];
// integrands vanish on the hole, so integrals run over Y*.
std::pair<Mat2, double> homogenized_matrix(const CellMesh& cell_mesh, const PeriodicCell& cell,
                                           const std::vector<double>& chi1,
                                           const std::vector<double>& chi2);

// smallest eigenvalue of the symmetric part (B + B^T)/2
double ellipticity_constant(const Mat2& B);

CellSolution solve_cell_problem(const PeriodicCell& cell, double h);

struct CellRefinementRow {
    double h = 0.0;
    double h_effective = 0.0; // actual lattice spacing used
    Mat2 B{};
    double theta = 0.0;
    double residual1 = 0.0, residual2 = 0.0;
};

std::vector<CellRefinementRow> cell_refinement_study(const PeriodicCell& cell,
                                                     const std::vector<double>& hs);

// empirical order from three values of a quantity q(h) = q* + C h^p at mesh
// sizes h1 > h2 > h3 (ratios need not be equal)
double estimated_order(double h1, double h2, double h3, double q1, double q2, double q3);

void write_cell_solution(std::ostream& os, const CellSolution& sol);
struct CellSolutionSummary {
    Mat2 B{};
    double theta = 1.0;
    double residual1 = 0.0, residual2 = 0.0;
    double h = 0.0;
};
CellSolutionSummary read_cell_solution(std::istream& is);

} // namespace perfhom
