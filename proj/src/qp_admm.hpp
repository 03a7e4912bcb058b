#pragma once

// Internal: dense operator-splitting solver for
//   min 1/2 x'Px + q'x   s.t.  lo <= Ax <= up,
// P symmetric positive semidefinite.  Standard ADMM scheme: Ruiz
// equilibration, a cached Cholesky factor of P + sigma I + A' R A, over-
// relaxed iterates, adaptive per-batch step rescaling, and an active-set
// polish that solves the equality-constrained KKT system for the constraints
// the iterates ended on.  The polish is what takes solutions from the
// stopping tolerance down to machine precision; if its verification fails
// the unpolished iterate is returned.
//
// q, lo, and up may be swapped between solves without refactorizing, which
// is what makes per-state caching across simulation slots cheap.

#include <Eigen/Dense>
#include <limits>
#include <vector>

namespace tf::detail {

struct QpOptions {
  double eps_abs = 1e-9;
  double eps_rel = 1e-9;
  int max_iter = 50000;
  double sigma = 1e-6;
  double alpha = 1.6;       // over-relaxation
  double rho0 = 0.1;        // initial step, per-row after equilibration
  int check_every = 25;
  bool polish = true;
  double polish_delta = 1e-9;
  int max_refactor = 50;
  bool trace = false;  // print residual trajectory to stderr
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // row duals: >= 0 at upper bounds, <= 0 at lower
  Eigen::VectorXd z;  // row values, clamped
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  double primal_res = std::numeric_limits<double>::infinity();
  double dual_res = std::numeric_limits<double>::infinity();
};

class AdmmQp {
 public:
  AdmmQp(Eigen::MatrixXd P, Eigen::VectorXd q, Eigen::MatrixXd A,
         Eigen::VectorXd lo, Eigen::VectorXd up, QpOptions opts);

  // Replace the linear term / bounds, keeping matrices and factorization.
  void set_q(const Eigen::VectorXd& q);
  void set_bounds(const Eigen::VectorXd& lo, const Eigen::VectorXd& up);

  QpSolution solve(const Eigen::VectorXd* x_warm = nullptr,
                   const Eigen::VectorXd* y_warm = nullptr);

  int nvars() const { return static_cast<int>(P_.rows()); }
  int nrows() const { return static_cast<int>(A_.rows()); }

 private:
  struct Residuals {
    double rp = 0.0, rd = 0.0;
    double eps_p = 0.0, eps_d = 0.0;
    double sp = 0.0, sd = 0.0;  // iterate norms used for normalization
  };

  void equilibrate();
  void factorize();
  Residuals compute_residuals(const Eigen::VectorXd& x,
                              const Eigen::VectorXd& y,
                              const Eigen::VectorXd& z) const;
  bool polish(QpSolution* sol) const;

  // Unscaled problem data.
  Eigen::MatrixXd P_;
  Eigen::VectorXd q_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd lo_, up_;
  QpOptions opts_;

  // Scaled copies and scaling vectors.
  Eigen::MatrixXd Ps_, As_;
  Eigen::VectorXd qs_, los_, ups_;
  Eigen::VectorXd d_;  // variable scaling
  Eigen::VectorXd e_;  // row scaling
  double cost_scale_ = 1.0;
  Eigen::VectorXd rho_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  int refactor_count_ = 0;
};

}  // namespace tf::detail
