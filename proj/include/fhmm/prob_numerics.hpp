#ifndef FHMM_PROB_NUMERICS_HPP
#define FHMM_PROB_NUMERICS_HPP

#include <Eigen/Dense>

namespace fhmm::prob {

// Clamps shared across the library: correlations live in
// [-1+kEpsRho, 1-kEpsRho], Bernoulli parameters in [kEpsTheta, 1-kEpsTheta].
inline constexpr double kEpsRho = 1e-6;
inline constexpr double kEpsTheta = 1e-6;

double std_normal_pdf(double x);
double std_normal_cdf(double x);

// Inverse of std_normal_cdf on (0,1); throws std::domain_error outside.
double std_normal_quantile(double p);

// P(X <= a, Y <= b) for standard bivariate normal with correlation rho.
double bvn_cdf(double a, double b, double rho);

struct BvnGrad {
    double da;
    double db;
    double drho;
};
BvnGrad bvn_cdf_grad(double a, double b, double rho);

// Standard bivariate normal density at (a, b) with correlation rho.
double bvn_pdf(double a, double b, double rho);

// Lower-triangular Cholesky factor with strictly positive diagonal,
// representing Sigma = L L^T.
class CholFactor {
public:
    explicit CholFactor(Eigen::MatrixXd lower);

    int dim() const { return static_cast<int>(lower_.rows()); }
    const Eigen::MatrixXd& matrix() const { return lower_; }
    Eigen::MatrixXd sigma() const { return lower_ * lower_.transpose(); }

    double log_det_sigma() const;  // log|LL^T| = 2 sum log L_ii

    // Solves L z = v.
    Eigen::VectorXd solve_lower(const Eigen::VectorXd& v) const;
    // Solves (LL^T) z = v.
    Eigen::VectorXd solve_sigma(const Eigen::VectorXd& v) const;

private:
    Eigen::MatrixXd lower_;
};

// log N(y; mu, LL^T) via triangular solves.
double gaussian_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                       const CholFactor& L);

}  // namespace fhmm::prob

#endif
