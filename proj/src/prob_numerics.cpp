#include "fhmm/prob_numerics.hpp"

#include <cmath>
#include <stdexcept>

#include "fhmm/rng.hpp"

namespace fhmm::prob {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kSqrt2 = 1.4142135623730950488016887242097;
constexpr double kSqrt2Pi = 2.5066282746310005024157652848110;

// 32-point Gauss-Legendre nodes/weights on [-1, 1] (positive half; nodes
// are symmetric about 0).
constexpr int kGlHalf = 16;
constexpr double kGlNode[kGlHalf] = {
    0.0483076656877383162348126, 0.1444719615827964934851864,
    0.2392873622521370745446032, 0.3318686022821276497799168,
    0.4213512761306353453641194, 0.5068999089322293900237475,
    0.5877157572407623290407455, 0.6630442669302152009751152,
    0.7321821187402896803874267, 0.7944837959679424069630973,
    0.8493676137325699701336930, 0.8963211557660521239653072,
    0.9349060759377396891709191, 0.9647622555875064307738119,
    0.9856115115452683354001750, 0.9972638618494815635449811};
constexpr double kGlWeight[kGlHalf] = {
    0.0965400885147278005667648, 0.0956387200792748594190820,
    0.0938443990808045656391802, 0.0911738786957638847128686,
    0.0876520930044038111427715, 0.0833119242269467552221991,
    0.0781938957870703064717409, 0.0723457941088485062253994,
    0.0658222227763618468376501, 0.0586840934785355471452836,
    0.0509980592623761761961632, 0.0428358980222266806568786,
    0.0342738629130214331026877, 0.0253920653092620594557526,
    0.0162743947309056706051706, 0.0070186100094700966004071};

// Integral of the bivariate density along the correlation path after the
// substitution r = sin(u): the integrand becomes smooth in u.
double plackett_integrand(double a, double b, double u) {
    const double su = std::sin(u);
    const double cu = std::cos(u);
    const double e = -(a * a + b * b - 2.0 * a * b * su) / (2.0 * cu * cu);
    return (e > -745.0) ? std::exp(e) : 0.0;
}

double gl_panel(double a, double b, double lo, double hi) {
    const double mid = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    double acc = 0.0;
    for (int i = 0; i < kGlHalf; ++i) {
        acc += kGlWeight[i] * (plackett_integrand(a, b, mid - half * kGlNode[i]) +
                               plackett_integrand(a, b, mid + half * kGlNode[i]));
    }
    return acc * half;
}

}  // namespace

double std_normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / kSqrt2Pi;
}

double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x / kSqrt2);
}

double std_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("std_normal_quantile: p must lie in (0,1)");
    }
    // Acklam's rational approximation, then Halley refinement against the
    // erfc-based CDF.
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    for (int it = 0; it < 2; ++it) {
        const double e = std_normal_cdf(x) - p;
        const double u = e * kSqrt2Pi * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

double bvn_pdf(double a, double b, double rho) {
    const double omr2 = (1.0 - rho) * (1.0 + rho);
    const double e = -(a * a - 2.0 * rho * a * b + b * b) / (2.0 * omr2);
    return std::exp(e) / (kTwoPi * std::sqrt(omr2));
}

double bvn_cdf(double a, double b, double rho) {
    if (rho < -1.0 + kEpsRho) rho = -1.0 + kEpsRho;
    if (rho > 1.0 - kEpsRho) rho = 1.0 - kEpsRho;
    if (rho < 0.0) {
        // reflect Y: P(X<=a, Y<=b) = Phi(a) - P(X<=a, -Y<=-b)
        return std::fmax(0.0, std_normal_cdf(a) - bvn_cdf(a, -b, -rho));
    }
    const double pa = std_normal_cdf(a);
    const double pb = std_normal_cdf(b);
    if (a < -40.0 || b < -40.0) return 0.0;
    if (a > 40.0) return pb;
    if (b > 40.0) return pa;

    const double alpha = std::asin(rho);
    double integral = 0.0;
    // Smooth region in two panels; beyond u = 1.2 the integrand develops a
    // boundary layer of width ~ (pi/2 - u), so panels are halved toward alpha.
    const double smooth_end = std::fmin(alpha, 1.2);
    integral += gl_panel(a, b, 0.0, 0.5 * smooth_end);
    integral += gl_panel(a, b, 0.5 * smooth_end, smooth_end);
    if (alpha > 1.2) {
        double lo = 1.2;
        for (int k = 0; k < 60 && alpha - lo > 2e-16; ++k) {
            const double hi = alpha - 0.5 * (alpha - lo);
            if (hi <= lo) break;
            integral += gl_panel(a, b, lo, hi);
            lo = hi;
        }
    }
    double r = pa * pb + integral / kTwoPi;
    // Frechet bounds absorb residual round-off
    r = std::fmax(r, std::fmax(0.0, pa + pb - 1.0));
    r = std::fmin(r, std::fmin(pa, pb));
    return r;
}

BvnGrad bvn_cdf_grad(double a, double b, double rho) {
    if (rho < -1.0 + kEpsRho) rho = -1.0 + kEpsRho;
    if (rho > 1.0 - kEpsRho) rho = 1.0 - kEpsRho;
    const double s = std::sqrt((1.0 - rho) * (1.0 + rho));
    BvnGrad g;
    g.da = std_normal_pdf(a) * std_normal_cdf((b - rho * a) / s);
    g.db = std_normal_pdf(b) * std_normal_cdf((a - rho * b) / s);
    g.drho = bvn_pdf(a, b, rho);  // Plackett's identity
    return g;
}

CholFactor::CholFactor(Eigen::MatrixXd lower) : lower_(std::move(lower)) {
    if (lower_.rows() != lower_.cols() || lower_.rows() < 1) {
        throw std::invalid_argument("CholFactor: matrix must be square");
    }
    for (Eigen::Index i = 0; i < lower_.rows(); ++i) {
        if (!(lower_(i, i) > 0.0)) {
            throw std::invalid_argument("CholFactor: diagonal must be positive");
        }
        for (Eigen::Index j = i + 1; j < lower_.cols(); ++j) {
            if (lower_(i, j) != 0.0) {
                throw std::invalid_argument("CholFactor: matrix must be lower-triangular");
            }
        }
    }
}

double CholFactor::log_det_sigma() const {
    return 2.0 * lower_.diagonal().array().log().sum();
}

Eigen::VectorXd CholFactor::solve_lower(const Eigen::VectorXd& v) const {
    return lower_.triangularView<Eigen::Lower>().solve(v);
}

Eigen::VectorXd CholFactor::solve_sigma(const Eigen::VectorXd& v) const {
    Eigen::VectorXd z = lower_.triangularView<Eigen::Lower>().solve(v);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(z);
}

double gaussian_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                       const CholFactor& L) {
    if (y.size() != mu.size() || y.size() != L.dim()) {
        throw std::invalid_argument("gaussian_logpdf: dimension mismatch");
    }
    const Eigen::VectorXd z = L.solve_lower(y - mu);
    return -0.5 * z.squaredNorm() - 0.5 * L.dim() * std::log(kTwoPi) -
           0.5 * L.log_det_sigma();
}

}  // namespace fhmm::prob

namespace fhmm {

double Rng::next_normal() { return prob::std_normal_quantile(next_uniform()); }

}  // namespace fhmm
