#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maxreglab/errors.hpp"

namespace mrl {

using Complex = std::complex<double>;

enum class BasisKind { abstract_modes, fourier_torus, sine_interval };

/// Basis descriptor. `order` is the elliptic order 2m of the realized
/// differential operator; it only matters for reporting and for building
/// eigenvalue formulas, the diagonal algebra never looks at it.
struct Basis {
    BasisKind kind = BasisKind::abstract_modes;
    int dimension = 1;
    int order = 2;
};

std::string to_string(BasisKind kind);

/// Coefficient vector in the (truncated) eigenbasis of a SpectralOperator.
class StateVector {
  public:
    StateVector() = default;
    explicit StateVector(std::size_t n) : c_(n) {}
    explicit StateVector(std::vector<Complex> coeffs) : c_(std::move(coeffs)) {}

    std::size_t size() const { return c_.size(); }
    Complex& operator[](std::size_t k) { return c_[k]; }
    const Complex& operator[](std::size_t k) const { return c_[k]; }
    std::span<const Complex> coeffs() const { return c_; }
    std::span<Complex> coeffs() { return c_; }

    bool all_finite() const;

    StateVector& operator+=(const StateVector& other);
    StateVector& operator-=(const StateVector& other);
    StateVector& operator*=(Complex scale);
    friend StateVector operator+(StateVector a, const StateVector& b) { return a += b; }
    friend StateVector operator-(StateVector a, const StateVector& b) { return a -= b; }
    friend StateVector operator*(Complex s, StateVector a) { return a *= s; }

  private:
    std::vector<Complex> c_;
};

/// Diagonal sectorial operator A + w on a truncated eigenbasis. All algebra
/// acts coefficientwise through the shifted eigenvalues mu_k = lambda_k + w,
/// which satisfy Re mu_k >= delta > 0 and |arg mu_k| <= sigma < pi/2.
class SpectralOperator {
  public:
    /// Empty operator; assign one built by a factory before use.
    SpectralOperator() = default;

    /// Validates sectoriality and sorts modes by ascending real part.
    /// `wavenumbers`, when present, carries the physical mode index (Fourier
    /// wavenumber or sine frequency) through the sort.
    static SpectralOperator make(std::vector<Complex> eigenvalues, double shift,
                                 Basis basis = {},
                                 std::vector<long> wavenumbers = {});

    /// 1-d torus realization of (-Laplacian)^{order/2}: eigenvalue |k|^order on
    /// the mode exp(2*pi*i*k*x), k = -K/2 .. K/2-1, measure-1 torus.
    static SpectralOperator fourier_torus(int order, std::size_t mode_count, double shift);

    /// Dirichlet interval (0, pi) realization: eigenvalue k^order on the
    /// orthonormal mode sqrt(2/pi)*sin(k*x), k = 1..K.
    static SpectralOperator sine_interval(int order, std::size_t mode_count, double shift);

    std::size_t mode_count() const { return mu_.size(); }
    double shift() const { return shift_; }
    double delta() const { return delta_; }        // min_k Re(lambda_k + w)
    double sigma() const { return sigma_; }        // max_k |arg(lambda_k + w)|
    double max_real() const { return max_real_; }  // max_k Re(lambda_k + w)
    const Basis& basis() const { return basis_; }
    bool self_adjoint() const { return self_adjoint_; }

    Complex mu(std::size_t k) const { return mu_[k]; }
    std::span<const Complex> mu() const { return mu_; }
    std::span<const Complex> eigenvalues() const { return eigs_; }
    std::span<const long> wavenumbers() const { return wavenumbers_; }

    /// Stable identifier of mode k, invariant under changes of the cutoff K
    /// (wavenumber-based whenever the basis has one).
    std::uint64_t mode_id(std::size_t k) const;

    /// Same basis and shift, new eigenvalues in the SAME mode order (used when
    /// freezing a time-dependent family at a point in time; alignment with
    /// existing states wins over the sorted-spectrum convention).
    SpectralOperator with_eigenvalues(std::vector<Complex> eigenvalues) const;

    StateVector basis_vector(std::size_t k) const;

  private:
    std::vector<Complex> eigs_;   // unshifted, sorted by Re ascending
    std::vector<Complex> mu_;     // eigs_ + shift
    std::vector<long> wavenumbers_;
    Basis basis_;
    double shift_ = 0.0;
    double delta_ = 0.0;
    double sigma_ = 0.0;
    double max_real_ = 0.0;
    bool self_adjoint_ = false;
};

/// S(t) x, coefficientwise exp(-t mu_k) x_k. Throws NegativeTime for t < 0.
StateVector semigroup_apply(const SpectralOperator& A, double t, const StateVector& x);

/// A^alpha x, coefficientwise mu_k^alpha x_k (principal branch), alpha in [-1, 1].
StateVector frac_power_apply(const SpectralOperator& A, double alpha, const StateVector& x);

/// Homogeneous scale norm ||A^alpha x||_{X0} = l2 norm of (|mu_k|^alpha x_k).
/// alpha = 0 is the plain coefficient l2 norm, alpha = 1 the X1 norm.
double norm_alpha(const SpectralOperator& A, double alpha, const StateVector& x);

/// max_k |z| / |z - mu_k|; finite for z outside the spectrum.
double resolvent_norm(const SpectralOperator& A, Complex z);

struct QuadratureSpec {
    double log_step = 0.04;        // trapezoid step in log t
    double rel_tol = 1e-9;         // admissible tail fraction
    double t_min_factor = 1e-3;    // t_min = t_min_factor / max Re mu
    std::size_t max_nodes = 400000;
};

struct OrbitNormResult {
    double norm = 0.0;       // ||x||_{X0} + seminorm
    double seminorm = 0.0;   // (integral term)^{1/p}
    double tail_bound = 0.0; // analytic bound on the omitted tail of seminorm^p
    double head = 0.0;       // series value of the [0, t_min] part of seminorm^p
    std::size_t nodes = 0;
};

/// Real-interpolation norm of x in (X0, X1)_{theta, p} computed from the
/// semigroup orbit:
///   ||x||_{X0} + ( int_0^inf (t^{1-theta} ||A S(t) x||_{X0})^p dt/t )^{1/p}.
/// Log-spaced trapezoid with endpoint-derivative correction; the [0, t_min]
/// head is summed as a series and the exponential tail is bounded using delta
/// and added to the value. Throws QuadratureNotConverged when the tail bound
/// cannot be brought below rel_tol relative to the result.
OrbitNormResult interp_norm_real(const SpectralOperator& A, double theta, double p,
                                 const StateVector& x, const QuadratureSpec& quad = {});

/// Precomputed quadrature for repeated trace-scale norm evaluations against a
/// fixed operator and (theta, p). Immutable and safe to share across threads.
class TraceNormEvaluator {
  public:
    TraceNormEvaluator(const SpectralOperator& A, double theta, double p,
                       const QuadratureSpec& quad = {});

    double theta() const { return theta_; }
    double p() const { return p_; }
    std::size_t node_count() const { return t_.size(); }

    OrbitNormResult evaluate(const StateVector& x) const;
    double seminorm(const StateVector& x) const { return evaluate(x).seminorm; }
    double norm(const StateVector& x) const { return evaluate(x).norm; }

  private:
    OrbitNormResult evaluate_full(const StateVector& x) const;

    double theta_, p_, a_;  // a = (1 - theta) p
    double rel_tol_;
    double t_min_, t_max_, log_step_;
    double tail_factor_;  // int_{t_max}^inf t^{a-1} e^{-p delta (t - t_max)} dt bound
    std::vector<double> t_;        // quadrature nodes
    std::vector<double> w_;        // trapezoid weights in log t
    std::vector<double> decay_;    // per (node, mode): |mu_k|^2 e^{-2 Re mu_k t_j}
    std::vector<double> rate_;     // 2 Re mu_k
    std::vector<double> mu_abs2_;  // |mu_k|^2
    std::size_t modes_;
    OrbitNormResult unit_;  // single-mode shortcut: norms scale with |x_0|
    bool unit_ready_ = false;
};

/// Discrete L^q norm of the physical-space interpolant of x on an equispaced
/// grid of `grid_size` points (>= 2 * mode_count, else AliasedGrid). Requires
/// a fourier_torus or sine_interval basis.
double grid_norm_lq(const SpectralOperator& A, const StateVector& x, double q,
                    std::size_t grid_size);

/// Physical-space samples of the interpolant (torus: x_i = i/G on [0,1);
/// sine: midpoints of (0, pi)). Used by grid_norm_lq and the pseudo-spectral
/// nonlinearities.
std::vector<Complex> synthesize(const SpectralOperator& A, const StateVector& x,
                                std::size_t grid_size);

/// Projects physical-space samples back onto the K retained modes.
StateVector analyze(const SpectralOperator& A, std::span<const Complex> samples);

}  // namespace mrl
