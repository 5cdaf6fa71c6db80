#pragma once

// Contract and market constants of the two-class bonus-malus model, with the
// closed-form evaluations the solver and simulator share.

#include <stdexcept>
#include <string>
#include <vector>

namespace bm {

/// Raised when a parameter set or grid violates one of its invariants.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces non-finite values or fails to converge.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class InsuranceClass : int { C1 = 1, C2 = 2 };

InsuranceClass class_from_int(int i);
inline int to_int(InsuranceClass c) { return static_cast<int>(c); }

/// Claim size distribution. Only the exponential law is implemented, but the
/// solver touches it exclusively through this interface.
class ClaimLaw {
public:
    enum class Kind { exponential };

    static ClaimLaw exponential(double mean);

    Kind kind() const { return kind_; }
    double mean() const { return mean_; }
    double second_moment() const;

    double cdf(double y) const;
    /// 1 - F(y), without cancellation for large y.
    double survival(double y) const;
    double density(double y) const;
    /// Partial first moment: integral of y dF(y) over [a, b].
    double partial_moment(double a, double b) const;
    /// Integral of min(y, m) dF(y) over [b, inf).
    double retention_tail(double b, double m) const;
    /// Inverse cdf for u in [0, 1).
    double quantile(double u) const;

private:
    ClaimLaw(Kind k, double mean) : kind_(k), mean_(mean) {}
    Kind kind_;
    double mean_;
};

/// pi(s) = intercept + slope * s. A constant premium has slope 0.
struct PremiumSpec {
    enum class Kind { affine, constant };
    Kind kind = Kind::constant;
    double intercept = 0.0;
    double slope = 0.0;

    static PremiumSpec affine(double a, double b) { return {Kind::affine, a, b}; }
    static PremiumSpec constant(double rate) { return {Kind::constant, rate, 0.0}; }

    double rate(double s) const { return intercept + slope * s; }
    /// Integral of pi over [s0, s1].
    double integral(double s0, double s1) const;
};

/// h(x) = max(floor, -exp(-gamma x)).
struct UtilitySpec {
    double gamma = 0.5;
    double floor = -1e10;

    double operator()(double x) const;
};

struct ModelParams {
    double horizon_T = 0.0;
    double class2_reset_S = 0.0;
    double intensity_lambda = 0.0;
    ClaimLaw claim_law = ClaimLaw::exponential(1.0);
    double deductible_m1 = 0.0;
    double deductible_m2 = 0.0;
    PremiumSpec premium1;
    PremiumSpec premium2;
    double income_c = 0.0;
    UtilitySpec utility;

    /// The Table 1 parameter set.
    static ModelParams table1();

    /// Throws ValidationError on a hard violation; returns soft warnings.
    std::vector<std::string> validate() const;

    double deductible(InsuranceClass i) const {
        return i == InsuranceClass::C1 ? deductible_m1 : deductible_m2;
    }
    const PremiumSpec& premium_spec(InsuranceClass i) const {
        return i == InsuranceClass::C1 ? premium1 : premium2;
    }
    /// Upper end of the clock domain of class i: T for C1, S for C2.
    double clock_limit(InsuranceClass i) const {
        return i == InsuranceClass::C1 ? horizon_T : class2_reset_S;
    }
};

/// r(y, m) = min(y, m).
double retention(double y, double m);

/// Premium rate of class i at clock s, s in [0, T].
double premium(const ModelParams& p, InsuranceClass i, double s);

/// Wealth gained along the flow: integral of (c - pi_i(u)) du over [s, s + delta].
double drift_integral(const ModelParams& p, InsuranceClass i, double s, double delta);

/// Wealth gained along the deterministic flow for `delta` time units when no
/// claim occurs, including the class 2 -> 1 upgrade at clock S.
double flow_drift(const ModelParams& p, InsuranceClass i, double s, double delta);

inline double utility(const ModelParams& p, double x) { return p.utility(x); }

double claim_cdf(const ModelParams& p, double y);

/// Value of the process stopped at its first jump (claims and the class 2
/// upgrade both count as jumps); zero if that jump happens before T.
double v0(const ModelParams& p, InsuranceClass i, double t, double s, double x);

}  // namespace bm
