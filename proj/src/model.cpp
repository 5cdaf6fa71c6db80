#include "bm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bm {

namespace {

constexpr double kDomainSlack = 1e-12;

void require_domain(bool ok, const char* what) {
    if (!ok) throw std::domain_error(what);
}

}  // namespace

InsuranceClass class_from_int(int i) {
    if (i == 1) return InsuranceClass::C1;
    if (i == 2) return InsuranceClass::C2;
    throw std::domain_error("insurance class must be 1 or 2, got " + std::to_string(i));
}

// ---------------------------------------------------------------------------
// ClaimLaw

ClaimLaw ClaimLaw::exponential(double mean) {
    if (!(mean > 0.0) || !std::isfinite(mean))
        throw ValidationError("exponential claim law needs a finite mean > 0");
    return ClaimLaw(Kind::exponential, mean);
}

double ClaimLaw::second_moment() const { return 2.0 * mean_ * mean_; }

double ClaimLaw::cdf(double y) const {
    require_domain(y >= 0.0, "claim_cdf: y must be >= 0");
    return -std::expm1(-y / mean_);
}

double ClaimLaw::survival(double y) const {
    if (y <= 0.0) return 1.0;
    if (std::isinf(y)) return 0.0;
    return std::exp(-y / mean_);
}

double ClaimLaw::density(double y) const {
    if (y < 0.0) return 0.0;
    return std::exp(-y / mean_) / mean_;
}

double ClaimLaw::partial_moment(double a, double b) const {
    require_domain(a >= 0.0 && b >= a, "partial_moment: need 0 <= a <= b");
    // d/dy [-(y + mu) e^{-y/mu}] = y e^{-y/mu} / mu
    auto primitive = [this](double y) {
        if (std::isinf(y)) return 0.0;
        return -(y + mean_) * std::exp(-y / mean_);
    };
    return primitive(b) - primitive(a);
}

double ClaimLaw::retention_tail(double b, double m) const {
    require_domain(b >= 0.0 && m >= 0.0, "retention_tail: need b, m >= 0");
    const double knee = std::max(b, m);
    const double below = knee > b ? partial_moment(b, knee) : 0.0;
    return below + m * survival(knee);
}

double ClaimLaw::quantile(double u) const {
    require_domain(u >= 0.0 && u < 1.0, "quantile: u must lie in [0, 1)");
    return -mean_ * std::log1p(-u);
}

// ---------------------------------------------------------------------------

double PremiumSpec::integral(double s0, double s1) const {
    return intercept * (s1 - s0) + 0.5 * slope * (s1 * s1 - s0 * s0);
}

double UtilitySpec::operator()(double x) const {
    // -e^{-gx} < floor  <=>  -g x > log(-floor)
    if (-gamma * x > std::log(-floor)) return floor;
    return std::max(floor, -std::exp(-gamma * x));
}

ModelParams ModelParams::table1() {
    ModelParams p;
    p.horizon_T = 5.0;
    p.class2_reset_S = 2.0;
    p.intensity_lambda = 1.0;
    p.claim_law = ClaimLaw::exponential(1.0);
    p.deductible_m1 = 0.0;
    p.deductible_m2 = 0.0;
    p.premium1 = PremiumSpec::affine(1.0, -7.0 / (10.0 * p.horizon_T));
    p.premium2 = PremiumSpec::constant(1.1);
    p.income_c = 1.2;
    p.utility = UtilitySpec{0.5, -1e10};
    return p;
}

std::vector<std::string> ModelParams::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError(msg); };
    auto finite = [](double v) { return std::isfinite(v); };

    if (!(horizon_T > 0.0) || !finite(horizon_T)) fail("model.T must be finite and > 0");
    if (!(class2_reset_S > 0.0) || !(class2_reset_S <= horizon_T))
        fail("model.S must satisfy 0 < S <= T");
    if (!(intensity_lambda > 0.0) || !finite(intensity_lambda))
        fail("model.lambda must be finite and > 0");
    if (!(deductible_m1 >= 0.0) || !finite(deductible_m1)) fail("model.m1 must be >= 0");
    if (!(deductible_m2 >= 0.0) || !finite(deductible_m2)) fail("model.m2 must be >= 0");
    if (!(utility.gamma > 0.0) || !finite(utility.gamma)) fail("model.gamma must be > 0");
    if (!(utility.floor < 0.0) || !finite(utility.floor)) fail("model.floor must be finite and < 0");
    if (!finite(income_c)) fail("model.c must be finite");

    auto sup_rate = [](const PremiumSpec& ps, double hi) {
        return std::max(ps.rate(0.0), ps.rate(hi));
    };
    auto inf_rate = [](const PremiumSpec& ps, double hi) {
        return std::min(ps.rate(0.0), ps.rate(hi));
    };
    for (const auto* ps : {&premium1, &premium2}) {
        if (!finite(ps->intercept) || !finite(ps->slope)) fail("premium coefficients must be finite");
    }
    const double sup1 = sup_rate(premium1, horizon_T);
    const double sup2 = sup_rate(premium2, class2_reset_S);
    if (!(income_c > sup1)) {
        std::ostringstream os;
        os << "model.c = " << income_c << " must exceed sup pi1 = " << sup1;
        fail(os.str());
    }
    if (!(income_c > sup2)) {
        std::ostringstream os;
        os << "model.c = " << income_c << " must exceed sup pi2 = " << sup2;
        fail(os.str());
    }

    std::vector<std::string> warnings;
    if (!(inf_rate(premium2, class2_reset_S) > sup1)) {
        warnings.emplace_back(
            "class 2 premium is not above the class 1 premium everywhere on the clock range");
    }
    return warnings;
}

// ---------------------------------------------------------------------------

double retention(double y, double m) {
    require_domain(y >= 0.0 && m >= 0.0, "retention: y and m must be >= 0");
    return std::min(y, m);
}

double premium(const ModelParams& p, InsuranceClass i, double s) {
    require_domain(s >= -kDomainSlack && s <= p.horizon_T * (1.0 + kDomainSlack),
                   "premium: s outside [0, T]");
    return p.premium_spec(i).rate(s);
}

double drift_integral(const ModelParams& p, InsuranceClass i, double s, double delta) {
    const double limit = p.clock_limit(i);
    const double slack = kDomainSlack * std::max(1.0, limit);
    require_domain(s >= -slack && delta >= 0.0, "drift_integral: need s >= 0 and delta >= 0");
    require_domain(s + delta <= limit + slack, "drift_integral: s + delta leaves the clock domain");
    if (delta == 0.0) return 0.0;
    return p.income_c * delta - p.premium_spec(i).integral(s, s + delta);
}

double flow_drift(const ModelParams& p, InsuranceClass i, double s, double delta) {
    if (i == InsuranceClass::C2 && s + delta > p.class2_reset_S) {
        const double in_c2 = p.class2_reset_S - s;
        return drift_integral(p, InsuranceClass::C2, s, in_c2) +
               drift_integral(p, InsuranceClass::C1, 0.0, delta - in_c2);
    }
    return drift_integral(p, i, s, delta);
}

double claim_cdf(const ModelParams& p, double y) { return p.claim_law.cdf(y); }

double v0(const ModelParams& p, InsuranceClass i, double t, double s, double x) {
    const double T = p.horizon_T;
    require_domain(t >= 0.0 && t <= T && s >= 0.0 && s <= t, "v0: need 0 <= s <= t <= T");
    if (i == InsuranceClass::C2) {
        require_domain(s <= p.class2_reset_S, "v0: class 2 needs s <= S");
        // The upgrade at clock S is a jump of the extended sequence; the
        // terminal condition takes precedence at t = T.
        if (t < T && !(s + (T - t) < p.class2_reset_S)) return 0.0;
    }
    const double tau = T - t;
    return p.utility(x + drift_integral(p, i, s, tau)) * std::exp(-p.intensity_lambda * tau);
}

}  // namespace bm
