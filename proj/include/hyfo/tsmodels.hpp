#pragma once

// Automated univariate forecasting: random walk, simple/Holt exponential
// smoothing, ARIMA by conditional sum of squares with AIC order search,
// mapping of Normal predictive distributions onto IFP option bins, and the
// ARIMA+ETS probability ensemble.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hyfo/core.hpp"
#include "hyfo/stats.hpp"

namespace hyfo::ts {

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Series

enum class Frequency { daily, weekly, monthly };

inline std::string_view to_string(Frequency f) {
    switch (f) {
        case Frequency::daily: return "daily";
        case Frequency::weekly: return "weekly";
        case Frequency::monthly: return "monthly";
    }
    return "?";
}

struct Series {
    std::string id;
    std::vector<Day> days;
    std::vector<double> values;
    Frequency frequency = Frequency::daily;

    std::size_t size() const { return values.size(); }

    /// Observations on or before `day`.
    std::span<const double> through(Day day) const {
        const auto it = std::upper_bound(days.begin(), days.end(), day);
        return {values.data(), static_cast<std::size_t>(it - days.begin())};
    }
};

inline Frequency infer_frequency(std::span<const Day> days) {
    if (days.size() < 2) return Frequency::daily;
    std::vector<double> gaps;
    for (std::size_t i = 1; i < days.size(); ++i) gaps.push_back(static_cast<double>(days[i] - days[i - 1]));
    const double g = stats::median(gaps);
    if (g <= 3.0) return Frequency::daily;
    if (g <= 14.0) return Frequency::weekly;
    return Frequency::monthly;
}

inline Day advance(Day day, Frequency f) {
    using namespace std::chrono;
    switch (f) {
        case Frequency::daily: return day + 1;
        case Frequency::weekly: return day + 7;
        case Frequency::monthly: {
            year_month_day ymd{sys_days{days{day}}};
            ymd += months{1};
            if (!ymd.ok()) ymd = ymd.year() / ymd.month() / last;
            return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
        }
    }
    return day + 1;
}

/// Regular series on a grid starting at the first observation; each grid
/// point takes the last observation at or before it. Later duplicates of a
/// day win.
inline Series resample(std::string id, std::vector<std::pair<Day, double>> obs, Frequency frequency) {
    std::stable_sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Series s{std::move(id), {}, {}, frequency};
    if (obs.empty()) return s;
    std::size_t next = 0;
    double current = obs.front().second;
    for (Day day = obs.front().first; day <= obs.back().first; day = advance(day, frequency)) {
        while (next < obs.size() && obs[next].first <= day) current = obs[next++].second;
        s.days.push_back(day);
        s.values.push_back(current);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Models

enum class ModelFamily { random_walk, ses, holt, arima };

inline std::string_view to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::random_walk: return "random_walk";
        case ModelFamily::ses: return "ses";
        case ModelFamily::holt: return "holt";
        case ModelFamily::arima: return "arima";
    }
    return "?";
}

struct ArimaOrder {
    int p = 0, d = 0, q = 0;
    auto operator<=>(const ArimaOrder&) const = default;
};

struct FittedModel {
    ModelFamily family = ModelFamily::random_walk;
    ArimaOrder order;
    std::vector<double> ar;     ///< phi_1..phi_p
    std::vector<double> ma;     ///< theta_1..theta_q
    double mean = 0.0;          ///< ARIMA with d=0 only
    double alpha = 0.0;         ///< ETS level smoothing
    double beta = 0.0;          ///< Holt trend smoothing
    double level = 0.0;         ///< ETS final state
    double trend = 0.0;
    double residual_variance = 0.0;
    double aic = 0.0;
    std::size_t training_n = 0;
    std::vector<double> history;    ///< observations the state is conditioned on
    std::vector<double> residuals;  ///< ARIMA innovations aligned with history (0 before the start)

    /// Parameter vector in a family-specific order, for audit dumps.
    std::vector<double> parameters() const {
        switch (family) {
            case ModelFamily::random_walk: return {};
            case ModelFamily::ses: return {alpha};
            case ModelFamily::holt: return {alpha, beta};
            case ModelFamily::arima: {
                std::vector<double> v = ar;
                v.insert(v.end(), ma.begin(), ma.end());
                if (order.d == 0) v.push_back(mean);
                return v;
            }
        }
        return {};
    }
};

struct PredictiveDistribution {
    int horizon = 1;
    double mean = 0.0;
    double variance = 0.0;
};

inline double variance_floor(double last_value) {
    return 1e-8 * (1.0 + std::abs(last_value)) * (1.0 + std::abs(last_value));
}

namespace detail {

inline std::vector<double> difference(std::span<const double> y, int d) {
    std::vector<double> w(y.begin(), y.end());
    for (int k = 0; k < d; ++k) {
        for (std::size_t i = w.size() - 1; i > 0; --i) w[i] -= w[i - 1];
        w.erase(w.begin());
    }
    return w;
}

/// All roots of 1 - sum a_i z^i lie outside |z| = margin (Schur-Cohn
/// step-down on the scaled polynomial).
inline bool roots_outside(std::span<const double> a, double margin = 1.001) {
    std::vector<double> k(a.begin(), a.end());
    double scale = 1.0;
    for (double& c : k) {
        scale *= margin;
        c *= scale;
    }
    for (std::size_t m = k.size(); m > 0; --m) {
        const double r = k[m - 1];
        if (!(std::abs(r) < 1.0)) return false;
        std::vector<double> next(m - 1);
        for (std::size_t i = 0; i + 1 < m; ++i) next[i] = (k[i] + r * k[m - 2 - i]) / (1.0 - r * r);
        k = std::move(next);
    }
    return true;
}

inline bool stationary(std::span<const double> phi) { return roots_outside(phi); }

inline bool invertible(std::span<const double> theta) {
    std::vector<double> neg(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) neg[j] = -theta[j];
    return roots_outside(neg);
}

/// Minimizes f from x0 with the Nelder-Mead simplex method.
inline std::vector<double> nelder_mead(const std::function<double(std::span<const double>)>& f, std::vector<double> x0,
                                       double step = 0.1, int max_evals = 600, double tol = 1e-10) {
    const std::size_t n = x0.size();
    std::vector<std::vector<double>> simplex(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);
    int evals = static_cast<int>(n + 1);
    std::vector<std::size_t> idx(n + 1);
    std::vector<double> centroid(n), trial(n), trial2(n);
    while (evals < max_evals) {
        for (std::size_t i = 0; i <= n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = idx[0], worst = idx[n], second = idx[n - 1];
        if (std::abs(fv[worst] - fv[best]) <= tol * (std::abs(fv[best]) + tol)) break;
        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[idx[i]][j] / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) trial[j] = centroid[j] + (centroid[j] - simplex[worst][j]);
        const double fr = f(trial);
        ++evals;
        if (fr < fv[best]) {
            for (std::size_t j = 0; j < n; ++j) trial2[j] = centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]);
            const double fe = f(trial2);
            ++evals;
            if (fe < fr) {
                simplex[worst] = trial2;
                fv[worst] = fe;
            } else {
                simplex[worst] = trial;
                fv[worst] = fr;
            }
        } else if (fr < fv[second]) {
            simplex[worst] = trial;
            fv[worst] = fr;
        } else {
            const bool outside = fr < fv[worst];
            for (std::size_t j = 0; j < n; ++j)
                trial2[j] = outside ? centroid[j] + 0.5 * (trial[j] - centroid[j])
                                    : centroid[j] + 0.5 * (simplex[worst][j] - centroid[j]);
            const double fc = f(trial2);
            ++evals;
            if (fc < std::min(fr, fv[worst])) {
                simplex[worst] = trial2;
                fv[worst] = fc;
            } else {
                for (std::size_t i = 1; i <= n; ++i) {
                    auto& v = simplex[idx[i]];
                    for (std::size_t j = 0; j < n; ++j) v[j] = simplex[best][j] + 0.5 * (v[j] - simplex[best][j]);
                    fv[idx[i]] = f(v);
                    ++evals;
                }
            }
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    return simplex[static_cast<std::size_t>(it - fv.begin())];
}

/// Least squares AR(p) on x via normal equations (p <= 3, zero-mean input).
inline std::vector<double> ols_ar(std::span<const double> x, int p) {
    if (p == 0) return {};
    const auto n = static_cast<std::size_t>(p);
    std::vector<double> a(n * n, 0.0), b(n, 0.0);
    for (std::size_t t = n; t < x.size(); ++t)
        for (std::size_t i = 0; i < n; ++i) {
            b[i] += x[t] * x[t - 1 - i];
            for (std::size_t j = 0; j < n; ++j) a[i * n + j] += x[t - 1 - i] * x[t - 1 - j];
        }
    // Gaussian elimination with partial pivoting
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
        if (std::abs(a[piv * n + c]) < 1e-300) return std::vector<double>(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) std::swap(a[c * n + j], a[piv * n + j]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double m = a[r * n + c] / a[c * n + c];
            for (std::size_t j = c; j < n; ++j) a[r * n + j] -= m * a[c * n + j];
            b[r] -= m * b[c];
        }
    }
    std::vector<double> phi(n);
    for (std::size_t c = n; c-- > 0;) {
        double s = b[c];
        for (std::size_t j = c + 1; j < n; ++j) s -= a[c * n + j] * phi[j];
        phi[c] = s / a[c * n + c];
    }
    return phi;
}

/// Innovations of an ARMA(p,q) on zero-mean x, zero before index p.
/// Returns the sum of squares over indices >= sse_from.
inline double css_residuals(std::span<const double> x, std::span<const double> phi, std::span<const double> theta,
                            std::size_t sse_from, std::vector<double>& e) {
    const std::size_t p = phi.size(), q = theta.size();
    e.assign(x.size(), 0.0);
    double sse = 0.0;
    for (std::size_t t = p; t < x.size(); ++t) {
        double v = x[t];
        for (std::size_t i = 0; i < p; ++i) v -= phi[i] * x[t - 1 - i];
        for (std::size_t j = 0; j < q && j < t; ++j) v -= theta[j] * e[t - 1 - j];
        e[t] = v;
        if (t >= sse_from) sse += v * v;
    }
    return sse;
}

/// Coefficients of phi(L)(1-L)^d written as 1 - sum a_i L^i.
inline std::vector<double> integrated_ar(std::span<const double> phi, int d) {
    std::vector<double> poly(phi.size() + 1, 0.0);  // 1 - phi_1 L - ...
    poly[0] = 1.0;
    for (std::size_t i = 0; i < phi.size(); ++i) poly[i + 1] = -phi[i];
    for (int k = 0; k < d; ++k) {
        std::vector<double> next(poly.size() + 1, 0.0);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            next[i] += poly[i];
            next[i + 1] -= poly[i];
        }
        poly = std::move(next);
    }
    std::vector<double> a(poly.size() - 1);
    for (std::size_t i = 1; i < poly.size(); ++i) a[i - 1] = -poly[i];
    return a;
}

/// MA(infinity) weights psi_0..psi_{h-1}.
inline std::vector<double> psi_weights(std::span<const double> ar_full, std::span<const double> theta, int h) {
    std::vector<double> psi(static_cast<std::size_t>(h), 0.0);
    if (h == 0) return psi;
    psi[0] = 1.0;
    for (std::size_t j = 1; j < psi.size(); ++j) {
        double v = j <= theta.size() ? theta[j - 1] : 0.0;
        for (std::size_t i = 1; i <= std::min(j, ar_full.size()); ++i) v += ar_full[i - 1] * psi[j - i];
        psi[j] = v;
    }
    return psi;
}

struct EtsRun {
    double sse = 0.0;
    double level = 0.0;
    double trend = 0.0;
};

/// One-step SSE from t >= 2 with level (and trend) initialized from the
/// first observations.
inline EtsRun run_ets(std::span<const double> y, double alpha, std::optional<double> beta) {
    EtsRun r;
    r.level = y[0];
    r.trend = beta ? y[1] - y[0] : 0.0;
    for (std::size_t t = 1; t < y.size(); ++t) {
        const double e = y[t] - (r.level + r.trend);
        r.level += r.trend + alpha * e;
        if (beta) r.trend += alpha * *beta * e;
        if (t >= 2) r.sse += e * e;
    }
    return r;
}

inline double aic_from_sse(double sse, std::size_t n_eff, int k, double floor) {
    const double n = static_cast<double>(n_eff);
    return n * std::log(std::max(sse, n * floor) / n) + 2.0 * k;
}

}  // namespace detail

inline FittedModel fit_random_walk(std::span<const double> y) {
    if (y.size() < 3) throw FitError("random walk needs at least 3 observations");
    std::vector<double> diffs(y.size() - 1);
    double sse = 0.0;
    for (std::size_t i = 1; i < y.size(); ++i) {
        diffs[i - 1] = y[i] - y[i - 1];
        sse += diffs[i - 1] * diffs[i - 1];
    }
    FittedModel m;
    m.family = ModelFamily::random_walk;
    m.order = {0, 1, 0};
    m.training_n = y.size();
    m.residual_variance = std::max(stats::sample_variance(diffs), variance_floor(y.back()));
    m.aic = detail::aic_from_sse(sse, diffs.size(), 1, variance_floor(y.back()));
    m.history.assign(y.begin(), y.end());
    return m;
}

/// Grid-searched simple and Holt exponential smoothing; the form with the
/// lower AIC wins (simple on ties; smallest alpha, then beta, within a form).
inline FittedModel fit_ets(std::span<const double> y) {
    if (y.size() < 8) throw FitError("ETS needs at least 8 observations");
    const double floor = variance_floor(y.back());
    const std::size_t n_eff = y.size() - 2;
    auto grid = [](int i) { return 0.05 * i; };

    double best_ses_sse = std::numeric_limits<double>::infinity();
    double best_alpha = 0.0;
    detail::EtsRun best_ses;
    for (int i = 1; i <= 19; ++i) {
        const auto r = detail::run_ets(y, grid(i), std::nullopt);
        if (r.sse < best_ses_sse) {
            best_ses_sse = r.sse;
            best_alpha = grid(i);
            best_ses = r;
        }
    }
    double best_holt_sse = std::numeric_limits<double>::infinity();
    double holt_alpha = 0.0, holt_beta = 0.0;
    detail::EtsRun best_holt;
    for (int i = 1; i <= 19; ++i)
        for (int j = 1; j <= 19; ++j) {
            const auto r = detail::run_ets(y, grid(i), grid(j));
            if (r.sse < best_holt_sse) {
                best_holt_sse = r.sse;
                holt_alpha = grid(i);
                holt_beta = grid(j);
                best_holt = r;
            }
        }
    // parameter counts: smoothing weights plus innovation variance
    const double aic_ses = detail::aic_from_sse(best_ses_sse, n_eff, 2, floor);
    const double aic_holt = detail::aic_from_sse(best_holt_sse, n_eff, 3, floor);

    FittedModel m;
    m.training_n = y.size();
    m.history.assign(y.begin(), y.end());
    if (aic_holt < aic_ses) {
        m.family = ModelFamily::holt;
        m.alpha = holt_alpha;
        m.beta = holt_beta;
        m.level = best_holt.level;
        m.trend = best_holt.trend;
        m.aic = aic_holt;
        m.residual_variance = std::max(best_holt_sse / static_cast<double>(n_eff), floor);
    } else {
        m.family = ModelFamily::ses;
        m.alpha = best_alpha;
        m.level = best_ses.level;
        m.aic = aic_ses;
        m.residual_variance = std::max(best_ses_sse / static_cast<double>(n_eff), floor);
    }
    return m;
}

namespace detail {

/// Residuals on the original time axis for fixed ARIMA coefficients.
inline double arima_filter(std::span<const double> y, const ArimaOrder& order, std::span<const double> phi,
                           std::span<const double> theta, double mu, std::size_t sse_from_original,
                           std::vector<double>& residuals, std::size_t* n_terms = nullptr) {
    auto w = difference(y, order.d);
    for (double& v : w) v -= mu;
    const auto d = static_cast<std::size_t>(order.d);
    const std::size_t from_w = sse_from_original > d ? sse_from_original - d : 0;
    std::vector<double> e;
    const double sse = css_residuals(w, phi, theta, std::max(from_w, phi.size()), e);
    residuals.assign(y.size(), 0.0);
    for (std::size_t t = 0; t < e.size(); ++t) residuals[t + d] = e[t];
    if (n_terms) *n_terms = w.size() - std::max(from_w, phi.size());
    return sse;
}

}  // namespace detail

/// ARIMA(p,d,q) by conditional sum of squares. The sum of squares counts
/// innovations from original index `condition_on` (default p+d), so
/// candidates compared under one value share the same sample.
/// Throws FitError for short data or a non-stationary / non-invertible fit.
inline FittedModel fit_arima(std::span<const double> y, ArimaOrder order,
                             std::optional<std::size_t> condition_on = std::nullopt) {
    const int p = order.p, d = order.d, q = order.q;
    if (p < 0 || p > 3 || q < 0 || q > 3 || d < 0 || d > 2) throw FitError("ARIMA order out of range");
    if (static_cast<int>(y.size()) - d <= p + q + 2) throw FitError("insufficient data for ARIMA order");
    const std::size_t sse_from = condition_on.value_or(static_cast<std::size_t>(p + d));
    if (sse_from >= y.size() - 1) throw FitError("insufficient data after conditioning");

    auto w = detail::difference(y, d);
    const double mu = d == 0 ? stats::mean(w) : 0.0;
    std::vector<double> x(w);
    for (double& v : x) v -= mu;

    std::vector<double> phi = detail::ols_ar(x, p);
    std::vector<double> theta(static_cast<std::size_t>(q), 0.0);
    std::vector<double> scratch;
    if (q > 0) {
        const auto from_w = std::max<std::size_t>(sse_from > static_cast<std::size_t>(d) ? sse_from - d : 0, p);
        auto objective = [&](std::span<const double> v) {
            const std::span<const double> ph = v.subspan(0, static_cast<std::size_t>(p));
            const std::span<const double> th = v.subspan(static_cast<std::size_t>(p));
            if (!detail::stationary(ph) || !detail::invertible(th)) return 1e100;
            return detail::css_residuals(x, ph, th, from_w, scratch);
        };
        if (!detail::stationary(phi)) std::fill(phi.begin(), phi.end(), 0.0);
        std::vector<double> start(phi);
        start.insert(start.end(), theta.begin(), theta.end());
        const int budget = 150 * static_cast<int>(start.size());
        auto best = detail::nelder_mead(objective, start, 0.1, budget);
        best = detail::nelder_mead(objective, best, 0.05, budget);  // restart from the optimum
        phi.assign(best.begin(), best.begin() + p);
        theta.assign(best.begin() + p, best.end());
    }
    if (!detail::stationary(phi)) throw FitError("non-stationary AR part");
    if (!detail::invertible(theta)) throw FitError("non-invertible MA part");

    FittedModel m;
    m.family = ModelFamily::arima;
    m.order = order;
    m.ar = phi;
    m.ma = theta;
    m.mean = mu;
    m.training_n = y.size();
    m.history.assign(y.begin(), y.end());
    std::size_t n_terms = 0;
    const double sse = detail::arima_filter(y, order, phi, theta, mu, sse_from, m.residuals, &n_terms);
    const double floor = variance_floor(y.back());
    std::vector<double> used(m.residuals.begin() + static_cast<std::ptrdiff_t>(y.size() - n_terms), m.residuals.end());
    m.residual_variance = std::max(stats::sample_variance(used), floor);
    m.aic = detail::aic_from_sse(sse, n_terms, p + q + 1, floor);
    if (!std::isfinite(m.aic)) throw FitError("non-finite AIC");
    return m;
}

struct ArimaCandidate {
    ArimaOrder order;
    double aic = 0.0;
};

inline constexpr int kMaxArimaP = 3, kMaxArimaD = 2, kMaxArimaQ = 3;

inline constexpr double kSelectionRootMargin = 1.01;

/// KPSS level-stationarity statistic with a Bartlett long-run variance
/// (lag trunc(4 (n/100)^0.25)).
inline double kpss_statistic(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 3) throw FitError("KPSS needs at least 3 observations");
    const double mu = stats::mean(x);
    double partial = 0.0, eta = 0.0, s2 = 0.0;
    for (double v : x) {
        partial += v - mu;
        eta += partial * partial;
        s2 += (v - mu) * (v - mu);
    }
    const auto lags = static_cast<std::size_t>(4.0 * std::pow(static_cast<double>(n) / 100.0, 0.25));
    for (std::size_t l = 1; l <= lags && l < n; ++l) {
        double acc = 0.0;
        for (std::size_t t = l; t < n; ++t) acc += (x[t] - mu) * (x[t - l] - mu);
        s2 += 2.0 * (1.0 - static_cast<double>(l) / static_cast<double>(lags + 1)) * acc;
    }
    const double nn = static_cast<double>(n);
    if (!(s2 > 0.0)) return 0.0;  // constant series
    return eta / (nn * nn) / (s2 / nn);
}

inline constexpr double kKpssCritical = 0.463;  // 5% level

/// Differencing order: difference while the KPSS test rejects stationarity.
inline int select_differencing(std::span<const double> y) {
    int d = 0;
    std::vector<double> w(y.begin(), y.end());
    while (d < kMaxArimaD && w.size() > 12 && kpss_statistic(w) > kKpssCritical) {
        ++d;
        w = detail::difference(y, d);
    }
    return d;
}

/// Stepwise minimum-AIC ARIMA with p,q in 0..3. d comes from repeated KPSS
/// tests (AIC is not comparable across differencing orders); the search
/// starts from the best of (2,d,2), (0,d,0), (1,d,0), (0,d,1) and moves p
/// and/or q by one while the AIC improves. Candidates that fail, or whose AR
/// or MA roots come within 1.01 of the unit circle, are skipped. Ties go to
/// the lexicographically smallest (p,d,q). Falls back to the random walk when
/// no candidate fits.
inline FittedModel auto_arima(std::span<const double> y, std::vector<ArimaCandidate>* evaluated = nullptr) {
    if (y.size() < 12) throw FitError("auto ARIMA needs at least 12 observations");
    const auto common = static_cast<std::size_t>(kMaxArimaP + kMaxArimaD);
    const auto better = [](const FittedModel& a, const FittedModel& b) {
        return a.aic < b.aic || (a.aic == b.aic && a.order < b.order);
    };
    std::optional<FittedModel> best;
    for (int d = select_differencing(y), d_last = d; d <= d_last; ++d) {
        std::map<std::pair<int, int>, std::optional<FittedModel>> cache;
        auto candidate = [&](int p, int q) -> const std::optional<FittedModel>& {
            auto [it, fresh] = cache.try_emplace({p, q});
            if (!fresh || static_cast<int>(y.size()) - d <= p + q + 2) return it->second;
            try {
                auto m = fit_arima(y, {p, d, q}, common);
                std::vector<double> neg(m.ma.size());
                for (std::size_t j = 0; j < m.ma.size(); ++j) neg[j] = -m.ma[j];
                if (detail::roots_outside(m.ar, kSelectionRootMargin) && detail::roots_outside(neg, kSelectionRootMargin)) {
                    if (evaluated) evaluated->push_back({m.order, m.aic});
                    it->second = std::move(m);
                }
            } catch (const FitError&) {
            }
            return it->second;
        };
        std::optional<FittedModel> current;
        for (const auto& [p, q] : {std::pair{2, 2}, std::pair{0, 0}, std::pair{1, 0}, std::pair{0, 1}})
            if (const auto& m = candidate(p, q); m && (!current || better(*m, *current))) current = m;
        if (!current) continue;
        for (bool moved = true; moved;) {
            moved = false;
            const int p0 = current->order.p, q0 = current->order.q;
            for (int dp = -1; dp <= 1; ++dp)
                for (int dq = -1; dq <= 1; ++dq) {
                    const int p = p0 + dp, q = q0 + dq;
                    if ((dp == 0 && dq == 0) || p < 0 || q < 0 || p > kMaxArimaP || q > kMaxArimaQ) continue;
                    if (const auto& m = candidate(p, q); m && better(*m, *current)) {
                        current = m;
                        moved = true;
                    }
                }
        }
        if (!best || better(*current, *best)) best = std::move(current);
    }
    if (!best) return fit_random_walk(y);
    return std::move(*best);
}

/// Same coefficients, state re-conditioned on a new (typically extended)
/// series. The residual variance is kept from the fit.
inline FittedModel update(const FittedModel& model, std::span<const double> y) {
    FittedModel m = model;
    m.history.assign(y.begin(), y.end());
    switch (m.family) {
        case ModelFamily::random_walk: break;
        case ModelFamily::ses:
        case ModelFamily::holt: {
            if (y.size() < 2) throw FitError("ETS update needs at least 2 observations");
            const auto r = detail::run_ets(y, m.alpha, m.family == ModelFamily::holt ? std::optional(m.beta) : std::nullopt);
            m.level = r.level;
            m.trend = r.trend;
            break;
        }
        case ModelFamily::arima:
            if (static_cast<int>(y.size()) <= m.order.d + m.order.p) throw FitError("ARIMA update: series too short");
            detail::arima_filter(y, m.order, m.ar, m.ma, m.mean, 0, m.residuals);
            break;
    }
    return m;
}

/// Predictive distributions for steps 1..h.
inline std::vector<PredictiveDistribution> forecast(const FittedModel& m, int h) {
    if (h < 1) throw std::invalid_argument("forecast horizon must be >= 1");
    std::vector<PredictiveDistribution> out;
    out.reserve(static_cast<std::size_t>(h));
    const double s2 = m.residual_variance;
    switch (m.family) {
        case ModelFamily::random_walk:
            for (int k = 1; k <= h; ++k) out.push_back({k, m.history.back(), k * s2});
            break;
        case ModelFamily::ses:
            for (int k = 1; k <= h; ++k) out.push_back({k, m.level, s2 * (1.0 + (k - 1) * m.alpha * m.alpha)});
            break;
        case ModelFamily::holt: {
            double acc = 1.0;
            for (int k = 1; k <= h; ++k) {
                out.push_back({k, m.level + k * m.trend, s2 * acc});
                const double c = m.alpha * (1.0 + k * m.beta);
                acc += c * c;
            }
            break;
        }
        case ModelFamily::arima: {
            const auto a = detail::integrated_ar(m.ar, m.order.d);
            const double mu = m.order.d == 0 ? m.mean : 0.0;
            const std::size_t n = m.history.size();
            std::vector<double> x(n + static_cast<std::size_t>(h));
            std::vector<double> e(n + static_cast<std::size_t>(h), 0.0);
            for (std::size_t t = 0; t < n; ++t) {
                x[t] = m.history[t] - mu;
                e[t] = t < m.residuals.size() ? m.residuals[t] : 0.0;
            }
            for (std::size_t t = n; t < x.size(); ++t) {
                double v = 0.0;
                for (std::size_t i = 0; i < a.size() && i < t; ++i) v += a[i] * x[t - 1 - i];
                for (std::size_t j = 0; j < m.ma.size() && j < t; ++j) v += m.ma[j] * e[t - 1 - j];
                x[t] = v;
            }
            const auto psi = detail::psi_weights(a, m.ma, h);
            double acc = 0.0;
            for (int k = 1; k <= h; ++k) {
                acc += psi[static_cast<std::size_t>(k - 1)] * psi[static_cast<std::size_t>(k - 1)];
                out.push_back({k, x[n + static_cast<std::size_t>(k) - 1] + mu, s2 * acc});
            }
            break;
        }
    }
    return out;
}

/// Total over steps 1..h under independent increments.
inline PredictiveDistribution window_sum(std::span<const PredictiveDistribution> steps) {
    PredictiveDistribution out;
    out.horizon = steps.empty() ? 0 : steps.back().horizon;
    for (const auto& s : steps) {
        out.mean += s.mean;
        out.variance += s.variance;
    }
    return out;
}

/// Distribution for an IFP's horizon kind at h steps ahead.
inline PredictiveDistribution horizon_distribution(const FittedModel& m, int h, HorizonKind kind) {
    const auto steps = forecast(m, h);
    return kind == HorizonKind::sum_over_window ? window_sum(steps) : steps.back();
}

// ---------------------------------------------------------------------------
// Option probabilities

inline constexpr double kProbabilityFloor = 0.005;

/// Normal mass in each bin (-inf,t0], (t0,t1], ..., (t_last, inf).
inline Probs bin_probabilities(const PredictiveDistribution& dist, std::span<const double> thresholds) {
    if (thresholds.empty()) throw ValidationError("missing thresholds");
    if (!(dist.variance > 0.0)) throw ValidationError("predictive variance must be positive");
    const double sd = std::sqrt(dist.variance);
    Probs p(thresholds.size() + 1);
    double prev = 0.0;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        const double cdf = stats::normal_cdf((thresholds[i] - dist.mean) / sd);
        p[i] = std::max(0.0, cdf - prev);
        prev = cdf;
    }
    p.back() = stats::normal_sf((thresholds.back() - dist.mean) / sd);
    return p;
}

/// Bin masses clamped to [floor, 1-floor] and renormalized.
inline Probs to_option_probs(const PredictiveDistribution& dist, std::span<const double> thresholds,
                             double floor = kProbabilityFloor) {
    Probs p = bin_probabilities(dist, thresholds);
    double sum = 0.0;
    for (double& v : p) {
        v = std::clamp(v, floor, 1.0 - floor);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

inline Probs to_option_probs(const PredictiveDistribution& dist, const Ifp& ifp, double floor = kProbabilityFloor) {
    if (ifp.thresholds.size() + 1 != ifp.num_options()) throw ValidationError("IFP " + ifp.id + " has no thresholds");
    return to_option_probs(dist, ifp.thresholds, floor);
}

/// Option index of a realized value under the bin convention above.
inline std::size_t bin_of(double value, std::span<const double> thresholds) {
    return static_cast<std::size_t>(std::count_if(thresholds.begin(), thresholds.end(), [&](double t) { return value > t; }));
}

// ---------------------------------------------------------------------------
// Machine forecasters

enum class MachineModel { random_walk, ets, auto_arima, phe2 };

inline std::string_view to_string(MachineModel m) {
    switch (m) {
        case MachineModel::random_walk: return "random_walk";
        case MachineModel::ets: return "ets";
        case MachineModel::auto_arima: return "auto_arima";
        case MachineModel::phe2: return "phe2";
    }
    return "?";
}

inline MachineModel parse_machine_model(std::string_view s) {
    if (s == "random_walk") return MachineModel::random_walk;
    if (s == "ets") return MachineModel::ets;
    if (s == "auto_arima") return MachineModel::auto_arima;
    if (s == "phe2") return MachineModel::phe2;
    throw ValidationError("unknown machine model: " + std::string(s));
}

/// Elementwise mean of component vectors, renormalized.
inline Probs average_probs(std::span<const Probs> parts) {
    if (parts.empty()) throw std::invalid_argument("average of nothing");
    Probs out(parts.front().size(), 0.0);
    for (const auto& v : parts)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    double sum = 0.0;
    for (double& v : out) {
        v /= static_cast<double>(parts.size());
        sum += v;
    }
    for (double& v : out) v /= sum;
    return out;
}

/// Fitted components of the ARIMA+ETS ensemble; either may be missing.
struct Phe2Models {
    std::optional<FittedModel> arima;
    std::optional<FittedModel> ets;
    FittedModel fallback;  ///< random walk, used when both components fail
};

inline Phe2Models fit_phe2(std::span<const double> y) {
    Phe2Models m;
    try {
        m.arima = auto_arima(y);
    } catch (const FitError&) {
    }
    try {
        m.ets = fit_ets(y);
    } catch (const FitError&) {
    }
    m.fallback = fit_random_walk(y);
    return m;
}

inline Phe2Models update(const Phe2Models& models, std::span<const double> y) {
    Phe2Models m;
    if (models.arima) m.arima = update(*models.arima, y);
    if (models.ets) m.ets = update(*models.ets, y);
    m.fallback = fit_random_walk(y);
    return m;
}

/// Ensemble option probabilities h steps ahead; degrades to the surviving
/// component, then to the random walk.
inline Probs phe2_probs(const Phe2Models& models, const Ifp& ifp, int h) {
    std::vector<Probs> parts;
    if (models.arima) parts.push_back(to_option_probs(horizon_distribution(*models.arima, h, ifp.horizon_kind), ifp));
    if (models.ets) parts.push_back(to_option_probs(horizon_distribution(*models.ets, h, ifp.horizon_kind), ifp));
    if (parts.empty()) return to_option_probs(horizon_distribution(models.fallback, h, ifp.horizon_kind), ifp);
    return average_probs(parts);
}

inline Probs phe2(std::span<const double> y, const Ifp& ifp, int h) { return phe2_probs(fit_phe2(y), ifp, h); }

/// One machine model's option probabilities for an IFP h steps past the end of y.
inline Probs machine_probs(MachineModel model, std::span<const double> y, const Ifp& ifp, int h) {
    switch (model) {
        case MachineModel::random_walk:
            return to_option_probs(horizon_distribution(fit_random_walk(y), h, ifp.horizon_kind), ifp);
        case MachineModel::ets: return to_option_probs(horizon_distribution(fit_ets(y), h, ifp.horizon_kind), ifp);
        case MachineModel::auto_arima:
            return to_option_probs(horizon_distribution(auto_arima(y), h, ifp.horizon_kind), ifp);
        case MachineModel::phe2: return phe2(y, ifp, h);
    }
    throw std::logic_error("unreachable");
}

}  // namespace hyfo::ts
