// SPDX-License-Identifier: Apache-2.0

//! Decentralized adaptive commit pacing.
//!
//! Each producer waits a gap `T` after every commit attempt. Modelling the
//! other `N - 1` producers' attempt starts as Poisson processes with rate
//! `1 / (T + tau)`, where `tau` is the fragile window (read manifest through
//! conditional write), gives
//!
//! ```text
//! p_conflict(T) = 1 - exp(-(N - 1) * tau / (T + tau))
//! duty(T)       = tau / (T + tau)
//! ```
//!
//! Both decrease in `T`, so the smallest gap meeting a conflict budget
//! `epsilon` and a duty budget `delta` is the larger of the two closed-form
//! lower bounds. Everything here is a pure function; jitter takes its
//! uniform sample as an argument.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DacError {
    #[error("domain error: {0}")]
    Domain(String),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, DacError> {
    Err(DacError::Domain(msg.into()))
}

fn check_non_negative(name: &str, v: f64) -> Result<(), DacError> {
    if v.is_nan() || v < 0.0 || v.is_infinite() {
        return domain(format!("{name} must be finite and non-negative, got {v}"));
    }
    Ok(())
}

/// Controller parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacParams {
    /// Duty budget: maximum fraction of time spent in commit I/O.
    pub delta: f64,
    /// Conflict budget: target upper bound on the per-attempt conflict probability.
    pub epsilon: f64,
    /// EMA coefficient for the fragile-window estimate.
    pub alpha: f64,
    /// Jitter magnitude.
    pub rho: f64,
}

impl Default for DacParams {
    fn default() -> Self {
        DacParams {
            delta: 0.5,
            epsilon: 0.05,
            alpha: 0.2,
            rho: 0.1,
        }
    }
}

impl DacParams {
    /// Looser conflict budget suited to long end-to-end runs.
    pub fn end_to_end() -> Self {
        DacParams {
            epsilon: 0.20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DacError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return domain(format!("delta must be in (0, 1], got {}", self.delta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return domain(format!("epsilon must be in (0, 1), got {}", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return domain(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return domain(format!("rho must be non-negative, got {}", self.rho));
        }
        Ok(())
    }
}

/// Probability that at least one competing attempt lands in a fragile window.
pub fn conflict_probability(t: f64, tau: f64, n: u64) -> Result<f64, DacError> {
    check_non_negative("T", t)?;
    check_non_negative("tau", tau)?;
    if n == 0 {
        return domain("producer count must be at least 1");
    }
    if tau == 0.0 || n == 1 {
        return Ok(0.0);
    }
    let exponent = (n - 1) as f64 * tau / (t + tau);
    Ok(-(-exponent).exp_m1())
}

/// Fraction of an attempt cycle spent inside the fragile window.
pub fn duty(t: f64, tau: f64) -> Result<f64, DacError> {
    check_non_negative("T", t)?;
    check_non_negative("tau", tau)?;
    if tau == 0.0 {
        return Ok(0.0);
    }
    Ok(tau / (t + tau))
}

/// Smallest gap keeping [`conflict_probability`] within `epsilon`.
pub fn t_conf(tau_hat: f64, n: u64, epsilon: f64) -> Result<f64, DacError> {
    check_non_negative("tau_hat", tau_hat)?;
    if n == 0 {
        return domain("producer count must be at least 1");
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("epsilon must be in (0, 1), got {epsilon}"));
    }
    let budget = -(-epsilon).ln_1p();
    Ok(((n - 1) as f64 * tau_hat / budget - tau_hat).max(0.0))
}

/// Smallest gap keeping [`duty`] within `delta`.
pub fn t_cost(tau_hat: f64, delta: f64) -> Result<f64, DacError> {
    check_non_negative("tau_hat", tau_hat)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("delta must be in (0, 1], got {delta}"));
    }
    Ok((1.0 - delta) / delta * tau_hat)
}

/// Smallest gap satisfying both budgets.
pub fn t_star(tau_hat: f64, n: u64, params: &DacParams) -> Result<f64, DacError> {
    Ok(t_conf(tau_hat, n, params.epsilon)?.max(t_cost(tau_hat, params.delta)?))
}

/// Spreads `t_star` over `[t_star, (1 + rho) * t_star]` using `u` in `[0, 1]`.
pub fn jittered_gap(t_star: f64, rho: f64, u: f64) -> Result<f64, DacError> {
    check_non_negative("t_star", t_star)?;
    check_non_negative("rho", rho)?;
    if !(0.0..=1.0).contains(&u) {
        return domain(format!("jitter sample must be in [0, 1], got {u}"));
    }
    Ok(t_star * (1.0 + rho * u))
}

/// Exponential moving average step.
pub fn update_tau(tau_hat: f64, observed: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * tau_hat + alpha * observed
}

/// Per-producer controller state. The fragile-window estimate is `None`
/// until the first observation, which seeds it directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DacState {
    pub tau_hat: Option<f64>,
    /// Current gap in seconds.
    pub gap: f64,
    pub n_producers: u64,
    /// Producer count at which the random phase was last drawn; 0 before
    /// the first draw.
    pub phased_for: u64,
}

impl Default for DacState {
    fn default() -> Self {
        DacState {
            tau_hat: None,
            gap: 0.0,
            n_producers: 1,
            phased_for: 0,
        }
    }
}

impl DacState {
    pub fn observe(&mut self, observed: f64, alpha: f64) {
        let observed = observed.max(0.0);
        self.tau_hat = Some(match self.tau_hat {
            Some(t) => update_tau(t, observed, alpha),
            None => observed,
        });
    }

    /// Recomputes the jittered gap for `n` producers; returns the new gap.
    pub fn recompute(&mut self, n: u64, params: &DacParams, u: f64) -> Result<f64, DacError> {
        self.n_producers = n.max(1);
        let tau = self.tau_hat.unwrap_or(0.0);
        self.gap = jittered_gap(t_star(tau, self.n_producers, params)?, params.rho, u)?;
        Ok(self.gap)
    }

    /// Like [`recompute`](Self::recompute), but whenever the producer count
    /// differs from the one seen at the previous draw, the gap is also
    /// scaled by `phase` in `[0, 1]`. Producers that learn a new count from
    /// the same manifest then start their new cycles at independent points
    /// instead of attempting in lockstep.
    pub fn recompute_phased(&mut self, n: u64, params: &DacParams, u: f64, phase: f64) -> Result<f64, DacError> {
        if !(0.0..=1.0).contains(&phase) {
            return domain(format!("phase sample must be in [0, 1], got {phase}"));
        }
        self.recompute(n, params, u)?;
        if self.phased_for != self.n_producers {
            self.phased_for = self.n_producers;
            self.gap *= phase;
        }
        Ok(self.gap)
    }

    /// Gap used while draining at shutdown: only the duty budget applies.
    pub fn drain_gap(&self, params: &DacParams) -> f64 {
        t_cost(self.tau_hat.unwrap_or(0.0), params.delta).unwrap_or(0.0)
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Numeric inversion of the conflict and duty models, independent of the
    //! closed forms.

    fn p(t: f64, tau: f64, n: u64) -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        1.0 - (-((n - 1) as f64) * tau / (t + tau)).exp()
    }

    fn d(t: f64, tau: f64) -> f64 {
        if tau == 0.0 {
            0.0
        } else {
            tau / (t + tau)
        }
    }

    /// Smallest `T >= 0` with `pred(T)`, for a predicate monotone in `T`.
    fn bisect_inf(pred: impl Fn(f64) -> bool) -> f64 {
        if pred(0.0) {
            return 0.0;
        }
        let mut hi = 1.0;
        while !pred(hi) {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if pred(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    pub fn t_conf(tau: f64, n: u64, eps: f64) -> f64 {
        bisect_inf(|t| p(t, tau, n) <= eps)
    }

    pub fn t_star(tau: f64, n: u64, eps: f64, delta: f64) -> f64 {
        bisect_inf(|t| p(t, tau, n) <= eps && d(t, tau) <= delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn conflict_probability_cases() {
        assert_eq!(conflict_probability(3.0, 1.0, 1).unwrap(), 0.0);
        assert_eq!(conflict_probability(0.0, 0.0, 5).unwrap(), 0.0);
        assert_eq!(conflict_probability(2.0, 0.0, 5).unwrap(), 0.0);
        let p = conflict_probability(0.0, 1.0, 2).unwrap();
        assert!((p - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!(conflict_probability(-1.0, 1.0, 2).is_err());
        assert!(conflict_probability(1.0, -1.0, 2).is_err());
        assert!(conflict_probability(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn duty_cases() {
        assert_eq!(duty(0.0, 1.5).unwrap(), 1.0);
        assert_eq!(duty(3.0, 3.0).unwrap(), 0.5);
        assert_eq!(duty(2.0, 2.0).unwrap(), 0.5);
        assert_eq!(duty(0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn t_conf_cases() {
        assert_eq!(t_conf(1.0, 1, 0.05).unwrap(), 0.0);
        // 31 / -ln(0.95) - 1, evaluated independently in high precision.
        let v = t_conf(1.0, 32, 0.05).unwrap();
        assert!((v - 603.367_498_132_934_4).abs() < 1e-9, "{v}");
        assert!(close(v, oracle::t_conf(1.0, 32, 0.05), 1e-9));
        let p = conflict_probability(v, 1.0, 32).unwrap();
        assert!((p - 0.05).abs() < 1e-12);
        assert!(t_conf(1.0, 2, 0.0).is_err());
        assert!(t_conf(1.0, 2, 1.0).is_err());
    }

    #[test]
    fn t_cost_cases() {
        assert_eq!(t_cost(5.0, 1.0).unwrap(), 0.0);
        assert_eq!(t_cost(2.0, 0.5).unwrap(), 2.0);
        assert_eq!(duty(2.0, 2.0).unwrap(), 0.5);
        for (tau, delta) in [(1.0, 0.25), (0.3, 0.8), (7.0, 0.1)] {
            let t = t_cost(tau, delta).unwrap();
            assert!((duty(t, tau).unwrap() - delta).abs() < 1e-15);
        }
        assert!(t_cost(1.0, 0.0).is_err());
    }

    #[test]
    fn t_star_cases() {
        let slack = DacParams {
            delta: 1.0,
            ..DacParams::default()
        };
        assert_eq!(t_star(2.0, 1, &slack).unwrap(), 0.0);
        // Single producer: duty bound only.
        assert_eq!(t_star(2.0, 1, &DacParams::default()).unwrap(), 2.0);
        assert_eq!(t_star(0.0, 64, &DacParams::default()).unwrap(), 0.0);
        for (tau, n, eps, delta) in [(1.0, 2, 0.05, 0.5), (0.2, 16, 0.2, 0.5), (3.0, 4, 0.5, 0.1)] {
            let params = DacParams { delta, epsilon: eps, ..DacParams::default() };
            let closed = t_star(tau, n, &params).unwrap();
            assert!(close(closed, oracle::t_star(tau, n, eps, delta), 1e-9), "{tau} {n}");
        }
    }

    #[test]
    fn jitter_cases() {
        assert_eq!(jittered_gap(4.0, 0.0, 0.7).unwrap(), 4.0);
        assert!((jittered_gap(4.0, 0.1, 1.0).unwrap() - 4.4).abs() < 1e-12);
        assert!(jittered_gap(4.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn phase_redrawn_when_producer_count_changes() {
        let params = DacParams::default();
        let mut s = DacState::default();
        s.observe(1.0, params.alpha);
        let full = t_star(1.0, 4, &params).unwrap();
        assert!((s.recompute_phased(4, &params, 0.0, 0.25).unwrap() - 0.25 * full).abs() < 1e-12);
        assert!((s.recompute_phased(4, &params, 0.0, 0.25).unwrap() - full).abs() < 1e-12);
        let full8 = t_star(1.0, 8, &params).unwrap();
        assert!((s.recompute_phased(8, &params, 0.0, 0.5).unwrap() - 0.5 * full8).abs() < 1e-12);
        assert!(DacState::default().recompute_phased(4, &params, 0.0, 1.5).is_err());
    }

    #[test]
    fn ema_cases() {
        assert_eq!(update_tau(1.0, 3.0, 1.0), 3.0);
        assert_eq!(update_tau(1.0, 3.0, 0.5), 2.0);
        assert_eq!(update_tau(2.5, 2.5, 0.2), 2.5);
    }

    #[test]
    fn state_seeds_then_smooths() {
        let params = DacParams::default();
        let mut s = DacState::default();
        assert_eq!(s.recompute(8, &params, 0.5).unwrap(), 0.0);
        s.observe(2.0, params.alpha);
        assert_eq!(s.tau_hat, Some(2.0));
        s.observe(4.0, params.alpha);
        assert!((s.tau_hat.unwrap() - 2.4).abs() < 1e-12);
        let gap = s.recompute(8, &params, 0.0).unwrap();
        assert!(close(gap, t_star(2.4, 8, &params).unwrap(), 1e-15));
        assert!((s.drain_gap(&params) - 2.4).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(DacParams::default().validate().is_ok());
        assert!(DacParams::end_to_end().validate().is_ok());
        for bad in [
            DacParams { delta: 0.0, ..DacParams::default() },
            DacParams { epsilon: 1.0, ..DacParams::default() },
            DacParams { alpha: 0.0, ..DacParams::default() },
            DacParams { rho: -0.1, ..DacParams::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn conflict_probability_decreases_in_t(
            tau in 1e-3f64..10.0, n in 1u64..200, t1 in 0.0f64..1e3, dt in 0.0f64..1e3,
        ) {
            let a = conflict_probability(t1, tau, n).unwrap();
            let b = conflict_probability(t1 + dt, tau, n).unwrap();
            prop_assert!(a >= b);
        }

        #[test]
        fn t_star_monotone_in_n_and_tau(
            tau in 1e-4f64..10.0, dtau in 0.0f64..5.0, n in 1u64..300, dn in 0u64..50,
            eps in 0.001f64..0.5, delta in 0.01f64..1.0,
        ) {
            let params = DacParams { delta, epsilon: eps, ..DacParams::default() };
            let base = t_star(tau, n, &params).unwrap();
            prop_assert!(t_star(tau, n + dn, &params).unwrap() >= base);
            prop_assert!(t_star(tau + dtau, n, &params).unwrap() >= base);
        }

        #[test]
        fn jitter_stays_in_band(t in 0.0f64..1e4, rho in 0.0f64..2.0, u in 0.0f64..=1.0) {
            let g = jittered_gap(t, rho, u).unwrap();
            prop_assert!(g >= t && g <= (1.0 + rho) * t * (1.0 + 1e-15));
        }
    }
}
