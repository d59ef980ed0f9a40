//! Instance-wise checks of the convergence theory: Hessian spectrum
//! estimates, per-iteration hypotheses of the linear-rate result and a
//! least-squares fit of the observed rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algorithms::IterationRecord;
use crate::error::{Error, Result};
use crate::heat_core::{ControlTrajectory, OpCounter};
use crate::optimal_control::{evaluate, hessian_apply, hessian_bounds, ControlProblem};

/// Relative slack granted to floating-point comparisons against bounds.
pub const BOUND_SLACK: f64 = 1e-9;

/// `⟨HJ δv, δv⟩_v / ‖δv‖²_v`.
pub fn rayleigh_quotient(pb: &ControlProblem, dv: &ControlTrajectory) -> Result<f64> {
    let hdv = hessian_apply(pb, dv, &mut OpCounter::new())?;
    let nn = pb.dot_v(dv, dv);
    if !(nn > 0.0) {
        return Err(Error::DegenerateDirection);
    }
    Ok(pb.dot_v(&hdv, dv) / nn)
}

/// `count` Rayleigh quotients of uniformly random probes.
pub fn random_quotients(pb: &ControlProblem, count: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let dv = ControlTrajectory::from_fn(pb.full_window(), pb.grid().control_len(), |_, _| {
                rng.random_range(-1.0..1.0)
            });
            rayleigh_quotient(pb, &dv)
        })
        .collect()
}

/// Checkerboard in space, alternating in time: the heat flow damps it
/// almost entirely, so its quotient approaches `α`.
pub fn high_frequency_probe(pb: &ControlProblem) -> ControlTrajectory {
    let grid = pb.grid();
    let nodes = grid.control_nodes().to_vec();
    let nx = grid.nx();
    ControlTrajectory::from_fn(pb.full_window(), grid.control_len(), |m, c| {
        let node = nodes[c];
        if (m + node % nx + node / nx).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    })
}

/// Largest-quotient estimate of the Hessian's upper spectral bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaEstimate {
    /// Largest Rayleigh quotient found.
    pub beta_emp: f64,
    /// Smallest random-probe quotient.
    pub min_quotient: f64,
    pub alpha: f64,
    /// `α + C²/(2ν)`.
    pub beta_upper: f64,
    pub probes: usize,
}

/// `β_emp` from `probes` random Rayleigh quotients, sharpened by power
/// iteration from the best probe. Fails if the estimate leaves
/// `[α, α + C²/(2ν)]`.
pub fn estimate_beta(pb: &ControlProblem, probes: usize, seed: u64) -> Result<BetaEstimate> {
    if probes < 10 {
        return Err(Error::Config(format!("estimate_beta needs at least 10 probes, got {probes}")));
    }
    let bounds = hessian_bounds(pb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ControlTrajectory)> = None;
    let mut min_quotient = f64::INFINITY;
    for _ in 0..probes {
        let dv = ControlTrajectory::from_fn(pb.full_window(), pb.grid().control_len(), |_, _| {
            rng.random_range(-1.0..1.0)
        });
        let q = rayleigh_quotient(pb, &dv)?;
        min_quotient = min_quotient.min(q);
        if best.as_ref().is_none_or(|(b, _)| q > *b) {
            best = Some((q, dv));
        }
    }
    let (mut beta, mut x) = best.expect("probes >= 10");
    let mut counter = OpCounter::new();
    for _ in 0..500 {
        let hx = hessian_apply(pb, &x, &mut counter)?;
        let norm = pb.norm_v(&hx);
        if !(norm > 0.0) {
            break;
        }
        x = hx.scaled(1.0 / norm);
        let q = rayleigh_quotient(pb, &x)?;
        let done = (q - beta).abs() <= 1e-13 * q;
        beta = beta.max(q);
        if done {
            break;
        }
    }
    if beta < bounds.alpha_lower * (1.0 - BOUND_SLACK) || beta > bounds.beta_upper * (1.0 + BOUND_SLACK) {
        return Err(Error::BoundViolation(format!(
            "beta_emp = {beta} outside [{}, {}]",
            bounds.alpha_lower, bounds.beta_upper
        )));
    }
    Ok(BetaEstimate { beta_emp: beta, min_quotient, alpha: pb.alpha(), beta_upper: bounds.beta_upper, probes })
}

/// Observed linear rate of `√(J(v^k) - J*)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateFit {
    Fitted { rate: f64, points: usize },
    InsufficientData { points: usize },
    NoOracle,
}

impl RateFit {
    pub fn rate(&self) -> Option<f64> {
        match self {
            RateFit::Fitted { rate, .. } => Some(*rate),
            _ => None,
        }
    }
}

/// Number of leading iterations ignored by the rate fit.
pub const RATE_FIT_SKIP: usize = 2;
/// Minimum number of points for a rate fit.
pub const RATE_FIT_MIN_POINTS: usize = 6;

/// Least-squares slope of `ln √(J_k - J*)` against `k`, skipping the first
/// [`RATE_FIT_SKIP`] records and every point whose gap is at rounding level
/// (below `1e-10 (J_0 - J*) + 1e-12 |J*|`).
pub fn fit_linear_rate(costs: &[f64], j_star: f64) -> RateFit {
    let Some(&j0) = costs.first() else {
        return RateFit::InsufficientData { points: 0 };
    };
    let floor = 1e-10 * (j0 - j_star).max(0.0) + 1e-12 * j_star.abs();
    let pts: Vec<(f64, f64)> = costs
        .iter()
        .enumerate()
        .skip(RATE_FIT_SKIP)
        .filter(|(_, &j)| j - j_star > floor)
        .map(|(k, &j)| (k as f64, 0.5 * (j - j_star).ln()))
        .collect();
    if pts.len() < RATE_FIT_MIN_POINTS {
        return RateFit::InsufficientData { points: pts.len() };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    RateFit::Fitted { rate: (sxy / sxx).exp(), points: pts.len() }
}

/// Per-iteration hypothesis checks. `None` marks checks that do not apply
/// (no step taken, or no oracle value).
#[derive(Clone, Debug, PartialEq)]
pub struct IterationCheck {
    pub k: usize,
    /// `⟨∇J(v^k), v^{k+1} - v^k⟩_v`.
    pub descent_inner: Option<f64>,
    /// `‖∇J(v^k)‖ / ‖v^{k+1} - v^k‖`.
    pub eta_ratio: Option<f64>,
    /// `descent_inner <= 1e-12 · ‖∇J‖ ‖step‖`.
    pub eq1: Option<bool>,
    /// `eta_ratio <= β_emp²/α`.
    pub eq2: Option<bool>,
    /// `θ ∈ [α/β_emp, β_emp/α]`.
    pub theta_in_bounds: Option<bool>,
    /// Every inner `ρ ∈ [1/β_emp, 1/α]`.
    pub rho_in_bounds: Option<bool>,
    /// `J(v^k) - J(v^{k+1}) >= (α/2)‖v^{k+1} - v^k‖²`.
    pub et1: Option<bool>,
    /// `J(v^k) > J*`.
    pub eq0: Option<bool>,
}

impl IterationCheck {
    /// True unless a check that applies failed. `eq0` is excluded: its
    /// failure signals finite termination, not a broken hypothesis.
    pub fn passed(&self) -> bool {
        [self.eq1, self.eq2, self.theta_in_bounds, self.rho_in_bounds, self.et1].iter().all(|c| c != &Some(false))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub alpha: f64,
    pub beta_emp: f64,
    /// `η = β_emp²/α`.
    pub eta_bound: f64,
    /// `1 - 2α²/η²`.
    pub rate_bound: f64,
    /// `γ = 1/(2√α)`.
    pub gamma: f64,
    /// `c = α^{3/2}/η`.
    pub c: f64,
    pub iterations: Vec<IterationCheck>,
    pub fitted_rate: RateFit,
    /// Some iterate already has `J = J*`.
    pub finite_termination: bool,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.iterations.iter().all(IterationCheck::passed)
    }

    /// Fitted rate within `rate_bound + tol`; `None` without a fit.
    pub fn rate_within_bound(&self, tol: f64) -> Option<bool> {
        self.fitted_rate.rate().map(|r| r <= self.rate_bound + tol)
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo * (1.0 - BOUND_SLACK) && x <= hi * (1.0 + BOUND_SLACK)
}

/// Evaluates the linear-rate hypotheses along a recorded run. Uses the true
/// cost of every record.
pub fn check_hypotheses(
    history: &[IterationRecord],
    alpha: f64,
    beta_emp: f64,
    j_star: Option<f64>,
) -> Result<HypothesisReport> {
    if history.len() < 2 {
        return Err(Error::Config(format!("hypothesis checks need at least 2 iterations, got {}", history.len())));
    }
    if !(alpha > 0.0 && beta_emp >= alpha) {
        return Err(Error::Config(format!("need 0 < alpha <= beta, got {alpha}, {beta_emp}")));
    }
    let eta = beta_emp * beta_emp / alpha;
    let rate_bound = 1.0 - 2.0 * alpha * alpha / (eta * eta);
    let gamma = 1.0 / (2.0 * alpha.sqrt());
    let c = alpha.powf(1.5) / eta;

    let mut iterations = Vec::with_capacity(history.len());
    for (i, rec) in history.iter().enumerate() {
        let next = history.get(i + 1);
        let step = rec.step_norm.filter(|_| next.is_some());
        let eta_ratio = step.filter(|&s| s > 0.0).map(|s| rec.grad_norm / s);
        let descent_inner = rec.descent_inner.filter(|_| next.is_some());
        let eq1 = descent_inner.zip(step).map(|(d, s)| d <= 1e-12 * rec.grad_norm * s);
        let eq2 = eta_ratio.map(|r| r <= eta * (1.0 + BOUND_SLACK));
        let theta_in_bounds = rec.theta.filter(|_| next.is_some()).map(|t| within(t, alpha / beta_emp, beta_emp / alpha));
        let rho_in_bounds = (!rec.rhos.is_empty() && next.is_some())
            .then(|| rec.rhos.iter().all(|&r| within(r, 1.0 / beta_emp, 1.0 / alpha)));
        let et1 = next.zip(step).map(|(n, s)| {
            let drop = rec.true_cost - n.true_cost;
            drop >= 0.5 * alpha * s * s - 1e-13 * rec.true_cost.abs().max(1.0)
        });
        let eq0 = j_star.map(|js| rec.true_cost - js > 1e-15 * js.abs().max(1e-300));
        iterations.push(IterationCheck {
            k: rec.k,
            descent_inner,
            eta_ratio,
            eq1,
            eq2,
            theta_in_bounds,
            rho_in_bounds,
            et1,
            eq0,
        });
    }
    let finite_termination = iterations.iter().any(|c| c.eq0 == Some(false));
    let fitted_rate = match j_star {
        Some(js) => fit_linear_rate(&history.iter().map(|r| r.true_cost).collect::<Vec<_>>(), js),
        None => RateFit::NoOracle,
    };
    Ok(HypothesisReport {
        alpha,
        beta_emp,
        eta_bound: eta,
        rate_bound,
        gamma,
        c,
        iterations,
        fitted_rate,
        finite_termination,
    })
}

/// Both sides of the error estimates at one control, given the optimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEstimates {
    /// `√(J(v) - J*)`.
    pub sqrt_gap: f64,
    /// `‖∇J(v)‖_v`.
    pub grad_norm: f64,
    /// `‖v - v*‖_v`.
    pub distance: f64,
}

impl ErrorEstimates {
    /// `√(J - J*) <= γ ‖∇J‖` for a given `γ`.
    pub fn et2_holds(&self, gamma: f64) -> bool {
        self.sqrt_gap <= gamma * self.grad_norm * (1.0 + BOUND_SLACK)
    }

    /// `‖v - v*‖ <= ‖∇J‖/α`.
    pub fn loja2_holds(&self, alpha: f64) -> bool {
        self.distance <= self.grad_norm / alpha * (1.0 + BOUND_SLACK)
    }
}

pub fn error_estimates(pb: &ControlProblem, v: &ControlTrajectory, v_star: &ControlTrajectory, j_star: f64) -> Result<ErrorEstimates> {
    let eval = evaluate(pb, v, &mut OpCounter::new())?;
    Ok(ErrorEstimates {
        sqrt_gap: (eval.cost - j_star).max(0.0).sqrt(),
        grad_norm: pb.norm_v(&eval.gradient),
        distance: pb.norm_v(&v.sub(v_star)),
    })
}

/// One `diagnostics.csv` block.
pub fn write_report<W: std::io::Write>(out: &mut W, label: &str, report: &HypothesisReport) -> Result<()> {
    let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    let flag = |x: Option<bool>| match x {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    };
    let (rate, points) = match report.fitted_rate {
        RateFit::Fitted { rate, points } => (format!("{rate:e}"), points.to_string()),
        RateFit::InsufficientData { points } => ("insufficient data".to_string(), points.to_string()),
        RateFit::NoOracle => ("no oracle".to_string(), String::new()),
    };
    writeln!(
        out,
        "# run={label} alpha={:e} beta_emp={:e} eta_bound={:e} rate_bound={:e} gamma={:e} c={:e} fitted_rate={rate} fit_points={points} finite_termination={}",
        report.alpha, report.beta_emp, report.eta_bound, report.rate_bound, report.gamma, report.c, report.finite_termination
    )?;
    writeln!(out, "run,iter,descent_inner,eta_ratio,eq0,eq1,eq2,theta_ok,rho_ok,et1")?;
    for c in &report.iterations {
        writeln!(
            out,
            "{label},{},{},{},{},{},{},{},{},{}",
            c.k,
            opt(c.descent_inner),
            opt(c.eta_ratio),
            flag(c.eq0),
            flag(c.eq1),
            flag(c.eq2),
            flag(c.theta_in_bounds),
            flag(c.rho_in_bounds),
            flag(c.et1)
        )?;
    }
    Ok(())
}
