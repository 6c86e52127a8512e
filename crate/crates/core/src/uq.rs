//! The uncertainty engine.
//!
//! For a query observed as `ξ`, the class-1 predictive probability averages
//! `σ1 = logistic(z1 - z0)` over model parameters (the ensemble members) and
//! over the candidate true inputs `x` of the error model. Instead of
//! averaging the sigmoid directly, the engine estimates the first two
//! moments of the logits and applies the second-order expansion of the
//! sigmoid around the mean logits:
//!
//! ```text
//! E[σ1] ≈ σ1(μ0, μ1) + ½ σ1 (1 − σ1)(1 − 2σ1) Var[Δ],    Δ = z1 − z0
//! ```
//!
//! With the full error model this is the EIV estimate. With the degenerate
//! error model (the observation is the truth) the same computation yields
//! the non-EIV estimate, which only reflects parameter uncertainty. The
//! enumeration-exact average of the sigmoid is kept alongside as an oracle.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{LogitMatrix, LogitSource};
use crate::error::{Error, Result};
use crate::errormodel::{ErrorModel, SupportPoint};
use crate::nn::{class_of, logistic};

/// Tolerance on the support probabilities summing to one.
pub const SUPPORT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Eiv,
    NonEiv,
}

/// Logit moments for one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mu0: f64,
    pub mu1: f64,
    pub var_delta: f64,
    pub regime: Regime,
}

impl MomentEstimate {
    pub fn mu_delta(&self) -> f64 {
        self.mu1 - self.mu0
    }
}

/// Predictive probability with its argmax class and uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveEstimate {
    /// `p1_raw` clamped to `[0, 1]`.
    pub p1: f64,
    /// Second-order estimate before clamping; leaves `[0, 1]` only when the
    /// expansion breaks down.
    pub p1_raw: f64,
    pub predicted_class: u8,
    /// `1 - max(p1, 1 - p1)`, in `[0, 0.5]`.
    pub uncertainty: f64,
}

impl PredictiveEstimate {
    fn from_raw(p1_raw: f64) -> Self {
        let p1 = p1_raw.clamp(0.0, 1.0);
        PredictiveEstimate {
            p1,
            p1_raw,
            predicted_class: class_of(p1),
            uncertainty: 1.0 - p1.max(1.0 - p1),
        }
    }
}

/// Second-order expected class-1 probability from logit moments.
pub fn taylor_expected_prob(mu0: f64, mu1: f64, var_delta: f64) -> Result<PredictiveEstimate> {
    if !(mu0.is_finite() && mu1.is_finite() && var_delta.is_finite()) {
        return Err(Error::NonFinite { what: "logit moments" });
    }
    if var_delta < 0.0 {
        return Err(Error::Data(format!("negative logit variance {var_delta}")));
    }
    let s = logistic(mu1 - mu0);
    Ok(PredictiveEstimate::from_raw(
        s + 0.5 * s * (1.0 - s) * (1.0 - 2.0 * s) * var_delta,
    ))
}

/// Moments over the weighted cloud of `T × columns` logit pairs, exactly
/// as the plug-in sums: `μi = (1/T) Σx Σt zi·p(x)` and
/// `Var[Δ] = (1/T) Σx Σt Δ²·p(x) − ((1/T) Σx Σt Δ·p(x))²`. No small-sample
/// correction is applied.
fn weighted_moments(logits: &LogitMatrix, weights: &[f64], regime: Regime) -> MomentEstimate {
    let t = logits.members() as f64;
    let (mut s0, mut s1, mut sd, mut sd2) = (0.0, 0.0, 0.0, 0.0);
    for (j, &w) in weights.iter().enumerate() {
        for z in logits.column(j) {
            let d = z.z1 - z.z0;
            s0 += z.z0 * w;
            s1 += z.z1 * w;
            sd += d * w;
            sd2 += d * d * w;
        }
    }
    let mean_delta = sd / t;
    let mut var_delta = sd2 / t - mean_delta * mean_delta;
    if var_delta < 0.0 {
        if var_delta < -1e-12 * (1.0 + sd2 / t) {
            log::debug!("clamping logit variance {var_delta} to zero");
        }
        var_delta = 0.0;
    }
    MomentEstimate {
        mu0: s0 / t,
        mu1: s1 / t,
        var_delta,
        regime,
    }
}

fn check_support(logits: &LogitMatrix, support: &[SupportPoint]) -> Result<()> {
    if logits.candidates() != support.len() {
        return Err(Error::Dimension {
            expected: support.len(),
            got: logits.candidates(),
        });
    }
    let total: f64 = support.iter().map(|p| p.probability).sum();
    if (total - 1.0).abs() > SUPPORT_SUM_TOL {
        return Err(Error::Data(format!("support probabilities sum to {total}")));
    }
    Ok(())
}

/// Logit moments under parameter and input uncertainty. Column `j` of
/// `logits` must hold the members' logits at `support[j]`.
pub fn moments_eiv(logits: &LogitMatrix, support: &[SupportPoint]) -> Result<MomentEstimate> {
    check_support(logits, support)?;
    let w: Vec<f64> = support.iter().map(|p| p.probability).collect();
    Ok(weighted_moments(logits, &w, Regime::Eiv))
}

/// Logit moments under parameter uncertainty only: the single column holds
/// the members' logits at the observed input.
pub fn moments_noneiv(logits: &LogitMatrix) -> Result<MomentEstimate> {
    if logits.candidates() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: logits.candidates(),
        });
    }
    Ok(weighted_moments(logits, &[1.0], Regime::NonEiv))
}

fn check_query<S: LogitSource + ?Sized>(source: &S, observed: &[f64]) -> Result<()> {
    if observed.len() != source.input_dim() {
        return Err(Error::Dimension {
            expected: source.input_dim(),
            got: observed.len(),
        });
    }
    Ok(())
}

/// EIV estimate: enumerate the error support of `observed`, evaluate every
/// member there, and expand the sigmoid around the pooled moments.
pub fn u_eiv<S: LogitSource + ?Sized>(
    source: &S,
    error_model: &ErrorModel,
    observed: &[f64],
) -> Result<PredictiveEstimate> {
    Ok(eiv_parts(source, error_model, observed)?.estimate)
}

/// Non-EIV estimate: the observed input is taken as the truth.
pub fn u_noneiv<S: LogitSource + ?Sized>(source: &S, observed: &[f64]) -> Result<PredictiveEstimate> {
    check_query(source, observed)?;
    let logits = source.logits_over(&[observed.to_vec()])?;
    let m = moments_noneiv(&logits)?;
    taylor_expected_prob(m.mu0, m.mu1, m.var_delta)
}

struct EivParts {
    estimate: PredictiveEstimate,
    moments: MomentEstimate,
    p1_exact: f64,
}

fn eiv_parts<S: LogitSource + ?Sized>(source: &S, error_model: &ErrorModel, observed: &[f64]) -> Result<EivParts> {
    check_query(source, observed)?;
    let support = error_model.enumerate_support(observed)?;
    let candidates: Vec<Vec<f64>> = support.iter().map(|p| p.x.clone()).collect();
    let logits = source.logits_over(&candidates)?;
    let moments = moments_eiv(&logits, &support)?;
    let estimate = taylor_expected_prob(moments.mu0, moments.mu1, moments.var_delta)?;
    Ok(EivParts {
        estimate,
        moments,
        p1_exact: exact_from_logits(&logits, &support),
    })
}

fn exact_from_logits(logits: &LogitMatrix, support: &[SupportPoint]) -> f64 {
    let mut total = 0.0;
    for (j, p) in support.iter().enumerate() {
        for z in logits.column(j) {
            total += z.p1() * p.probability;
        }
    }
    total / logits.members() as f64
}

/// Enumeration-exact predictive probability
/// `(1/T) Σt Σx σ1(z^t(x)) p(x)` and its argmax class.
pub fn exact_predictive<S: LogitSource + ?Sized>(
    source: &S,
    error_model: &ErrorModel,
    observed: &[f64],
) -> Result<(f64, u8)> {
    check_query(source, observed)?;
    let support = error_model.enumerate_support(observed)?;
    let candidates: Vec<Vec<f64>> = support.iter().map(|p| p.x.clone()).collect();
    let logits = source.logits_over(&candidates)?;
    let p1 = exact_from_logits(&logits, &support);
    Ok((p1, class_of(p1)))
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Data(format!("probability {p} outside [0, 1]")))
    }
}

/// `1 - max(p, 1 - p)` for a binary distribution with `P(class 1) = p`.
pub fn variation_ratio(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(1.0 - p.max(1.0 - p))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn predictive_entropy(p: f64) -> Result<f64> {
    check_probability(p)?;
    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    Ok(h(p) + h(1.0 - p))
}

/// Everything the engine knows about one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub u_eiv: f64,
    pub u_noneiv: f64,
    pub class_eiv: u8,
    pub class_noneiv: u8,
    /// The two regimes predict different classes.
    pub flip: bool,
    pub eiv: PredictiveEstimate,
    pub noneiv: PredictiveEstimate,
    pub moments_eiv: MomentEstimate,
    pub moments_noneiv: MomentEstimate,
    pub p1_exact_eiv: f64,
    pub p1_exact_noneiv: f64,
    pub entropy_noneiv: f64,
    /// `|p1_exact_eiv - eiv.p1|`.
    pub taylor_gap: f64,
}

/// Assemble the EIV and non-EIV estimates, their exact counterparts, and
/// the flip flag for one observed query.
pub fn uq_report<S: LogitSource + ?Sized>(
    source: &S,
    error_model: &ErrorModel,
    observed: &[f64],
) -> Result<UncertaintyReport> {
    let eiv = eiv_parts(source, error_model, observed)?;
    let obs_logits = source.logits_over(&[observed.to_vec()])?;
    let moments_noneiv = moments_noneiv(&obs_logits)?;
    let noneiv = taylor_expected_prob(moments_noneiv.mu0, moments_noneiv.mu1, moments_noneiv.var_delta)?;
    let p1_exact_noneiv = exact_from_logits(
        &obs_logits,
        &[SupportPoint {
            x: observed.to_vec(),
            probability: 1.0,
        }],
    );
    Ok(UncertaintyReport {
        u_eiv: eiv.estimate.uncertainty,
        u_noneiv: noneiv.uncertainty,
        class_eiv: eiv.estimate.predicted_class,
        class_noneiv: noneiv.predicted_class,
        flip: eiv.estimate.predicted_class != noneiv.predicted_class,
        eiv: eiv.estimate,
        noneiv,
        moments_eiv: eiv.moments,
        moments_noneiv,
        p1_exact_eiv: eiv.p1_exact,
        p1_exact_noneiv,
        entropy_noneiv: predictive_entropy(noneiv.p1)?,
        taylor_gap: (eiv.p1_exact - eiv.estimate.p1).abs(),
    })
}

/// One row of the per-query report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: usize,
    pub class_eiv: u8,
    pub class_noneiv: u8,
    pub flip: bool,
    pub u_eiv: f64,
    pub u_noneiv: f64,
    pub p1_exact_eiv: f64,
    pub p1_exact_noneiv: f64,
    pub entropy_noneiv: f64,
    pub taylor_gap: f64,
    pub true_label: u8,
}

impl QueryRecord {
    pub fn new(query_id: usize, r: &UncertaintyReport, true_label: u8) -> Self {
        QueryRecord {
            query_id,
            class_eiv: r.class_eiv,
            class_noneiv: r.class_noneiv,
            flip: r.flip,
            u_eiv: r.u_eiv,
            u_noneiv: r.u_noneiv,
            p1_exact_eiv: r.p1_exact_eiv,
            p1_exact_noneiv: r.p1_exact_noneiv,
            entropy_noneiv: r.entropy_noneiv,
            taylor_gap: r.taylor_gap,
            true_label,
        }
    }
}

pub fn write_records_csv(path: &Path, records: &[QueryRecord]) -> Result<()> {
    crate::io::write_csv(path, records)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<QueryRecord>> {
    crate::io::read_csv(path)
}
