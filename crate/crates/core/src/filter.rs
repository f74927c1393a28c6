//! Closed-form safety filter for a single barrier constraint.
//!
//! The filter solves `min ||v - v_policy||^2 / 2  s.t.  a^T v >= b` with
//! `a = grad h(q)` and `b = -alpha h(q)`. With one linear constraint the
//! minimizer is the Euclidean projection onto a halfspace.

use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierEval, Vec2};
use crate::error::{Error, Result};

/// Slack allowed on certificate rows before a step counts as a violation.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterParams {
    /// Class-K gain, 1/s.
    pub alpha: f64,
    /// Step size, s.
    pub dt: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { alpha: 1.0, dt: 0.05 }
    }
}

impl FilterParams {
    pub fn new(alpha: f64, dt: f64) -> Result<Self> {
        let p = Self { alpha, dt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// Per-step contraction factor `1 - dt * alpha`.
    pub fn decay(&self) -> f64 {
        1.0 - self.dt * self.alpha
    }

    /// The discrete bound needs `1 - dt * alpha` in `[0, 1)`.
    pub fn check_certifiable(&self) -> Result<()> {
        self.validate()?;
        let rho = self.decay();
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "1 - dt*alpha = {rho} is outside [0, 1)"
            )));
        }
        Ok(())
    }
}

/// Linear constraint `a^T v >= b` at one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub a: Vec2,
    pub b: f64,
}

impl Constraint {
    pub fn from_eval(eval: &BarrierEval, params: &FilterParams) -> Self {
        Self {
            a: eval.gradient,
            b: -params.alpha * eval.value,
        }
    }

    /// `a^T v - b`; negative means violated.
    pub fn margin(&self, v: &Vec2) -> f64 {
        self.a.dot(v) - self.b
    }
}

/// Maps a proposed velocity to a point satisfying a constraint.
pub type Projection = fn(&Constraint, &Vec2) -> Vec2;

/// Closed-form projection onto `{v : a^T v >= b}`.
pub fn project_halfspace(c: &Constraint, v: &Vec2) -> Vec2 {
    let margin = c.margin(v);
    if margin >= 0.0 {
        *v
    } else {
        v + c.a * (-margin / c.a.norm_squared())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub v_safe: Vec2,
    /// `v_safe - v_policy`.
    pub intervention: Vec2,
    /// `a^T v_policy - b`.
    pub margin: f64,
    pub activated: bool,
    /// Barrier gradient was undefined; the action passed through unchanged.
    pub degenerate: bool,
}

pub fn filter_action(eval: &BarrierEval, params: &FilterParams, v_policy: &Vec2) -> FilterOutcome {
    filter_with(project_halfspace, eval, params, v_policy)
}

/// [`filter_action`] with a caller-supplied projection.
pub fn filter_with(
    projection: Projection,
    eval: &BarrierEval,
    params: &FilterParams,
    v_policy: &Vec2,
) -> FilterOutcome {
    let c = Constraint::from_eval(eval, params);
    if eval.degenerate || c.a.norm_squared() == 0.0 {
        return FilterOutcome {
            v_safe: *v_policy,
            intervention: Vec2::zeros(),
            margin: c.margin(v_policy),
            activated: false,
            degenerate: true,
        };
    }
    let margin = c.margin(v_policy);
    let activated = margin < 0.0;
    let v_safe = if activated { projection(&c, v_policy) } else { *v_policy };
    FilterOutcome {
        v_safe,
        intervention: v_safe - v_policy,
        margin,
        activated,
        degenerate: false,
    }
}

/// Checks the KKT conditions of the single-constraint projection problem for
/// `candidate`, independently of how it was computed.
pub fn kkt_oracle_check(
    eval: &BarrierEval,
    params: &FilterParams,
    v_policy: &Vec2,
    candidate: &Vec2,
    tol: f64,
) -> bool {
    kkt_check_constraint(&Constraint::from_eval(eval, params), v_policy, candidate, tol)
}

pub fn kkt_check_constraint(c: &Constraint, v_policy: &Vec2, candidate: &Vec2, tol: f64) -> bool {
    let a_sq = c.a.norm_squared();
    if a_sq == 0.0 {
        return false;
    }
    let a_dot = c.a.dot(candidate);
    // primal feasibility
    if a_dot < c.b - tol {
        return false;
    }
    let delta = candidate - v_policy;
    if delta.norm() <= tol {
        return true;
    }
    // stationarity: delta = lambda * a with lambda >= 0, constraint tight
    let lambda = delta.dot(&c.a) / a_sq;
    let residual = (delta - c.a * lambda).norm();
    residual <= tol && lambda >= -tol && (a_dot - c.b).abs() <= tol
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub step: usize,
    pub h: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub alpha: f64,
    pub dt: f64,
    pub mu: f64,
    pub h0: f64,
    pub rows: Vec<CertificateRow>,
    pub min_slack: f64,
    pub passed: bool,
}

impl CertificateReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "h", "bound", "slack"])?;
        for r in &self.rows {
            out.write_record([
                r.step.to_string(),
                crate::io::sig9(r.h),
                crate::io::sig9(r.bound),
                crate::io::sig9(r.slack),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Compares a barrier trace against `(1 - dt*alpha)^k h0 - mu / (dt*alpha)`.
pub fn certify_dtcbf_bound(h_trace: &[f64], h0: f64, params: &FilterParams, mu: f64) -> Result<CertificateReport> {
    if h_trace.is_empty() {
        return Err(Error::InvalidParameter("empty barrier trace".into()));
    }
    params.check_certifiable()?;
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be >= 0, got {mu}")));
    }
    if h_trace[0] != h0 {
        return Err(Error::InvalidParameter(format!(
            "trace starts at {} but h0 = {h0}",
            h_trace[0]
        )));
    }
    let rho = params.decay();
    let offset = mu / (params.dt * params.alpha);
    let mut scale = 1.0;
    let mut min_slack = f64::INFINITY;
    let rows = h_trace
        .iter()
        .enumerate()
        .map(|(step, &h)| {
            let bound = scale * h0 - offset;
            scale *= rho;
            let slack = h - bound;
            min_slack = min_slack.min(slack);
            CertificateRow { step, h, bound, slack }
        })
        .collect();
    Ok(CertificateReport {
        alpha: params.alpha,
        dt: params.dt,
        mu,
        h0,
        rows,
        min_slack,
        passed: min_slack >= -CERTIFICATE_TOLERANCE,
    })
}
