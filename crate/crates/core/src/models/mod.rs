//! Six two-parameter rigid impact models and the tools built on them.

mod algebraic;
mod poisson;
mod routh;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ContactFrame, Impulse};
use crate::error::{Error, Result};
use crate::geometry::convex_hull;

pub use algebraic::{ap_newton, whittaker};
pub use poisson::{ap_poisson, drumwright_shell};
pub use routh::{default_step, mirtich, routh_integrate, wang_mason, Termination};

pub const DEFAULT_MU_MAX: f64 = 2.0;
pub const MU_S_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mu: f64,
    pub eps: f64,
}

impl ModelParams {
    pub fn new(mu: f64, eps: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("mu must be finite and >= 0, got {mu}")));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!("eps must lie in [0, 1], got {eps}")));
        }
        Ok(Self { mu, eps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    ApNewton,
    ApPoisson,
    DrumwrightShell,
    Mirtich,
    WangMason,
    Whittaker,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::ApNewton,
        ModelId::ApPoisson,
        ModelId::DrumwrightShell,
        ModelId::Mirtich,
        ModelId::WangMason,
        ModelId::Whittaker,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::ApNewton => "ap_newton",
            ModelId::ApPoisson => "ap_poisson",
            ModelId::DrumwrightShell => "drumwright_shell",
            ModelId::Mirtich => "mirtich",
            ModelId::WangMason => "wang_mason",
            ModelId::Whittaker => "whittaker",
        }
    }

    /// Whether predictions stop changing once `μ ≥ μ_s`. Energetic restitution
    /// does not: a longer slip changes the compression work, and with it the
    /// rebound.
    pub fn saturates_in_mu(self) -> bool {
        self != ModelId::Mirtich
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Stick,
    Slide,
    SlideThenStick,
}

/// Named by-products of a prediction. Absent fields do not apply to the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub compression_impulse: Option<Impulse>,
    pub compression_work: Option<f64>,
    pub restitution_work: Option<f64>,
    pub steps: Option<usize>,
}

impl Diagnostics {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(p) = self.compression_impulse {
            out.push(("compression_impulse_t", p.p_t));
            out.push(("compression_impulse_n", p.p_n));
        }
        if let Some(w) = self.compression_work {
            out.push(("compression_work", w));
        }
        if let Some(w) = self.restitution_work {
            out.push(("restitution_work", w));
        }
        if let Some(n) = self.steps {
            out.push(("steps", n as f64));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResult {
    pub impulse: Impulse,
    pub mode: Mode,
    pub post_contact_velocity: Vector2<f64>,
    /// True when the prediction no longer depends on `mu`: the tangential
    /// impulse is interior to the friction cone in every phase that
    /// determines the outcome.
    pub stick_regime: bool,
    pub diagnostics: Diagnostics,
}

impl ImpulseResult {
    pub(crate) fn new(frame: &ContactFrame, impulse: Impulse, mode: Mode, stick_regime: bool) -> Self {
        Self {
            impulse,
            mode,
            post_contact_velocity: frame.post_velocity(impulse),
            stick_regime,
            diagnostics: Diagnostics::default(),
        }
    }
}

pub fn predict(model: ModelId, frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    match model {
        ModelId::ApNewton => ap_newton(frame, params),
        ModelId::ApPoisson => ap_poisson(frame, params),
        ModelId::DrumwrightShell => drumwright_shell(frame, params),
        ModelId::Mirtich => mirtich(frame, params),
        ModelId::WangMason => wang_mason(frame, params),
        ModelId::Whittaker => whittaker(frame, params),
    }
}

pub(crate) fn check_approaching(frame: &ContactFrame) -> Result<()> {
    let v_n = frame.v_n();
    if v_n >= 0.0 || !v_n.is_finite() {
        return Err(Error::NotApproaching(v_n));
    }
    Ok(())
}

/// Impulses that bring the normal contact velocity to `v_nf`, written as
/// `p_n = p0 − r·p_t` with post tangential velocity `c + k·p_t`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NormalLine {
    pub p0: f64,
    pub r: f64,
    pub c: f64,
    pub k: f64,
}

impl NormalLine {
    pub fn new(a: &Matrix2<f64>, v: &Vector2<f64>, v_nf: f64) -> Self {
        let p0 = (v_nf - v.y) / a.m22;
        let r = a.m12 / a.m22;
        Self {
            p0,
            r,
            c: v.x + a.m12 * p0,
            k: a.m11 - a.m12 * r,
        }
    }

    /// Tangential impulse that zeroes the post tangential velocity.
    pub fn stick_root(&self) -> f64 {
        -self.c / self.k
    }

    pub fn p_n(&self, p_t: f64) -> f64 {
        self.p0 - self.r * p_t
    }

    /// Range of `p_t` with `|p_t| ≤ μ p_n(p_t)`. Contains 0 when `p0 ≥ 0`.
    pub fn cone(&self, mu: f64) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        // p_t (1 + μr) ≤ μ p0
        let up = 1.0 + mu * self.r;
        if up > 0.0 {
            hi = mu * self.p0 / up;
        } else if up < 0.0 {
            lo = lo.max(mu * self.p0 / up);
        }
        // -p_t (1 - μr) ≤ μ p0
        let down = 1.0 - mu * self.r;
        if down > 0.0 {
            lo = lo.max(-mu * self.p0 / down);
        } else if down < 0.0 {
            hi = hi.min(-mu * self.p0 / down);
        }
        (lo, hi)
    }
}

/// Clamp with a flag telling whether `x` was already inside (ties count
/// as inside).
pub(crate) fn clamp_flag(x: f64, lo: f64, hi: f64) -> (f64, bool) {
    if x < lo {
        (lo, false)
    } else if x > hi {
        (hi, false)
    } else {
        (x, true)
    }
}

/// Smallest friction coefficient, to `MU_S_TOL`, at which `model` enters
/// its stick regime. Infinite when it does not stick at `mu_max`.
pub fn mu_s(model: ModelId, frame: &ContactFrame, eps: f64) -> f64 {
    mu_s_capped(model, frame, eps, DEFAULT_MU_MAX)
}

pub fn mu_s_capped(model: ModelId, frame: &ContactFrame, eps: f64, mu_max: f64) -> f64 {
    let sticks = |mu: f64| {
        predict(model, frame, ModelParams { mu, eps })
            .map(|r| r.stick_regime)
            .unwrap_or(false)
    };
    if sticks(0.0) {
        return 0.0;
    }
    if !sticks(mu_max) {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, mu_max);
    while hi - lo > MU_S_TOL {
        let mid = 0.5 * (lo + hi);
        if sticks(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Upper end of the `μ` range worth searching at `ε`: `μ_s` where predictions
/// saturate, `μ_max` otherwise.
pub fn mu_range_top(model: ModelId, frame: &ContactFrame, eps: f64, mu_max: f64) -> f64 {
    if model.saturates_in_mu() {
        mu_s_capped(model, frame, eps, mu_max).min(mu_max)
    } else {
        mu_max
    }
}

/// Share of the unit `u` axis spent below `μ_s` for models that keep changing
/// above it.
pub const MU_KNEE: f64 = 0.75;

/// Maps `u ∈ [0, 1]` onto the searched `μ` range at `ε`. Saturating models use
/// `μ = u·min(μ_s, μ_max)`; the others put `u = MU_KNEE` at `μ_s` and reach
/// `μ_max` at `u = 1`.
pub fn mu_of_u(model: ModelId, frame: &ContactFrame, eps: f64, u: f64, mu_max: f64) -> f64 {
    let ms = mu_s_capped(model, frame, eps, mu_max).min(mu_max);
    mu_of_u_given(model, ms, u, mu_max)
}

/// [`mu_of_u`] with `min(μ_s, μ_max)` already known.
pub fn mu_of_u_given(model: ModelId, ms: f64, u: f64, mu_max: f64) -> f64 {
    if model.saturates_in_mu() {
        u * ms
    } else if u <= MU_KNEE {
        ms * u / MU_KNEE
    } else {
        ms + (mu_max - ms) * (u - MU_KNEE) / (1.0 - MU_KNEE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub mu: f64,
    pub eps: f64,
    pub impulse: Impulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTrace {
    pub model: ModelId,
    pub points: Vec<TracePoint>,
    pub hull: Vec<Impulse>,
}

impl RegionTrace {
    pub fn hull_area(&self) -> f64 {
        let v: Vec<Vector2<f64>> = self.hull.iter().map(|p| p.to_vector()).collect();
        crate::geometry::signed_area(&v).abs()
    }
}

/// Predictions over `μ ∈ [0, mu_range_top]`, `ε ∈ [0, 1]` and their convex hull.
pub fn region_trace(model: ModelId, frame: &ContactFrame, grid: (usize, usize)) -> Result<RegionTrace> {
    region_trace_capped(model, frame, grid, DEFAULT_MU_MAX)
}

pub fn region_trace_capped(
    model: ModelId,
    frame: &ContactFrame,
    grid: (usize, usize),
    mu_max: f64,
) -> Result<RegionTrace> {
    let (n_mu, n_eps) = grid;
    if n_mu < 8 || n_eps < 8 {
        return Err(Error::InvalidArgument(format!("grid must be at least 8x8, got {n_mu}x{n_eps}")));
    }
    check_approaching(frame)?;
    let mut points = Vec::with_capacity(n_mu * n_eps);
    for j in 0..n_eps {
        let eps = j as f64 / (n_eps - 1) as f64;
        let top = mu_range_top(model, frame, eps, mu_max);
        for i in 0..n_mu {
            let mu = top * i as f64 / (n_mu - 1) as f64;
            let r = predict(model, frame, ModelParams { mu, eps })?;
            points.push(TracePoint { mu, eps, impulse: r.impulse });
        }
    }
    let pts: Vec<Vector2<f64>> = points.iter().map(|p| p.impulse.to_vector()).collect();
    let hull = convex_hull(&pts).into_iter().map(Impulse::from_vector).collect();
    Ok(RegionTrace { model, points, hull })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(a: [[f64; 2]; 2], v: [f64; 2]) -> ContactFrame {
        ContactFrame::from_contact_space(Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]), Vector2::new(v[0], v[1]))
            .unwrap()
    }

    #[test]
    fn model_names_round_trip() {
        for m in ModelId::ALL {
            assert_eq!(m.as_str().parse::<ModelId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("newton".parse::<ModelId>().is_err());
    }

    #[test]
    fn params_box() {
        assert!(ModelParams::new(0.3, 0.5).is_ok());
        assert!(ModelParams::new(-0.1, 0.5).is_err());
        assert!(ModelParams::new(0.1, 1.5).is_err());
    }

    #[test]
    fn decoupled_frictionless_drop() {
        let f = frame([[1.0, 0.0], [0.0, 1.0]], [0.0, -1.0]);
        for m in ModelId::ALL {
            let r = predict(m, &f, ModelParams { mu: 0.0, eps: 0.5 }).unwrap();
            assert!((r.impulse.p_t).abs() < 1e-9, "{m}");
            assert!((r.impulse.p_n - 1.5).abs() < 1e-9, "{m}");
        }
    }

    #[test]
    fn plastic_stick_is_ellipse_center() {
        let f = frame([[1.1, 0.1], [0.1, 1.1]], [1.0, -1.0]);
        let center = f.stick_impulse();
        for m in ModelId::ALL {
            let ms = mu_s(m, &f, 0.0);
            assert!(ms.is_finite(), "{m}");
            let r = predict(m, &f, ModelParams { mu: ms, eps: 0.0 }).unwrap();
            assert!((r.impulse - center).norm() < 1e-6, "{m}: {:?}", r.impulse);
        }
    }

    #[test]
    fn separating_contact_is_rejected() {
        let f = frame([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.1]);
        for m in ModelId::ALL {
            assert!(matches!(predict(m, &f, ModelParams { mu: 0.2, eps: 0.5 }), Err(Error::NotApproaching(_))));
        }
    }

    #[test]
    fn cone_interval() {
        let a = Matrix2::new(1.1, 0.1, 0.1, 1.1);
        let line = NormalLine::new(&a, &Vector2::new(1.0, -1.0), 0.5);
        let (lo, hi) = line.cone(0.3);
        assert!(lo < 0.0 && hi > 0.0);
        for p_t in [lo, hi] {
            assert!((p_t.abs() - 0.3 * line.p_n(p_t)).abs() < 1e-12);
        }
    }

    #[test]
    fn mu_s_for_zero_slip_decoupled() {
        let f = frame([[0.5, 0.0], [0.0, 2.0]], [0.0, -1.0]);
        for m in ModelId::ALL {
            assert_eq!(mu_s(m, &f, 0.5), 0.0, "{m}");
        }
    }

    #[test]
    fn mu_s_newton_decoupled_closed_form() {
        let f = frame([[0.5, 0.0], [0.0, 2.0]], [0.3, -1.0]);
        let eps = 0.4;
        let p_t: f64 = -0.3 / 0.5;
        let p_n = (1.0 + eps) / 2.0;
        let expect = p_t.abs() / p_n;
        let got = mu_s(ModelId::ApNewton, &f, eps);
        assert!((got - expect).abs() <= 2e-6, "{got} vs {expect}");
    }

    #[test]
    fn trace_needs_a_real_grid() {
        let f = frame([[1.1, 0.1], [0.1, 1.1]], [1.0, -1.0]);
        assert!(region_trace(ModelId::ApNewton, &f, (4, 8)).is_err());
        let t = region_trace(ModelId::ApNewton, &f, (8, 8)).unwrap();
        assert_eq!(t.points.len(), 64);
        assert!(t.hull.len() >= 3);
    }
}
