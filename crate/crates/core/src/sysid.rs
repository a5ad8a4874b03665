//! Impulse recovery, parameter identification and post hoc oracles.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_impulse, build_contact_frame, contact_jacobian, BodyModel, ContactFrame, Impulse, PlanarState};
use crate::error::{Error, Result};
use crate::feasible::EnergyEllipse;
use crate::models::{mu_of_u_given, mu_s_capped, predict, ModelId, ModelParams, DEFAULT_MU_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventSource {
    Measured,
    Synthetic { model: ModelId, params: ModelParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactEvent {
    pub t: f64,
    pub q: Vector3<f64>,
    pub v_pre: Vector3<f64>,
    pub v_post: Vector3<f64>,
    pub contact_point: Vector2<f64>,
    pub body_ref: String,
    pub source: EventSource,
    /// Two vertices touched at once; the contact point is their midpoint.
    #[serde(default)]
    pub flat_contact: bool,
}

impl ImpactEvent {
    pub fn pre_state(&self) -> PlanarState {
        PlanarState::new(self.q, self.v_pre, self.t)
    }

    pub fn frame(&self, body: &BodyModel) -> Result<ContactFrame> {
        build_contact_frame(&self.pre_state(), body, self.contact_point)
    }

    pub fn validate(&self, body: &BodyModel) -> Result<()> {
        let finite = self
            .q
            .iter()
            .chain(self.v_pre.iter())
            .chain(self.v_post.iter())
            .chain(self.contact_point.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("event has non-finite entries".into()));
        }
        let v_n = self.frame(body)?.v_n();
        if v_n >= 0.0 {
            return Err(Error::NotApproaching(v_n));
        }
        Ok(())
    }
}

/// `‖(Δvx, Δvy, ρ Δω)‖`, velocity error with rotation in linear units.
pub fn velocity_error(body: &BodyModel, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let rho = body.radius_of_gyration();
    let d = a - b;
    (d.x * d.x + d.y * d.y + rho * rho * d.z * d.z).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub impulse: Impulse,
    /// Norm of `M Δv − Jᵀ p` at the solution.
    pub residual: f64,
}

pub fn recover_impulse(event: &ImpactEvent, body: &BodyModel) -> Result<Recovery> {
    recover_impulse_weighted(event, body, &Vector3::repeat(1.0))
}

/// Weighted least squares `min ‖W^½ (M Δv − Jᵀ p)‖`.
pub fn recover_impulse_weighted(event: &ImpactEvent, body: &BodyModel, weights: &Vector3<f64>) -> Result<Recovery> {
    let j = contact_jacobian(&event.q, &event.contact_point);
    let m = body.mass_matrix();
    let rhs = m * (event.v_post - event.v_pre);
    let jw = Matrix2::<f64>::from_fn(|r, c| (0..3).map(|k| j[(r, k)] * weights[k] * j[(c, k)]).sum());
    let det = jw.determinant();
    if det.abs() <= 1e-12 * jw.norm_squared().max(1.0) {
        return Err(Error::DegenerateJacobian);
    }
    let inv = jw.try_inverse().ok_or(Error::DegenerateJacobian)?;
    let p = inv * (j * rhs.component_mul(weights));
    let residual = (rhs - j.transpose() * p).norm();
    Ok(Recovery {
        impulse: Impulse::from_vector(p),
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub mu_max: f64,
    /// Coarse seeding grid per axis.
    pub grid: usize,
    /// Pattern-search termination step on the unit box.
    pub tol: f64,
    pub shrink: f64,
    /// Range tolerance as a fraction of `‖M_c v_c‖`.
    pub range_tol_frac: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mu_max: DEFAULT_MU_MAX,
            grid: 32,
            tol: 1e-6,
            shrink: 0.5,
            range_tol_frac: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Impulse-space distance at the optimum (summed over events for a batch).
    pub residual: f64,
    pub saturated_mu: bool,
    pub within_range: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFit {
    pub params_mean: ModelParams,
    pub params_std: (f64, f64),
    pub n_events: usize,
    pub resamples: usize,
}

/// Minimize `f` over the unit square: spread-out low nodes of an `n × n` grid
/// each start a compass search along axes and
/// diagonals; every local result is then passed to `refine`. The best wins.
pub fn pattern_search_with(
    f: impl Fn(f64, f64) -> f64,
    refine: impl Fn((f64, f64, f64)) -> (f64, f64, f64),
    n: usize,
    tol: f64,
    shrink: f64,
) -> (f64, f64, f64) {
    const MAX_SEEDS: usize = 12;
    let n = n.max(2);
    let h = 1.0 / (n - 1) as f64;
    let mut vals = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            vals[j * n + i] = f(i as f64 * h, j as f64 * h);
        }
    }
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    // cheapest nodes first, none within two cells of an earlier seed
    let mut seeds: Vec<usize> = Vec::with_capacity(MAX_SEEDS);
    for k in order {
        if seeds.len() == MAX_SEEDS {
            break;
        }
        let near = |s: &usize| (s % n).abs_diff(k % n) <= 2 && (s / n).abs_diff(k / n) <= 2;
        if !seeds.iter().any(near) {
            seeds.push(k);
        }
    }
    let mut best = (0.0, 0.0, f64::INFINITY);
    for k in seeds {
        if !vals[k].is_finite() {
            continue;
        }
        let start = ((k % n) as f64 * h, (k / n) as f64 * h, vals[k]);
        let r = refine(compass(&f, start, h, tol, shrink));
        if r.2 < best.2 {
            best = r;
        }
    }
    best
}

/// [`pattern_search_with`] without a refinement stage.
pub fn pattern_search(f: impl Fn(f64, f64) -> f64, n: usize, tol: f64, shrink: f64) -> (f64, f64, f64) {
    pattern_search_with(f, |x| x, n, tol, shrink)
}

fn compass(f: &impl Fn(f64, f64) -> f64, start: (f64, f64, f64), step0: f64, tol: f64, shrink: f64) -> (f64, f64, f64) {
    let d = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (d, d), (-d, -d), (d, -d), (-d, d)];
    const MAX_ITERS: usize = 5000;
    let mut best = start;
    let mut step = step0;
    let mut iters = 0;
    while step >= tol && iters < MAX_ITERS {
        iters += 1;
        let (x, y, _) = best;
        let mut moved = false;
        for (dx, dy) in dirs {
            let cx = (x + dx * step).clamp(0.0, 1.0);
            let cy = (y + dy * step).clamp(0.0, 1.0);
            if (cx, cy) == (x, y) {
                continue;
            }
            let cv = f(cx, cy);
            if cv < best.2 {
                best = (cx, cy, cv);
                moved = true;
            }
        }
        // grow after a success so long shallow valleys are crossed quickly
        step = if moved { (step / shrink).min(step0) } else { step * shrink };
    }
    best
}

/// Levenberg-Marquardt refinement of a least-squares residual on the unit
/// square, started from a compass-search optimum. Steps are kept only when
/// `cost` drops.
pub fn polish(
    residuals: impl Fn(f64, f64) -> Option<Vec<f64>>,
    cost: impl Fn(f64, f64) -> f64,
    start: (f64, f64, f64),
) -> (f64, f64, f64) {
    let mut best = start;
    let h = 1e-7;
    let mut lambda = 1e-6;
    for _ in 0..40 {
        let (x, y, c) = best;
        let Some(r0) = residuals(x, y) else { break };
        // one-sided differences pointing into the box
        let hx = if x + h <= 1.0 { h } else { -h };
        let hy = if y + h <= 1.0 { h } else { -h };
        let (Some(rx), Some(ry)) = (residuals(x + hx, y), residuals(x, y + hy)) else { break };
        let jx: Vec<f64> = rx.iter().zip(&r0).map(|(a, b)| (a - b) / hx).collect();
        let jy: Vec<f64> = ry.iter().zip(&r0).map(|(a, b)| (a - b) / hy).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let jtj = Matrix2::new(dot(&jx, &jx), dot(&jx, &jy), dot(&jx, &jy), dot(&jy, &jy));
        let jtr = Vector2::new(dot(&jx, &r0), dot(&jy, &r0));
        let mut improved = false;
        while lambda < 1e6 {
            let damped = jtj + Matrix2::from_diagonal(&jtj.diagonal()) * lambda + Matrix2::identity() * 1e-300;
            let Some(inv) = damped.try_inverse() else { break };
            let step = -(inv * jtr);
            let nx = (x + step.x).clamp(0.0, 1.0);
            let ny = (y + step.y).clamp(0.0, 1.0);
            let nc = cost(nx, ny);
            if nc < c {
                best = (nx, ny, nc);
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || best.2 == 0.0 {
            break;
        }
    }
    best
}

fn impulse_distance(model: ModelId, frame: &ContactFrame, params: ModelParams, target: &Impulse) -> f64 {
    match predict(model, frame, params) {
        Ok(r) => (r.impulse - *target).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Identify `(μ, ε)` from one impact over `0 ≤ μ ≤ μ_s(ε)`, `0 ≤ ε ≤ 1`
/// (`μ ≤ μ_max` for models that do not saturate).
///
/// The search runs on `(u, ε)` with `μ = mu_of_u(u, ε)`, which turns the
/// ε-dependent upper bound into a fixed box.
pub fn fit_single(model: ModelId, event: &ImpactEvent, body: &BodyModel, opts: &FitOptions) -> Result<FitResult> {
    let frame = event.frame(body)?;
    crate::models::predict(model, &frame, ModelParams { mu: 0.0, eps: 0.0 })?;
    let target = recover_impulse(event, body)?.impulse;
    fit_frame(model, &frame, &target, opts)
}

pub(crate) fn fit_frame(model: ModelId, frame: &ContactFrame, target: &Impulse, opts: &FitOptions) -> Result<FitResult> {
    // μ_s depends on ε only; grid rows and axis moves reuse it
    let tops = RefCell::new(HashMap::<u64, f64>::new());
    let mu_at = |u: f64, eps: f64| {
        let ms = *tops
            .borrow_mut()
            .entry(eps.to_bits())
            .or_insert_with(|| mu_s_capped(model, frame, eps, opts.mu_max).min(opts.mu_max));
        mu_of_u_given(model, ms, u, opts.mu_max)
    };
    let cost = |u: f64, eps: f64| impulse_distance(model, frame, ModelParams { mu: mu_at(u, eps), eps }, target);
    let residuals = |u: f64, eps: f64| {
        let mu = mu_at(u, eps);
        predict(model, frame, ModelParams { mu, eps })
            .ok()
            .map(|r| vec![r.impulse.p_t - target.p_t, r.impulse.p_n - target.p_n])
    };
    let (u, eps, residual) = pattern_search_with(&cost, |x| polish(&residuals, &cost, x), opts.grid, opts.tol, opts.shrink);
    let ms = mu_s_capped(model, frame, eps, opts.mu_max);
    let mu = mu_at(u, eps);
    let range_tol = opts.range_tol_frac * frame.stick_impulse().norm();
    Ok(FitResult {
        params: ModelParams { mu, eps },
        residual,
        saturated_mu: ms.is_finite() && mu >= ms - 1e-6,
        within_range: residual < range_tol,
    })
}

/// One `(μ, ε)` for many impacts, minimizing the summed impulse distance over
/// `[0, μ_max] × [0, 1]`. No per-event bound is needed:
/// predictions either saturate at `μ_s` or are searched up to `μ_max`.
pub fn fit_batch(model: ModelId, events: &[ImpactEvent], body: &BodyModel, opts: &FitOptions) -> Result<FitResult> {
    if events.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let prepared: Vec<(ContactFrame, Impulse)> = events
        .iter()
        .map(|e| Ok((e.frame(body)?, recover_impulse(e, body)?.impulse)))
        .collect::<Result<_>>()?;
    for (f, _) in &prepared {
        crate::models::predict(model, f, ModelParams { mu: 0.0, eps: 0.0 })?;
    }
    let total = |mu: f64, eps: f64| -> f64 {
        let params = ModelParams { mu, eps };
        prepared
            .par_iter()
            .map(|(f, p)| impulse_distance(model, f, params, p))
            .sum()
    };
    let residuals = |x: f64, eps: f64| {
        let params = ModelParams { mu: x * opts.mu_max, eps };
        let mut out = Vec::with_capacity(2 * prepared.len());
        for (f, p) in &prepared {
            let r = predict(model, f, params).ok()?;
            out.push(r.impulse.p_t - p.p_t);
            out.push(r.impulse.p_n - p.p_n);
        }
        Some(out)
    };
    let cost = |x: f64, e: f64| total(x * opts.mu_max, e);
    let (x, eps, residual) = pattern_search_with(&cost, |x| polish(&residuals, &cost, x), opts.grid, opts.tol, opts.shrink);
    let mu = x * opts.mu_max;
    let params = ModelParams { mu, eps };
    let saturated_mu = prepared.iter().all(|(f, _)| {
        let ms = mu_s_capped(model, f, eps, opts.mu_max);
        ms.is_finite() && mu >= ms - 1e-6
    });
    let within_range = prepared.iter().all(|(f, p)| {
        impulse_distance(model, f, params, p) < opts.range_tol_frac * f.stick_impulse().norm()
    });
    Ok(FitResult {
        params,
        residual,
        saturated_mu,
        within_range,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Batch fits on `resamples` random subsets of each size in `ks`, drawn
/// without replacement.
pub fn convergence_study(
    model: ModelId,
    events: &[ImpactEvent],
    body: &BodyModel,
    ks: &[usize],
    resamples: usize,
    opts: &FitOptions,
    seed: u64,
) -> Result<Vec<(usize, EnsembleFit)>> {
    if events.is_empty() || resamples == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || k > events.len() {
            return Err(Error::InvalidArgument(format!("subset size {k} outside 1..={}", events.len())));
        }
        let subsets: Vec<Vec<ImpactEvent>> = (0..resamples)
            .map(|_| sample(&mut rng, events.len(), k).into_iter().map(|i| events[i].clone()).collect())
            .collect();
        let fits: Vec<FitResult> = subsets.iter().map(|s| fit_batch(model, s, body, opts)).collect::<Result<_>>()?;
        let mus: Vec<f64> = fits.iter().map(|f| f.params.mu).collect();
        let epss: Vec<f64> = fits.iter().map(|f| f.params.eps).collect();
        let (mu, mu_std) = mean_std(&mus);
        let (eps, eps_std) = mean_std(&epss);
        out.push((
            k,
            EnsembleFit {
                params_mean: ModelParams { mu, eps },
                params_std: (mu_std, eps_std),
                n_events: k,
                resamples,
            },
        ));
    }
    Ok(out)
}

/// Post-impact generalized velocity predicted by `model` for `event`.
pub fn predict_outcome(model: ModelId, event: &ImpactEvent, body: &BodyModel, params: ModelParams) -> Result<Vector3<f64>> {
    let frame = event.frame(body)?;
    let r = predict(model, &frame, params)?;
    Ok(apply_impulse(&event.pre_state(), body, &frame, r.impulse).v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocResult {
    pub best: (ModelId, f64),
    pub worst: (ModelId, f64),
    pub errors: Vec<(ModelId, f64)>,
}

/// Best and worst model for one event, each at its ensemble parameters.
pub fn posthoc_best(
    event: &ImpactEvent,
    body: &BodyModel,
    ensemble: &BTreeMap<ModelId, ModelParams>,
) -> Result<PosthocResult> {
    if ensemble.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let errors: Vec<(ModelId, f64)> = ensemble
        .iter()
        .map(|(&m, &p)| Ok((m, velocity_error(body, &predict_outcome(m, event, body, p)?, &event.v_post))))
        .collect::<Result<_>>()?;
    let best = *errors.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let worst = *errors.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    Ok(PosthocResult { best, worst, errors })
}

/// Best outcome any admissible impulse can explain.
pub fn irb_bound(event: &ImpactEvent, body: &BodyModel) -> Result<(Impulse, f64)> {
    let frame = event.frame(body)?;
    let ellipse = EnergyEllipse::new(&frame)?;
    let proj = ellipse.project_outcome(&event.v_post, body, &event.pre_state());
    Ok((proj.impulse, proj.error))
}

/// Fraction of events `model` can reproduce within its range tolerance.
pub fn coverage_fraction(model: ModelId, events: &[ImpactEvent], body: &BodyModel, opts: &FitOptions) -> Result<f64> {
    if events.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inside: Vec<bool> = events
        .par_iter()
        .map(|e| fit_single(model, e, body, opts).map(|f| f.within_range))
        .collect::<Result<_>>()?;
    Ok(inside.iter().filter(|&&b| b).count() as f64 / events.len() as f64)
}
