//! Sampled trajectories: validation, impact detection, ballistic fits and
//! event extraction.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyModel, PlanarState};
use crate::error::{Error, Result};
use crate::sysid::{EventSource, ImpactEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySeries {
    pub samples: Vec<PlanarState>,
    pub body_ref: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub g: f64,
    pub sample_rate: f64,
    pub ground_y: f64,
    /// Acceleration spike threshold in units of `g`.
    pub spike_threshold_g: f64,
    pub refractory: usize,
    pub window: usize,
    pub guard: usize,
    pub min_window: usize,
    pub min_samples: usize,
    /// Largest allowed gap, in nominal periods.
    pub max_gap_periods: f64,
    /// Relative energy tolerance.
    pub tol_energy: f64,
    /// RMS deviation from a ballistic path, m.
    pub tol_dev: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            g: 9.81,
            sample_rate: 250.0,
            ground_y: 0.0,
            spike_threshold_g: 5.0,
            refractory: 5,
            window: 25,
            guard: 2,
            min_window: 5,
            min_samples: 50,
            max_gap_periods: 1.5,
            tol_energy: 0.02,
            tol_dev: 2e-3,
        }
    }
}

impl PipelineConfig {
    pub fn period(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub energy_ok: bool,
    pub frame_drop_ok: bool,
    pub deviation_ok: bool,
    pub details: BTreeMap<String, f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.energy_ok && self.frame_drop_ok && self.deviation_ok
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
}

impl TrajectorySeries {
    pub fn new(samples: Vec<PlanarState>, body_ref: impl Into<String>) -> Self {
        Self {
            samples,
            body_ref: body_ref.into(),
            meta: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for s in &self.samples {
            wr.serialize(Row {
                t: s.t,
                x: s.q.x,
                y: s.q.y,
                theta: s.q.z,
            })?;
        }
        if self.samples.is_empty() {
            wr.write_record(["t", "x", "y", "theta"])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, body_ref: impl Into<String>) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers().map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?.clone();
        if headers.is_empty() {
            return Err(Error::Parse { row: 0, msg: "empty file".into() });
        }
        let want = ["t", "x", "y", "theta"];
        if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h != w) {
            return Err(Error::Parse {
                row: 1,
                msg: format!("expected header t,x,y,theta, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut samples: Vec<PlanarState> = Vec::new();
        for (i, rec) in rd.deserialize::<Row>().enumerate() {
            let row = i + 2;
            let r = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            if ![r.t, r.x, r.y, r.theta].iter().all(|v| v.is_finite()) {
                return Err(Error::Parse { row, msg: "non-finite value".into() });
            }
            if let Some(prev) = samples.last() {
                if r.t <= prev.t {
                    return Err(Error::Monotonicity { row });
                }
            }
            samples.push(PlanarState::at_rest(Vector3::new(r.x, r.y, r.theta), r.t));
        }
        if samples.is_empty() {
            return Err(Error::Parse { row: 1, msg: "no samples".into() });
        }
        Ok(Self::new(samples, body_ref))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<TrajectorySeries> {
    let path = path.as_ref();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    TrajectorySeries::read_csv(std::fs::File::open(path)?, name)
}

/// Ballistic fit over a window: `x = a + b τ`, `y = a + b τ − g τ²/2`,
/// `θ = a + b τ`, with `τ = t − t_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFit {
    pub t_ref: f64,
    pub g: f64,
    pub offset: Vector3<f64>,
    pub rate: Vector3<f64>,
    /// Per-channel residual RMS (m, m, rad).
    pub rms: Vector3<f64>,
    pub n: usize,
}

impl ParabolaFit {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let tau = t - self.t_ref;
        let mut q = self.offset + self.rate * tau;
        q.y -= 0.5 * self.g * tau * tau;
        q
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let mut v = self.rate;
        v.y -= self.g * (t - self.t_ref);
        v
    }

    /// Combined RMS with the angle scaled to a length by `rho`.
    pub fn rms_scaled(&self, rho: f64) -> f64 {
        (self.rms.x.powi(2) + self.rms.y.powi(2) + (rho * self.rms.z).powi(2)).sqrt()
    }
}

/// Least-squares ballistic fit with gravity-fixed curvature.
pub fn fit_parabola(series: &TrajectorySeries, window: Range<usize>, g: f64) -> Result<ParabolaFit> {
    let need = 5;
    let got = window.len();
    if got < need || window.end > series.len() {
        return Err(Error::WindowTooSmall { got: got.min(series.len()), need });
    }
    let s = &series.samples[window];
    let n = s.len() as f64;
    let t_ref = s.iter().map(|p| p.t).sum::<f64>() / n;
    let stt: f64 = s.iter().map(|p| (p.t - t_ref).powi(2)).sum();
    let mut offset = Vector3::zeros();
    let mut rate = Vector3::zeros();
    let mut rms = Vector3::zeros();
    for c in 0..3 {
        let curv = if c == 1 { -0.5 * g } else { 0.0 };
        let z = |p: &PlanarState| p.q[c] - curv * (p.t - t_ref).powi(2);
        let mean = s.iter().map(z).sum::<f64>() / n;
        let b = s.iter().map(|p| (p.t - t_ref) * (z(p) - mean)).sum::<f64>() / stt;
        offset[c] = mean;
        rate[c] = b;
        let ss: f64 = s.iter().map(|p| (z(p) - mean - b * (p.t - t_ref)).powi(2)).sum();
        rms[c] = (ss / n).sqrt();
    }
    Ok(ParabolaFit {
        t_ref,
        g,
        offset,
        rate,
        rms,
        n: s.len(),
    })
}

/// Free quadratic per channel; returns `(position, velocity)` evaluators.
fn fit_free_quadratic(s: &[PlanarState]) -> Option<[[f64; 3]; 3]> {
    let n = s.len();
    if n < 3 {
        return None;
    }
    let t_ref = s[0].t;
    let mut out = [[0.0; 3]; 3];
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    for p in s {
        let tau = p.t - t_ref;
        let phi = Vector3::new(1.0, tau, tau * tau);
        m += phi * phi.transpose();
    }
    let inv = m.try_inverse()?;
    for (c, coeffs) in out.iter_mut().enumerate() {
        let mut rhs = Vector3::zeros();
        for p in s {
            let tau = p.t - t_ref;
            rhs += Vector3::new(1.0, tau, tau * tau) * p.q[c];
        }
        let sol = inv * rhs;
        *coeffs = [sol.x, sol.y, sol.z];
    }
    Some(out)
}

/// Mechanical energy per unit mass, with height measured from the ground.
fn specific_energy(q: &Vector3<f64>, v: &Vector3<f64>, rho: f64, cfg: &PipelineConfig) -> f64 {
    0.5 * (v.x * v.x + v.y * v.y + rho * rho * v.z * v.z) + cfg.g * (q.y - cfg.ground_y)
}

/// Central-difference acceleration per sample (zero at the ends), with the
/// angular channel scaled by `rho`.
fn accelerations(series: &TrajectorySeries, rho: f64) -> Vec<Vector3<f64>> {
    let s = &series.samples;
    let mut out = vec![Vector3::zeros(); s.len()];
    for k in 1..s.len().saturating_sub(1) {
        let (h0, h1) = (s[k].t - s[k - 1].t, s[k + 1].t - s[k].t);
        let mut a = ((s[k + 1].q - s[k].q) / h1 - (s[k].q - s[k - 1].q) / h0) * (2.0 / (h0 + h1));
        a.z *= rho;
        out[k] = a;
    }
    out
}

/// One sample index per acceleration spike.
pub fn detect_impacts(series: &TrajectorySeries, rho: f64, cfg: &PipelineConfig) -> Vec<usize> {
    let acc = accelerations(series, rho);
    let gravity = Vector3::new(0.0, -cfg.g, 0.0);
    let threshold = cfg.spike_threshold_g * cfg.g;
    let mut out: Vec<usize> = Vec::new();
    let mut group: Option<(usize, usize, f64)> = None; // (last spike, argmax, max)
    for (k, a) in acc.iter().enumerate().take(acc.len().saturating_sub(1)).skip(1) {
        let mag = (a - gravity).norm();
        if mag <= threshold {
            continue;
        }
        group = match group {
            Some((last, arg, max)) if k - last <= cfg.refractory => {
                if mag > max {
                    Some((k, k, mag))
                } else {
                    Some((k, arg, max))
                }
            }
            Some((_, arg, _)) => {
                out.push(arg);
                Some((k, k, mag))
            }
            None => Some((k, k, mag)),
        };
    }
    if let Some((_, arg, _)) = group {
        out.push(arg);
    }
    out
}

/// Ballistic segments between impacts, trimmed by the guard gap.
fn segments(n: usize, impacts: &[usize], guard: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for &k in impacts {
        let end = k.saturating_sub(guard - 1).min(n);
        if end > start {
            out.push(start..end);
        }
        start = (k + guard).min(n);
    }
    if n > start {
        out.push(start..n);
    }
    out
}

pub fn validate(series: &TrajectorySeries, body: &BodyModel, cfg: &PipelineConfig) -> Result<ValidationReport> {
    let n = series.len();
    if n < cfg.min_samples {
        return Err(Error::TooShort { got: n, need: cfg.min_samples });
    }
    let mut details = BTreeMap::new();
    let rho = body.radius_of_gyration();

    let max_gap = series.samples.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max);
    let frame_drop_ok = max_gap <= cfg.max_gap_periods * cfg.period();
    details.insert("max_gap_s".into(), max_gap);

    let impacts = detect_impacts(series, rho, cfg);
    let segs = segments(n, &impacts, cfg.guard.max(1));

    let mut energy_ok = true;
    let mut deviation_ok = true;
    let mut worst_drift: f64 = 0.0;
    let mut worst_gain: f64 = 0.0;
    let mut worst_rms: f64 = 0.0;
    let mut prev_end_energy: Option<f64> = None;
    for seg in segs.iter().filter(|r| r.len() >= cfg.min_window) {
        let s = &series.samples[seg.clone()];
        if let Some(c) = fit_free_quadratic(s) {
            let t0 = s[0].t;
            let eval = |t: f64| {
                let tau = t - t0;
                let q = Vector3::from_fn(|i, _| c[i][0] + c[i][1] * tau + c[i][2] * tau * tau);
                let v = Vector3::from_fn(|i, _| c[i][1] + 2.0 * c[i][2] * tau);
                specific_energy(&q, &v, rho, cfg)
            };
            let (e0, e1) = (eval(s[0].t), eval(s[s.len() - 1].t));
            let scale = e0.abs().max(e1.abs()).max(f64::MIN_POSITIVE);
            let drift = (e1 - e0).abs() / scale;
            worst_drift = worst_drift.max(drift);
            if drift > cfg.tol_energy {
                energy_ok = false;
            }
            if let Some(prev) = prev_end_energy {
                let gain = (e0 - prev) / prev.abs().max(f64::MIN_POSITIVE);
                worst_gain = worst_gain.max(gain);
                if gain > cfg.tol_energy {
                    energy_ok = false;
                }
            }
            prev_end_energy = Some(e1);
        }
        let fit = fit_parabola(series, seg.clone(), cfg.g)?;
        let rms = fit.rms_scaled(rho);
        worst_rms = worst_rms.max(rms);
        if rms > cfg.tol_dev {
            deviation_ok = false;
        }
    }
    details.insert("impacts".into(), impacts.len() as f64);
    details.insert("max_energy_drift".into(), worst_drift);
    details.insert("max_energy_gain".into(), worst_gain);
    details.insert("max_deviation_rms".into(), worst_rms);
    Ok(ValidationReport {
        energy_ok,
        frame_drop_ok,
        deviation_ok,
        details,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEvent {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub events: Vec<ImpactEvent>,
    pub dropped: Vec<DroppedEvent>,
}

/// Lowest vertex (or the midpoint of a tied pair) at configuration `q`.
pub fn contact_point(body: &BodyModel, q: &Vector3<f64>) -> (Vector2<f64>, bool) {
    let pts: Vec<Vector2<f64>> = body.vertices_world(q).collect();
    let low = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let tied: Vec<&Vector2<f64>> = pts.iter().filter(|p| p.y - low <= 1e-9).collect();
    if tied.len() >= 2 {
        let mid = tied.iter().fold(Vector2::zeros(), |a, p| a + **p) / tied.len() as f64;
        (mid, true)
    } else {
        (*tied[0], false)
    }
}

fn lowest_height(body: &BodyModel, q: &Vector3<f64>) -> f64 {
    body.lowest_vertex(q).1
}

/// Impact time from the pre-impact fit: where the lowest vertex reaches the
/// ground inside `[lo, hi]`.
fn impact_time(fit: &ParabolaFit, body: &BodyModel, ground: f64, lo: f64, hi: f64) -> Option<f64> {
    let f = |t: f64| lowest_height(body, &fit.position(t)) - ground;
    // coarse scan for the first crossing, then bisection
    let n = 64;
    let mut a = lo;
    let mut fa = f(a);
    if fa <= 0.0 {
        return None;
    }
    for i in 1..=n {
        let b = lo + (hi - lo) * i as f64 / n as f64;
        let fb = f(b);
        if fb <= 0.0 {
            let (mut x0, mut x1) = (a, b);
            for _ in 0..100 {
                let m = 0.5 * (x0 + x1);
                if m <= x0 || m >= x1 {
                    break;
                }
                if f(m) > 0.0 {
                    x0 = m;
                } else {
                    x1 = m;
                }
            }
            return Some(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    let _ = fa;
    None
}

/// Detect impacts and turn each into an [`ImpactEvent`] with fitted pre and
/// post velocities at the estimated impact time.
pub fn extract_events(series: &TrajectorySeries, body: &BodyModel, cfg: &PipelineConfig) -> Result<Extraction> {
    let rho = body.radius_of_gyration();
    let impacts = detect_impacts(series, rho, cfg);
    let n = series.len();
    let s = &series.samples;
    let mut events = Vec::new();
    let mut dropped = Vec::new();
    for (i, &k) in impacts.iter().enumerate() {
        let lo_bound = if i == 0 { 0 } else { impacts[i - 1] + cfg.guard };
        let hi_bound = impacts.get(i + 1).map_or(n, |&next| next.saturating_sub(cfg.guard - 1));
        let pre_end = k.saturating_sub(cfg.guard - 1);
        let pre_start = pre_end.saturating_sub(cfg.window).max(lo_bound);
        let post_start = (k + cfg.guard).min(n);
        let post_end = (post_start + cfg.window).min(hi_bound);
        if pre_end < pre_start + cfg.min_window || post_end < post_start + cfg.min_window {
            dropped.push(DroppedEvent {
                index: k,
                reason: format!(
                    "fit windows too small: pre {} post {} samples",
                    pre_end.saturating_sub(pre_start),
                    post_end.saturating_sub(post_start)
                ),
            });
            continue;
        }
        let pre = fit_parabola(series, pre_start..pre_end, cfg.g)?;
        let post = fit_parabola(series, post_start..post_end, cfg.g)?;
        let lo = s[k.saturating_sub(1).max(pre_end - 1)].t;
        let hi = s[(k + 1).min(n - 1)].t;
        let t_i = impact_time(&pre, body, cfg.ground_y, lo, hi)
            .or_else(|| impact_time(&pre, body, cfg.ground_y, s[pre_end - 1].t, s[post_start].t))
            .unwrap_or(s[k].t);
        let q = pre.position(t_i);
        let (cp, flat) = contact_point(body, &q);
        let event = ImpactEvent {
            t: t_i,
            q,
            v_pre: pre.velocity(t_i),
            v_post: post.velocity(t_i),
            contact_point: cp,
            body_ref: series.body_ref.clone(),
            source: EventSource::Measured,
            flat_contact: flat,
        };
        match event.validate(body) {
            Ok(()) => events.push(event),
            Err(e) => dropped.push(DroppedEvent {
                index: k,
                reason: e.to_string(),
            }),
        }
    }
    Ok(Extraction { events, dropped })
}
