//! Synthetic drops: closed-form flight, located vertex impacts resolved by a
//! contact model, sampled and optionally noisy configurations.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_impulse, build_contact_frame, BodyModel, PlanarState};
use crate::error::{Error, Result};
use crate::models::{predict, ModelId, ModelParams};
use crate::sysid::{EventSource, ImpactEvent};
use crate::trajectory::TrajectorySeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub g: f64,
    pub sample_rate: f64,
    /// Per-channel std of additive configuration noise (m, m, rad).
    pub noise_sigma: [f64; 3],
    pub max_time: f64,
    /// A drop ends at an impact whose post-impact normal contact speed is
    /// below this; that impact is not recorded.
    pub rest_speed_tol: f64,
    /// A drop also ends at an impact that follows the previous one sooner
    /// than this, which keeps every recorded impact resolvable at the
    /// sample rate.
    pub min_flight_time: f64,
    pub ground_y: f64,
    /// Time step of the impact root scan.
    pub scan_step: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            g: 9.81,
            sample_rate: 250.0,
            noise_sigma: [0.0; 3],
            max_time: 3.0,
            rest_speed_tol: 0.5,
            min_flight_time: 0.06,
            ground_y: 0.0,
            scan_step: 5e-4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !(self.max_time > 0.0) || !(self.scan_step > 0.0) {
            return Err(Error::InvalidArgument("sample_rate, max_time and scan_step must be positive".into()));
        }
        if self.noise_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub series: TrajectorySeries,
    pub truth_events: Vec<ImpactEvent>,
    pub model: ModelId,
    pub params: ModelParams,
    pub seed: u64,
    pub end_reason: String,
}

/// Free flight from `start`.
#[derive(Debug, Clone, Copy)]
struct Flight {
    start: PlanarState,
    g: f64,
}

impl Flight {
    fn at(&self, t: f64) -> PlanarState {
        let tau = t - self.start.t;
        let mut q = self.start.q + self.start.v * tau;
        q.y -= 0.5 * self.g * tau * tau;
        let mut v = self.start.v;
        v.y -= self.g * tau;
        PlanarState::new(q, v, t)
    }
}

fn clearance(body: &BodyModel, q: &Vector3<f64>, ground: f64) -> f64 {
    body.lowest_vertex(q).1 - ground
}

/// First time in `(from, until]` at which the body touches the ground.
fn next_contact(body: &BodyModel, flight: &Flight, from: f64, until: f64, cfg: &SimConfig) -> Option<f64> {
    let h = |t: f64| clearance(body, &flight.at(t).q, cfg.ground_y);
    let mut a = from;
    if h(a) <= 0.0 {
        return Some(a);
    }
    while a < until {
        let b = (a + cfg.scan_step).min(until);
        if h(b) <= 0.0 {
            let (mut lo, mut hi) = (a, b);
            while hi - lo > 1e-10 {
                let m = 0.5 * (lo + hi);
                if h(m) > 0.0 {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        a = b;
    }
    None
}

/// Drop `body` from `init` and record every resolvable impact.
pub fn simulate_drop(
    init: &PlanarState,
    body: &BodyModel,
    model: ModelId,
    params: ModelParams,
    cfg: &SimConfig,
    seed: u64,
) -> Result<DropRecord> {
    cfg.validate()?;
    let h0 = clearance(body, &init.q, cfg.ground_y);
    if h0 <= 0.0 {
        return Err(Error::StartsPenetrating(h0));
    }
    let t_end = init.t + cfg.max_time;
    let mut flights = vec![Flight { start: *init, g: cfg.g }];
    let mut events: Vec<ImpactEvent> = Vec::new();
    let mut end = t_end;
    let mut end_reason = "max_time".to_string();
    let mut from = init.t;
    loop {
        let flight = *flights.last().unwrap();
        let Some(t_i) = next_contact(body, &flight, from, t_end, cfg) else {
            break;
        };
        if let Some(last) = events.last() {
            if t_i - last.t < cfg.min_flight_time {
                end = t_i;
                end_reason = "repeated_contact".into();
                break;
            }
        }
        let mut state = flight.at(t_i);
        // all vertices touching now, resolved one after another by index
        let touching: Vec<usize> = (0..body.vertices.len())
            .filter(|&i| body.vertex_world(&state.q, i).y - cfg.ground_y <= 1e-9)
            .collect();
        let flat = touching.len() > 1;
        let mut batch = Vec::new();
        let mut post_normal = f64::INFINITY;
        for &i in &touching {
            let cp = body.vertex_world(&state.q, i);
            let frame = build_contact_frame(&state, body, cp)?;
            if frame.v_n() >= 0.0 && !batch.is_empty() {
                continue;
            }
            let r = predict(model, &frame, params)?;
            let post = apply_impulse(&state, body, &frame, r.impulse);
            batch.push(ImpactEvent {
                t: t_i,
                q: state.q,
                v_pre: state.v,
                v_post: post.v,
                contact_point: cp,
                body_ref: "body".into(),
                source: EventSource::Synthetic { model, params },
                flat_contact: flat,
            });
            post_normal = r.post_contact_velocity.y;
            state = post;
        }
        if post_normal < cfg.rest_speed_tol {
            end = t_i;
            end_reason = "rest".into();
            break;
        }
        events.extend(batch);
        flights.push(Flight { start: state, g: cfg.g });
        from = t_i + 1e-7;
    }
    // an impact too close to the end cannot be observed on both sides
    if end_reason == "max_time" {
        if let Some(last) = events.last() {
            if t_end - last.t < cfg.min_flight_time {
                let t_last = last.t;
                end = t_last;
                end_reason = "max_time".into();
                events.retain(|e| e.t < t_last);
                flights.retain(|f| f.start.t < t_last);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Option<Normal<f64>>> = cfg
        .noise_sigma
        .iter()
        .map(|&s| if s > 0.0 { Normal::new(0.0, s).ok() } else { None })
        .collect();
    let dt = 1.0 / cfg.sample_rate;
    let mut samples = Vec::new();
    let mut seg = 0;
    for k in 0.. {
        let t = init.t + k as f64 * dt;
        if t >= end {
            break;
        }
        while seg + 1 < flights.len() && flights[seg + 1].start.t <= t {
            seg += 1;
        }
        let mut q = flights[seg].at(t).q;
        for (c, n) in noise.iter().enumerate() {
            if let Some(n) = n {
                q[c] += n.sample(&mut rng);
            }
        }
        samples.push(PlanarState::at_rest(q, t));
    }
    let mut series = TrajectorySeries::new(samples, "body");
    series.meta.insert("seed".into(), seed.to_string());
    series.meta.insert("model".into(), model.to_string());
    series.meta.insert("mu".into(), params.mu.to_string());
    series.meta.insert("eps".into(), params.eps.to_string());
    Ok(DropRecord {
        series,
        truth_events: events,
        model,
        params,
        seed,
        end_reason,
    })
}

/// Uniform ranges for initial conditions. `height` is the clearance of the
/// lowest vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitSampler {
    pub height: (f64, f64),
    pub speed_max: f64,
    pub omega_max: f64,
    pub theta: (f64, f64),
}

impl Default for InitSampler {
    fn default() -> Self {
        Self {
            height: (0.2, 0.5),
            speed_max: 1.0,
            omega_max: 10.0,
            theta: (0.0, TAU),
        }
    }
}

impl InitSampler {
    pub fn sample<R: Rng>(&self, body: &BodyModel, ground_y: f64, rng: &mut R) -> PlanarState {
        let theta = rng.gen_range(self.theta.0..=self.theta.1);
        let h = rng.gen_range(self.height.0..=self.height.1);
        let low = body.lowest_vertex(&Vector3::new(0.0, 0.0, theta)).1;
        let speed = self.speed_max * rng.gen::<f64>().sqrt();
        let dir = rng.gen_range(0.0..TAU);
        let omega = rng.gen_range(-self.omega_max..=self.omega_max);
        PlanarState::new(
            Vector3::new(0.0, ground_y + h - low, theta),
            Vector3::new(speed * dir.cos(), speed * dir.sin(), omega),
            0.0,
        )
    }
}

/// Per-drop seed derived from the dataset seed.
pub fn drop_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` independent drops. Models are assigned round-robin from `models`.
pub fn generate_dataset(
    n: usize,
    sampler: &InitSampler,
    body: &BodyModel,
    models: &[ModelId],
    params: ModelParams,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Vec<DropRecord>> {
    if n == 0 || models.is_empty() {
        return Err(Error::InvalidArgument("need at least one drop and one model".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = drop_seed(seed, i);
            // the drop seed itself drives the sensor noise
            let mut rng = ChaCha8Rng::seed_from_u64(!s);
            let init = sampler.sample(body, cfg.ground_y, &mut rng);
            simulate_drop(&init, body, models[i % models.len()], params, cfg, s)
        })
        .collect()
}

/// Dataset manifest entry.
pub fn manifest(records: &[DropRecord], files: &[String]) -> serde_json::Value {
    let entries: Vec<BTreeMap<&str, serde_json::Value>> = records
        .iter()
        .zip(files)
        .map(|(r, f)| {
            BTreeMap::from([
                ("file", serde_json::json!(f)),
                ("seed", serde_json::json!(r.seed)),
                ("model", serde_json::json!(r.model)),
                ("mu", serde_json::json!(r.params.mu)),
                ("eps", serde_json::json!(r.params.eps)),
                ("impacts", serde_json::json!(r.truth_events.len())),
                ("end", serde_json::json!(r.end_reason)),
            ])
        })
        .collect();
    serde_json::json!({ "drops": entries })
}
