#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use planar_impact::dynamics::{apply_impulse, BodyModel, ContactFrame, Impulse, PlanarState};
use planar_impact::models::{ModelId, ModelParams};
use planar_impact::sim::{generate_dataset, DropRecord, InitSampler, SimConfig};
use planar_impact::sysid::ImpactEvent;
use planar_impact::trajectory::{extract_events, PipelineConfig, TrajectorySeries};
use rand::Rng;

pub const TRUTH: ModelParams = ModelParams { mu: 0.2, eps: 0.5 };

pub fn body() -> BodyModel {
    BodyModel::ellipse(0.5, 0.07, 0.05, 32).unwrap()
}

/// Contact-space frame of a random rigid body hit at a random point, built
/// here from `J M⁻¹ Jᵀ` rather than through the library.
pub fn random_frame<R: Rng>(rng: &mut R) -> ContactFrame {
    let m: f64 = rng.gen_range(0.2..2.0);
    let rho: f64 = rng.gen_range(0.02..0.2);
    let r = Vector2::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.02));
    let j = Matrix2x3::new(1.0, 0.0, -r.y, 0.0, 1.0, r.x);
    let m_inv = Matrix3::from_diagonal(&Vector3::new(1.0 / m, 1.0 / m, 1.0 / (m * rho * rho)));
    let a: Matrix2<f64> = j * m_inv * j.transpose();
    let a = 0.5 * (a + a.transpose());
    let v = Vector2::new(rng.gen_range(-2.0..2.0), -rng.gen_range(0.1..3.0));
    ContactFrame::from_contact_space(a, v).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R) -> ModelParams {
    ModelParams {
        mu: rng.gen_range(0.0..2.0),
        eps: rng.gen_range(0.0..1.0),
    }
}

/// Half a millimetre on x and y; the same arc length at the radius of
/// gyration on θ.
pub fn noisy_sim(body: &BodyModel) -> SimConfig {
    let s = 5e-4;
    SimConfig {
        noise_sigma: [s, s, s / body.radius_of_gyration()],
        ..SimConfig::default()
    }
}

pub fn noisy_pipeline() -> PipelineConfig {
    PipelineConfig {
        spike_threshold_g: 35.0,
        ..PipelineConfig::default()
    }
}

pub fn drops(n: usize, models: &[ModelId], params: ModelParams, cfg: &SimConfig, seed: u64) -> Vec<DropRecord> {
    generate_dataset(n, &InitSampler::default(), &body(), models, params, cfg, seed).unwrap()
}

/// Extracted events from successive batches of drops until `want` are
/// collected.
pub fn extracted_events(
    want: usize,
    models: &[ModelId],
    params: ModelParams,
    sim: &SimConfig,
    pipe: &PipelineConfig,
    seed: u64,
) -> Vec<ImpactEvent> {
    let b = body();
    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < want {
        for r in drops(want / 2 + 10, models, params, sim, seed.wrapping_add(round)) {
            if let Ok(ex) = extract_events(&r.series, &b, pipe) {
                out.extend(ex.events);
            }
        }
        round += 1;
    }
    out.truncate(want);
    out
}

pub fn truth_events(want: usize, models: &[ModelId], params: ModelParams, seed: u64) -> Vec<ImpactEvent> {
    let mut out: Vec<ImpactEvent> = drops(want / 2 + 10, models, params, &SimConfig::default(), seed)
        .into_iter()
        .flat_map(|r| r.truth_events)
        .collect();
    let mut round = 1;
    while out.len() < want {
        out.extend(
            drops(want / 2, models, params, &SimConfig::default(), seed.wrapping_add(round))
                .into_iter()
                .flat_map(|r| r.truth_events),
        );
        round += 1;
    }
    out.truncate(want);
    out
}

/// Replaces the outcome with a contact velocity reversed and shrunk to 0.4 of
/// the incoming one: admissible, but with back-spin.
pub fn inject_spin_reversal(event: &ImpactEvent, body: &BodyModel) -> ImpactEvent {
    let frame = event.frame(body).unwrap();
    let p = Impulse::from_vector(-1.4 * (frame.m_c * frame.v_c));
    let post = apply_impulse(&event.pre_state(), body, &frame, p);
    ImpactEvent {
        v_post: post.v,
        ..event.clone()
    }
}

/// Ballistic configuration at `t` from `s`.
pub fn flight(s: &PlanarState, g: f64, t: f64) -> Vector3<f64> {
    let d = t - s.t;
    s.q + s.v * d + Vector3::new(0.0, -0.5 * g * d * d, 0.0)
}

/// Rebuilds everything after the first impact from a post-impact velocity
/// carrying 5% more kinetic energy than the pre-impact one. The series stops
/// before the body would reach the ground again.
pub fn inject_energy_gain(rec: &DropRecord, body: &BodyModel, g: f64) -> TrajectorySeries {
    let e = &rec.truth_events[0];
    let ke = |v: &Vector3<f64>| v.x * v.x + v.y * v.y + (body.radius_of_gyration() * v.z).powi(2);
    let scale = (1.05 * ke(&e.v_pre) / ke(&e.v_post)).sqrt();
    let start = PlanarState::new(e.q, e.v_post * scale, e.t);
    let mut samples = Vec::new();
    for s in &rec.series.samples {
        if s.t < e.t {
            samples.push(*s);
            continue;
        }
        let q = flight(&start, g, s.t);
        if s.t > e.t + 0.02 && body.lowest_vertex(&q).1 <= 0.0 {
            break;
        }
        samples.push(PlanarState::at_rest(q, s.t));
    }
    TrajectorySeries::new(samples, rec.series.body_ref.clone())
}

/// Adds a 5 mm full-period sine to x over the samples before the first
/// impact.
pub fn inject_drift(rec: &DropRecord) -> TrajectorySeries {
    let t_hit = rec.truth_events[0].t;
    let mut series = rec.series.clone();
    let t0 = series.samples[0].t;
    for s in series.samples.iter_mut().filter(|s| s.t < t_hit - 0.02) {
        s.q.x += 5e-3 * (2.0 * std::f64::consts::PI * (s.t - t0) / (t_hit - t0)).sin();
    }
    series
}
