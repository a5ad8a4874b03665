//! Two-phase models: a compression impulse followed by a restitution
//! impulse whose normal part is `ε` times the compression normal impulse.

use nalgebra::{Matrix2, Vector2};

use super::{check_approaching, clamp_flag, ImpulseResult, Mode, ModelParams, NormalLine};
use crate::dynamics::{ContactFrame, Impulse};
use crate::error::{Error, Result};

/// Restitution impulse for a fixed normal part: the tangential part keeps
/// or restores sticking when the cone allows it and saturates otherwise.
fn restitution(a: &Matrix2<f64>, v_mid: &Vector2<f64>, dp_n: f64, mu: f64) -> (Impulse, bool) {
    if dp_n <= 0.0 {
        return (Impulse::ZERO, true);
    }
    let root = -(v_mid.x + a.m12 * dp_n) / a.m11;
    let bound = mu * dp_n;
    let (dp_t, stick) = clamp_flag(root, -bound, bound);
    (Impulse::new(dp_t, dp_n), stick)
}

fn two_phase(
    frame: &ContactFrame,
    params: ModelParams,
    compression: Impulse,
    compression_stick: bool,
    who: &'static str,
) -> Result<ImpulseResult> {
    let a = &frame.m_c_inv;
    let v_mid = frame.post_velocity(compression);
    let (rest, rest_stick) = restitution(a, &v_mid, params.eps * compression.p_n, params.mu);
    let impulse = compression + rest;
    if !impulse.is_finite() {
        return Err(Error::NoConsistentBranch(who));
    }
    let mode = match (compression_stick, rest_stick) {
        (false, true) if rest.p_n <= 0.0 => Mode::Slide,
        (true, true) => Mode::Stick,
        (false, true) => Mode::SlideThenStick,
        _ => Mode::Slide,
    };
    let mut r = ImpulseResult::new(frame, impulse, mode, compression_stick && rest_stick);
    r.diagnostics.compression_impulse = Some(compression);
    Ok(r)
}

/// Compression to `v_n = 0` under Coulomb complementarity, then Poisson
/// restitution.
pub fn ap_poisson(frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    check_approaching(frame)?;
    let (pc, stick) = max_compression_impulse(frame, params.mu);
    two_phase(frame, params, pc, stick, "ap_poisson")
}

fn max_compression_impulse(frame: &ContactFrame, mu: f64) -> (Impulse, bool) {
    let line = NormalLine::new(&frame.m_c_inv, &frame.v_c, 0.0);
    let (lo, hi) = line.cone(mu);
    let (p_t, stick) = clamp_flag(line.stick_root(), lo, hi);
    (Impulse::new(p_t, line.p_n(p_t)), stick)
}

/// Compression impulse of maximal dissipation: the impulse in the friction
/// cone, with non-negative post normal velocity, that leaves the least
/// contact-space kinetic energy. Poisson restitution follows, with the
/// tangential part again chosen to dissipate as much as the cone allows.
pub fn drumwright_shell(frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    check_approaching(frame)?;
    let (pc, stick) = max_dissipation_compression(frame, params.mu);
    two_phase(frame, params, pc, stick, "drumwright_shell")
}

fn max_dissipation_compression(frame: &ContactFrame, mu: f64) -> (Impulse, bool) {
    let a = &frame.m_c_inv;
    let v = &frame.v_c;
    let center = frame.stick_impulse().to_vector();
    let cost = |p: &Vector2<f64>| {
        let d = p - center;
        d.dot(&(a * d))
    };
    let scale = center.norm().max(1e-300);
    let feasible = |p: &Vector2<f64>| {
        let tol = 1e-12 * scale;
        p.x.abs() <= mu * p.y + tol && v.y + a.m21 * p.x + a.m22 * p.y >= -tol * a.norm()
    };

    if feasible(&center) {
        return (Impulse::from_vector(center), true);
    }

    let mut best: Option<(f64, Vector2<f64>)> = None;
    let mut consider = |p: Vector2<f64>| {
        if p.iter().all(|x| x.is_finite()) && feasible(&p) {
            let c = cost(&p);
            if best.map_or(true, |(bc, _)| c < bc) {
                best = Some((c, p));
            }
        }
    };

    let (line_pt, _) = max_compression_impulse(frame, mu);
    consider(line_pt.to_vector());

    let signs: &[f64] = if mu > 0.0 { &[1.0, -1.0] } else { &[0.0] };
    for &s in signs {
        let d = Vector2::new(-s * mu, 1.0);
        let ad = a * d;
        let lambda = -d.dot(v) / d.dot(&ad);
        if lambda >= 0.0 {
            consider(d * lambda);
        }
        // ray meets the max-compression line
        if ad.y > 0.0 {
            consider(d * (-v.y / ad.y));
        }
    }

    match best {
        Some((_, p)) => (Impulse::from_vector(p), false),
        None => (line_pt, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ap_newton;

    fn coupled(v: [f64; 2]) -> ContactFrame {
        ContactFrame::from_contact_space(Matrix2::new(1.1, 0.1, 0.1, 1.1), Vector2::new(v[0], v[1])).unwrap()
    }

    #[test]
    fn frictionless_decoupled_matches_newton() {
        let f = ContactFrame::from_contact_space(Matrix2::new(0.7, 0.0, 0.0, 1.3), Vector2::new(0.4, -2.0)).unwrap();
        let p = ModelParams { mu: 0.0, eps: 0.6 };
        let n = ap_newton(&f, p).unwrap();
        for model in [ap_poisson, drumwright_shell] {
            assert!((model(&f, p).unwrap().impulse - n.impulse).norm() < 1e-12);
        }
    }

    #[test]
    fn plastic_is_compression_only() {
        let f = coupled([1.0, -1.0]);
        let r = ap_poisson(&f, ModelParams { mu: 0.3, eps: 0.0 }).unwrap();
        assert_eq!(r.impulse, r.diagnostics.compression_impulse.unwrap());
        assert!(r.post_contact_velocity.y.abs() < 1e-12);
    }

    #[test]
    fn poisson_impulse_ratio() {
        let f = coupled([1.0, -1.0]);
        for model in [ap_poisson, drumwright_shell] {
            let r = model(&f, ModelParams { mu: 0.3, eps: 0.5 }).unwrap();
            let pc = r.diagnostics.compression_impulse.unwrap();
            assert!((r.impulse.p_n - 1.5 * pc.p_n).abs() < 1e-12);
            assert!(r.impulse.p_t.abs() <= 0.3 * r.impulse.p_n + 1e-12);
        }
    }

    #[test]
    fn max_dissipation_beats_grid() {
        let f = coupled([1.0, -1.0]);
        let mu = 0.3;
        let (pc, _) = max_dissipation_compression(&f, mu);
        let a = f.m_c_inv;
        let c = f.stick_impulse().to_vector();
        let cost = |p: Vector2<f64>| (p - c).dot(&(a * (p - c)));
        let best = cost(pc.to_vector());
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let p = Vector2::new(-1.0 + 2.0 * i as f64 / n as f64, 2.0 * j as f64 / n as f64);
                let ok = p.x.abs() <= mu * p.y && f.post_velocity(Impulse::from_vector(p)).y >= 0.0;
                if ok {
                    assert!(cost(p) >= best - 1e-12);
                }
            }
        }
    }

    #[test]
    fn sticking_compression_is_the_center() {
        let f = coupled([0.2, -1.0]);
        let r = drumwright_shell(&f, ModelParams { mu: 1.0, eps: 0.0 }).unwrap();
        assert!((r.impulse - f.stick_impulse()).norm() < 1e-12);
        assert_eq!(r.mode, Mode::Stick);
    }
}
