//! Single-phase models with Newton restitution `v_nᶠ = −ε v_nⁱ`.

use super::{check_approaching, clamp_flag, ImpulseResult, Mode, ModelParams, NormalLine};
use crate::dynamics::{ContactFrame, Impulse};
use crate::error::{Error, Result};

fn finish(frame: &ContactFrame, line: &NormalLine, p_t: f64, stick: bool, who: &'static str) -> Result<ImpulseResult> {
    let impulse = Impulse::new(p_t, line.p_n(p_t));
    if !impulse.is_finite() {
        return Err(Error::NoConsistentBranch(who));
    }
    let mode = if stick { Mode::Stick } else { Mode::Slide };
    Ok(ImpulseResult::new(frame, impulse, mode, stick))
}

/// Newton restitution with impulse-level Coulomb complementarity.
///
/// On the line `v_nᶠ = −ε v_nⁱ` the post tangential velocity is increasing in
/// `p_t`, so the stick / slide+ / slide− case split collapses to clamping the
/// sticking root into the friction-cone interval.
pub fn ap_newton(frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    check_approaching(frame)?;
    let line = NormalLine::new(&frame.m_c_inv, &frame.v_c, -params.eps * frame.v_n());
    let (lo, hi) = line.cone(params.mu);
    let (p_t, stick) = clamp_flag(line.stick_root(), lo, hi);
    finish(frame, &line, p_t, stick, "ap_newton")
}

/// Newton restitution with friction that only opposes the initial slip:
/// full sliding friction unless that would reverse the slip, in which case
/// the tangential impulse is cut back toward zero.
pub fn whittaker(frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    check_approaching(frame)?;
    let line = NormalLine::new(&frame.m_c_inv, &frame.v_c, -params.eps * frame.v_n());
    let (lo, hi) = line.cone(params.mu);
    let v_t = frame.v_t();
    let (lo, hi) = if v_t > 0.0 {
        (lo, 0.0)
    } else if v_t < 0.0 {
        (0.0, hi)
    } else {
        (0.0, 0.0)
    };
    let (p_t, stick) = clamp_flag(line.stick_root(), lo, hi);
    finish(frame, &line, p_t, stick, "whittaker")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    fn coupled(v: [f64; 2]) -> ContactFrame {
        ContactFrame::from_contact_space(Matrix2::new(1.1, 0.1, 0.1, 1.1), Vector2::new(v[0], v[1])).unwrap()
    }

    #[test]
    fn coupled_slide_example() {
        let f = coupled([1.0, -1.0]);
        let r = ap_newton(&f, ModelParams { mu: 0.3, eps: 0.5 }).unwrap();
        assert_eq!(r.mode, Mode::Slide);
        assert!((r.impulse.p_t + 0.4206).abs() < 1e-4, "{:?}", r.impulse);
        assert!((r.impulse.p_n - 1.4019).abs() < 1e-4);
        assert!((r.impulse.p_t + 0.3 * r.impulse.p_n).abs() < 1e-12);
        assert!((r.post_contact_velocity.y - 0.5).abs() < 1e-12);
        assert!(r.post_contact_velocity.x > 0.0);
    }

    #[test]
    fn whittaker_matches_newton_without_reversal() {
        let f = coupled([1.0, -1.0]);
        let p = ModelParams { mu: 0.3, eps: 0.5 };
        let a = ap_newton(&f, p).unwrap();
        let b = whittaker(&f, p).unwrap();
        assert!((a.impulse - b.impulse).norm() < 1e-12);
    }

    #[test]
    fn large_friction_lands_on_sticking_line() {
        let f = coupled([1.0, -1.0]);
        for model in [ap_newton, whittaker] {
            let r = model(&f, ModelParams { mu: 1.9, eps: 0.3 }).unwrap();
            assert_eq!(r.mode, Mode::Stick);
            assert!(r.post_contact_velocity.x.abs() < 1e-12);
            assert!((r.post_contact_velocity.y - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn whittaker_never_pushes_against_initial_slip() {
        // frictionless rebound already reverses the slip here
        let f = coupled([-0.02, -1.0]);
        let r = whittaker(&f, ModelParams { mu: 0.5, eps: 1.0 }).unwrap();
        assert_eq!(r.impulse.p_t, 0.0);
        let n = ap_newton(&f, ModelParams { mu: 0.5, eps: 1.0 }).unwrap();
        assert_eq!(n.mode, Mode::Stick);
    }
}
