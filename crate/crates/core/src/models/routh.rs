//! Incremental impact integration in the normal impulse `p_n`.
//!
//! The contact velocity moves along `dv = M_c⁻¹ (dp_t, dp_n)` with
//! `dp_t = −μ s dp_n` while slipping in direction `s`, and with the
//! tangential rate that holds `v_t = 0` while sticking. Both rates are
//! constant between events, so the exact path is piecewise linear.

use nalgebra::{Matrix2, Vector2};

use super::{check_approaching, ImpulseResult, Mode, ModelParams};
use crate::dynamics::{ContactFrame, Impulse};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    MaxCompression,
    /// Restitution normal impulse is `ε` times the compression normal impulse.
    Poisson(f64),
    /// Restitution work is `ε²` times the magnitude of the compression work.
    Energetic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Contact {
    Slip(f64),
    Stick,
}

/// Contact state once the slip speed is zero. Sticking holds when the cone
/// can supply the tangential impulse rate `−a_tn/a_tt`; otherwise slip
/// restarts in the direction the normal impulse drives it.
fn at_zero_slip(a: &Matrix2<f64>, mu: f64) -> Contact {
    if a.m12.abs() <= mu * a.m11 {
        Contact::Stick
    } else {
        Contact::Slip(a.m12.signum())
    }
}

/// Tangential impulse rate and velocity rate per unit normal impulse.
fn rates(a: &Matrix2<f64>, mu: f64, contact: Contact) -> (f64, Vector2<f64>) {
    let e_t = match contact {
        Contact::Slip(s) => -s * mu,
        Contact::Stick => -a.m12 / a.m11,
    };
    let mut d = a * Vector2::new(e_t, 1.0);
    if contact == Contact::Stick {
        d.x = 0.0;
    }
    (e_t, d)
}

struct Track {
    v: Vector2<f64>,
    p: Vector2<f64>,
    contact: Contact,
    compressing: bool,
    w_c: f64,
    w_r: f64,
    p_c: Option<Vector2<f64>>,
    stick_at_max_compression: bool,
    started_slipping: bool,
    steps: usize,
}

impl Track {
    fn new(frame: &ContactFrame, mu: f64) -> Self {
        let v = frame.v_c;
        let contact = if v.x != 0.0 {
            Contact::Slip(v.x.signum())
        } else {
            at_zero_slip(&frame.m_c_inv, mu)
        };
        Self {
            v,
            p: Vector2::zeros(),
            contact,
            compressing: true,
            w_c: 0.0,
            w_r: 0.0,
            p_c: None,
            stick_at_max_compression: false,
            started_slipping: matches!(contact, Contact::Slip(_)),
            steps: 0,
        }
    }

    /// Advance by `dp_n` along the current rates; `work` is the normal work
    /// accrued over the increment.
    fn advance(&mut self, e_t: f64, d: &Vector2<f64>, dp_n: f64, work: f64) {
        self.p += Vector2::new(e_t, 1.0) * dp_n;
        self.v += d * dp_n;
        if self.compressing {
            self.w_c += work;
        } else {
            self.w_r += work;
        }
        self.steps += 1;
    }

    fn slip_stops(&mut self, a: &Matrix2<f64>, mu: f64) {
        self.v.x = 0.0;
        self.contact = at_zero_slip(a, mu);
    }

    /// Marks the end of compression. Returns true when the impact is over.
    fn compression_ends(&mut self, term: Termination) -> bool {
        self.v.y = 0.0;
        self.compressing = false;
        self.p_c = Some(self.p);
        self.stick_at_max_compression = self.contact == Contact::Stick;
        match term {
            Termination::MaxCompression => true,
            Termination::Poisson(eps) | Termination::Energetic(eps) => eps <= 0.0,
        }
    }

    fn restitution_target(&self, term: Termination) -> f64 {
        let p_c = self.p_c.map_or(0.0, |p| p.y);
        match term {
            Termination::MaxCompression => 0.0,
            Termination::Poisson(eps) => (1.0 + eps) * p_c,
            Termination::Energetic(eps) => eps * eps * self.w_c.abs(),
        }
    }

    fn finish(self, frame: &ContactFrame) -> ImpulseResult {
        let impulse = Impulse::from_vector(self.p);
        let stuck = self.contact == Contact::Stick;
        let mode = match (self.started_slipping, stuck) {
            (false, true) => Mode::Stick,
            (true, true) => Mode::SlideThenStick,
            _ => Mode::Slide,
        };
        let mut r = ImpulseResult::new(frame, impulse, mode, self.stick_at_max_compression);
        r.diagnostics.compression_impulse = self.p_c.map(Impulse::from_vector);
        r.diagnostics.compression_work = Some(self.w_c);
        r.diagnostics.restitution_work = Some(self.w_r);
        r.diagnostics.steps = Some(self.steps);
        r
    }
}

/// Exact piecewise-linear solution; the zero-step limit of
/// [`routh_integrate`].
fn exact(frame: &ContactFrame, mu: f64, term: Termination) -> Result<ImpulseResult> {
    check_approaching(frame)?;
    let a = frame.m_c_inv;
    let mut tr = Track::new(frame, mu);
    // each segment ends in a slip stop, the end of compression or the end of
    // the impact, and slip stops at most twice
    for _ in 0..8 {
        let (e_t, d) = rates(&a, mu, tr.contact);
        let slip_stop = match tr.contact {
            Contact::Slip(s) if d.x * s < 0.0 => -tr.v.x / d.x,
            _ => f64::INFINITY,
        };
        let end = if tr.compressing {
            if d.y > 0.0 {
                -tr.v.y / d.y
            } else {
                f64::INFINITY
            }
        } else {
            let target = tr.restitution_target(term);
            match term {
                Termination::Poisson(_) => target - tr.p.y,
                Termination::Energetic(_) => {
                    let rem = (target - tr.w_r).max(0.0);
                    if d.y > 0.0 {
                        // w_r + v_n Δ + ½ d_n Δ² = target
                        let disc = tr.v.y * tr.v.y + 2.0 * d.y * rem;
                        2.0 * rem / (tr.v.y + disc.sqrt())
                    } else if tr.v.y > 0.0 {
                        rem / tr.v.y
                    } else {
                        f64::INFINITY
                    }
                }
                Termination::MaxCompression => 0.0,
            }
            .max(0.0)
        };
        let step = slip_stop.min(end);
        if !step.is_finite() {
            return Err(Error::NoConsistentBranch("routh"));
        }
        let work = tr.v.y * step + 0.5 * d.y * step * step;
        tr.advance(e_t, &d, step, work);
        if slip_stop <= end {
            tr.slip_stops(&a, mu);
        }
        if end <= slip_stop {
            if let (false, Termination::Poisson(_)) = (tr.compressing, term) {
                tr.p.y = tr.restitution_target(term);
            }
            if tr.compressing {
                if tr.compression_ends(term) {
                    return Ok(tr.finish(frame));
                }
            } else {
                return Ok(tr.finish(frame));
            }
        }
    }
    Err(Error::NoConsistentBranch("routh"))
}

/// Energetic restitution on the exact incremental path.
pub fn mirtich(frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    exact(frame, params.mu, Termination::Energetic(params.eps))
}

/// Poisson restitution on the exact incremental path.
pub fn wang_mason(frame: &ContactFrame, params: ModelParams) -> Result<ImpulseResult> {
    exact(frame, params.mu, Termination::Poisson(params.eps))
}

/// Default normal-impulse increment for [`routh_integrate`].
pub fn default_step(frame: &ContactFrame, divisions: f64) -> f64 {
    frame.m_c[(1, 1)] * frame.v_n().abs() / divisions
}

const MAX_STEPS: usize = 50_000_000;

/// Locate the zero of `x0 + rate·h` in `[0, h_max]` by bisection.
fn bisect_zero(x0: f64, rate: f64, h_max: f64) -> Result<f64> {
    let f = |h: f64| x0 + rate * h;
    let (mut lo, mut hi) = (0.0, h_max);
    let sign_lo = f(lo).signum();
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(hi);
        }
        if f(mid).signum() == sign_lo && f(mid) != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (hi - lo) <= 1e-12 * h_max.max(f64::MIN_POSITIVE) {
        Ok(hi)
    } else {
        Err(Error::StepTooCoarse)
    }
}

/// Fixed-step integration in the normal impulse with event location.
/// Velocity updates are exact per step; the normal work is accumulated with
/// left-point sums, which makes energetic termination first-order in `step`.
pub fn routh_integrate(frame: &ContactFrame, mu: f64, termination: Termination, step: f64) -> Result<ImpulseResult> {
    check_approaching(frame)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let a = frame.m_c_inv;
    let mut tr = Track::new(frame, mu);
    loop {
        if tr.steps > MAX_STEPS {
            return Err(Error::StepTooCoarse);
        }
        let (e_t, d) = rates(&a, mu, tr.contact);
        let mut h = step;
        let mut done = false;
        if !tr.compressing {
            let target = tr.restitution_target(termination);
            match termination {
                Termination::Poisson(_) => {
                    let rem = target - tr.p.y;
                    if rem <= h {
                        h = rem.max(0.0);
                        done = true;
                    }
                }
                Termination::Energetic(_) => {
                    let rem = target - tr.w_r;
                    if tr.v.y * h >= rem {
                        h = (rem / tr.v.y).max(0.0);
                        done = true;
                    }
                }
                Termination::MaxCompression => {
                    h = 0.0;
                    done = true;
                }
            }
        }
        let mut slip_stop = false;
        if let Contact::Slip(s) = tr.contact {
            if s * (tr.v.x + d.x * h) <= 0.0 && d.x * s < 0.0 {
                h = bisect_zero(tr.v.x, d.x, h)?;
                slip_stop = true;
                done = false;
            }
        }
        let mut max_compression = false;
        if tr.compressing && tr.v.y + d.y * h >= 0.0 && d.y > 0.0 {
            let hc = bisect_zero(tr.v.y, d.y, h)?;
            if hc < h {
                slip_stop = false;
            }
            h = hc;
            max_compression = true;
        }
        let work = tr.v.y * h;
        tr.advance(e_t, &d, h, work);
        if slip_stop {
            tr.slip_stops(&a, mu);
        }
        if max_compression && tr.compression_ends(termination) {
            return Ok(tr.finish(frame));
        }
        if done {
            return Ok(tr.finish(frame));
        }
    }
}
