//! The energy ellipse and the admissible impulse region.
//!
//! With `A = M_c⁻¹` and `P* = −M_c v_c`, the post-impact contact-space
//! kinetic energy of an impulse `p` is `½ (p − P*)ᵀ A (p − P*)`, so the set of
//! impulses that do not add energy is the ellipse
//! `(p − P*)ᵀ A (p − P*) ≤ v_cᵀ M_c v_c`. The admissible region is that
//! ellipse clipped by `p_n ≥ 0` and `v_nᶠ ≥ 0`.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyModel, ContactFrame, Impulse, PlanarState};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct EnergyEllipse {
    pub frame: ContactFrame,
    center: Vector2<f64>,
    /// `v_cᵀ M_c v_c`, twice the incoming contact-space energy.
    energy2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub alpha: f64,
    pub normal_impulse_ok: bool,
    pub separation_ok: bool,
    pub admissible: bool,
}

/// Line `{p : normal · p = offset}` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseLine {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl ImpulseLine {
    fn from_row(row: Vector2<f64>, rhs: f64) -> Self {
        let n = row.norm();
        Self {
            normal: row / n,
            offset: rhs / n,
        }
    }

    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.normal.y, self.normal.x)
    }

    /// Point of the line closest to the origin.
    pub fn anchor(&self) -> Vector2<f64> {
        self.normal * self.offset
    }

    pub fn signed_distance(&self, p: Vector2<f64>) -> f64 {
        self.normal.dot(&p) - self.offset
    }

    pub fn intersect(&self, other: &ImpulseLine) -> Option<Vector2<f64>> {
        let m = Matrix2::new(self.normal.x, self.normal.y, other.normal.x, other.normal.y);
        m.try_inverse().map(|inv| inv * Vector2::new(self.offset, other.offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub impulse: Impulse,
    /// ρ-normalized velocity error between target and projected outcome.
    pub error: f64,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Ellipse,
    Clip,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Ellipse => "ellipse",
            BoundaryTag::Clip => "clip",
        }
    }
}

impl EnergyEllipse {
    pub fn new(frame: &ContactFrame) -> Result<Self> {
        let energy2 = frame.v_c.dot(&(frame.m_c * frame.v_c));
        if !(energy2 >= 1e-15) {
            return Err(Error::ZeroIncomingVelocity);
        }
        Ok(Self {
            frame: *frame,
            center: -(frame.m_c * frame.v_c),
            energy2,
        })
    }

    /// Stick impulse `−M_c v_c`, the centre of the ellipse.
    pub fn center(&self) -> Impulse {
        Impulse::from_vector(self.center)
    }

    pub fn energy_fraction(&self, p: Impulse) -> f64 {
        let vf = self.frame.post_velocity(p);
        vf.dot(&(self.frame.m_c * vf)) / self.energy2
    }

    pub fn is_admissible(&self, p: Impulse, tol: f64) -> AdmissibilityReport {
        let alpha = self.energy_fraction(p);
        let vf = self.frame.post_velocity(p);
        let normal_impulse_ok = p.p_n >= -tol;
        let separation_ok = vf.y >= -tol;
        let admissible = normal_impulse_ok && separation_ok && alpha <= 1.0 + tol;
        AdmissibilityReport {
            alpha,
            normal_impulse_ok,
            separation_ok,
            admissible,
        }
    }

    /// Impulses that zero the post-impact tangential contact velocity.
    pub fn line_of_sticking(&self) -> ImpulseLine {
        let a = self.frame.m_c_inv;
        ImpulseLine::from_row(Vector2::new(a.m11, a.m12), -self.frame.v_c.x)
    }

    /// Impulses that zero the post-impact normal contact velocity.
    pub fn line_of_max_compression(&self) -> ImpulseLine {
        let a = self.frame.m_c_inv;
        ImpulseLine::from_row(Vector2::new(a.m21, a.m22), -self.frame.v_c.y)
    }

    fn non_tensile_line() -> ImpulseLine {
        ImpulseLine {
            normal: Vector2::new(0.0, 1.0),
            offset: 0.0,
        }
    }

    fn ellipse_value(&self, p: Vector2<f64>) -> f64 {
        let d = p - self.center;
        d.dot(&(self.frame.m_c_inv * d))
    }

    fn feasible(&self, p: Vector2<f64>, tol: f64) -> bool {
        let scale = self.center.norm().max(1e-300);
        p.y >= -tol * scale
            && self.line_of_max_compression().signed_distance(p) >= -tol * scale
            && self.ellipse_value(p) <= self.energy2 * (1.0 + tol)
    }

    /// Chord of `line` inside the ellipse as parameter range along
    /// `anchor + s·direction`.
    fn chord(&self, line: &ImpulseLine) -> Option<(f64, f64)> {
        let a = self.frame.m_c_inv;
        let d = line.direction();
        let w = line.anchor() - self.center;
        let qa = d.dot(&(a * d));
        let qb = 2.0 * d.dot(&(a * w));
        let qc = w.dot(&(a * w)) - self.energy2;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let r = disc.sqrt();
        Some(((-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa)))
    }

    /// Impulse in the admissible region whose outcome best matches
    /// `target` (a post-impact generalized velocity) in the norm
    /// `‖(Δvx, Δvy, ρ Δω)‖`.
    pub fn project_outcome(
        &self,
        target: &Vector3<f64>,
        body: &BodyModel,
        state: &PlanarState,
    ) -> Projection {
        let rho = body.radius_of_gyration();
        let w2 = Vector3::new(1.0, 1.0, rho * rho);
        let minv = body.inverse_mass_diag();
        let jt = self.frame.jacobian.transpose();
        let b_map: Matrix3x2<f64> = Matrix3x2::from_fn(|i, j| jt[(i, j)] * minv[i]);
        let dv = target - state.v;
        let weighted_b = Matrix3x2::from_fn(|i, j| b_map[(i, j)] * w2[i]);
        let q = b_map.transpose() * weighted_b;
        let lin = weighted_b.transpose() * dv;
        let objective = |p: Vector2<f64>| {
            let r = dv - b_map * p;
            r.component_mul(&r).dot(&w2)
        };

        let mut candidates: Vec<Vector2<f64>> = Vec::with_capacity(10);
        if let Some(qinv) = q.try_inverse() {
            candidates.push(qinv * lin);
        }
        if let Some(p) = self.trust_region_min(&q, &lin) {
            candidates.push(p);
        }
        let lines = [Self::non_tensile_line(), self.line_of_max_compression()];
        for line in &lines {
            if let Some((s_lo, s_hi)) = self.chord(line) {
                let d = line.direction();
                let anchor = line.anchor();
                let curv = d.dot(&(q * d));
                let s_star = if curv > 0.0 {
                    d.dot(&(lin - q * anchor)) / curv
                } else {
                    s_lo
                };
                for s in [s_star.clamp(s_lo, s_hi), s_lo, s_hi] {
                    candidates.push(anchor + d * s);
                }
            }
        }
        if let Some(v) = lines[0].intersect(&lines[1]) {
            candidates.push(v);
        }

        let mut best: Option<(f64, Vector2<f64>)> = None;
        for &p in &candidates {
            if !self.feasible(p, 1e-11) {
                continue;
            }
            let f = objective(p);
            if best.map_or(true, |(bf, _)| f < bf) {
                best = Some((f, p));
            }
        }
        let p = match best {
            Some((_, p)) => p,
            // Rounding left every candidate marginally outside; the stick
            // impulse is always admissible.
            None => self.center,
        };
        let impulse = Impulse::from_vector(p);
        let velocity = state.v + b_map * p;
        Projection {
            impulse,
            error: objective(p).max(0.0).sqrt(),
            velocity,
        }
    }

    /// Minimizer of `pᵀQp − 2 linᵀp` over the ellipse, assuming the
    /// unconstrained minimizer lies outside it.
    fn trust_region_min(&self, q: &Matrix2<f64>, lin: &Vector2<f64>) -> Option<Vector2<f64>> {
        let a = self.frame.m_c_inv;
        let c = self.center;
        let solve = |lambda: f64| -> Option<Vector2<f64>> {
            (q + a * lambda).try_inverse().map(|m| m * (lin + a * c * lambda))
        };
        let g = |p: Vector2<f64>| self.ellipse_value(p) - self.energy2;
        let p0 = solve(0.0);
        if let Some(p0) = p0 {
            if g(p0) <= 0.0 {
                return None;
            }
        }
        let scale = q.norm() / a.norm();
        let mut lo = 0.0;
        let mut hi = scale.max(1e-12);
        let mut guard = 0;
        while g(solve(hi)?) > 0.0 {
            lo = hi;
            hi *= 4.0;
            guard += 1;
            if guard > 200 {
                return None;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(solve(mid)?) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        solve(hi)
    }

    /// Ordered boundary of the admissible region: `n` points spread along
    /// the feasible arcs of the `α = 1` ellipse, plus the corner where the
    /// two clipping lines meet when it lies inside the ellipse.
    pub fn boundary_polyline(&self, n: usize) -> Vec<(Impulse, BoundaryTag)> {
        let n = n.max(16);
        let a = self.frame.m_c_inv;
        // A = L Lᵀ; boundary p(φ) = c + R L⁻ᵀ u(φ)
        let l11 = a.m11.sqrt();
        let l21 = a.m21 / l11;
        let l22 = (a.m22 - l21 * l21).sqrt();
        let linv_t = Matrix2::new(l11, l21, 0.0, l22).try_inverse().unwrap_or(Matrix2::identity());
        let r = self.energy2.sqrt();
        let at = |phi: f64| self.center + linv_t * Vector2::new(phi.cos(), phi.sin()) * r;

        let lines = [Self::non_tensile_line(), self.line_of_max_compression()];
        let allowed = lines.map(|line| {
            // normal·p(φ) = normal·c + R (L⁻¹ normal)·u(φ) >= offset
            let k = (linv_t.transpose() * line.normal) * r;
            let h = line.offset - line.normal.dot(&self.center);
            let amp = k.norm();
            if h <= -amp {
                Some((0.0, TAU))
            } else if h >= amp {
                None
            } else {
                let phi0 = k.y.atan2(k.x);
                let half = (h / amp).acos();
                Some(((phi0 - half).rem_euclid(TAU), 2.0 * half))
            }
        });
        let arcs = match (allowed[0], allowed[1]) {
            (Some(x), Some(y)) => intersect_arcs(x, y),
            _ => Vec::new(),
        };
        let total: f64 = arcs.iter().map(|&(_, len)| len).sum();
        if arcs.is_empty() || total <= 0.0 {
            return Vec::new();
        }

        let mut out = Vec::with_capacity(n + 2);
        for (k, &(start, len)) in arcs.iter().enumerate() {
            let m = ((n as f64 * len / total).round() as usize).max(2);
            for i in 0..m {
                let phi = start + len * i as f64 / (m - 1) as f64;
                out.push((Impulse::from_vector(at(phi)), BoundaryTag::Ellipse));
            }
            // corner between this arc's end and the next arc's start
            let end = at(start + len);
            let next_start = at(arcs[(k + 1) % arcs.len()].0);
            let on = |p: Vector2<f64>, l: &ImpulseLine| l.signed_distance(p).abs() < 1e-9 * (1.0 + r);
            if let Some(corner) = lines[0].intersect(&lines[1]) {
                let switches = (on(end, &lines[0]) && on(next_start, &lines[1]))
                    || (on(end, &lines[1]) && on(next_start, &lines[0]));
                if switches && self.ellipse_value(corner) < self.energy2 {
                    out.push((Impulse::from_vector(corner), BoundaryTag::Clip));
                }
            }
        }
        out
    }
}

/// Intersection of two arcs given as `(start, length)` on the circle.
fn intersect_arcs(a: (f64, f64), b: (f64, f64)) -> Vec<(f64, f64)> {
    let delta = (b.0 - a.0).rem_euclid(TAU);
    let mut out = Vec::new();
    for shift in [delta - TAU, delta, delta + TAU] {
        let lo = shift.max(0.0);
        let hi = (shift + b.1).min(a.1);
        if hi > lo + 1e-15 {
            out.push((a.0 + lo, hi - lo));
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    // merge arcs that touch
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for arc in out {
        if let Some(last) = merged.last_mut() {
            if (last.0 + last.1 - arc.0).abs() < 1e-12 {
                last.1 += arc.1;
                continue;
            }
        }
        merged.push(arc);
    }
    merged
}

/// Area enclosed by a closed impulse polyline.
pub fn polyline_area(points: &[(Impulse, BoundaryTag)]) -> f64 {
    let v: Vec<Vector2<f64>> = points.iter().map(|(p, _)| p.to_vector()).collect();
    crate::geometry::signed_area(&v).abs()
}
