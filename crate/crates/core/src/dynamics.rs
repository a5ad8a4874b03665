//! Rigid-body types and the kinematic/kinetic maps shared by every other
//! module.
//!
//! The ground is the fixed horizontal line `y = const` with outward normal
//! `+y`; the tangent direction is `+x`. Contact-space quantities are ordered
//! `(tangential, normal)`.

use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass properties and outline of a planar rigid body.
///
/// Vertices are given in the body frame with the origin at the centre of
/// mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub mass: f64,
    pub inertia: f64,
    pub vertices: Vec<[f64; 2]>,
}

impl BodyModel {
    pub fn new(mass: f64, inertia: f64, vertices: Vec<[f64; 2]>) -> Result<Self> {
        let body = Self {
            mass,
            inertia,
            vertices,
        };
        body.validate()?;
        Ok(body)
    }

    /// Uniform-density lamina with the given outline. The outline is shifted
    /// so its centroid sits at the body origin and the inertia is the polar
    /// second moment of the polygon about that centroid.
    pub fn uniform_polygon(mass: f64, outline: &[[f64; 2]]) -> Result<Self> {
        if outline.len() < 3 {
            return Err(Error::InvalidBody("polygon needs at least 3 vertices".into()));
        }
        let n = outline.len();
        let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let [x0, y0] = outline[i];
            let [x1, y1] = outline[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            a2 += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        if a2.abs() < 1e-300 {
            return Err(Error::InvalidBody("polygon has zero area".into()));
        }
        cx /= 3.0 * a2;
        cy /= 3.0 * a2;
        let shifted: Vec<[f64; 2]> = outline.iter().map(|&[x, y]| [x - cx, y - cy]).collect();
        let mut j = 0.0;
        for i in 0..n {
            let [x0, y0] = shifted[i];
            let [x1, y1] = shifted[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            j += cross * (x0 * x0 + x0 * x1 + x1 * x1 + y0 * y0 + y0 * y1 + y1 * y1);
        }
        // j / 12 is the polar moment of area; divide by area for unit density.
        let inertia = mass * (j / 12.0) / (a2 / 2.0);
        Self::new(mass, inertia.abs(), shifted)
    }

    /// Regular `n`-gon inscribed in the ellipse with semi-axes `a`, `b`.
    pub fn ellipse(mass: f64, a: f64, b: f64, n: usize) -> Result<Self> {
        let outline: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / n as f64;
                [a * phi.cos(), b * phi.sin()]
            })
            .collect();
        Self::uniform_polygon(mass, &outline)
    }

    pub fn rectangle(mass: f64, width: f64, height: f64) -> Result<Self> {
        let (w, h) = (width / 2.0, height / 2.0);
        Self::uniform_polygon(mass, &[[-w, -h], [w, -h], [w, h], [-w, h]])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidBody(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(Error::InvalidBody(format!(
                "inertia must be positive, got {}",
                self.inertia
            )));
        }
        if self.vertices.len() < 3 {
            return Err(Error::InvalidBody("shape needs at least 3 vertices".into()));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBody("non-finite vertex".into()));
        }
        if !crate::geometry::is_simple_polygon(&self.vertices) {
            return Err(Error::InvalidBody("shape is self-intersecting".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let body: Self = serde_json::from_str(&text)?;
        body.validate()?;
        Ok(body)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn radius_of_gyration(&self) -> f64 {
        (self.inertia / self.mass).sqrt()
    }

    /// Generalized inertia `diag(m, m, I)`.
    pub fn mass_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.mass, self.mass, self.inertia))
    }

    pub fn inverse_mass_diag(&self) -> Vector3<f64> {
        Vector3::new(1.0 / self.mass, 1.0 / self.mass, 1.0 / self.inertia)
    }

    /// World position of body-frame vertex `i` at configuration `q`.
    pub fn vertex_world(&self, q: &Vector3<f64>, i: usize) -> Vector2<f64> {
        let [bx, by] = self.vertices[i];
        let (s, c) = q.z.sin_cos();
        Vector2::new(q.x + c * bx - s * by, q.y + s * bx + c * by)
    }

    pub fn vertices_world(&self, q: &Vector3<f64>) -> impl Iterator<Item = Vector2<f64>> + '_ {
        let q = *q;
        (0..self.vertices.len()).map(move |i| self.vertex_world(&q, i))
    }

    /// Index and height of the lowest vertex.
    pub fn lowest_vertex(&self, q: &Vector3<f64>) -> (usize, f64) {
        let (s, c) = q.z.sin_cos();
        self.vertices
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, by), (i, &[bx, vy])| {
                let y = q.y + s * bx + c * vy;
                if y < by {
                    (i, y)
                } else {
                    (bi, by)
                }
            })
    }
}

/// Configuration `(x, y, θ)`, generalized velocity `(vx, vy, ω)` and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarState {
    pub q: Vector3<f64>,
    pub v: Vector3<f64>,
    pub t: f64,
}

impl PlanarState {
    pub fn new(q: Vector3<f64>, v: Vector3<f64>, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn at_rest(q: Vector3<f64>, t: f64) -> Self {
        Self::new(q, Vector3::zeros(), t)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|x| x.is_finite()) && self.t.is_finite()
    }
}

/// Contact impulse in the contact frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Impulse {
    pub p_t: f64,
    pub p_n: f64,
}

impl Impulse {
    pub const ZERO: Impulse = Impulse { p_t: 0.0, p_n: 0.0 };

    pub fn new(p_t: f64, p_n: f64) -> Self {
        Self { p_t, p_n }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.p_t, self.p_n)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn norm(self) -> f64 {
        self.p_t.hypot(self.p_n)
    }

    pub fn is_finite(self) -> bool {
        self.p_t.is_finite() && self.p_n.is_finite()
    }
}

impl std::ops::Add for Impulse {
    type Output = Impulse;
    fn add(self, o: Impulse) -> Impulse {
        Impulse::new(self.p_t + o.p_t, self.p_n + o.p_n)
    }
}

impl std::ops::Sub for Impulse {
    type Output = Impulse;
    fn sub(self, o: Impulse) -> Impulse {
        Impulse::new(self.p_t - o.p_t, self.p_n - o.p_n)
    }
}

impl std::ops::Neg for Impulse {
    type Output = Impulse;
    fn neg(self) -> Impulse {
        Impulse::new(-self.p_t, -self.p_n)
    }
}

/// Everything the impact models need about one contact: the point, the
/// Jacobian, the contact-space compliance `J M⁻¹ Jᵀ`, its inverse and the
/// pre-impact contact-point velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame {
    pub contact_point: Vector2<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub m_c_inv: Matrix2<f64>,
    pub m_c: Matrix2<f64>,
    pub v_c: Vector2<f64>,
}

impl ContactFrame {
    /// Frame built directly from contact-space data (no body behind it).
    /// The Jacobian is left as the point-mass map.
    pub fn from_contact_space(m_c_inv: Matrix2<f64>, v_c: Vector2<f64>) -> Result<Self> {
        let m_c = invert_spd(&m_c_inv)?;
        Ok(Self {
            contact_point: Vector2::zeros(),
            jacobian: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
            m_c_inv,
            m_c,
            v_c,
        })
    }

    pub fn v_t(&self) -> f64 {
        self.v_c.x
    }

    pub fn v_n(&self) -> f64 {
        self.v_c.y
    }

    /// Contact-point velocity after applying `p`.
    pub fn post_velocity(&self, p: Impulse) -> Vector2<f64> {
        self.v_c + self.m_c_inv * p.to_vector()
    }

    /// Impulse that brings the contact point to rest, `−M_c v_c`.
    pub fn stick_impulse(&self) -> Impulse {
        Impulse::from_vector(-(self.m_c * self.v_c))
    }

    /// Contact-space kinetic energy `½ vᵀ M_c v` of a contact velocity.
    pub fn kinetic_energy(&self, v: &Vector2<f64>) -> f64 {
        0.5 * v.dot(&(self.m_c * v))
    }
}

fn invert_spd(a: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = a.m11 * a.m22 - a.m12 * a.m21;
    if !(a.m11 > 0.0 && a.m22 > 0.0 && det > 0.0) || !det.is_finite() {
        return Err(Error::NonPositiveDefinite);
    }
    Ok(Matrix2::new(a.m22, -a.m12, -a.m21, a.m11) / det)
}

pub fn contact_jacobian(q: &Vector3<f64>, contact_point: &Vector2<f64>) -> Matrix2x3<f64> {
    let rx = contact_point.x - q.x;
    let ry = contact_point.y - q.y;
    Matrix2x3::new(1.0, 0.0, -ry, 0.0, 1.0, rx)
}

pub fn build_contact_frame(
    state: &PlanarState,
    body: &BodyModel,
    contact_point: Vector2<f64>,
) -> Result<ContactFrame> {
    let jacobian = contact_jacobian(&state.q, &contact_point);
    let minv = Matrix3::from_diagonal(&body.inverse_mass_diag());
    let m_c_inv = jacobian * minv * jacobian.transpose();
    // Exact symmetry; the product above is symmetric up to rounding only.
    let off = 0.5 * (m_c_inv.m12 + m_c_inv.m21);
    let m_c_inv = Matrix2::new(m_c_inv.m11, off, off, m_c_inv.m22);
    let m_c = invert_spd(&m_c_inv)?;
    Ok(ContactFrame {
        contact_point,
        jacobian,
        m_c_inv,
        m_c,
        v_c: jacobian * state.v,
    })
}

/// `v_f = v_i + M⁻¹ Jᵀ p`; configuration and time are untouched.
pub fn apply_impulse(
    state: &PlanarState,
    body: &BodyModel,
    frame: &ContactFrame,
    p: Impulse,
) -> PlanarState {
    let generalized = frame.jacobian.transpose() * p.to_vector();
    let dv = generalized.component_mul(&body.inverse_mass_diag());
    PlanarState {
        q: state.q,
        v: state.v + dv,
        t: state.t,
    }
}

/// Pre-contact momentum measured at the contact point, `M_c v_c`.
pub fn contact_momentum(frame: &ContactFrame) -> Vector2<f64> {
    frame.m_c * frame.v_c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(mass: f64, inertia: f64) -> BodyModel {
        BodyModel::new(
            mass,
            inertia,
            vec![[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]],
        )
        .unwrap()
    }

    #[test]
    fn frame_with_lever_arm_below_com() {
        let body = square(1.0, 0.1);
        let state = PlanarState::new(Vector3::new(0.0, 0.1, 0.0), Vector3::new(0.0, -1.0, 0.0), 0.0);
        let f = build_contact_frame(&state, &body, Vector2::new(0.0, 0.0)).unwrap();
        assert_eq!(f.jacobian.row(0).clone_owned(), nalgebra::RowVector3::new(1.0, 0.0, 0.1));
        assert_eq!(f.jacobian.row(1).clone_owned(), nalgebra::RowVector3::new(0.0, 1.0, 0.0));
        assert!((f.v_c - Vector2::new(0.0, -1.0)).norm() < 1e-15);
        assert!((f.m_c_inv - Matrix2::new(1.1, 0.0, 0.0, 1.0)).norm() < 1e-12);
        // numerical cross-check of the product
        let j = f.jacobian;
        let mut direct = Matrix2::zeros();
        for a in 0..2 {
            for b in 0..2 {
                direct[(a, b)] = j[(a, 0)] * j[(b, 0)] / 1.0
                    + j[(a, 1)] * j[(b, 1)] / 1.0
                    + j[(a, 2)] * j[(b, 2)] / 0.1;
            }
        }
        assert!((direct - f.m_c_inv).norm() < 1e-12);
    }

    #[test]
    fn contact_at_com_is_point_mass() {
        let body = square(2.0, 0.3);
        let state = PlanarState::new(Vector3::new(0.3, 0.4, 0.2), Vector3::new(1.0, -1.0, 3.0), 0.0);
        let f = build_contact_frame(&state, &body, Vector2::new(0.3, 0.4)).unwrap();
        assert!((f.m_c_inv - Matrix2::identity() * 0.5).norm() < 1e-15);
    }

    #[test]
    fn coupled_frame_and_impulse() {
        let body = square(1.0, 0.1);
        let state = PlanarState::new(Vector3::new(0.0, 0.1, 0.0), Vector3::new(1.0, -1.0, 0.0), 0.0);
        let f = build_contact_frame(&state, &body, Vector2::new(0.1, 0.0)).unwrap();
        assert!((f.m_c_inv - Matrix2::new(1.1, 0.1, 0.1, 1.1)).norm() < 1e-12);
        assert!((f.v_c - Vector2::new(1.0, -1.0)).norm() < 1e-15);
        assert!((f.m_c * f.m_c_inv - Matrix2::identity()).norm() < 1e-10);

        let post = apply_impulse(&state, &body, &f, Impulse::new(-0.4206, 1.4019));
        assert!((post.v - Vector3::new(0.5794, 0.4019, 0.9813)).norm() < 1e-3);
        // ω gain = (−r_y p_t + r_x p_n) / I with r = (0.1, −0.1)
        let w = (0.1 * -0.4206 + 0.1 * 1.4019) / 0.1;
        assert!((post.v.z - w).abs() < 1e-12);
        assert_eq!(post.q, state.q);
        assert_eq!(post.t, state.t);
    }

    #[test]
    fn zero_impulse_and_inverse() {
        let body = square(1.3, 0.07);
        let state = PlanarState::new(Vector3::new(0.1, 0.2, 0.4), Vector3::new(0.2, -2.0, 1.0), 1.5);
        let f = build_contact_frame(&state, &body, Vector2::new(0.15, 0.05)).unwrap();
        assert_eq!(apply_impulse(&state, &body, &f, Impulse::ZERO), state);
        let p = Impulse::new(0.3, 0.8);
        let there = apply_impulse(&state, &body, &f, p);
        let back = apply_impulse(&there, &body, &f, -p);
        assert!((back.v - state.v).norm() < 1e-12);
    }

    #[test]
    fn momentum_at_contact() {
        let body = square(1.0, 0.1);
        let mut state = PlanarState::new(Vector3::new(0.0, 0.1, 0.0), Vector3::zeros(), 0.0);
        let f = build_contact_frame(&state, &body, Vector2::new(0.1, 0.0)).unwrap();
        assert_eq!(contact_momentum(&f), Vector2::zeros());

        state.v = Vector3::new(1.0, -1.0, 0.0);
        let f = build_contact_frame(&state, &body, Vector2::new(0.0, 0.1)).unwrap();
        assert!((contact_momentum(&f) - Vector2::new(1.0, -1.0)).norm() < 1e-12);

        // coupled: solve M_c⁻¹ x = v_c independently
        let f = build_contact_frame(&state, &body, Vector2::new(0.1, 0.0)).unwrap();
        let x = f.m_c_inv.lu().solve(&f.v_c).unwrap();
        assert!((contact_momentum(&f) - x).norm() < 1e-12);
    }

    #[test]
    fn uniform_rectangle_inertia() {
        let b = BodyModel::rectangle(2.0, 0.3, 0.1).unwrap();
        let expect = 2.0 * (0.3f64.powi(2) + 0.1f64.powi(2)) / 12.0;
        assert!((b.inertia - expect).abs() < 1e-14);
        let rho = b.radius_of_gyration();
        assert!((rho * rho * b.mass - b.inertia).abs() <= 1e-12 * b.inertia);
    }

    #[test]
    fn rejects_bad_bodies() {
        assert!(BodyModel::new(0.0, 1.0, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(BodyModel::new(1.0, -1.0, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(BodyModel::new(1.0, 1.0, vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(BodyModel::new(1.0, 1.0, bowtie).is_err());
    }
}
