//! Rotationally symmetric random tubes in ℝ³.
//!
//! The axis is `e = (1, 0, 0)`; a point is `(α, r cos φ, r sin φ)`. The
//! radius is constant on every cell `[i, i + 1)` and is driven by a
//! finite-state stationary process over cells. The boundary consists of
//! lateral cylinder walls and, where the radius jumps at an integer `i`, a
//! flat annulus in the plane `α = i`. Edge circles (where walls meet) form a
//! null set and are treated as non-regular.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::line::{LineProcess, LineView, StateLine};

/// Tolerance for tangency and edge proximity.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Axial half-width of the simulated window.
pub const AXIAL_WINDOW: f64 = 1e12;
const MAX_CELLS_PER_RAY: u64 = 50_000_000;

/// Driver of the radius process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "driver", rename_all = "snake_case")]
pub enum RadiusDriver {
    Markov { transition: Vec<Vec<f64>> },
    Periodic {
        #[serde(default)]
        phase: usize,
    },
    Iid {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    #[serde(flatten)]
    pub driver: RadiusDriver,
    /// Radius attached to each driver state.
    pub radii: Vec<f64>,
    pub r_min: f64,
    pub m_hat: f64,
}

impl TubeSpec {
    /// Straight cylinder of radius `r`.
    pub fn cylinder(r: f64) -> Self {
        TubeSpec { driver: RadiusDriver::Periodic { phase: 0 }, radii: vec![r], r_min: r, m_hat: r }
    }

    /// Radii `r0, r1, r0, ..` on consecutive cells, `r0` on cell 0.
    pub fn alternating(r0: f64, r1: f64) -> Self {
        TubeSpec {
            driver: RadiusDriver::Periodic { phase: 0 },
            radii: vec![r0, r1],
            r_min: r0.min(r1),
            m_hat: r0.max(r1),
        }
    }

    pub fn markov(transition: Vec<Vec<f64>>, radii: Vec<f64>) -> Self {
        let r_min = radii.iter().copied().fold(f64::INFINITY, f64::min);
        let m_hat = radii.iter().copied().fold(0.0, f64::max);
        TubeSpec { driver: RadiusDriver::Markov { transition }, radii, r_min, m_hat }
    }
}

/// A seeded tube.
#[derive(Clone, Debug)]
pub struct Tube {
    spec: TubeSpec,
    seed: u64,
    line: StateLine,
    uniform: bool,
}

pub fn build_tube(spec: &TubeSpec, seed: u64) -> Result<Tube> {
    Tube::new(spec.clone(), seed)
}

impl Tube {
    pub fn new(spec: TubeSpec, seed: u64) -> Result<Self> {
        if spec.radii.is_empty() {
            return Err(Error::InvalidParameter("tube needs at least one radius".into()));
        }
        if !(spec.r_min > 0.0 && spec.r_min <= spec.m_hat) {
            return Err(Error::InvalidParameter(format!("need 0 < r_min <= M_hat, got ({}, {})", spec.r_min, spec.m_hat)));
        }
        if let Some(r) = spec.radii.iter().find(|&&r| !(r >= spec.r_min && r <= spec.m_hat)) {
            return Err(Error::InvalidParameter(format!("radius {r} outside [{}, {}]", spec.r_min, spec.m_hat)));
        }
        let k = spec.radii.len();
        let process = match &spec.driver {
            RadiusDriver::Markov { transition } => {
                if transition.len() != k {
                    return Err(Error::InvalidParameter(format!("{} driver states but {k} radii", transition.len())));
                }
                LineProcess::markov(transition.clone())?
            }
            RadiusDriver::Periodic { phase } => LineProcess::periodic(k, *phase)?,
            RadiusDriver::Iid { weights } => {
                LineProcess::iid(if weights.is_empty() { vec![1.0; k] } else { weights.clone() })?
            }
        };
        if process.n_states() != k {
            return Err(Error::InvalidParameter(format!("driver has {} states but {k} radii", process.n_states())));
        }
        let uniform = spec.radii.iter().all(|&r| r == spec.radii[0]);
        Ok(Tube { line: StateLine::new(process, seed), spec, seed, uniform })
    }

    pub fn spec(&self) -> &TubeSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Radius on the cell `[i, i + 1)`.
    pub fn cell_radius(&self, i: i64) -> f64 {
        self.spec.radii[self.line.state(i)]
    }

    pub fn radius(&self, alpha: f64) -> f64 {
        self.cell_radius(alpha.floor() as i64)
    }

    pub fn view(&self) -> TubeView<'_> {
        TubeView { tube: self, line: self.line.view() }
    }

    /// Area of `U_j = {x ∈ ∂ω : x·e ∈ (j, j + 1]}`: the wall of cell `j` plus
    /// the annulus at `j + 1`.
    pub fn band_measure(&self, j: i64) -> f64 {
        self.band_patches(j).iter().map(|p| p.1).sum()
    }

    /// `(is_annulus, area)` for each patch of band `j`.
    pub fn band_patches(&self, j: i64) -> Vec<(bool, f64)> {
        let (r0, r1) = (self.cell_radius(j), self.cell_radius(j + 1));
        let mut v = vec![(false, TAU * r0)];
        if r0 != r1 {
            v.push((true, PI * (r1 * r1 - r0 * r0).abs()));
        }
        v
    }

    /// `ν_λ(U_j) = ∫_{U_j} e^{λ x·e} dν`.
    pub fn band_lambda_measure(&self, j: i64, lambda: f64) -> f64 {
        let (r0, r1) = (self.cell_radius(j), self.cell_radius(j + 1));
        let a = j as f64;
        let lateral = if lambda == 0.0 {
            TAU * r0
        } else {
            TAU * r0 * ((lambda * (a + 1.0)).exp() - (lambda * a).exp()) / lambda
        };
        lateral + PI * (r1 * r1 - r0 * r0).abs() * (lambda * (a + 1.0)).exp()
    }

    /// A point of band `j` with law `ν` restricted to the band.
    pub fn sample_boundary_uniform<R: Rng + ?Sized>(&self, j: i64, rng: &mut R) -> BoundaryPoint {
        let (r0, r1) = (self.cell_radius(j), self.cell_radius(j + 1));
        let lateral = TAU * r0;
        let total = self.band_measure(j);
        let angle = TAU * rng.random::<f64>();
        if rng.random::<f64>() * total < lateral {
            let offset = 1.0 - rng.random::<f64>();
            BoundaryPoint { alpha: j as f64 + offset, patch: Patch::Lateral { cell: j, offset }, angle, radial: r0 }
        } else {
            let (inner, outer) = (r0.min(r1), r0.max(r1));
            let radial = (inner * inner + rng.random::<f64>() * (outer * outer - inner * inner)).sqrt();
            BoundaryPoint {
                alpha: (j + 1) as f64,
                patch: Patch::Step { at: j + 1, inner, outer, facing: if r1 > r0 { 1 } else { -1 } },
                angle,
                radial,
            }
        }
    }

    pub fn inner_normal(&self, p: &BoundaryPoint) -> Result<Vec3> {
        self.check_regular(p)?;
        Ok(p.patch_normal())
    }

    fn check_regular(&self, p: &BoundaryPoint) -> Result<()> {
        match p.patch {
            Patch::Lateral { cell, offset } => {
                let r = self.cell_radius(cell);
                if (p.radial - r).abs() > 1e-9 || !(-1e-9..=1.0 + 1e-9).contains(&offset) {
                    return Err(Error::NonRegular(format!("{p:?} is not on the wall of cell {cell}")));
                }
                for (edge, at, other) in [(0.0, cell, cell - 1), (1.0, cell + 1, cell + 1)] {
                    if (offset - edge).abs() <= DEGENERACY_TOL && self.cell_radius(other) != r {
                        return Err(Error::NonRegular(format!("alpha = {} lies on the edge circle at {at}", p.alpha)));
                    }
                }
            }
            Patch::Step { at, inner, outer, facing } => {
                let (ra, rb) = (self.cell_radius(at - 1), self.cell_radius(at));
                let expected_facing = if rb > ra { 1 } else { -1 };
                if ra == rb || inner != ra.min(rb) || outer != ra.max(rb) || facing != expected_facing {
                    return Err(Error::NonRegular(format!("no annulus {inner}..{outer} at {at}")));
                }
                if p.radial <= inner + DEGENERACY_TOL || p.radial >= outer - DEGENERACY_TOL {
                    return Err(Error::NonRegular(format!("radial {} lies on an edge circle", p.radial)));
                }
            }
        }
        Ok(())
    }

    /// Distance of the embedded point from the surface of its patch.
    pub fn boundary_residual(&self, p: &BoundaryPoint) -> f64 {
        let x = p.position();
        let radial = x.y.hypot(x.z);
        match p.patch {
            Patch::Lateral { cell, offset } => {
                let out = (-offset).max(offset - 1.0).max(0.0);
                (radial - self.cell_radius(cell)).abs() + out
            }
            Patch::Step { at, inner, outer, .. } => {
                let out = (inner - radial).max(radial - outer).max(0.0);
                (x.x - at as f64).abs() + out
            }
        }
    }

    /// Convenience wrapper over [`TubeView::ray_exit`].
    pub fn ray_exit(&self, p: &BoundaryPoint, w: Vec3) -> Result<BoundaryPoint> {
        self.view().ray_exit(p, w)
    }

    /// Radius sequence on cells `lo..=hi` as CSV.
    pub fn write_radius_csv<W: Write>(&self, lo: i64, hi: i64, mut out: W) -> io::Result<()> {
        writeln!(out, "cell,radius")?;
        for i in lo..=hi {
            writeln!(out, "{i},{}", self.cell_radius(i))?;
        }
        Ok(())
    }
}

/// Boundary patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Patch {
    /// Cylinder wall over `[cell, cell + 1)`; `offset = α - cell` is kept
    /// separately so that precision does not degrade far from the origin.
    Lateral { cell: i64, offset: f64 },
    /// Annulus in the plane `α = at`; `facing` is the sign of the inner
    /// normal along `e` (`+1` when the radius increases left to right).
    Step { at: i64, inner: f64, outer: f64, facing: i8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub alpha: f64,
    pub patch: Patch,
    pub angle: f64,
    pub radial: f64,
}

impl BoundaryPoint {
    pub fn lateral(alpha: f64, angle: f64, radius: f64) -> Self {
        let cell = alpha.floor();
        BoundaryPoint { alpha, patch: Patch::Lateral { cell: cell as i64, offset: alpha - cell }, angle, radial: radius }
    }

    /// Integer origin and axial coordinate relative to it.
    #[inline]
    fn local(&self) -> (i64, f64) {
        match self.patch {
            Patch::Lateral { cell, offset } => (cell, offset),
            Patch::Step { at, .. } => (at, 0.0),
        }
    }

    /// Position with the axial coordinate measured from `origin`.
    #[inline]
    fn local_position(&self, origin: i64) -> Vec3 {
        let (o, x) = self.local();
        Vec3::new((o - origin) as f64 + x, self.radial * self.angle.cos(), self.radial * self.angle.sin())
    }

    #[inline]
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.alpha, self.radial * self.angle.cos(), self.radial * self.angle.sin())
    }

    fn patch_normal(&self) -> Vec3 {
        match self.patch {
            Patch::Lateral { .. } => Vec3::new(0.0, -self.angle.cos(), -self.angle.sin()),
            Patch::Step { facing, .. } => Vec3::new(facing as f64, 0.0, 0.0),
        }
    }

    /// Band index `j` with `α ∈ (j, j + 1]`.
    pub fn band(&self) -> i64 {
        self.alpha.ceil() as i64 - 1
    }

    pub fn is_step(&self) -> bool {
        matches!(self.patch, Patch::Step { .. })
    }
}

/// Per-thread read handle on a [`Tube`].
#[derive(Debug)]
pub struct TubeView<'a> {
    tube: &'a Tube,
    line: LineView<'a>,
}

#[inline]
fn angle_of(y: f64, z: f64) -> f64 {
    let a = z.atan2(y);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

impl<'a> TubeView<'a> {
    pub fn tube(&self) -> &'a Tube {
        self.tube
    }

    #[inline]
    pub fn cell_radius(&mut self, i: i64) -> f64 {
        self.tube.spec.radii[self.line.state(i)]
    }

    /// First boundary point hit by the ray from `p` in direction `w`.
    ///
    /// Walks through unit cells: inside cell `k` the ray leaves either
    /// through the wall (larger root of `|u₀ + t w⊥|² = R²`) or through the
    /// plane at the far end of the cell, where it either passes into the
    /// next cell or hits the annulus if its distance from the axis exceeds
    /// the next radius.
    pub fn ray_exit(&mut self, p: &BoundaryPoint, w: Vec3) -> Result<BoundaryPoint> {
        let n = self.tube.inner_normal(p)?;
        if !(w.dot(n) > 0.0) {
            return Err(Error::InvalidParameter("direction does not point into the tube".into()));
        }
        let origin = p.local().0;
        let x0 = p.local_position(origin);
        let mut cell = match p.patch {
            Patch::Lateral { cell, .. } => cell,
            Patch::Step { at, facing, .. } => {
                if facing > 0 {
                    at
                } else {
                    at - 1
                }
            }
        };
        let a = w.y * w.y + w.z * w.z;
        let b = 2.0 * (x0.y * w.y + x0.z * w.z);
        let u0sq = x0.y * x0.y + x0.z * x0.z;
        let step = if w.x > 0.0 {
            1
        } else if w.x < 0.0 {
            -1
        } else {
            0
        };
        let mut r = self.cell_radius(cell);
        for _ in 0..MAX_CELLS_PER_RAY {
            let t_wall = self.wall_exit(a, b, u0sq - r * r)?;
            if self.tube.uniform {
                return self.wall_point(origin, x0, w, t_wall, r);
            }
            let plane_at = if step > 0 { cell + 1 } else { cell };
            let plane = plane_at as f64;
            let t_plane = if step == 0 { f64::INFINITY } else { ((plane_at - origin) as f64 - x0.x) / w.x };
            if t_wall <= t_plane {
                if (t_plane - t_wall) * w.x.abs() <= DEGENERACY_TOL {
                    return Err(Error::TangentRay);
                }
                return self.wall_point(origin, x0, w, t_wall, r);
            }
            if plane.abs() > AXIAL_WINDOW {
                return Err(Error::WindowExhausted { alpha: plane });
            }
            let next = cell + step;
            let r_next = self.cell_radius(next);
            let hit = x0 + w * t_plane;
            let radial = hit.y.hypot(hit.z);
            if (radial - r_next).abs() <= DEGENERACY_TOL {
                return Err(Error::TangentRay);
            }
            if radial > r_next {
                if t_plane <= DEGENERACY_TOL {
                    return Err(Error::TangentRay);
                }
                let at = if step > 0 { cell + 1 } else { cell };
                return Ok(BoundaryPoint {
                    alpha: plane,
                    patch: Patch::Step { at, inner: r_next, outer: r, facing: -step as i8 },
                    angle: angle_of(hit.y, hit.z),
                    radial,
                });
            }
            cell = next;
            r = r_next;
        }
        Err(Error::WindowExhausted { alpha: origin as f64 + x0.x + w.x * 1e300 })
    }

    /// Larger root of `a t² + b t + c = 0`, computed without cancellation.
    fn wall_exit(&self, a: f64, b: f64, c: f64) -> Result<f64> {
        if a == 0.0 {
            return Ok(f64::INFINITY);
        }
        let disc = b * b - 4.0 * a * c;
        if disc <= DEGENERACY_TOL * (b * b + (4.0 * a * c).abs()) {
            return Err(Error::TangentRay);
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        Ok((q / a).max(c / q))
    }

    fn wall_point(&mut self, origin: i64, x0: Vec3, w: Vec3, t: f64, r: f64) -> Result<BoundaryPoint> {
        if !t.is_finite() {
            return Err(Error::WindowExhausted { alpha: if w.x > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY } });
        }
        let hit = x0 + w * t;
        let alpha = origin as f64 + hit.x;
        if alpha.abs() > AXIAL_WINDOW {
            return Err(Error::WindowExhausted { alpha });
        }
        let floor = hit.x.floor();
        let cell = origin + floor as i64;
        let frac = hit.x - floor;
        if !self.tube.uniform
            && ((frac <= DEGENERACY_TOL && self.cell_radius(cell - 1) != r)
                || (1.0 - frac <= DEGENERACY_TOL && self.cell_radius(cell + 1) != r))
        {
            return Err(Error::TangentRay);
        }
        Ok(BoundaryPoint {
            alpha,
            patch: Patch::Lateral { cell, offset: frac },
            angle: angle_of(hit.y, hit.z),
            radial: r,
        })
    }
}
