//! CBF-constrained velocity selection: stay as close as possible to the
//! ideal control while keeping λ₂ above ε, neighbors beyond d_min and the
//! step within d_max.

use serde::{Deserialize, Serialize};

use crate::Vec2;

/// A half-plane g·u + b ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub g: Vec2,
    pub b: f64,
}

impl HalfPlane {
    pub fn value(&self, u: &Vec2) -> f64 {
        self.g.dot(u) + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbfProblem {
    pub u_des: Vec2,
    pub dt: f64,
    pub d_max: f64,
    pub d_min: f64,
    pub epsilon: f64,
    pub lambda2: f64,
    pub lambda2_grad: Vec2,
    pub position: Vec2,
    pub neighbors: Vec<Vec2>,
    /// False for a lone robot, which has no graph to keep connected.
    pub keep_connected: bool,
}

impl CbfProblem {
    pub fn speed_limit(&self) -> f64 {
        self.d_max / self.dt
    }

    /// Connectivity row first, then one collision row per neighbor.
    pub fn rows(&self) -> Vec<HalfPlane> {
        let mut rows = Vec::with_capacity(self.neighbors.len() + 1);
        if self.keep_connected {
            rows.push(HalfPlane { g: self.lambda2_grad, b: self.lambda2 - self.epsilon });
        }
        for xl in &self.neighbors {
            let diff = self.position - xl;
            rows.push(HalfPlane { g: diff * 2.0, b: diff.norm_squared() - self.d_min * self.d_min });
        }
        rows
    }

    /// Largest violation over the ball and all rows (0 when feasible).
    pub fn violation(&self, u: &Vec2) -> f64 {
        let ball = (u.norm() - self.speed_limit()).max(0.0);
        self.rows().iter().map(|r| (-r.value(u)).max(0.0)).fold(ball, f64::max)
    }

    pub fn objective(&self, u: &Vec2) -> f64 {
        0.5 * (u - self.u_des).norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfSolution {
    pub u: [f64; 2],
    /// No candidate was feasible and u = 0 was returned.
    pub fallback: bool,
    pub ball_multiplier: f64,
}

impl CbfSolution {
    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.u[0], self.u[1])
    }
}

pub fn compute_u_des(current: &Vec2, intended: &Vec2, dt: f64) -> Vec2 {
    (intended - current) / dt
}

pub fn integrate(current: &Vec2, u: &Vec2, dt: f64) -> Vec2 {
    current + u * dt
}

const ROW_EPS: f64 = 1e-12;

/// Minimizer of ½‖u − c‖² on the affine set where every row in `active`
/// holds with equality. `None` if the rows are inconsistent.
fn project_affine(c: &Vec2, active: &[HalfPlane]) -> Option<Vec2> {
    match active {
        [] => Some(*c),
        [r] => {
            let gg = r.g.norm_squared();
            Some(c - r.g * (r.value(c) / gg))
        }
        [r1, r2] => {
            let m = nalgebra::Matrix2::new(r1.g.x, r1.g.y, r2.g.x, r2.g.y);
            let det = m.determinant();
            if det.abs() <= 1e-12 * r1.g.norm() * r2.g.norm() {
                return None;
            }
            m.try_inverse().map(|inv| inv * Vec2::new(-r1.b, -r2.b))
        }
        _ => None,
    }
}

/// With ball multiplier μ the stationary point is the projection of
/// u_des/(1+μ); bisect μ until the norm meets the speed limit.
fn ball_active(u_des: &Vec2, active: &[HalfPlane], limit: f64) -> Option<(Vec2, f64)> {
    let at = |mu: f64| project_affine(&(u_des / (1.0 + mu)), active);
    let u0 = at(0.0)?;
    if u0.norm() <= limit {
        return None;
    }
    let mut hi = 1.0;
    while at(hi)?.norm() > limit {
        hi *= 2.0;
        if hi > 1e300 {
            // the affine set never enters the ball
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid)?.norm() > limit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = at(hi)?;
    // pull the last ulp inside the ball
    let norm = u.norm();
    if norm > limit {
        u *= limit / norm;
    }
    Some((u, hi))
}

fn feasible(p: &CbfProblem, rows: &[HalfPlane], u: &Vec2) -> bool {
    let tol = 1e-10;
    u.norm() <= p.speed_limit() * (1.0 + 1e-12) + 1e-12 && rows.iter().all(|r| r.value(u) >= -tol * (1.0 + r.g.norm() * u.norm()))
}

/// Enumerates active sets of up to two rows, each with the ball inactive or
/// active, and keeps the feasible candidate with the lowest objective. The
/// problem is convex, so that candidate is the optimum.
pub fn solve_cbf_qp(p: &CbfProblem) -> CbfSolution {
    let limit = p.speed_limit();
    let rows: Vec<HalfPlane> = p.rows();
    let live: Vec<HalfPlane> = rows.iter().copied().filter(|r| r.g.norm() > ROW_EPS).collect();
    let mut best: Option<(f64, Vec2, f64)> = None;
    let mut consider = |u: Vec2, mu: f64| {
        if !feasible(p, &rows, &u) {
            return;
        }
        let obj = p.objective(&u);
        if best.is_none_or(|(b, _, _)| obj < b) {
            best = Some((obj, u, mu));
        }
    };
    let mut sets: Vec<Vec<HalfPlane>> = vec![vec![]];
    for (a, r1) in live.iter().enumerate() {
        sets.push(vec![*r1]);
        for r2 in &live[a + 1..] {
            sets.push(vec![*r1, *r2]);
        }
    }
    for set in &sets {
        if let Some(u) = project_affine(&p.u_des, set) {
            if u.norm() <= limit {
                consider(u, 0.0);
            }
        }
        if let Some((u, mu)) = ball_active(&p.u_des, set, limit) {
            consider(u, mu);
        }
    }
    match best {
        Some((_, u, mu)) => CbfSolution { u: [u.x, u.y], fallback: false, ball_multiplier: mu },
        None => {
            log::warn!("cbf_fallback: no feasible candidate, holding position");
            CbfSolution { u: [0.0, 0.0], fallback: true, ball_multiplier: 0.0 }
        }
    }
}

/// Stationarity residual ‖(u − u_des) + μu − Σ λ_k g_k‖ for the rows active
/// at `u`, with λ from least squares restricted to λ ≥ 0. Used by tests.
pub fn kkt_residual(p: &CbfProblem, sol: &CbfSolution) -> f64 {
    let u = sol.velocity();
    let grad = (u - p.u_des) + u * sol.ball_multiplier;
    let scale = 1.0 + p.u_des.norm();
    let active: Vec<Vec2> = p
        .rows()
        .iter()
        .filter(|r| r.g.norm() > ROW_EPS && r.value(&u).abs() <= 1e-7 * scale * (1.0 + r.g.norm()))
        .map(|r| r.g)
        .collect();
    let mut best = grad.norm();
    for g in &active {
        let lam = (grad.dot(g) / g.norm_squared()).max(0.0);
        best = best.min((grad - g * lam).norm());
    }
    for a in 0..active.len() {
        for b in (a + 1)..active.len() {
            let m = nalgebra::Matrix2::from_columns(&[active[a], active[b]]);
            if let Some(inv) = m.try_inverse() {
                let lam = inv * grad;
                if lam.x >= -1e-9 && lam.y >= -1e-9 {
                    best = best.min((grad - m * lam).norm());
                }
            }
        }
    }
    best
}
