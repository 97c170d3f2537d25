//! Per-robot Kalman filtering and consensus on information pairs.

use nalgebra::{DMatrix, DVector};

use crate::netsim::{run_rounds, LocalView, MessageLog, Protocol, RoundOutcome, Wire};
use crate::world::Measurement;

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub z: DVector<f64>,
    pub p: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoPair {
    pub omega: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl Belief {
    pub fn new(z: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { z, p }
    }

    pub fn trace(&self) -> f64 {
        self.p.trace()
    }

    /// 2×2 marginal covariance of target `j`.
    pub fn block(&self, j: usize) -> nalgebra::Matrix2<f64> {
        self.p.fixed_view::<2, 2>(2 * j, 2 * j).into_owned()
    }

    pub fn target(&self, j: usize) -> crate::Vec2 {
        crate::Vec2::new(self.z[2 * j], self.z[2 * j + 1])
    }

    pub fn to_info(&self) -> InfoPair {
        let omega = spd_inverse(&self.p);
        let q = &omega * &self.z;
        InfoPair { omega, q }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix, with a 1e-9 ridge when
/// the Cholesky factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return symmetrize(&ch.inverse());
    }
    log::warn!("matrix not SPD, inverting with ridge 1e-9");
    let n = sym.nrows();
    let ridged = sym + DMatrix::identity(n, n) * 1e-9;
    match ridged.clone().cholesky() {
        Some(ch) => symmetrize(&ch.inverse()),
        None => symmetrize(&ridged.pseudo_inverse(1e-15).expect("svd")),
    }
}

pub fn kf_predict(b: &Belief, a: &DMatrix<f64>, q: &DMatrix<f64>) -> Belief {
    Belief { z: a * &b.z, p: symmetrize(&(a * &b.p * a.transpose() + q)) }
}

pub fn kf_update(b: &Belief, m: &Measurement) -> Belief {
    if m.is_empty() {
        return b.clone();
    }
    let ph = &b.p * m.h.transpose();
    let s = symmetrize(&(&m.h * &ph + &m.r));
    let Some(ch) = s.clone().cholesky() else {
        log::warn!("innovation covariance singular for robot {}, update skipped", m.robot);
        return b.clone();
    };
    // K = P Hᵀ S⁻¹ via the Cholesky factor
    let k = ch.solve(&ph.transpose()).transpose();
    let resid = &m.y - &m.h * &b.z;
    let z = &b.z + &k * resid;
    let p = symmetrize(&(&b.p - &k * &s * k.transpose()));
    Belief { z, p }
}

/// Metropolis weights (self weight first, then neighbors in view order).
pub fn metropolis_weights(view: &LocalView) -> (f64, Vec<f64>) {
    view.metropolis()
}

impl Wire for InfoPair {
    fn kind(&self) -> &'static str {
        "info"
    }
    fn size_bytes(&self) -> usize {
        8 * (self.omega.len() + self.q.len())
    }
}

pub fn consensus_round(view: &LocalView, own: &InfoPair, inbox: &[InfoPair]) -> InfoPair {
    let (self_w, w) = view.metropolis();
    let mut omega = &own.omega * self_w;
    let mut q = &own.q * self_w;
    for (wl, m) in w.iter().zip(inbox) {
        omega += &m.omega * *wl;
        q += &m.q * *wl;
    }
    InfoPair { omega, q }
}

pub struct Consensus {
    pub tol: f64,
}

impl Default for Consensus {
    fn default() -> Self {
        Self { tol: 1e-8 }
    }
}

impl Protocol for Consensus {
    type State = InfoPair;
    type Message = InfoPair;

    fn message(&self, _: &LocalView, s: &InfoPair) -> InfoPair {
        s.clone()
    }

    fn update(&self, view: &LocalView, s: &InfoPair, inbox: &[InfoPair]) -> InfoPair {
        consensus_round(view, s, inbox)
    }

    fn settled(&self, _: &LocalView, old: &InfoPair, new: &InfoPair) -> bool {
        (&old.omega - &new.omega).amax() <= self.tol && (&old.q - &new.q).amax() <= self.tol
    }
}

/// Runs consensus for at most 50·N rounds.
pub fn run_consensus(
    views: &[LocalView],
    init: Vec<InfoPair>,
    tol: f64,
    log: Option<&mut MessageLog>,
) -> RoundOutcome<InfoPair> {
    let max = 50 * views.len().max(1);
    run_rounds(views, &Consensus { tol }, init, max, log)
}

pub fn finalize_estimate(info: &InfoPair) -> Belief {
    let p = spd_inverse(&info.omega);
    let z = &p * &info.q;
    Belief { z, p }
}
