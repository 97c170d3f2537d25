//! Ground truth: moving targets, their risk fields, robot sensors and
//! risk-driven sensor failures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::{Mat2, Vec2};

/// Per-target state dimension (planar position).
pub const DIM: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("at least one target is required")]
    NoTargets,
    #[error("circle radius must be positive (target {0})")]
    BadRadius(usize),
    #[error("process noise covariance is not symmetric positive semidefinite")]
    BadProcessNoise,
    #[error("matrix {name} has shape {rows}x{cols}, expected {expected}x{expected}")]
    BadShape { name: &'static str, rows: usize, cols: usize, expected: usize },
    #[error("risk peak must be positive (target {0})")]
    BadPeak(usize),
    #[error("risk shape matrix is not symmetric positive definite (target {0})")]
    BadShapeMatrix(usize),
    #[error("sensor {0} has a zero measurement row")]
    ZeroSensorRow(usize),
    #[error("sensor {0} needs gain > 0 and decay >= 0")]
    BadSensorNoise(usize),
    #[error("catalog needs at least one sensor kind")]
    EmptyCatalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePath {
    pub center: [f64; 2],
    pub radius: f64,
    /// Angular rate in rad/s.
    pub rate: f64,
    /// Angle at step 0.
    pub phase: f64,
}

impl CirclePath {
    pub fn point_at(&self, angle: f64) -> Vec2 {
        Vec2::new(
            self.center[0] + self.radius * angle.cos(),
            self.center[1] + self.radius * angle.sin(),
        )
    }

    /// Where the target should be after step `t` (i.e. at step t+1).
    pub fn waypoint(&self, t: usize, dt: f64) -> Vec2 {
        self.point_at(self.phase + self.rate * dt * (t + 1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TargetEnsemble {
    /// Stacked positions, length 2M.
    pub z: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub paths: Vec<CirclePath>,
    pub dt: f64,
    b_pinv: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

fn symmetric_sqrt(q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = q.clone().symmetric_eigen();
    let scale = q.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn check_square(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<(), WorldError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(WorldError::BadShape { name, rows: m.nrows(), cols: m.ncols(), expected: n });
    }
    Ok(())
}

impl TargetEnsemble {
    pub fn new(
        paths: Vec<CirclePath>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        dt: f64,
    ) -> Result<Self, WorldError> {
        if paths.is_empty() {
            return Err(WorldError::NoTargets);
        }
        if let Some(j) = paths.iter().position(|p| !(p.radius > 0.0)) {
            return Err(WorldError::BadRadius(j));
        }
        let n = DIM * paths.len();
        check_square("A", &a, n)?;
        check_square("B", &b, n)?;
        check_square("Q", &q, n)?;
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(WorldError::BadProcessNoise);
        }
        let noise_factor = symmetric_sqrt(&q).ok_or(WorldError::BadProcessNoise)?;
        let b_pinv = b.clone().pseudo_inverse(1e-12).expect("svd of B");
        let mut z = DVector::zeros(n);
        for (j, p) in paths.iter().enumerate() {
            let s = p.point_at(p.phase);
            z[DIM * j] = s.x;
            z[DIM * j + 1] = s.y;
        }
        Ok(Self { z, a, b, q, paths, dt, b_pinv, noise_factor })
    }

    /// Identity dynamics with isotropic process noise `q_scale * I`.
    pub fn circles(paths: Vec<CirclePath>, q_scale: f64, dt: f64) -> Result<Self, WorldError> {
        let n = DIM * paths.len();
        Self::new(
            paths,
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n) * q_scale,
            dt,
        )
    }

    pub fn count(&self) -> usize {
        self.paths.len()
    }

    pub fn position(&self, j: usize) -> Vec2 {
        Vec2::new(self.z[DIM * j], self.z[DIM * j + 1])
    }

    pub fn positions(&self) -> Vec<Vec2> {
        (0..self.count()).map(|j| self.position(j)).collect()
    }

    /// Control that moves every target onto its next circle waypoint.
    pub fn policy(&self, t: usize) -> DVector<f64> {
        let mut next = DVector::zeros(self.z.len());
        for (j, p) in self.paths.iter().enumerate() {
            let w = p.waypoint(t, self.dt);
            next[DIM * j] = w.x;
            next[DIM * j + 1] = w.y;
        }
        &self.b_pinv * (next - &self.a * &self.z)
    }

    pub fn step<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Self {
        let v = self.policy(t);
        let noise = DVector::from_fn(self.z.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut next = self.clone();
        next.z = &self.a * &self.z + &self.b * v + &self.noise_factor * noise;
        next
    }
}

pub fn step_targets<R: Rng + ?Sized>(ensemble: &TargetEnsemble, t: usize, rng: &mut R) -> TargetEnsemble {
    ensemble.step(t, rng)
}

#[derive(Debug, Clone)]
pub struct RiskField {
    pub peaks: Vec<f64>,
    pub shapes: Vec<Mat2>,
    /// Use the conventional Gaussian (inverse shape in the exponent,
    /// square-root determinant in the normalizer) instead of the printed form.
    pub use_inverse: bool,
    exponent: Vec<Mat2>,
    scale: Vec<f64>,
}

impl RiskField {
    pub fn new(peaks: Vec<f64>, shapes: Vec<Mat2>, use_inverse: bool) -> Result<Self, WorldError> {
        let mut exponent = Vec::with_capacity(shapes.len());
        let mut scale = Vec::with_capacity(shapes.len());
        for (j, (&c, s)) in peaks.iter().zip(&shapes).enumerate() {
            if !(c > 0.0) {
                return Err(WorldError::BadPeak(j));
            }
            let sym = (s - s.transpose()).amax() <= 1e-12 * s.amax().max(1.0);
            if !sym || s.cholesky().is_none() {
                return Err(WorldError::BadShapeMatrix(j));
            }
            let det = s.determinant();
            if use_inverse {
                exponent.push(s.try_inverse().ok_or(WorldError::BadShapeMatrix(j))?);
                scale.push(c / (2.0 * PI * det.sqrt()));
            } else {
                exponent.push(*s);
                scale.push(c / (2.0 * PI * det));
            }
        }
        Ok(Self { peaks, shapes, use_inverse, exponent, scale })
    }

    pub fn peak(&self, j: usize) -> f64 {
        self.scale[j]
    }

    /// Risk from target `j` located at `z` felt at `x`.
    pub fn phi(&self, j: usize, x: &Vec2, z: &Vec2) -> f64 {
        let d = x - z;
        self.scale[j] * (-0.5 * d.dot(&(self.exponent[j] * d))).exp()
    }

    pub fn safety(&self, j: usize, x: &Vec2, z: &Vec2) -> f64 {
        1.0 - self.phi(j, x, z)
    }

    pub fn total(&self, x: &Vec2, targets: &[Vec2]) -> f64 {
        targets.iter().enumerate().map(|(j, z)| self.phi(j, x, z)).sum()
    }

    /// Product of per-target safety values.
    pub fn safety_product(&self, x: &Vec2, targets: &[Vec2]) -> f64 {
        targets.iter().enumerate().map(|(j, z)| self.safety(j, x, z)).product()
    }
}

pub fn risk_at(x: &Vec2, field: &RiskField, targets: &[Vec2]) -> f64 {
    field.total(x, targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorKind {
    pub h: [f64; 2],
    pub gain: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorCatalog {
    pub kinds: Vec<SensorKind>,
    /// Sample measurements without noise (zero-noise limit).
    pub noise_free: bool,
}

impl SensorCatalog {
    pub fn new(kinds: Vec<SensorKind>, noise_free: bool) -> Result<Self, WorldError> {
        if kinds.is_empty() {
            return Err(WorldError::EmptyCatalog);
        }
        for (k, s) in kinds.iter().enumerate() {
            if s.h == [0.0, 0.0] {
                return Err(WorldError::ZeroSensorRow(k));
            }
            if !(s.gain > 0.0) || !(s.decay >= 0.0) {
                return Err(WorldError::BadSensorNoise(k));
            }
        }
        Ok(Self { kinds, noise_free })
    }

    /// x-only, y-only and diagonal sensors sharing one noise model.
    pub fn standard(gain: f64, decay: f64) -> Self {
        let kind = |h| SensorKind { h, gain, decay };
        Self::new(vec![kind([1.0, 0.0]), kind([0.0, 1.0]), kind([1.0, 1.0])], false).unwrap()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn row(&self, k: usize) -> Vec2 {
        Vec2::new(self.kinds[k].h[0], self.kinds[k].h[1])
    }

    /// Inverse noise variance of sensor `k` at robot-target distance `d`.
    pub fn info(&self, k: usize, d: f64) -> f64 {
        self.kinds[k].gain * (-self.kinds[k].decay * d).exp()
    }

    /// Information matrix HᵀR⁻¹H contributed about one target by the listed
    /// sensors at robot-target distance `d`.
    pub fn info_block(&self, sensors: &[usize], d: f64) -> Mat2 {
        let mut out = Mat2::zeros();
        for &k in sensors {
            let h = self.row(k);
            out += h * h.transpose() * self.info(k, d);
        }
        out
    }
}

pub fn noise_info(x: &Vec2, z: &Vec2, k: usize, catalog: &SensorCatalog) -> f64 {
    catalog.info(k, (x - z).norm())
}

/// Γ stored robot-major: `working[i][k]` is sensor kind k on robot i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorStatus {
    pub working: Vec<Vec<bool>>,
}

impl SensorStatus {
    pub fn all_working(robots: usize, kinds: usize) -> Self {
        Self { working: vec![vec![true; kinds]; robots] }
    }

    pub fn functioning(&self, i: usize) -> Vec<usize> {
        (0..self.working[i].len()).filter(|&k| self.working[i][k]).collect()
    }

    pub fn count(&self, i: usize) -> usize {
        self.working[i].iter().filter(|&&w| w).count()
    }

    pub fn failed_total(&self) -> usize {
        self.working.iter().flatten().filter(|&&w| !w).count()
    }

    /// Elementwise Γ' ≤ Γ.
    pub fn dominated_by(&self, earlier: &SensorStatus) -> bool {
        self.working
            .iter()
            .flatten()
            .zip(earlier.working.iter().flatten())
            .all(|(&now, &before)| !now || before)
    }
}

/// Stacked measurement matrix I_M ⊗ H_ij for the listed sensors.
pub fn build_measurement_matrix(sensors: &[usize], catalog: &SensorCatalog, targets: usize) -> DMatrix<f64> {
    let rows = sensors.len();
    let mut h = DMatrix::zeros(rows * targets, DIM * targets);
    for j in 0..targets {
        for (r, &k) in sensors.iter().enumerate() {
            let row = catalog.row(k);
            h[(j * rows + r, DIM * j)] = row.x;
            h[(j * rows + r, DIM * j + 1)] = row.y;
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub robot: usize,
    pub y: DVector<f64>,
    pub h: DMatrix<f64>,
    /// Noise covariance used to sample; zero when the catalog is noise-free.
    pub r: DMatrix<f64>,
}

impl Measurement {
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn sample_measurement<R: Rng + ?Sized>(
    rng: &mut R,
    robot: usize,
    x: &Vec2,
    sensors: &[usize],
    ensemble: &TargetEnsemble,
    catalog: &SensorCatalog,
) -> Measurement {
    let m = ensemble.count();
    let h = build_measurement_matrix(sensors, catalog, m);
    let rows = h.nrows();
    let mut r = DMatrix::zeros(rows, rows);
    let mut y = &h * &ensemble.z;
    for j in 0..m {
        let d = (x - ensemble.position(j)).norm();
        for (s, &k) in sensors.iter().enumerate() {
            let idx = j * sensors.len() + s;
            let var = 1.0 / catalog.info(k, d);
            let e: f64 = rng.sample(StandardNormal);
            if !catalog.noise_free {
                r[(idx, idx)] = var;
                y[idx] += var.sqrt() * e;
            }
        }
    }
    Measurement { robot, y, h, r }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFailure {
    pub step: usize,
    pub robot: usize,
    pub sensor: usize,
}

/// Each working sensor fails with probability clamp(κ·risk, 0, 1), risk taken
/// at the true target positions; scripted failures for `step` are applied on top.
pub fn sample_failures<R: Rng + ?Sized>(
    rng: &mut R,
    status: &SensorStatus,
    robots: &[Vec2],
    field: &RiskField,
    targets: &[Vec2],
    gain: f64,
    step: usize,
    scripted: &[ScriptedFailure],
) -> SensorStatus {
    let mut next = status.clone();
    for (i, x) in robots.iter().enumerate() {
        let p = (gain * field.total(x, targets)).clamp(0.0, 1.0);
        for k in 0..status.working[i].len() {
            // draw unconditionally so the stream does not depend on Γ
            let u: f64 = rng.random();
            if status.working[i][k] && u < p {
                next.working[i][k] = false;
            }
        }
    }
    for f in scripted.iter().filter(|f| f.step == step) {
        if let Some(row) = next.working.get_mut(f.robot) {
            if let Some(s) = row.get_mut(f.sensor) {
                *s = false;
            }
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn unit_circle(rate: f64) -> CirclePath {
        CirclePath { center: [0.0, 0.0], radius: 1.0, rate, phase: 0.0 }
    }

    #[test]
    fn identity_dynamics_without_noise_hold_position() {
        // v = 0 is forced by placing the waypoint at the current position
        let path = CirclePath { center: [0.0, 0.0], radius: 1.0, rate: 0.0, phase: 0.0 };
        let e = TargetEnsemble::circles(vec![path], 0.0, 0.1).unwrap();
        let next = e.step(0, &mut substream(1, Stream::Targets));
        assert_eq!(next.position(0), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn circle_policy_advances_by_rate_times_dt() {
        let (w, dt) = (0.5, 0.1);
        let mut e = TargetEnsemble::circles(vec![unit_circle(w)], 0.0, dt).unwrap();
        let mut rng = substream(1, Stream::Targets);
        for t in 0..5 {
            e = e.step(t, &mut rng);
            let want = w * dt * (t + 1) as f64;
            let got = e.position(0);
            assert!(close(got.x, want.cos(), 1e-12) && close(got.y, want.sin(), 1e-12));
        }
    }

    #[test]
    fn process_noise_increments_are_zero_mean() {
        let sigma: f64 = 0.3;
        let path = CirclePath { center: [0.0, 0.0], radius: 1.0, rate: 0.0, phase: 0.0 };
        let e = TargetEnsemble::circles(vec![path], sigma * sigma, 0.1).unwrap();
        let mut rng = substream(2, Stream::Targets);
        let n = 10_000;
        let mut sum = Vec2::zeros();
        for _ in 0..n {
            sum += e.step(0, &mut rng).position(0) - e.position(0);
        }
        let mean = sum / n as f64;
        assert!(mean.norm() < 4.0 * sigma / 100.0, "{mean}");
    }

    #[test]
    fn rejects_bad_ensembles() {
        assert_eq!(TargetEnsemble::circles(vec![], 0.0, 0.1).unwrap_err(), WorldError::NoTargets);
        let bad = CirclePath { radius: 0.0, ..unit_circle(0.1) };
        assert_eq!(TargetEnsemble::circles(vec![bad], 0.0, 0.1).unwrap_err(), WorldError::BadRadius(0));
        assert_eq!(
            TargetEnsemble::circles(vec![unit_circle(0.1)], -1.0, 0.1).unwrap_err(),
            WorldError::BadProcessNoise
        );
    }

    #[test]
    fn risk_matches_direct_evaluation() {
        let f = RiskField::new(vec![1.0], vec![Mat2::identity()], false).unwrap();
        let z = Vec2::new(1.0, 2.0);
        assert!(close(f.phi(0, &z, &z), 1.0 / (2.0 * PI), 1e-15));
        let x = z + Vec2::new(1.0, 1.0);
        assert!(close(f.phi(0, &x, &z), (-1.0f64).exp() / (2.0 * PI), 1e-15));
        assert!((f.phi(0, &(z + Vec2::new(50.0, 0.0)), &z)) < 1e-300);
        assert!(close(f.safety(0, &z, &z), 1.0 - 1.0 / (2.0 * PI), 1e-15));
    }

    #[test]
    fn risk_uses_shape_matrix_verbatim_unless_flagged() {
        let s = Mat2::new(4.0, 0.0, 0.0, 4.0);
        let z = Vec2::zeros();
        let x = Vec2::new(1.0, 0.0);
        let printed = RiskField::new(vec![1.0], vec![s], false).unwrap();
        assert!(close(printed.phi(0, &x, &z), (-2.0f64).exp() / (2.0 * PI * 16.0), 1e-15));
        let gaussian = RiskField::new(vec![1.0], vec![s], true).unwrap();
        assert!(close(gaussian.phi(0, &x, &z), (-0.125f64).exp() / (2.0 * PI * 4.0), 1e-15));
    }

    #[test]
    fn risk_rejects_non_spd_shapes() {
        let s = Mat2::new(1.0, 2.0, 2.0, 1.0);
        assert_eq!(RiskField::new(vec![1.0], vec![s], false).unwrap_err(), WorldError::BadShapeMatrix(0));
        assert_eq!(RiskField::new(vec![0.0], vec![Mat2::identity()], false).unwrap_err(), WorldError::BadPeak(0));
    }

    #[test]
    fn noise_info_examples() {
        let cat = SensorCatalog::new(
            vec![
                SensorKind { h: [1.0, 0.0], gain: 3.0, decay: 0.7 },
                SensorKind { h: [0.0, 1.0], gain: 1.0, decay: 1.0 },
                SensorKind { h: [1.0, 1.0], gain: 2.0, decay: 0.0 },
            ],
            false,
        )
        .unwrap();
        let z = Vec2::zeros();
        assert_eq!(noise_info(&z, &z, 0, &cat), 3.0);
        let x = Vec2::new(2f64.ln(), 0.0);
        assert!(close(noise_info(&x, &z, 1, &cat), 0.5, 1e-15));
        assert_eq!(noise_info(&Vec2::new(100.0, 3.0), &z, 2, &cat), 2.0);
    }

    #[test]
    fn measurement_matrix_shapes() {
        let cat = SensorCatalog::standard(1.0, 0.1);
        let h = build_measurement_matrix(&[0, 1, 2], &cat, 1);
        assert_eq!(h, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        assert_eq!(build_measurement_matrix(&[0], &cat, 1), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let two = build_measurement_matrix(&[0], &cat, 2);
        assert_eq!(two, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert_eq!(build_measurement_matrix(&[], &cat, 3).nrows(), 0);
    }

    #[test]
    fn noise_free_measurement_is_exact() {
        let mut cat = SensorCatalog::standard(1.0, 0.0);
        cat.noise_free = true;
        let e = TargetEnsemble::circles(vec![unit_circle(0.1), unit_circle(0.2)], 0.0, 0.1).unwrap();
        let m = sample_measurement(&mut substream(3, Stream::Measurements), 0, &Vec2::zeros(), &[0, 2], &e, &cat);
        assert_eq!(m.y, &m.h * &e.z);
    }

    #[test]
    fn measurement_noise_covariance_matches() {
        let cat = SensorCatalog::standard(2.0, 0.3);
        let e = TargetEnsemble::circles(vec![unit_circle(0.1)], 0.0, 0.1).unwrap();
        let x = Vec2::new(3.0, 1.0);
        let mut rng = substream(4, Stream::Measurements);
        let n = 10_000;
        let first = sample_measurement(&mut rng, 0, &x, &[0, 1, 2], &e, &cat);
        let rows = first.y.len();
        let clean = &first.h * &e.z;
        let mut cov = DMatrix::zeros(rows, rows);
        for _ in 0..n {
            let m = sample_measurement(&mut rng, 0, &x, &[0, 1, 2], &e, &cat);
            let d = m.y - &clean;
            cov += &d * d.transpose();
        }
        cov /= n as f64;
        let rel = (&cov - &first.r).norm() / first.r.norm();
        assert!(rel < 0.1, "relative Frobenius error {rel}");
    }

    #[test]
    fn measurements_repeat_with_seed() {
        let cat = SensorCatalog::standard(2.0, 0.3);
        let e = TargetEnsemble::circles(vec![unit_circle(0.1)], 0.0, 0.1).unwrap();
        let draw = || sample_measurement(&mut substream(9, Stream::Measurements), 1, &Vec2::zeros(), &[0, 1], &e, &cat).y;
        assert_eq!(draw(), draw());
    }

    fn failure_setup(peak_risk: f64) -> (RiskField, Vec<Vec2>) {
        // peak c/(2π) at the target for Σ = I
        let f = RiskField::new(vec![peak_risk * 2.0 * PI], vec![Mat2::identity()], false).unwrap();
        (f, vec![Vec2::zeros()])
    }

    #[test]
    fn zero_risk_means_no_failures() {
        let (f, z) = failure_setup(0.3);
        let s = SensorStatus::all_working(2, 3);
        let far = [Vec2::new(1e3, 0.0), Vec2::new(0.0, 1e3)];
        let next = sample_failures(&mut substream(1, Stream::Failures), &s, &far, &f, &z, 0.5, 0, &[]);
        assert_eq!(next, s);
    }

    #[test]
    fn certain_failure_when_gain_times_risk_reaches_one() {
        let (f, z) = failure_setup(0.5);
        let s = SensorStatus::all_working(2, 3);
        let robots = [Vec2::zeros(), Vec2::new(1e3, 0.0)];
        let next = sample_failures(&mut substream(1, Stream::Failures), &s, &robots, &f, &z, 2.0, 0, &[]);
        assert_eq!(next.count(0), 0);
        assert_eq!(next.count(1), 3);
    }

    #[test]
    fn failure_rate_matches_probability() {
        let (f, z) = failure_setup(0.3);
        let mut rng = substream(5, Stream::Failures);
        let s = SensorStatus::all_working(1, 1);
        let trials = 10_000;
        let failed = (0..trials)
            .filter(|_| sample_failures(&mut rng, &s, &[Vec2::zeros()], &f, &z, 1.0, 0, &[]).count(0) == 0)
            .count();
        let rate = failed as f64 / trials as f64;
        assert!((rate - 0.3).abs() <= 0.015, "{rate}");
    }

    #[test]
    fn scripted_failures_apply_at_their_step_only() {
        let (f, z) = failure_setup(0.3);
        let s = SensorStatus::all_working(2, 3);
        let far = [Vec2::new(1e3, 0.0), Vec2::new(0.0, 1e3)];
        let script = [ScriptedFailure { step: 4, robot: 1, sensor: 2 }];
        let mut rng = substream(1, Stream::Failures);
        assert_eq!(sample_failures(&mut rng, &s, &far, &f, &z, 0.5, 3, &script), s);
        let after = sample_failures(&mut rng, &s, &far, &f, &z, 0.5, 4, &script);
        assert_eq!(after.functioning(1), vec![0, 1]);
        assert!(after.dominated_by(&s));
    }
}
