//! Constant-velocity Kalman filter over `(cx, cy, a, h)` box measurements.
//!
//! The state is the box center, aspect ratio `w / h` and height, followed by
//! their per-frame velocities. Process and measurement noise scale with the
//! current box height, so large and small objects get comparable relative
//! uncertainty.

use nalgebra::{SMatrix, SVector};

use super::{TrackerError, TrackerParams};

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
pub type Measurement = SVector<f64, 4>;

// The aspect ratio is dimensionless, so its noise does not scale with height.
const ASPECT_POS_STD: f64 = 1e-2;
const ASPECT_VEL_STD: f64 = 1e-5;
const ASPECT_MEAS_STD: f64 = 1e-1;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    /// New state centered on a measurement with zero velocity.
    pub fn initiate(z: [f64; 4], p: &TrackerParams) -> Self {
        let h = z[3];
        let (sp, sv) = (p.pos_std_factor * h, p.vel_std_factor * h);
        let std = [
            2.0 * sp,
            2.0 * sp,
            ASPECT_POS_STD,
            2.0 * sp,
            10.0 * sv,
            10.0 * sv,
            ASPECT_VEL_STD,
            10.0 * sv,
        ];
        KalmanState {
            mean: StateVector::from_column_slice(&[z[0], z[1], z[2], z[3], 0.0, 0.0, 0.0, 0.0]),
            covariance: StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s))),
        }
    }

    pub fn measurement(&self) -> [f64; 4] {
        [self.mean[0], self.mean[1], self.mean[2], self.mean[3]]
    }

    pub fn height(&self) -> f64 {
        self.mean[3]
    }
}

fn transition(dt: f64) -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = dt;
    }
    f
}

fn symmetrize(m: &mut StateCovariance) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Advances the state by `dt_frames` frame periods.
pub fn kf_predict(s: &KalmanState, dt_frames: f64, p: &TrackerParams) -> KalmanState {
    let h = s.height();
    let (sp, sv) = (p.pos_std_factor * h, p.vel_std_factor * h);
    let q = StateVector::from_column_slice(&[
        sp * sp,
        sp * sp,
        ASPECT_POS_STD * ASPECT_POS_STD,
        sp * sp,
        sv * sv,
        sv * sv,
        ASPECT_VEL_STD * ASPECT_VEL_STD,
        sv * sv,
    ]);
    let f = transition(dt_frames);
    let mut covariance = f * s.covariance * f.transpose() + StateCovariance::from_diagonal(&q);
    symmetrize(&mut covariance);
    KalmanState {
        mean: f * s.mean,
        covariance,
    }
}

/// Folds in one measurement `(cx, cy, a, h)`.
pub fn kf_update(s: &KalmanState, z: [f64; 4], p: &TrackerParams) -> Result<KalmanState, TrackerError> {
    if !(z[3] > 0.0) || z.iter().any(|v| !v.is_finite()) {
        return Err(TrackerError::InvalidMeasurement(z));
    }
    let sp = p.pos_std_factor * s.height();
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&Measurement::new(
        sp * sp,
        sp * sp,
        ASPECT_MEAS_STD * ASPECT_MEAS_STD,
        sp * sp,
    ));
    let h_mat = SMatrix::<f64, 4, 8>::identity();
    let p_prior = &s.covariance;
    let innovation_cov = h_mat * p_prior * h_mat.transpose() + r;
    let chol = innovation_cov
        .cholesky()
        .ok_or(TrackerError::SingularInnovation)?;
    // K = P H^T S^-1, computed as (S^-1 H P)^T since P and S are symmetric.
    let gain: SMatrix<f64, 8, 4> = chol.solve(&(h_mat * p_prior)).transpose();
    let innovation = Measurement::from_column_slice(&z) - h_mat * s.mean;
    let mean = s.mean + gain * innovation;
    // Joseph form keeps the posterior positive semidefinite under rounding.
    let i_kh = StateCovariance::identity() - gain * h_mat;
    let mut covariance = i_kh * p_prior * i_kh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut covariance);
    if !covariance.iter().all(|v| v.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
        return Err(TrackerError::SingularInnovation);
    }
    Ok(KalmanState { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TrackerParams {
        TrackerParams::default()
    }

    fn state() -> KalmanState {
        KalmanState::initiate([400.0, 300.0, 0.4, 200.0], &params())
    }

    #[test]
    fn zero_velocity_predict_keeps_position() {
        let s = state();
        let next = kf_predict(&s, 1.0, &params());
        assert_eq!(next.measurement(), s.measurement());
    }

    #[test]
    fn velocity_moves_center() {
        let mut s = state();
        s.mean[4] = 2.0;
        let next = kf_predict(&s, 1.0, &params());
        assert_eq!(next.mean[0], 402.0);
        let later = kf_predict(&s, 3.0, &params());
        assert_eq!(later.mean[0], 406.0);
    }

    #[test]
    fn predict_grows_trace() {
        let s = state();
        let next = kf_predict(&s, 1.0, &params());
        assert!(next.covariance.trace() >= s.covariance.trace());
    }

    #[test]
    fn zero_innovation_keeps_prediction() {
        let predicted = kf_predict(&state(), 1.0, &params());
        let post = kf_update(&predicted, predicted.measurement(), &params()).unwrap();
        for i in 0..4 {
            assert!((post.mean[i] - predicted.mean[i]).abs() < 1e-12);
        }
        assert!(post.covariance.trace() <= predicted.covariance.trace());
    }

    #[test]
    fn repeated_updates_converge_monotonically() {
        let p = params();
        let z = [430.0, 290.0, 0.45, 210.0];
        let mut s = kf_predict(&state(), 1.0, &p);
        let dist = |s: &KalmanState| {
            (0..4).map(|i| (s.mean[i] - z[i]).powi(2)).sum::<f64>().sqrt()
        };
        let mut last = dist(&s);
        let first = last;
        for _ in 0..50 {
            s = kf_update(&s, z, &p).unwrap();
            let d = dist(&s);
            assert!(d <= last + 1e-12, "{d} > {last}");
            last = d;
        }
        // Updates without predicts average the same measurement: error shrinks like 1/n.
        assert!(last < first / 100.0, "{last} vs {first}");
    }

    #[test]
    fn rejects_non_positive_height() {
        let err = kf_update(&state(), [1.0, 1.0, 1.0, 0.0], &params());
        assert!(matches!(err, Err(TrackerError::InvalidMeasurement(_))));
    }

    #[test]
    fn corrupt_covariance_is_singular() {
        let mut s = state();
        s.covariance = -StateCovariance::identity();
        s.mean[3] = 0.0;
        assert!(matches!(
            kf_update(&s, [1.0, 1.0, 1.0, 1.0], &params()),
            Err(TrackerError::SingularInnovation)
        ));
    }
}
