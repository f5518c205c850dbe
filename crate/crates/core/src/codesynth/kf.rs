//! Linear Kalman filter with continuous-time process model.

use nalgebra::{DMatrix, DVector};

use crate::sim::wrap_angle;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("innovation covariance is singular")]
    Singular,
}

pub(crate) fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, KfError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(KfError::Dimension("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// State estimate. `F` and `Q` are continuous; a step of `dt` uses
/// `Φ = I + F·dt` and `Q·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kalman {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    f: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl Kalman {
    pub fn new(f: DMatrix<f64>, q: DMatrix<f64>, x0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self, KfError> {
        let n = x0.len();
        for (name, m) in [("F", &f), ("Q", &q), ("P0", &p0)] {
            if m.shape() != (n, n) {
                return Err(KfError::Dimension(format!("{name} is {:?}, state has {n}", m.shape())));
            }
        }
        Ok(Self { x: x0, p: p0, f, q })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn predict(&mut self, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        let n = self.dim();
        let phi = DMatrix::identity(n, n) + &self.f * dt;
        self.x = &phi * &self.x;
        self.p = &phi * &self.p * phi.transpose() + &self.q * dt;
    }

    /// Joseph-form update. Components of the innovation listed in `angles`
    /// are wrapped to (-π, π].
    pub fn update(
        &mut self,
        z: &DVector<f64>,
        h: &DMatrix<f64>,
        r: &DMatrix<f64>,
        angles: &[usize],
    ) -> Result<(), KfError> {
        let m = z.len();
        if h.shape() != (m, self.dim()) || r.shape() != (m, m) {
            return Err(KfError::Dimension(format!(
                "H {:?}, R {:?} for a {m}-vector measurement",
                h.shape(),
                r.shape()
            )));
        }
        let mut y = z - h * &self.x;
        for &i in angles {
            if i < m {
                y[i] = wrap_angle(y[i]);
            }
        }
        let s = h * &self.p * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or(KfError::Singular)?;
        let k = &self.p * h.transpose() * s_inv;
        self.x += &k * y;
        let i_kh = DMatrix::identity(self.dim(), self.dim()) - &k * h;
        self.p = &i_kh * &self.p * i_kh.transpose() + &k * r * k.transpose();
        Ok(())
    }

    pub fn trace_of(&self, states: &[usize]) -> f64 {
        states
            .iter()
            .filter(|&&i| i < self.dim())
            .map(|&i| self.p[(i, i)])
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_update_matches_closed_form() {
        let mut kf = Kalman::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![0.0]),
            DMatrix::from_element(1, 1, 4.0),
        )
        .unwrap();
        kf.update(
            &DVector::from_vec(vec![2.0]),
            &DMatrix::identity(1, 1),
            &DMatrix::from_element(1, 1, 1.0),
            &[],
        )
        .unwrap();
        // gain 4/5
        assert!((kf.x[0] - 1.6).abs() < 1e-12);
        assert!((kf.p[(0, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_velocity_predict() {
        let f = matrix(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let mut kf = Kalman::new(
            f,
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 0.5]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        kf.predict(2.0);
        assert!((kf.x[0] - 2.0).abs() < 1e-12);
        // P = Φ Φᵀ with Φ = [[1,2],[0,1]]
        assert!((kf.p[(0, 0)] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn angle_innovation_wraps() {
        let mut kf = Kalman::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![3.1]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        kf.update(
            &DVector::from_vec(vec![-3.1]),
            &DMatrix::identity(1, 1),
            &DMatrix::from_element(1, 1, 1.0),
            &[0],
        )
        .unwrap();
        // innovation is +0.083, not -6.2
        assert!(kf.x[0] > 3.1);
    }

    #[test]
    fn dimension_errors() {
        assert!(Kalman::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 1),
            DVector::zeros(2),
            DMatrix::zeros(2, 2)
        )
        .is_err());
        assert!(matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
