//! Trajectory recording, subspace extraction, and the projection pair between `ℝᵈ` and `ℝᵏ`.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{self, axpy, dot, DenseMatrix, LinalgError, RankDeficiency};
use crate::models::ParameterVector;
use crate::rng::StreamId;

/// Orthonormality tolerance for freshly extracted bases.
pub const BASIS_TOLERANCE: f64 = 1e-8;

/// Rows are parameter displacements `Θ_t − Θ₀`, one per recorded step.
pub type TrajectoryMatrix = DenseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum SubspaceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("degenerate trajectory: no nonzero displacement recorded")]
    DegenerateTrajectory,
    #[error("basis is not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("step index must start at 1")]
    StepZero,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Recording period `max(1, ⌊T/k⌋)`.
pub fn recording_period(steps: usize, k: usize) -> usize {
    (steps / k.max(1)).max(1)
}

/// Collects `flat(Θ_t) − flat(Θ₀)` every `period` steps, up to `max_rows` rows.
#[derive(Debug, Clone)]
pub struct TrajectoryRecorder {
    theta0: ParameterVector,
    period: usize,
    max_rows: usize,
    rows: Vec<Vec<f64>>,
    steps: Vec<usize>,
}

impl TrajectoryRecorder {
    pub fn new(theta0: ParameterVector, period: usize, max_rows: usize) -> Self {
        Self { theta0, period: period.max(1), max_rows, rows: Vec::new(), steps: Vec::new() }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Steps at which rows were recorded, increasing.
    pub fn recorded_steps(&self) -> &[usize] {
        &self.steps
    }

    /// Records the displacement at step `t` (1-based) if `period` divides `t` and
    /// capacity remains. Returns whether a row was appended.
    pub fn maybe_record(&mut self, t: usize, theta_t: &ParameterVector) -> Result<bool, SubspaceError> {
        if t == 0 {
            return Err(SubspaceError::StepZero);
        }
        if theta_t.len() != self.theta0.len() {
            return Err(SubspaceError::Dimension { expected: self.theta0.len(), got: theta_t.len() });
        }
        if !t.is_multiple_of(self.period) || self.rows.len() >= self.max_rows {
            return Ok(false);
        }
        let row = theta_t.values().iter().zip(self.theta0.values()).map(|(a, b)| a - b).collect();
        self.rows.push(row);
        self.steps.push(t);
        Ok(true)
    }

    pub fn matrix(&self) -> Result<TrajectoryMatrix, SubspaceError> {
        if self.rows.is_empty() {
            return Err(SubspaceError::DegenerateTrajectory);
        }
        Ok(DenseMatrix::from_rows(&self.rows)?)
    }
}

/// `d x k` matrix with orthonormal columns spanning a gradient subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    columns: DenseMatrix,
    fingerprint: String,
}

impl ProjectionMatrix {
    /// Wraps `columns` after checking its orthonormality defect against `tolerance`.
    pub fn new(columns: DenseMatrix, fingerprint: impl Into<String>, tolerance: f64) -> Result<Self, SubspaceError> {
        let defect = linalg::orthonormality_defect(&columns);
        // NaN-safe: anything not provably within tolerance is rejected.
        if !(defect < tolerance) || columns.cols() == 0 || columns.cols() > columns.rows() {
            return Err(SubspaceError::NotOrthonormal(defect));
        }
        Ok(Self { columns, fingerprint: fingerprint.into() })
    }

    pub fn identity(d: usize) -> Self {
        Self { columns: DenseMatrix::identity(d), fingerprint: format!("identity-{d}") }
    }

    pub fn d(&self) -> usize {
        self.columns.rows()
    }

    pub fn k(&self) -> usize {
        self.columns.cols()
    }

    pub fn columns(&self) -> &DenseMatrix {
        &self.columns
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn orthonormality_defect(&self) -> f64 {
        linalg::orthonormality_defect(&self.columns)
    }

    /// `Pᵀ g`.
    pub fn project_down(&self, g: &[f64]) -> Result<Vec<f64>, SubspaceError> {
        if g.len() != self.d() {
            return Err(SubspaceError::Dimension { expected: self.d(), got: g.len() });
        }
        let mut out = vec![0.0; self.k()];
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                axpy(gi, self.columns.row(i), &mut out);
            }
        }
        Ok(out)
    }

    /// `P s`.
    pub fn project_up(&self, s: &[f64]) -> Result<Vec<f64>, SubspaceError> {
        if s.len() != self.k() {
            return Err(SubspaceError::Dimension { expected: self.k(), got: s.len() });
        }
        Ok((0..self.d()).map(|i| dot(self.columns.row(i), s)).collect())
    }
}

/// A basis extracted from a trajectory together with its diagnostics.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub projection: ProjectionMatrix,
    pub singular_values: Vec<f64>,
    pub rank_deficiency: Option<RankDeficiency>,
}

/// Top-`k` right singular vectors of the trajectory. Fewer directions are returned, with a
/// logged warning, when the trajectory has lower effective rank.
pub fn extract_subspace(
    rows: &TrajectoryMatrix,
    k: usize,
    rel_tol: f64,
    fingerprint: impl Into<String>,
) -> Result<Extraction, SubspaceError> {
    let svd = linalg::gram_svd_topk(rows, k, rel_tol)?;
    if svd.rank() == 0 {
        return Err(SubspaceError::DegenerateTrajectory);
    }
    if let Some(def) = &svd.rank_deficiency {
        log::warn!("trajectory has effective rank {} below requested k = {}", def.returned, def.requested);
    }
    let projection = ProjectionMatrix::new(svd.right_vectors, fingerprint, BASIS_TOLERANCE)?;
    Ok(Extraction { projection, singular_values: svd.singular_values, rank_deficiency: svd.rank_deficiency })
}

/// A uniformly random orthonormal `d x k` basis (Gaussian columns, then Gram–Schmidt).
pub fn random_orthonormal_basis(d: usize, k: usize, stream: StreamId) -> Result<ProjectionMatrix, SubspaceError> {
    let mut rng = stream.rng();
    let mut cols: Vec<Vec<f64>> =
        (0..k).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    linalg::modified_gram_schmidt(&mut cols);
    linalg::modified_gram_schmidt(&mut cols);
    ProjectionMatrix::new(DenseMatrix::from_columns(&cols)?, format!("random-{}-{d}x{k}", stream.seed), BASIS_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::rng::{Phase, Purpose};
    use std::sync::Arc;

    fn pvec(values: Vec<f64>) -> ParameterVector {
        let layout = Arc::new(ModelSpec::logistic_regression(values.len() / 2 - 1, 2).layout());
        ParameterVector::new(layout, values).unwrap()
    }

    #[test]
    fn records_on_period_multiples() {
        let theta0 = pvec(vec![0.0; 6]);
        let mut rec = TrajectoryRecorder::new(theta0.clone(), 3, 10);
        assert!(rec.maybe_record(3, &pvec(vec![1.0; 6])).unwrap());
        assert!(!rec.maybe_record(4, &pvec(vec![1.0; 6])).unwrap());
        assert!(rec.maybe_record(6, &theta0).unwrap());
        assert_eq!(rec.rows()[1], vec![0.0; 6]);
        assert_eq!(rec.recorded_steps(), &[3, 6]);
        assert_eq!(rec.maybe_record(0, &theta0), Err(SubspaceError::StepZero));
        assert!(matches!(rec.maybe_record(9, &pvec(vec![0.0; 8])), Err(SubspaceError::Dimension { .. })));
    }

    #[test]
    fn cap_drops_late_candidates() {
        let steps = 100;
        let k = 32;
        let period = recording_period(steps, k);
        assert_eq!(period, 3);
        let theta0 = pvec(vec![0.0; 6]);
        let mut rec = TrajectoryRecorder::new(theta0, period, k);
        let mut candidates = 0;
        for t in 1..=steps {
            if t % period == 0 {
                candidates += 1;
            }
            rec.maybe_record(t, &pvec(vec![t as f64; 6])).unwrap();
        }
        assert_eq!(candidates, 33);
        assert_eq!(rec.rows().len(), 32);
        assert_eq!(*rec.recorded_steps().last().unwrap(), 96);
    }

    #[test]
    fn short_runs_record_every_step() {
        assert_eq!(recording_period(10, 32), 1);
    }

    #[test]
    fn orthogonal_rows_give_axis_basis() {
        let rows = DenseMatrix::from_rows(&[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let ex = extract_subspace(&rows, 2, 1e-10, "t").unwrap();
        let p = ex.projection.columns();
        assert!((p.get(0, 0).abs() - 1.0).abs() < 1e-14);
        assert!((p.get(1, 1).abs() - 1.0).abs() < 1e-14);
        assert!(p.get(2, 0).abs() < 1e-14 && p.get(2, 1).abs() < 1e-14);
    }

    #[test]
    fn rank_one_trajectory_degrades_k() {
        let rows = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]]).unwrap();
        let ex = extract_subspace(&rows, 4, 1e-10, "t").unwrap();
        assert_eq!(ex.projection.k(), 1);
        assert_eq!(ex.rank_deficiency, Some(RankDeficiency { requested: 4, returned: 1 }));
    }

    #[test]
    fn zero_trajectory_is_degenerate() {
        let rows = DenseMatrix::zeros(4, 5);
        assert_eq!(extract_subspace(&rows, 2, 1e-10, "t").unwrap_err(), SubspaceError::DegenerateTrajectory);
    }

    #[test]
    fn projection_examples() {
        let p = ProjectionMatrix::new(DenseMatrix::from_columns(&[[1.0, 0.0]]).unwrap(), "e1", 1e-8).unwrap();
        assert_eq!(p.project_down(&[3.0, 4.0]).unwrap(), vec![3.0]);
        assert_eq!(p.project_down(&[0.0, 4.0]).unwrap(), vec![0.0]);
        assert_eq!(p.project_up(&[3.0]).unwrap(), vec![3.0, 0.0]);
        assert!(p.project_down(&[1.0]).is_err());
        assert!(p.project_up(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn non_orthonormal_rejected() {
        let cols = DenseMatrix::from_columns(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(ProjectionMatrix::new(cols, "", 1e-8), Err(SubspaceError::NotOrthonormal(_))));
    }

    #[test]
    fn random_basis_is_orthonormal() {
        let p = random_orthonormal_basis(30, 30, StreamId::new(1, Phase::Init, Purpose::Frame, 0)).unwrap();
        assert!(p.orthonormality_defect() < 1e-12);
    }
}
