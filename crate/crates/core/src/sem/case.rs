use serde::{Deserialize, Serialize};

use super::SemError;

/// Size of a double-precision word in bytes.
pub const WORD_BYTES: u64 = 8;

/// Bytes of resident memory per grid-point word for the production solver.
///
/// Calibrated so a 4x4x4 block at degree 8 occupies 200 MB (10^6 bytes).
pub const DEFAULT_BYTES_PER_DOF_COEFFICIENT: f64 = 200e6 / (64.0 * 729.0 * WORD_BYTES as f64);

/// Problem shape of one benchmark case: a box of `E_x x E_y x E_z`
/// axis-aligned elements of degree `(N_x, N_y, N_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub elements: [usize; 3],
    pub degree: [usize; 3],
    /// Fields per quadrature point (`n_v`).
    #[serde(default = "one")]
    pub fields: usize,
    #[serde(default = "one")]
    pub steps: usize,
    #[serde(default = "one")]
    pub cg_iters_per_step: usize,
}

fn one() -> usize {
    1
}

impl CaseConfig {
    /// Isotropic case with `e^3` elements of degree `n`, one field, one step.
    pub fn cube(e: usize, n: usize) -> Self {
        Self {
            elements: [e; 3],
            degree: [n; 3],
            fields: 1,
            steps: 1,
            cg_iters_per_step: 1,
        }
    }

    pub fn with_elements(mut self, elements: [usize; 3]) -> Self {
        self.elements = elements;
        self
    }

    pub fn with_degree(mut self, n: usize) -> Self {
        self.degree = [n; 3];
        self
    }

    pub fn with_fields(mut self, fields: usize) -> Self {
        self.fields = fields;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_iterations(mut self, iters: usize) -> Self {
        self.cg_iters_per_step = iters;
        self
    }

    pub fn validate(&self) -> Result<(), SemError> {
        if let Some(&n) = self.degree.iter().find(|&&n| n < 2) {
            return Err(SemError::DegreeTooSmall { degree: n, min: 2 });
        }
        if self.elements.contains(&0) {
            return Err(SemError::InvalidConfig("element counts must be at least 1".into()));
        }
        if self.fields == 0 || self.steps == 0 || self.cg_iters_per_step == 0 {
            return Err(SemError::InvalidConfig(
                "fields, steps and cg_iters_per_step must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn total_elements(&self) -> usize {
        self.elements.iter().product()
    }

    /// Nodes per element direction, `N_d + 1`.
    pub fn points(&self) -> [usize; 3] {
        [self.degree[0] + 1, self.degree[1] + 1, self.degree[2] + 1]
    }

    pub fn points_per_element(&self) -> usize {
        self.points().iter().product()
    }

    /// Nodes on an element face whose normal is `axis`.
    pub fn face_points(&self, axis: usize) -> usize {
        let p = self.points();
        p[(axis + 1) % 3] * p[(axis + 2) % 3]
    }

    /// Redundantly stored grid points, `E * (N_x+1)(N_y+1)(N_z+1)`.
    pub fn grid_points(&self) -> u64 {
        (self.total_elements() * self.points_per_element()) as u64
    }

    /// Element edge lengths on the unit cube.
    pub fn element_size(&self) -> [f64; 3] {
        [
            1.0 / self.elements[0] as f64,
            1.0 / self.elements[1] as f64,
            1.0 / self.elements[2] as f64,
        ]
    }

    /// Linear index of element `(i, j, k)`, x fastest.
    pub fn element_index(&self, e: [usize; 3]) -> usize {
        e[0] + self.elements[0] * (e[1] + self.elements[1] * e[2])
    }

    pub fn element_coords(&self, idx: usize) -> [usize; 3] {
        let ex = self.elements[0];
        let ey = self.elements[1];
        [idx % ex, (idx / ex) % ey, idx / (ex * ey)]
    }
}

/// Independent variables, `E_x E_y E_z * n_v (N_x+1)(N_y+1)(N_z+1)`.
pub fn dof_count(config: &CaseConfig) -> u64 {
    config.grid_points() * config.fields as u64
}

/// Resident-memory estimate in bytes: `coefficient * grid points * 8`.
pub fn memory_estimate(config: &CaseConfig, bytes_per_dof_coefficient: f64) -> Result<f64, SemError> {
    if !(bytes_per_dof_coefficient > 0.0) || !bytes_per_dof_coefficient.is_finite() {
        return Err(SemError::InvalidConfig(format!(
            "memory coefficient must be positive, got {bytes_per_dof_coefficient}"
        )));
    }
    Ok(bytes_per_dof_coefficient * config.grid_points() as f64 * WORD_BYTES as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_counts() {
        assert_eq!(dof_count(&CaseConfig::cube(8, 8)), 373_248);
        assert_eq!(dof_count(&CaseConfig::cube(1, 2).with_fields(3)), 81);
        assert_eq!(dof_count(&CaseConfig::cube(4, 8)), 46_656);
    }

    #[test]
    fn memory_reference_block() {
        let mb = memory_estimate(&CaseConfig::cube(4, 8), DEFAULT_BYTES_PER_DOF_COEFFICIENT).unwrap() / 1e6;
        assert!((mb - 200.0).abs() / 200.0 < 0.01, "{mb}");
        let big = memory_estimate(&CaseConfig::cube(8, 8), DEFAULT_BYTES_PER_DOF_COEFFICIENT).unwrap() / 1e6;
        assert!((big - 1600.0).abs() < 1e-6, "{big}");
    }

    #[test]
    fn memory_is_linear_in_elements() {
        let base = CaseConfig::cube(3, 5);
        let doubled = base.with_elements([6, 3, 3]);
        let a = memory_estimate(&base, 7.5).unwrap();
        let b = memory_estimate(&doubled, 7.5).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(memory_estimate(&base, 0.0).is_err());
        assert!(memory_estimate(&base, -1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(CaseConfig::cube(2, 1).validate().is_err());
        assert!(CaseConfig::cube(0, 4).validate().is_err());
        assert!(CaseConfig::cube(2, 4).with_iterations(0).validate().is_err());
        assert!(CaseConfig::cube(2, 4).validate().is_ok());
    }

    #[test]
    fn element_indexing_roundtrip() {
        let c = CaseConfig::cube(1, 2).with_elements([3, 4, 5]);
        for idx in 0..c.total_elements() {
            assert_eq!(c.element_index(c.element_coords(idx)), idx);
        }
    }
}
