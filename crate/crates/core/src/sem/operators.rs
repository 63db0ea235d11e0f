//! Tensor-product element kernels.
//!
//! Every kernel takes a [`FlopCounter`] and charges it with the exact number
//! of real additions, multiplications and divisions it performs. A sum-
//! factorized contraction along an axis of length `n` over `T` points costs
//! `2 n T` (one multiply and one add per inner-product term).

use std::sync::Arc;

use super::basis::SpectralBasis;
use super::field::{Axis, ElementField};
use super::flops::FlopCounter;
use super::SemError;

/// `out += M (along axis) u`, with `M` row-major `n x n`, `n = shape[axis]`.
pub(crate) fn contract_accumulate(
    m: &[f64],
    u: &[f64],
    out: &mut [f64],
    shape: [usize; 3],
    axis: usize,
    counter: &mut FlopCounter,
) {
    let [nx, ny, nz] = shape;
    debug_assert_eq!(u.len(), nx * ny * nz);
    debug_assert_eq!(out.len(), u.len());
    match axis {
        0 => {
            for line in 0..ny * nz {
                let base = line * nx;
                let src = &u[base..base + nx];
                let dst = &mut out[base..base + nx];
                for (a, d) in dst.iter_mut().enumerate() {
                    let row = &m[a * nx..a * nx + nx];
                    let mut acc = *d;
                    for (coef, v) in row.iter().zip(src) {
                        acc += coef * v;
                    }
                    *d = acc;
                }
            }
        }
        1 => {
            let plane = nx * ny;
            for c in 0..nz {
                for b in 0..ny {
                    let dst_off = c * plane + b * nx;
                    for mm in 0..ny {
                        let coef = m[b * ny + mm];
                        let src_off = c * plane + mm * nx;
                        let src = &u[src_off..src_off + nx];
                        let dst = &mut out[dst_off..dst_off + nx];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += coef * v;
                        }
                    }
                }
            }
        }
        2 => {
            let plane = nx * ny;
            for c in 0..nz {
                for mm in 0..nz {
                    let coef = m[c * nz + mm];
                    let src = &u[mm * plane..(mm + 1) * plane];
                    let dst = &mut out[c * plane..(c + 1) * plane];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += coef * v;
                    }
                }
            }
        }
        _ => unreachable!("axis index out of range"),
    }
    counter.mul_add((shape[axis] * u.len()) as u64);
}

/// Applies the 1-D differentiation matrix of `basis` along `axis`.
pub fn tensor_derivative(
    field: &ElementField,
    basis: &SpectralBasis,
    axis: Axis,
    counter: &mut FlopCounter,
) -> Result<ElementField, SemError> {
    let shape = field.shape();
    let ax = axis.index();
    if shape[ax] != basis.len() {
        return Err(SemError::Dimension {
            expected: basis.len(),
            found: shape[ax],
        });
    }
    let mut out = ElementField::zeros(field.index, shape);
    contract_accumulate(
        basis.diff_matrix(),
        field.values(),
        out.values_mut(),
        shape,
        ax,
        counter,
    );
    Ok(out)
}

/// The three 1-D bases of a (possibly anisotropic) reference hexahedron.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    bases: [Arc<SpectralBasis>; 3],
}

impl ReferenceElement {
    pub fn new(degree: [usize; 3]) -> Result<Self, SemError> {
        let bx = Arc::new(SpectralBasis::gll(degree[0])?);
        let by = if degree[1] == degree[0] {
            bx.clone()
        } else {
            Arc::new(SpectralBasis::gll(degree[1])?)
        };
        let bz = if degree[2] == degree[0] {
            bx.clone()
        } else if degree[2] == degree[1] {
            by.clone()
        } else {
            Arc::new(SpectralBasis::gll(degree[2])?)
        };
        Ok(Self { bases: [bx, by, bz] })
    }

    pub fn isotropic(degree: usize) -> Result<Self, SemError> {
        Self::new([degree; 3])
    }

    pub fn basis(&self, axis: Axis) -> &SpectralBasis {
        &self.bases[axis.index()]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.bases[0].len(), self.bases[1].len(), self.bases[2].len()]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tensor-product quadrature weights `w_a w_b w_c`.
    pub fn weights(&self) -> Vec<f64> {
        let [wx, wy, wz] = [
            self.bases[0].weights(),
            self.bases[1].weights(),
            self.bases[2].weights(),
        ];
        let mut w = Vec::with_capacity(self.len());
        for c in wz {
            for b in wy {
                for a in wx {
                    w.push(a * b * c);
                }
            }
        }
        w
    }
}

/// Weak-form operator `sum_d D_d^T G_d D_d + lambda B` on an axis-aligned box.
///
/// `G_d` holds `(2/h_d)^2 J w_a w_b w_c` and `B` the diagonal GLL mass
/// `J w_a w_b w_c` with `J = h_x h_y h_z / 8`. Geometric factors are
/// precomputed once and not charged to the flop counter.
#[derive(Debug, Clone)]
pub struct ElementOperator {
    reference: ReferenceElement,
    size: [f64; 3],
    geom: [Vec<f64>; 3],
    mass: Vec<f64>,
    helmholtz_mass: Vec<f64>,
    lambda: f64,
    scratch: Vec<f64>,
}

impl ElementOperator {
    pub fn new(reference: ReferenceElement, size: [f64; 3], lambda: f64) -> Result<Self, SemError> {
        if size.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(SemError::Geometry(format!(
                "element extents must be positive, got {size:?}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(SemError::InvalidConfig(format!(
                "Helmholtz coefficient must be non-negative, got {lambda}"
            )));
        }
        let jac = size[0] * size[1] * size[2] / 8.0;
        let w = reference.weights();
        let mass: Vec<f64> = w.iter().map(|wi| jac * wi).collect();
        let geom = [0, 1, 2].map(|d| {
            let s = (2.0 / size[d]) * (2.0 / size[d]);
            mass.iter().map(|m| s * m).collect::<Vec<f64>>()
        });
        let n = reference.len();
        let helmholtz_mass = mass.iter().map(|m| lambda * m).collect();
        Ok(Self {
            reference,
            size,
            geom,
            mass,
            helmholtz_mass,
            lambda,
            scratch: vec![0.0; n],
        })
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.reference
    }

    pub fn size(&self) -> [f64; 3] {
        self.size
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Diagonal GLL mass matrix of the element.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Flops charged by one [`apply`](Self::apply).
    pub fn flops_per_apply(&self) -> FlopCounter {
        let shape = self.reference.shape();
        let t = self.len() as u64;
        let contractions: u64 = shape.iter().map(|&n| 2 * 2 * n as u64 * t).sum();
        let mut c = FlopCounter::new();
        c.mul_add(contractions / 2);
        c.mul(3 * t);
        if self.lambda != 0.0 {
            c.mul_add(t);
        }
        c
    }

    /// `out = A u` for one element.
    pub fn apply(&mut self, u: &[f64], out: &mut [f64], counter: &mut FlopCounter) {
        let shape = self.reference.shape();
        let t = u.len();
        debug_assert_eq!(t, self.len());
        out.fill(0.0);
        for d in 0..3 {
            let basis = &self.reference.bases[d];
            self.scratch.fill(0.0);
            contract_accumulate(basis.diff_matrix(), u, &mut self.scratch, shape, d, counter);
            for (s, g) in self.scratch.iter_mut().zip(&self.geom[d]) {
                *s *= g;
            }
            counter.mul(t as u64);
            contract_accumulate(basis.diff_matrix_t(), &self.scratch, out, shape, d, counter);
        }
        if self.lambda != 0.0 {
            for ((o, m), v) in out.iter_mut().zip(&self.helmholtz_mass).zip(u) {
                *o += m * v;
            }
            counter.mul_add(t as u64);
        }
    }

    /// Diagonal of the element matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let shape = self.reference.shape();
        let [nx, ny, _] = shape;
        let mut diag = vec![0.0; self.len()];
        for (p, dv) in diag.iter_mut().enumerate() {
            let idx = [p % nx, (p / nx) % ny, p / (nx * ny)];
            let mut acc = 0.0;
            for d in 0..3 {
                let basis = &self.reference.bases[d];
                let stride = [1, nx, nx * ny][d];
                let base = p - idx[d] * stride;
                for m in 0..shape[d] {
                    let dm = basis.diff(m, idx[d]);
                    acc += dm * dm * self.geom[d][base + m * stride];
                }
            }
            *dv = acc + self.helmholtz_mass[p];
        }
        diag
    }
}

/// Weak Laplacian action on a single box element of extents `size`.
pub fn apply_element_laplacian(
    field: &ElementField,
    reference: &ReferenceElement,
    size: [f64; 3],
    counter: &mut FlopCounter,
) -> Result<ElementField, SemError> {
    if field.shape() != reference.shape() {
        return Err(SemError::Dimension {
            expected: reference.len(),
            found: field.values().len(),
        });
    }
    let mut op = ElementOperator::new(reference.clone(), size, 0.0)?;
    let mut out = ElementField::zeros(field.index, field.shape());
    op.apply(field.values(), out.values_mut(), counter);
    Ok(out)
}
