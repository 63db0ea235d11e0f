//! One-dimensional nodal bases on the reference interval [-1, 1].
//!
//! The velocity-type basis lives on Gauss-Lobatto-Legendre (GLL) points,
//! the staggered pressure-type basis on interior Gauss-Legendre points of
//! two degrees less.

use std::f64::consts::PI;

use super::SemError;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITERS: usize = 100;

/// Legendre polynomial `L_n(x)` and its predecessor `L_{n-1}(x)`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut prev = 1.0;
    let mut curr = x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * x * curr - k * prev) / (k + 1.0);
        prev = curr;
        curr = next;
    }
    (curr, prev)
}

/// Evaluates `L_n(x)`.
pub fn legendre(n: usize, x: f64) -> f64 {
    legendre_pair(n, x).0
}

/// Evaluates `L_n'(x)` for `|x| < 1` through the three-term identity
/// `(x^2 - 1) L_n' = n (x L_n - L_{n-1})`; endpoints use `n(n+1)/2 * (+-1)^(n+1)`.
pub fn legendre_derivative(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if (x.abs() - 1.0).abs() < f64::EPSILON {
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        return sign * (n * (n + 1)) as f64 / 2.0;
    }
    let (ln, lnm1) = legendre_pair(n, x);
    n as f64 * (x * ln - lnm1) / (x * x - 1.0)
}

/// GLL nodes, weights and the Lagrangian differentiation matrix for degree `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    degree: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major `(N+1) x (N+1)`; `diff[i][j] = l_j'(x_i)`.
    diff: Vec<f64>,
    diff_t: Vec<f64>,
}

impl SpectralBasis {
    /// Builds the degree-`N` GLL basis.
    ///
    /// Interior nodes are the roots of `(1 - x^2) L_N'(x)`, found by Newton
    /// iteration from Chebyshev-Gauss-Lobatto guesses. Only half of them are
    /// solved for; the other half is mirrored so the node set is exactly
    /// antisymmetric.
    pub fn gll(degree: usize) -> Result<Self, SemError> {
        if degree < 2 {
            return Err(SemError::DegreeTooSmall { degree, min: 2 });
        }
        let n = degree;
        let np = n + 1;
        let nn1 = (n * (n + 1)) as f64;
        let mut nodes = vec![0.0; np];
        nodes[0] = -1.0;
        nodes[n] = 1.0;
        for i in 1..=(n - 1) / 2 {
            let mut x = -(PI * i as f64 / n as f64).cos();
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITERS {
                // q = (1 - x^2) L_N', and by the Legendre ODE q' = -N(N+1) L_N.
                let q = (1.0 - x * x) * legendre_derivative(n, x);
                let dq = -nn1 * legendre(n, x);
                let delta = q / dq;
                x -= delta;
                if delta.abs() < NEWTON_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(SemError::NodeSolve { degree, node: i });
            }
            nodes[i] = x;
            nodes[n - i] = -x;
        }
        // the middle node of an even degree is exactly zero already

        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let ln = legendre(n, x);
                2.0 / (nn1 * ln * ln)
            })
            .collect();

        let lvals: Vec<f64> = nodes.iter().map(|&x| legendre(n, x)).collect();
        let mut diff = vec![0.0; np * np];
        for i in 0..np {
            let mut row_sum = 0.0;
            for j in 0..np {
                if i != j {
                    let d = lvals[i] / (lvals[j] * (nodes[i] - nodes[j]));
                    diff[i * np + j] = d;
                    row_sum += d;
                }
            }
            // negative-sum diagonal keeps D * 1 = 0 to rounding
            diff[i * np + i] = -row_sum;
        }
        let mut diff_t = vec![0.0; np * np];
        for i in 0..np {
            for j in 0..np {
                diff_t[j * np + i] = diff[i * np + j];
            }
        }

        Ok(Self {
            degree,
            nodes,
            weights,
            diff,
            diff_t,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Differentiation matrix, row-major.
    pub fn diff_matrix(&self) -> &[f64] {
        &self.diff
    }

    /// Transposed differentiation matrix, row-major.
    pub fn diff_matrix_t(&self) -> &[f64] {
        &self.diff_t
    }

    /// `D[i][j]`.
    pub fn diff(&self, i: usize, j: usize) -> f64 {
        self.diff[i * self.len() + j]
    }
}

/// Interior Gauss-Legendre points for the staggered pressure space of
/// degree `N - 2` (that is `N - 1` points).
#[derive(Debug, Clone, PartialEq)]
pub struct PressureBasis {
    degree: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PressureBasis {
    /// Pressure basis paired with a velocity basis of degree `velocity_degree`.
    pub fn for_velocity_degree(velocity_degree: usize) -> Result<Self, SemError> {
        if velocity_degree < 2 {
            return Err(SemError::DegreeTooSmall {
                degree: velocity_degree,
                min: 2,
            });
        }
        let m = velocity_degree - 1; // number of points = roots of L_m
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        for i in 0..(m + 1) / 2 {
            let mut x = -(PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITERS {
                let delta = legendre(m, x) / legendre_derivative(m, x);
                x -= delta;
                if delta.abs() < NEWTON_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(SemError::NodeSolve {
                    degree: velocity_degree,
                    node: i,
                });
            }
            if m % 2 == 1 && i == m / 2 {
                x = 0.0;
            }
            let dl = legendre_derivative(m, x);
            let w = 2.0 / ((1.0 - x * x) * dl * dl);
            nodes[i] = x;
            nodes[m - 1 - i] = -x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        Ok(Self {
            degree: velocity_degree - 2,
            nodes,
            weights,
        })
    }

    /// Polynomial degree `N - 2`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}
