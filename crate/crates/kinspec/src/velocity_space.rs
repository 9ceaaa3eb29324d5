//! Velocity-space discretization in an orthonormal Hermite basis.
//!
//! Distributions are represented by coefficients against `phi_a = h_a(v) mu(v)`
//! where `mu` is the standard Gaussian and `h_a` are normalized (probabilists')
//! Hermite polynomials, orthonormal under `mu`. In these coordinates the
//! weighted space `H = L^2(mu^{-1} dv)` is plain Euclidean space: inner
//! products are dot products, self-adjoint operators are symmetric matrices,
//! and multiplication by `v_j` is an exact tridiagonal recurrence.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

use crate::linalg::{CVec, RMat, RVec};

/// Multi-index over velocity axes; unused trailing axes stay zero for d = 2.
pub type MultiIndex = [usize; 3];

/// Rule selecting which multi-indices belong to the truncated basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IndexRule {
    /// `|a|_1 <= N` (default): degree eigenspaces are rotation-invariant.
    #[default]
    TotalDegree,
    /// `|a|_inf <= N`: full tensor box.
    MaxDegree,
}

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("truncation degree must be >= 4 (kernel needs degree 2 plus margin), got {0}")]
    TruncationTooSmall(usize),
}

/// Macroscopic moments of a distribution: density, bulk velocity and
/// temperature fluctuations. Complex-valued because solver states are
/// Fourier modes; physical-space fields have real moments.
#[derive(Debug, Clone)]
pub struct MacroMoments {
    pub rho: Complex64,
    pub u: Vec<Complex64>,
    pub theta: Complex64,
}

/// Orthonormal tensor-Hermite discretization of velocity space.
///
/// Immutable after construction; cheap to share across threads via `Arc`.
#[derive(Debug)]
pub struct HermiteBasis {
    /// Spatial/velocity dimension, 2 or 3.
    pub d: usize,
    /// Per-axis truncation degree N.
    pub n: usize,
    pub index_rule: IndexRule,
    /// Multi-indices of the retained basis functions.
    pub indices: Vec<MultiIndex>,
    index_of: HashMap<MultiIndex, usize>,
    /// Gauss-Hermite nodes for the standard Gaussian weight (one axis).
    pub nodes: Vec<f64>,
    /// Matching quadrature weights (sum to 1).
    pub weights: Vec<f64>,
    /// h_k(node) table: rows = nodes, cols = degree 0..=n.
    h_table: RMat,
    /// Multiplication-by-v_j operators, one per axis (real symmetric).
    v_mult: Vec<RMat>,
    /// Macroscopic projector P as a matrix (real symmetric, rank d+2).
    p_mat: RMat,
    /// Second moment of mu: E = d.
    pub e_const: f64,
    /// Fourth-moment ratio: K = 1 + 2/d.
    pub k_const: f64,
    /// Speed of sound c = sqrt(K E / d).
    pub c_sound: f64,
}

/// A velocity distribution as coefficients against the basis.
#[derive(Debug, Clone)]
pub struct VelocityVector {
    pub basis: Arc<HermiteBasis>,
    pub coeffs: CVec,
}

impl VelocityVector {
    pub fn new(basis: Arc<HermiteBasis>, coeffs: CVec) -> Self {
        assert_eq!(coeffs.len(), basis.len(), "coefficient/basis size mismatch");
        Self { basis, coeffs }
    }

    pub fn from_real(basis: Arc<HermiteBasis>, coeffs: &RVec) -> Self {
        Self::new(basis, coeffs.map(|x| Complex64::new(x, 0.0)))
    }

    /// H-inner product (plain Euclidean dot product in these coordinates),
    /// conjugate-linear in `other`.
    pub fn inner(&self, other: &VelocityVector) -> Complex64 {
        other.coeffs.dotc(&self.coeffs)
    }

    pub fn norm_h(&self) -> f64 {
        self.coeffs.norm()
    }
}

/// Gauss-Hermite nodes/weights for the weight `exp(-x^2/2)/sqrt(2 pi)`,
/// computed by Golub-Welsch on the Jacobi matrix (off-diagonals sqrt(k)).
/// Exact for polynomials of degree <= 2m - 1.
fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let se = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (se.eigenvalues[i], se.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Enforce exact +/- symmetry of the node set (kills eigensolver jitter).
    let nodes: Vec<f64> = (0..m)
        .map(|i| 0.5 * (pairs[i].0 - pairs[m - 1 - i].0))
        .collect();
    let weights: Vec<f64> = (0..m)
        .map(|i| 0.5 * (pairs[i].1 + pairs[m - 1 - i].1))
        .collect();
    (nodes, weights)
}

/// Build the orthonormal Hermite discretization.
pub fn build_basis(d: usize, n: usize, index_rule: IndexRule) -> Result<HermiteBasis, BasisError> {
    if d != 2 && d != 3 {
        return Err(BasisError::BadDimension(d));
    }
    if n < 4 {
        return Err(BasisError::TruncationTooSmall(n));
    }

    // m nodes integrate degree <= 2m-1 exactly; products of two basis
    // functions with one extra power of v reach 2n+1, so n+2 gives margin.
    let m = n + 2;
    let (nodes, weights) = gauss_hermite(m);

    // Normalized Hermite values h_k(x): h_0 = 1, h_1 = x,
    // h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1).
    let mut h_table = RMat::zeros(m, n + 1);
    for (i, &x) in nodes.iter().enumerate() {
        h_table[(i, 0)] = 1.0;
        if n >= 1 {
            h_table[(i, 1)] = x;
        }
        for k in 1..n {
            h_table[(i, k + 1)] =
                (x * h_table[(i, k)] - (k as f64).sqrt() * h_table[(i, k - 1)]) / ((k + 1) as f64).sqrt();
        }
    }

    // Enumerate retained multi-indices in lexicographic order.
    let mut indices = Vec::new();
    let bound = |alpha: &MultiIndex| match index_rule {
        IndexRule::TotalDegree => alpha[..d].iter().sum::<usize>() <= n,
        IndexRule::MaxDegree => alpha[..d].iter().all(|&a| a <= n),
    };
    let mut alpha = [0usize; 3];
    let axis_max = n;
    fn enumerate(
        d: usize,
        axis: usize,
        axis_max: usize,
        alpha: &mut MultiIndex,
        keep: &dyn Fn(&MultiIndex) -> bool,
        out: &mut Vec<MultiIndex>,
    ) {
        if axis == d {
            if keep(alpha) {
                out.push(*alpha);
            }
            return;
        }
        for a in 0..=axis_max {
            alpha[axis] = a;
            enumerate(d, axis + 1, axis_max, alpha, keep, out);
        }
        alpha[axis] = 0;
    }
    enumerate(d, 0, axis_max, &mut alpha, &bound, &mut indices);
    let index_of: HashMap<MultiIndex, usize> =
        indices.iter().enumerate().map(|(i, &a)| (a, i)).collect();

    // Multiplication by v_j: v h_k = sqrt(k+1) h_{k+1} + sqrt(k) h_{k-1},
    // entries dropped when the shifted index leaves the set (truncation).
    let nb = indices.len();
    let mut v_mult = Vec::with_capacity(d);
    for j in 0..d {
        let mut vj = RMat::zeros(nb, nb);
        for (col, &a) in indices.iter().enumerate() {
            let k = a[j];
            let mut up = a;
            up[j] = k + 1;
            if let Some(&row) = index_of.get(&up) {
                vj[(row, col)] = ((k + 1) as f64).sqrt();
            }
            if k > 0 {
                let mut down = a;
                down[j] = k - 1;
                if let Some(&row) = index_of.get(&down) {
                    vj[(row, col)] = (k as f64).sqrt();
                }
            }
        }
        v_mult.push(vj);
    }

    let e_const = d as f64;
    let k_const = 1.0 + 2.0 / d as f64;
    let c_sound = (k_const * e_const / d as f64).sqrt();

    let mut basis = HermiteBasis {
        d,
        n,
        index_rule,
        indices,
        index_of,
        nodes,
        weights,
        h_table,
        v_mult,
        p_mat: RMat::zeros(nb, nb),
        e_const,
        k_const,
        c_sound,
    };
    basis.p_mat = basis.build_p_matrix();
    Ok(basis)
}

impl HermiteBasis {
    /// Number of retained basis functions.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index_of(&self, alpha: &MultiIndex) -> Option<usize> {
        self.index_of.get(alpha).copied()
    }

    /// Multiplication-by-v_j matrix (real symmetric).
    pub fn v_matrix(&self, j: usize) -> &RMat {
        &self.v_mult[j]
    }

    /// `v . xi` as a single real symmetric matrix.
    pub fn v_dot(&self, xi: &[f64]) -> RMat {
        let nb = self.len();
        let mut m = RMat::zeros(nb, nb);
        for j in 0..self.d {
            m += &self.v_mult[j] * xi[j];
        }
        m
    }

    /// Macroscopic projector P onto span{mu, v_1 mu, ..., v_d mu, |v|^2 mu}.
    pub fn p_matrix(&self) -> &RMat {
        &self.p_mat
    }

    fn build_p_matrix(&self) -> RMat {
        // P = sum of rank-1 dyads over an orthonormal kernel basis:
        // h_0, h_{e_j}, and (|v|^2 - E)/sqrt(E^2 (K-1)).
        let nb = self.len();
        let mut p = RMat::zeros(nb, nb);
        let mut dyad = |v: &RVec| {
            p += v * v.transpose();
        };
        let mut e0 = RVec::zeros(nb);
        e0[self.index_of(&[0, 0, 0]).unwrap()] = 1.0;
        dyad(&e0);
        for j in 0..self.d {
            let mut ej = RVec::zeros(nb);
            let mut a = [0usize; 3];
            a[j] = 1;
            ej[self.index_of(&a).unwrap()] = 1.0;
            dyad(&ej);
        }
        // |v|^2 - E = sum_j sqrt(2) h_{2 e_j}; norm^2 = 2d = E^2 (K-1).
        let mut q = RVec::zeros(nb);
        for j in 0..self.d {
            let mut a = [0usize; 3];
            a[j] = 2;
            q[self.index_of(&a).unwrap()] = 2.0_f64.sqrt();
        }
        q /= q.norm();
        dyad(&q);
        p
    }

    /// Orthonormal basis vectors of ker(L) = span{mu, v mu, |v|^2 mu}.
    pub fn kernel_basis(&self) -> Vec<RVec> {
        let nb = self.len();
        let mut out = Vec::with_capacity(self.d + 2);
        let mut e0 = RVec::zeros(nb);
        e0[self.index_of(&[0, 0, 0]).unwrap()] = 1.0;
        out.push(e0);
        for j in 0..self.d {
            let mut ej = RVec::zeros(nb);
            let mut a = [0usize; 3];
            a[j] = 1;
            ej[self.index_of(&a).unwrap()] = 1.0;
            out.push(ej);
        }
        let mut q = RVec::zeros(nb);
        for j in 0..self.d {
            let mut a = [0usize; 3];
            a[j] = 2;
            q[self.index_of(&a).unwrap()] = 2.0_f64.sqrt();
        }
        q /= q.norm();
        out.push(q);
        out
    }

    /// Coefficients of `F(v) mu(v)` by tensor Gauss-Hermite quadrature.
    /// Exact whenever `F` is a polynomial of degree <= nodes-per-axis margin.
    pub fn project_function(&self, f: impl Fn(&[f64]) -> f64) -> RVec {
        let nb = self.len();
        let m = self.nodes.len();
        let mut out = RVec::zeros(nb);
        let mut node_idx = vec![0usize; self.d];
        let mut v = vec![0.0; self.d];
        loop {
            let mut w = 1.0;
            for j in 0..self.d {
                v[j] = self.nodes[node_idx[j]];
                w *= self.weights[node_idx[j]];
            }
            let fv = f(&v);
            if fv != 0.0 {
                for (i, a) in self.indices.iter().enumerate() {
                    let mut h = 1.0;
                    for j in 0..self.d {
                        h *= self.h_table[(node_idx[j], a[j])];
                    }
                    out[i] += w * fv * h;
                }
            }
            // Advance the tensor counter.
            let mut j = 0;
            loop {
                if j == self.d {
                    return out;
                }
                node_idx[j] += 1;
                if node_idx[j] < m {
                    break;
                }
                node_idx[j] = 0;
                j += 1;
            }
        }
    }

    /// Dissipation weight `(1 + |v|^2)^{gamma/2}` realized on the truncated
    /// space by spectral calculus of the (quadrature-exact) multiplication
    /// operator `S = proj |v|^2 proj`: `W = (Id + S)^{gamma/2}`. Matrix
    /// functions of `S` commute with every rotation exactly, keeping the
    /// weighted norm isotropic on the truncation. `W >= Id` since `S >= 0`.
    /// At `gamma = 0` this returns the raw quadrature Gram matrix.
    pub fn weight_matrix(&self, gamma: f64) -> RMat {
        // S and the Gram matrix share one quadrature pass; the integrands are
        // polynomials of degree <= 2N + 2 < 2m - 1, so both are exact.
        let s = self.quadrature_pairing(|v2| v2);
        if gamma == 0.0 {
            return self.quadrature_pairing(|_| 1.0);
        }
        let se = s.symmetric_eigen();
        let nb = self.len();
        let mut w_mat = RMat::zeros(nb, nb);
        for i in 0..nb {
            let lam = se.eigenvalues[i].max(0.0);
            let col = se.eigenvectors.column(i);
            w_mat += col * col.transpose() * (1.0 + lam).powf(gamma / 2.0);
        }
        (&w_mat + &w_mat.transpose()) * 0.5
    }

    /// Quadrature assembly of the symmetric pairing `<h_i, g(|v|^2) h_j>_mu`.
    fn quadrature_pairing(&self, g: impl Fn(f64) -> f64) -> RMat {
        let nb = self.len();
        let m = self.nodes.len();
        let mut w_mat = RMat::zeros(nb, nb);
        let mut node_idx = vec![0usize; self.d];
        let mut h_vals = vec![0.0; nb];
        loop {
            let mut w = 1.0;
            let mut v2 = 0.0;
            for j in 0..self.d {
                let x = self.nodes[node_idx[j]];
                v2 += x * x;
                w *= self.weights[node_idx[j]];
            }
            let weight = w * g(v2);
            for (i, a) in self.indices.iter().enumerate() {
                let mut h = 1.0;
                for j in 0..self.d {
                    h *= self.h_table[(node_idx[j], a[j])];
                }
                h_vals[i] = h;
            }
            for i in 0..nb {
                for k in 0..=i {
                    w_mat[(i, k)] += weight * h_vals[i] * h_vals[k];
                }
            }
            let mut j = 0;
            loop {
                if j == self.d {
                    // Mirror the lower triangle: exact symmetry by construction.
                    for i in 0..nb {
                        for k in 0..i {
                            w_mat[(k, i)] = w_mat[(i, k)];
                        }
                    }
                    return w_mat;
                }
                node_idx[j] += 1;
                if node_idx[j] < m {
                    break;
                }
                node_idx[j] = 0;
                j += 1;
            }
        }
    }

    /// Evaluate the profile `F(v) = f(v)/mu(v)` of a coefficient vector at an
    /// arbitrary velocity (used by rotation-resampling audits).
    pub fn eval_profile(&self, coeffs: &CVec, v: &[f64]) -> Complex64 {
        // Per-axis Hermite values at v[j] by the recurrence.
        let mut h = vec![vec![0.0; self.n + 1]; self.d];
        for j in 0..self.d {
            h[j][0] = 1.0;
            if self.n >= 1 {
                h[j][1] = v[j];
            }
            for k in 1..self.n {
                h[j][k + 1] =
                    (v[j] * h[j][k] - (k as f64).sqrt() * h[j][k - 1]) / ((k + 1) as f64).sqrt();
            }
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, a) in self.indices.iter().enumerate() {
            let mut hv = 1.0;
            for j in 0..self.d {
                hv *= h[j][a[j]];
            }
            acc += coeffs[i] * hv;
        }
        acc
    }

    /// Resample `f(R v)` for an orthogonal matrix R by quadrature.
    /// Exact for axis permutations/sign flips; spectrally accurate otherwise.
    pub fn rotate(&self, coeffs: &CVec, r: &[[f64; 3]; 3]) -> CVec {
        let nb = self.len();
        let m = self.nodes.len();
        let mut out = CVec::zeros(nb);
        let mut node_idx = vec![0usize; self.d];
        loop {
            let mut w = 1.0;
            let mut v = [0.0; 3];
            for j in 0..self.d {
                v[j] = self.nodes[node_idx[j]];
                w *= self.weights[node_idx[j]];
            }
            let mut rv = vec![0.0; self.d];
            for i in 0..self.d {
                for j in 0..self.d {
                    rv[i] += r[i][j] * v[j];
                }
            }
            let fv = self.eval_profile(coeffs, &rv);
            for (i, a) in self.indices.iter().enumerate() {
                let mut h = 1.0;
                for j in 0..self.d {
                    h *= self.h_table[(node_idx[j], a[j])];
                }
                out[i] += fv * (w * h);
            }
            let mut j = 0;
            loop {
                if j == self.d {
                    return out;
                }
                node_idx[j] += 1;
                if node_idx[j] < m {
                    break;
                }
                node_idx[j] = 0;
                j += 1;
            }
        }
    }
}

/// Macroscopic moments, read directly off the coefficients:
/// `rho = <f, mu>`, `u = (d/E) <f, v mu>`, `theta = (1/E) <f, (|v|^2 - E) mu>`.
pub fn moments(basis: &HermiteBasis, coeffs: &CVec) -> MacroMoments {
    let d = basis.d;
    let de = d as f64 / basis.e_const;
    let rho = coeffs[basis.index_of(&[0, 0, 0]).unwrap()];
    let mut u = Vec::with_capacity(d);
    for j in 0..d {
        let mut a = [0usize; 3];
        a[j] = 1;
        u.push(coeffs[basis.index_of(&a).unwrap()] * de);
    }
    let mut theta = Complex64::new(0.0, 0.0);
    let sqrt2 = 2.0_f64.sqrt();
    for j in 0..d {
        let mut a = [0usize; 3];
        a[j] = 2;
        theta += coeffs[basis.index_of(&a).unwrap()] * sqrt2;
    }
    theta /= basis.e_const;
    MacroMoments { rho, u, theta }
}

/// Coefficients of the macroscopic distribution
/// `(rho + u.v + theta (|v|^2 - E) / (E (K-1))) mu`.
pub fn macro_lift(basis: &HermiteBasis, mm: &MacroMoments) -> CVec {
    let mut out = CVec::zeros(basis.len());
    out[basis.index_of(&[0, 0, 0]).unwrap()] = mm.rho;
    for j in 0..basis.d {
        let mut a = [0usize; 3];
        a[j] = 1;
        out[basis.index_of(&a).unwrap()] = mm.u[j];
    }
    let scale = 2.0_f64.sqrt() / (basis.e_const * (basis.k_const - 1.0));
    for j in 0..basis.d {
        let mut a = [0usize; 3];
        a[j] = 2;
        out[basis.index_of(&a).unwrap()] = mm.theta * scale;
    }
    out
}

/// Apply the macroscopic projector P in moment form (equivalent to
/// multiplying by `p_matrix`, but exact and allocation-light).
pub fn project_p(basis: &HermiteBasis, coeffs: &CVec) -> CVec {
    macro_lift(basis, &moments(basis, coeffs))
}

/// The Burnett functions: `A_ij = sqrt(d/E) (v_i v_j - d_ij |v|^2/d) mu` as a
/// symmetric trace-free matrix of distributions, and
/// `B_i = v_i (K - |v|^2/E) mu / sqrt(K(K-1))`. All entries lie in ker(P).
pub fn burnett_functions(basis: &HermiteBasis) -> (Vec<Vec<RVec>>, Vec<RVec>) {
    let d = basis.d;
    let (e, k) = (basis.e_const, basis.k_const);
    let sa = (d as f64 / e).sqrt();
    let sb = 1.0 / (k * (k - 1.0)).sqrt();
    let mut a_mat = vec![vec![RVec::zeros(basis.len()); d]; d];
    for i in 0..d {
        for j in 0..d {
            a_mat[i][j] = basis.project_function(|v| {
                let v2: f64 = v.iter().map(|x| x * x).sum();
                let kron = if i == j { 1.0 } else { 0.0 };
                sa * (v[i] * v[j] - kron * v2 / d as f64)
            });
        }
    }
    let mut b_vec = Vec::with_capacity(d);
    for i in 0..d {
        b_vec.push(basis.project_function(|v| {
            let v2: f64 = v.iter().map(|x| x * x).sum();
            sb * v[i] * (k - v2 / e)
        }));
    }
    (a_mat, b_vec)
}

/// Boussinesq eigenfunction `psi_Bou = (K - |v|^2/E) mu / sqrt(K(K-1))`.
pub fn psi_bou(basis: &HermiteBasis) -> RVec {
    let (e, k) = (basis.e_const, basis.k_const);
    let s = 1.0 / (k * (k - 1.0)).sqrt();
    basis.project_function(|v| {
        let v2: f64 = v.iter().map(|x| x * x).sum();
        s * (k - v2 / e)
    })
}

/// Acoustic eigenfunctions
/// `psi_{+/-}(w) = (1 +/- sqrt(dK/E) w.v + (|v|^2 - E)/E) mu / sqrt(2K)`.
pub fn psi_wave(basis: &HermiteBasis, omega: &[f64], sign: f64) -> RVec {
    let d = basis.d;
    let (e, k) = (basis.e_const, basis.k_const);
    let s = 1.0 / (2.0 * k).sqrt();
    let a = sign * (d as f64 * k / e).sqrt();
    basis.project_function(|v| {
        let v2: f64 = v.iter().map(|x| x * x).sum();
        let wv: f64 = (0..d).map(|j| omega[j] * v[j]).sum();
        s * (1.0 + a * wv + (v2 - e) / e)
    })
}

/// Multiply by `v_j`. Returns the product and a truncation flag set when the
/// input has nonzero content at the top degree (coefficients were dropped).
pub fn multiply_by_v(basis: &HermiteBasis, coeffs: &CVec, j: usize) -> (CVec, bool) {
    let vj = basis.v_matrix(j);
    let mut out = CVec::zeros(basis.len());
    for (col, c) in coeffs.iter().enumerate() {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        for row in 0..basis.len() {
            let w = vj[(row, col)];
            if w != 0.0 {
                out[row] += c * w;
            }
        }
    }
    // Truncation occurred iff some top-degree coefficient is nonzero
    // (relative to the vector scale, to ignore quadrature noise).
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let truncated = basis.indices.iter().enumerate().any(|(i, a)| {
        let deg = match basis.index_rule {
            IndexRule::TotalDegree => a[..basis.d].iter().sum::<usize>(),
            IndexRule::MaxDegree => a[j],
        };
        deg == basis.n && coeffs[i].norm() > 1e-13 * scale
    });
    (out, truncated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn basis(d: usize, n: usize) -> HermiteBasis {
        build_basis(d, n, IndexRule::TotalDegree).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_basis(1, 6, IndexRule::TotalDegree).is_err());
        assert!(build_basis(4, 6, IndexRule::TotalDegree).is_err());
        assert!(build_basis(3, 3, IndexRule::TotalDegree).is_err());
    }

    #[test]
    fn moment_constants_match_gaussian_values() {
        let b3 = basis(3, 6);
        assert_abs_diff_eq!(b3.e_const, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b3.k_const, 5.0 / 3.0, epsilon = 1e-15);
        // Frozen oracle: c = sqrt(5/3).
        assert_abs_diff_eq!(b3.c_sound, 1.2909944487358056, epsilon = 1e-12);
        let b2 = basis(2, 6);
        assert_abs_diff_eq!(b2.c_sound, 1.4142135623730951, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_reproduces_low_gaussian_moments() {
        for d in [2usize, 3] {
            let b = basis(d, 6);
            let m = b.nodes.len();
            let mut total = 0.0;
            let mut second = 0.0;
            let mut fourth = 0.0;
            // Tensor sums for integral mu, |v|^2 mu, |v|^4 mu.
            let mut idx = vec![0usize; d];
            'outer: loop {
                let mut w = 1.0;
                let mut v2 = 0.0;
                for j in 0..d {
                    w *= b.weights[idx[j]];
                    v2 += b.nodes[idx[j]].powi(2);
                }
                total += w;
                second += w * v2;
                fourth += w * v2 * v2;
                let mut j = 0;
                loop {
                    if j == d {
                        break 'outer;
                    }
                    idx[j] += 1;
                    if idx[j] < m {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(second, b.e_const, epsilon = 1e-12);
            assert_abs_diff_eq!(fourth, b.e_const.powi(2) * b.k_const, epsilon = 1e-12);
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        let b = basis(3, 6);
        let nb = b.len();
        // Gram via the gamma = 0 weight matrix (pure quadrature pairing).
        let g = b.weight_matrix(0.0);
        let eye = RMat::identity(nb, nb);
        assert!((&g - &eye).amax() < 1e-12);
    }

    #[test]
    fn moments_of_reference_distributions() {
        let b = Arc::new(basis(3, 6));
        // f = mu -> (1, 0, 0).
        let mu = b.project_function(|_| 1.0);
        let mm = moments(&b, &mu.map(|x| Complex64::new(x, 0.0)));
        assert_abs_diff_eq!(mm.rho.re, 1.0, epsilon = 1e-12);
        assert!(mm.u.iter().all(|c| c.norm() < 1e-12));
        assert_abs_diff_eq!(mm.theta.re, 0.0, epsilon = 1e-12);
        // f = v_1 mu -> u = e_1.
        let v1mu = b.project_function(|v| v[0]);
        let mm = moments(&b, &v1mu.map(|x| Complex64::new(x, 0.0)));
        assert_abs_diff_eq!(mm.u[0].re, 1.0, epsilon = 1e-12);
        assert!(mm.rho.norm() < 1e-12 && mm.theta.norm() < 1e-12);
        // f = (|v|^2 - E) mu -> theta = ||(|v|^2-E) mu||^2 / d = E^2(K-1)/d = 2
        // (the lift of theta = 1 is (|v|^2-E) mu / (E(K-1)), i.e. half of f).
        let q = b.project_function(|v| v.iter().map(|x| x * x).sum::<f64>() - 3.0);
        let mm = moments(&b, &q.map(|x| Complex64::new(x, 0.0)));
        assert_abs_diff_eq!(mm.theta.re, 2.0, epsilon = 1e-12);
        assert!(mm.rho.norm() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent_selfadjoint_and_fixes_kernel() {
        let b = basis(3, 6);
        let p = b.p_matrix();
        assert!((p * p - p).amax() < 1e-12);
        assert!((p - p.transpose()).amax() < 1e-14);
        for kvec in b.kernel_basis() {
            assert!((p * &kvec - &kvec).amax() < 1e-12);
        }
        // Odd-parity microscopic input is annihilated: v_1 v_2 mu.
        let f = b.project_function(|v| v[0] * v[1]);
        assert!((p * &f).amax() < 1e-12);
    }

    #[test]
    fn project_p_matches_matrix_and_preserves_moments() {
        let b = Arc::new(basis(3, 6));
        let f = b.project_function(|v| 0.3 + v[0] - 0.2 * v[1] * v[1] + 0.05 * v[2].powi(3));
        let fc = f.map(|x| Complex64::new(x, 0.0));
        let pf = project_p(&b, &fc);
        let pf_mat = b.p_matrix().map(|x| Complex64::new(x, 0.0)) * &fc;
        assert!((&pf - &pf_mat).map(|c| c.norm()).max() < 1e-12);
        // moments o P = moments.
        let m0 = moments(&b, &fc);
        let m1 = moments(&b, &pf);
        assert_abs_diff_eq!(m0.rho.re, m1.rho.re, epsilon = 1e-12);
        assert_abs_diff_eq!(m0.theta.re, m1.theta.re, epsilon = 1e-12);
        for j in 0..3 {
            assert_abs_diff_eq!(m0.u[j].re, m1.u[j].re, epsilon = 1e-12);
        }
        // Contraction: ||P f|| <= ||f||.
        assert!(pf.norm() <= fc.norm() + 1e-14);
    }

    #[test]
    fn burnett_functions_match_gaussian_moment_oracles() {
        let b = basis(3, 6);
        let (a, bb) = burnett_functions(&b);
        // Frozen oracles: <A12, A12> = 1; <A11, A11> = 2(d-1)/d = 4/3.
        assert_abs_diff_eq!(a[0][1].dot(&a[0][1]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0][0].dot(&a[0][0]), 4.0 / 3.0, epsilon = 1e-12);
        // Sum_i <B_i, B_i> = d = 3.
        let bsum: f64 = bb.iter().map(|bi| bi.dot(bi)).sum();
        assert_abs_diff_eq!(bsum, 3.0, epsilon = 1e-12);
        // Symmetric, trace-free, microscopic.
        let p = b.p_matrix();
        let mut trace = RVec::zeros(b.len());
        for i in 0..3 {
            trace += &a[i][i];
            for j in 0..3 {
                assert!((&a[i][j] - &a[j][i]).amax() < 1e-12);
                assert!((p * &a[i][j]).amax() < 1e-12);
            }
            assert!((p * &bb[i]).amax() < 1e-12);
        }
        assert!(trace.amax() < 1e-12);
    }

    #[test]
    fn eigenfunctions_are_normalized() {
        for d in [2usize, 3] {
            let b = basis(d, 6);
            assert_abs_diff_eq!(psi_bou(&b).norm(), 1.0, epsilon = 1e-10);
            let mut omega = vec![0.0; d];
            omega[0] = 1.0;
            for s in [1.0, -1.0] {
                assert_abs_diff_eq!(psi_wave(&b, &omega, s).norm(), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn v_multiplication_is_symmetric_and_exact_on_mu() {
        let b = Arc::new(basis(3, 6));
        for j in 0..3 {
            let vj = b.v_matrix(j);
            assert!((vj - vj.transpose()).amax() < 1e-14);
        }
        let mu = b.project_function(|_| 1.0).map(|x| Complex64::new(x, 0.0));
        let (vmu, truncated) = multiply_by_v(&b, &mu, 0);
        assert!(!truncated);
        let v1mu = b.project_function(|v| v[0]);
        for i in 0..b.len() {
            assert_abs_diff_eq!(vmu[i].re, v1mu[i], epsilon = 1e-12);
        }
        // <v1 mu, v1 mu> = 1 (second Gaussian moment).
        assert_abs_diff_eq!(vmu.norm(), 1.0, epsilon = 1e-12);
        // Top-degree content trips the truncation flag.
        let top = b.project_function(|v| v[0].powi(6)).map(|x| Complex64::new(x, 0.0));
        let (_, truncated) = multiply_by_v(&b, &top, 0);
        assert!(truncated);
    }

    #[test]
    fn rotations_transform_moments_covariantly() {
        let b = Arc::new(basis(3, 8));
        let f = b
            .project_function(|v| 0.2 + 0.7 * v[0] - 0.3 * v[1] + 0.1 * (v[0] * v[0] - 1.0))
            .map(|x| Complex64::new(x, 0.0));
        let m0 = moments(&b, &f);
        // Axis swap (x <-> y), sign flip, and a 45-degree in-plane rotation.
        let swap = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let flip = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rot45 = [[s, -s, 0.0], [s, s, 0.0], [0.0, 0.0, 1.0]];
        for (r, tol) in [(swap, 1e-12), (flip, 1e-12), (rot45, 1e-8)] {
            let rf = b.rotate(&f, &r);
            let mr = moments(&b, &rf);
            assert_abs_diff_eq!(mr.rho.re, m0.rho.re, epsilon = tol);
            assert_abs_diff_eq!(mr.theta.re, m0.theta.re, epsilon = tol);
            // moments(f o R) has velocity R^T u (change of variables).
            for i in 0..3 {
                let expect: f64 = (0..3).map(|j| r[j][i] * m0.u[j].re).sum();
                assert_abs_diff_eq!(mr.u[i].re, expect, epsilon = tol);
            }
        }
    }
}
