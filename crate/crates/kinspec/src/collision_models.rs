//! Concrete collision operators and the assumption audits.
//!
//! Two linear models are provided: the BGK relaxation operator
//! `L = nu (P - Id)` (fully verifiable in closed form) and a synthetic
//! variable-frequency model `L = -nu (Id-P) W (Id-P)` with the radial weight
//! `W ~ (1+|v|^2)^{gamma/2}`, which exercises a nontrivial dissipation norm.
//! The bilinear operator is the quadratic Taylor coefficient of the
//! local-Maxwellian map, closed-form in the moments of its arguments.
//!
//! Audits check the operator contracts (self-adjointness, kernel, spectral
//! gap, splitting dissipativity, isotropy; conservation, equivariance, and
//! the empirical dual bound for the bilinear part) and return a structured
//! report instead of panicking on failure.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

use crate::linalg::{self, CVec, RMat, RVec};
use crate::parallel::par_map;
use crate::velocity_space::{moments, HermiteBasis};

/// Symmetric matrix realization of a linear collision operator with its
/// declared splitting `L = A + B` and gap metadata.
pub struct LinearCollisionOperator {
    pub basis: Arc<HermiteBasis>,
    /// L in basis coordinates (real symmetric).
    pub matrix: RMat,
    /// Bounded part A of the splitting.
    pub a_part: RMat,
    /// Dissipative part B of the splitting.
    pub b_part: RMat,
    /// Declared spectral gap in the dissipation norm.
    pub lambda_l: f64,
    /// Declared dissipativity constant of `B - i v.xi`.
    pub lambda_b: f64,
    /// Dissipation weight exponent; the Ssp norm is `||(1+|v|^2)^{g/4} f||_H`.
    pub gamma: f64,
    /// Relaxation rate.
    pub nu: f64,
    pub name: String,
}

impl LinearCollisionOperator {
    /// Ssp (dissipation-weighted) squared norm: `<W f, f>` with
    /// `W = (1+|v|^2)^{gamma/2}`; reduces to the H norm at gamma = 0.
    pub fn ssp_norm_sq(&self, w: &RMat, f: &CVec) -> f64 {
        let wf = w.map(|x| Complex64::new(x, 0.0)) * f;
        f.dotc(&wf).re
    }
}

/// Bilinear collision operator, closed-form in the macroscopic moments of
/// its arguments (the quadratic coefficient of the local-Maxwellian map).
pub struct BilinearCollisionOperator {
    pub basis: Arc<HermiteBasis>,
    /// Relaxation rate; the quadratic coefficient scales with the same nu as
    /// the linearization, so that (L, Q) are the Taylor pair of one map.
    pub nu: f64,
    // Precomputed coefficient vectors of the monomial profiles times mu.
    vec_v: Vec<RVec>,
    vec_w: RVec,
    vec_vv: Vec<Vec<RVec>>,
    vec_vw: Vec<RVec>,
    vec_ww: RVec,
}

/// BGK linearization `L = nu (P - Id)` with splitting `A = nu P`,
/// `B = -nu Id`; spectrum {0 (multiplicity d+2), -nu}.
pub fn bgk_linear(basis: Arc<HermiteBasis>, nu: f64) -> LinearCollisionOperator {
    assert!(nu > 0.0, "relaxation rate must be positive");
    let nb = basis.len();
    let p = basis.p_matrix().clone();
    let a_part = &p * nu;
    let b_part = RMat::identity(nb, nb) * (-nu);
    let matrix = &a_part + &b_part;
    LinearCollisionOperator {
        basis,
        matrix,
        a_part,
        b_part,
        lambda_l: nu,
        lambda_b: nu,
        gamma: 0.0,
        nu,
        name: "bgk".into(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("weight exponent gamma must lie in [0, 2], got {0}")]
    BadGamma(f64),
}

/// Synthetic variable-frequency model `L = -nu (Id-P) W (Id-P)` with
/// `W = (1+|v|^2)^{gamma/2}` realized by spectral calculus of the truncated
/// multiplication operator (exactly rotation-isotropic, `W >= Id`).
/// Splitting: `B = L - nu P` (negative definite), `A = nu P`.
pub fn variable_frequency_model(
    basis: Arc<HermiteBasis>,
    nu: f64,
    gamma: f64,
) -> Result<LinearCollisionOperator, ModelError> {
    assert!(nu > 0.0, "relaxation rate must be positive");
    if !(0.0..=2.0).contains(&gamma) {
        return Err(ModelError::BadGamma(gamma));
    }
    let nb = basis.len();
    let p = basis.p_matrix().clone();
    let q = RMat::identity(nb, nb) - &p;
    let mut w = basis.weight_matrix(gamma);
    // Kill any N-dependent asymmetry from quadrature assembly.
    w = (&w + &w.transpose()) * 0.5;
    let matrix = &q * &w * &q * (-nu);
    let matrix = (&matrix + &matrix.transpose()) * 0.5;
    let a_part = &p * nu;
    let b_part = &matrix - &a_part;
    Ok(LinearCollisionOperator {
        basis,
        matrix,
        a_part,
        b_part,
        lambda_l: nu,
        lambda_b: nu,
        gamma,
        nu,
        name: "variable-frequency".into(),
    })
}

/// Coefficients of the Maxwellian profile `M(R,U,T;v)/mu(v)` by quadrature
/// (used by the finite-difference validation of the quadratic operator).
pub fn maxwellian_coeffs(basis: &HermiteBasis, r: f64, u: &[f64], t: f64) -> RVec {
    let d = basis.d;
    basis.project_function(|v| {
        let mut q = 0.0;
        let mut v2 = 0.0;
        for j in 0..d {
            let dv = v[j] - u[j];
            q += dv * dv;
            v2 += v[j] * v[j];
        }
        r * t.powf(-(d as f64) / 2.0) * (v2 / 2.0 - q / (2.0 * t)).exp()
    })
}

/// Quadratic Taylor coefficient of the relaxation dynamics
/// `nu (M(moments of F) - F)`, extended to a symmetric bilinear operator.
/// Closed form in the moments `ubar = <g, v mu>` and `theta`:
///
/// `Q(f,g)/(nu mu) = -(uf.ug)/2 - d tf tg/4 - (tf ug + tg uf).v / 2`
/// `                 - ((uf.ug)/(2d) + tf tg/2) w + (uf.v)(ug.v)/2`
/// `                 + (tf (ug.v) + tg (uf.v)) w / 4 + tf tg w^2 / 8`
///
/// with `w = |v|^2 - d`. Conservation (orthogonality to the collision
/// invariants) holds identically in the moments.
pub fn bgk_quadratic(basis: Arc<HermiteBasis>, nu: f64) -> BilinearCollisionOperator {
    assert!(nu > 0.0, "relaxation rate must be positive");
    let d = basis.d;
    let df = d as f64;
    let w_of = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() - df;
    let mut vec_v = Vec::with_capacity(d);
    let mut vec_vw = Vec::with_capacity(d);
    for i in 0..d {
        vec_v.push(basis.project_function(|v| v[i]));
        vec_vw.push(basis.project_function(|v| v[i] * w_of(v)));
    }
    let mut vec_vv = vec![vec![RVec::zeros(basis.len()); d]; d];
    for i in 0..d {
        for j in 0..d {
            vec_vv[i][j] = basis.project_function(|v| v[i] * v[j]);
        }
    }
    let vec_w = basis.project_function(w_of);
    let vec_ww = basis.project_function(|v| w_of(v).powi(2));
    BilinearCollisionOperator {
        basis,
        nu,
        vec_v,
        vec_w,
        vec_vv,
        vec_vw,
        vec_ww,
    }
}

impl BilinearCollisionOperator {
    /// Symmetrized evaluation `Q(f, g)` (complex-bilinear, no conjugation:
    /// arguments are Fourier modes).
    pub fn apply(&self, f: &CVec, g: &CVec) -> CVec {
        let basis = &self.basis;
        let d = basis.d;
        let df = d as f64;
        let mf = moments(basis, f);
        let mg = moments(basis, g);
        // ubar = <., v mu> = (E/d) u; E = d makes them equal, but keep the
        // general reading explicit.
        let scale = basis.e_const / df;
        let uf: Vec<Complex64> = mf.u.iter().map(|c| c * scale).collect();
        let ug: Vec<Complex64> = mg.u.iter().map(|c| c * scale).collect();
        let (tf, tg) = (mf.theta, mg.theta);

        let uf_dot_ug: Complex64 = (0..d).map(|i| uf[i] * ug[i]).sum();
        let tftg = tf * tg;

        let nb = basis.len();
        let mut out = CVec::zeros(nb);

        // Constant profile = coefficient on mu itself.
        let c_const = -uf_dot_ug * 0.5 - tftg * (df / 4.0);
        let i0 = basis.index_of(&[0, 0, 0]).unwrap();
        out[i0] += c_const;

        let mut add = |c: Complex64, v: &RVec| {
            if c.norm_sqr() > 0.0 {
                for i in 0..nb {
                    out[i] += c * v[i];
                }
            }
        };

        for i in 0..d {
            add(-(tf * ug[i] + tg * uf[i]) * 0.5, &self.vec_v[i]);
            add((tf * ug[i] + tg * uf[i]) * 0.25, &self.vec_vw[i]);
        }
        add(-(uf_dot_ug / (2.0 * df) + tftg * 0.5), &self.vec_w);
        for i in 0..d {
            for j in 0..d {
                add(uf[i] * ug[j] * 0.5, &self.vec_vv[i][j]);
            }
        }
        add(tftg / 8.0, &self.vec_ww);
        out * Complex64::new(self.nu, 0.0)
    }
}

/// One named check with its measured value and tolerance. `tolerance` is
/// infinite for report-only quantities (they can't fail).
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn bounded(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured <= tolerance,
        }
    }

    fn reported(name: &str, measured: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance: f64::INFINITY,
            passed: measured.is_finite(),
        }
    }
}

/// Outcome of an assumption audit: never panics on failing assumptions,
/// just records them.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub model: String,
    pub checks: Vec<CheckResult>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// The standard rotation test set: hyperoctahedral elements (exact on the
/// truncated basis) plus one generic in-plane 45-degree rotation.
pub fn standard_rotations(d: usize) -> Vec<(String, [[f64; 3]; 3], bool)> {
    let mut eye = [[0.0; 3]; 3];
    for (i, row) in eye.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut set = Vec::new();
    let mut swap01 = eye;
    swap01[0] = [0.0, 1.0, 0.0];
    swap01[1] = [1.0, 0.0, 0.0];
    set.push(("swap-xy".to_string(), swap01, true));
    let mut flip0 = eye;
    flip0[0][0] = -1.0;
    set.push(("flip-x".to_string(), flip0, true));
    if d == 3 {
        let mut swap12 = eye;
        swap12[1] = [0.0, 0.0, 1.0];
        swap12[2] = [0.0, 1.0, 0.0];
        set.push(("swap-yz".to_string(), swap12, true));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut rot45 = eye;
    rot45[0] = [s, -s, 0.0];
    rot45[1] = [s, s, 0.0];
    set.push(("rot45-xy".to_string(), rot45, false));
    set
}

/// Matrix of the rotation action `[T_R f](v) = f(R v)` on the basis.
pub fn rotation_matrix(basis: &HermiteBasis, r: &[[f64; 3]; 3]) -> RMat {
    let nb = basis.len();
    let mut t = RMat::zeros(nb, nb);
    for col in 0..nb {
        let mut e = CVec::zeros(nb);
        e[col] = Complex64::new(1.0, 0.0);
        let re = basis.rotate(&e, r);
        for row in 0..nb {
            t[(row, col)] = re[row].re;
        }
    }
    t
}

fn random_vector(basis: &HermiteBasis, rng: &mut impl Rng) -> CVec {
    CVec::from_fn(basis.len(), |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), 0.0)
    })
}

/// Audit the linear-operator contracts: self-adjointness and isotropy,
/// kernel dimension/content, spectral gap in the dissipation norm, and
/// hypo-dissipativity of the split part `B - i v.xi` over the samples.
pub fn audit_l1_l4(
    op: &LinearCollisionOperator,
    rotations: &[(String, [[f64; 3]; 3], bool)],
    xi_samples: &[Vec<f64>],
) -> AssumptionReport {
    let basis = &op.basis;
    let nb = basis.len();
    let l = &op.matrix;
    let l_norm = l.amax().max(f64::MIN_POSITIVE);
    let mut checks = Vec::new();

    // L1: symmetry at matrix level.
    let sym = (l - l.transpose()).amax();
    checks.push(CheckResult::bounded("L1.symmetry", sym, 1e-12));

    // L1: commutation with rotations. Exact group elements are strict;
    // the generic rotation is resampled by quadrature, hence looser.
    for (name, r, exact) in rotations {
        let t = rotation_matrix(basis, r);
        let resid = (&t * l - l * &t).amax() / l_norm;
        let tol = if *exact { 1e-10 } else { 1e-8 };
        checks.push(CheckResult::bounded(
            &format!("L1.rotation.{name}"),
            resid,
            tol,
        ));
    }

    // L3: kernel dimension and content via symmetric eigendecomposition.
    let se = l.clone().symmetric_eigen();
    let scale = se.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let kernel_cols: Vec<usize> = (0..nb)
        .filter(|&i| se.eigenvalues[i].abs() < 1e-9 * scale)
        .collect();
    checks.push(CheckResult::bounded(
        "L3.kernel_dimension_error",
        (kernel_cols.len() as f64 - (basis.d + 2) as f64).abs(),
        0.0,
    ));
    // Kernel projector must coincide with the macroscopic projector P.
    let mut pker = RMat::zeros(nb, nb);
    for &i in &kernel_cols {
        let v = se.eigenvectors.column(i);
        pker += v * v.transpose();
    }
    checks.push(CheckResult::bounded(
        "L3.kernel_matches_macroscopic_span",
        (&pker - basis.p_matrix()).amax(),
        1e-10,
    ));

    // L3: spectral gap in the Ssp norm. On ker(L)-orthogonal complement,
    // sup <Lf,f>/<Wf,f> = largest eigenvalue of the pencil (QLQ, W) there.
    let w = basis.weight_matrix(op.gamma);
    let gap = measured_gap(l, &w, basis.p_matrix());
    checks.push(CheckResult::bounded(
        "L3.gap_deficit",
        (op.lambda_l - gap).max(0.0),
        1e-8 * op.lambda_l.max(1.0),
    ));
    checks.push(CheckResult::reported("L3.gap_measured", gap));

    // L4: splitting reproduces L; B - i v.xi is dissipative.
    checks.push(CheckResult::bounded(
        "L4.splitting_identity",
        (&op.a_part + &op.b_part - l).amax(),
        1e-12,
    ));
    let worst: Vec<f64> = par_map(xi_samples.len(), |k| {
        let xi = &xi_samples[k];
        let vxi = basis.v_dot(xi);
        let bmat = op.b_part.map(|x| Complex64::new(x, 0.0))
            + vxi.map(|x| Complex64::new(0.0, -x));
        match linalg::eig(&bmat) {
            Ok(e) => e.values.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max),
            Err(_) => f64::INFINITY,
        }
    });
    let max_re = worst.into_iter().fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult::bounded(
        "L4.B_xi_dissipativity_excess",
        (max_re + op.lambda_b).max(0.0),
        1e-8,
    ));

    AssumptionReport {
        model: op.name.clone(),
        checks,
    }
}

/// Largest Rayleigh quotient `<Lf,f>/<Wf,f>` over the orthogonal complement
/// of ker(L) (returned with flipped sign: the measured gap).
fn measured_gap(l: &RMat, w: &RMat, p: &RMat) -> f64 {
    let nb = l.nrows();
    // Orthonormal basis of ran(Id - P) from its eigendecomposition.
    let q = RMat::identity(nb, nb) - p;
    let se = q.symmetric_eigen();
    let cols: Vec<usize> = (0..nb).filter(|&i| se.eigenvalues[i] > 0.5).collect();
    let m = cols.len();
    let mut basis_c = RMat::zeros(nb, m);
    for (j, &i) in cols.iter().enumerate() {
        basis_c.set_column(j, &se.eigenvectors.column(i));
    }
    let l_c = basis_c.transpose() * l * &basis_c;
    let w_c = basis_c.transpose() * w * &basis_c;
    // Symmetric pencil: eigenvalues of W^{-1/2} L W^{-1/2}.
    let we = w_c.symmetric_eigen();
    let mut w_inv_sqrt = RMat::zeros(m, m);
    for i in 0..m {
        let col = we.eigenvectors.column(i);
        w_inv_sqrt += col * col.transpose() / we.eigenvalues[i].sqrt();
    }
    let sym = &w_inv_sqrt * l_c * &w_inv_sqrt;
    let sym = (&sym + &sym.transpose()) * 0.5;
    -sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Audit the bilinear-operator contracts: conservation, bilinearity,
/// rotation equivariance, and the empirical dual-bound constant (reported,
/// never asserted against a theoretical value).
pub fn audit_b1_b3(
    q: &BilinearCollisionOperator,
    rotations: &[(String, [[f64; 3]; 3], bool)],
    sample_count: usize,
    gamma: f64,
    seed: u64,
) -> AssumptionReport {
    let basis = &q.basis;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<(CVec, CVec, CVec)> = (0..sample_count)
        .map(|_| {
            (
                random_vector(basis, &mut rng),
                random_vector(basis, &mut rng),
                random_vector(basis, &mut rng),
            )
        })
        .collect();
    let mut checks = Vec::new();

    // B1: P Q(f,g) = 0 (conservation of the collision invariants).
    let b1: Vec<f64> = par_map(samples.len(), |i| {
        let (f, g, _) = &samples[i];
        let qa = q.apply(f, g);
        let p = basis.p_matrix().map(|x| Complex64::new(x, 0.0));
        (&p * &qa).map(|c| c.norm()).max()
    });
    checks.push(CheckResult::bounded(
        "B1.conservation",
        b1.into_iter().fold(0.0, f64::max),
        1e-12,
    ));

    // Bilinearity on random triples.
    let bil: Vec<f64> = par_map(samples.len(), |i| {
        let (f, g, h) = &samples[i];
        let a = Complex64::new(0.7, 0.0);
        let lhs = q.apply(&(f * a + g), h);
        let rhs = q.apply(f, h) * a + q.apply(g, h);
        (lhs - rhs).map(|c| c.norm()).max()
    });
    checks.push(CheckResult::bounded(
        "B.bilinearity",
        bil.into_iter().fold(0.0, f64::max),
        1e-12,
    ));

    // Symmetry of the symmetrized form.
    let sym: Vec<f64> = par_map(samples.len(), |i| {
        let (f, g, _) = &samples[i];
        (q.apply(f, g) - q.apply(g, f)).map(|c| c.norm()).max()
    });
    checks.push(CheckResult::bounded(
        "B.symmetry",
        sym.into_iter().fold(0.0, f64::max),
        1e-12,
    ));

    // B2: rotation equivariance Q(T f, T g) = T Q(f, g).
    for (name, r, exact) in rotations {
        let t = rotation_matrix(basis, r).map(|x| Complex64::new(x, 0.0));
        let resid: Vec<f64> = par_map(samples.len().min(8), |i| {
            let (f, g, _) = &samples[i];
            let lhs = q.apply(&(&t * f), &(&t * g));
            let rhs = &t * q.apply(f, g);
            (lhs - rhs).map(|c| c.norm()).max()
        });
        let tol = if *exact { 1e-10 } else { 1e-8 };
        checks.push(CheckResult::bounded(
            &format!("B2.rotation.{name}"),
            resid.into_iter().fold(0.0, f64::max),
            tol,
        ));
    }

    // B3: empirical dual-bound constant (report-only).
    let w = basis.weight_matrix(gamma).map(|x| Complex64::new(x, 0.0));
    let ssp = |f: &CVec| (f.dotc(&(&w * f))).re.sqrt();
    let b3: Vec<f64> = par_map(samples.len(), |i| {
        let (f, g, h) = &samples[i];
        let num = q.apply(f, g).dotc(h).norm();
        let den = ssp(h) * (f.norm() * ssp(g) + ssp(f) * g.norm());
        num / den.max(f64::MIN_POSITIVE)
    });
    checks.push(CheckResult::reported(
        "B3.empirical_constant",
        b3.into_iter().fold(0.0, f64::max),
    ));

    AssumptionReport {
        model: "bgk-quadratic".into(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity_space::{build_basis, IndexRule};
    use approx::assert_abs_diff_eq;

    fn basis(d: usize, n: usize) -> Arc<HermiteBasis> {
        Arc::new(build_basis(d, n, IndexRule::TotalDegree).unwrap())
    }

    #[test]
    fn bgk_spectrum_is_zero_and_minus_nu() {
        let b = basis(3, 6);
        let op = bgk_linear(b.clone(), 1.0);
        let se = op.matrix.clone().symmetric_eigen();
        let mut zeros = 0;
        for i in 0..b.len() {
            let ev = se.eigenvalues[i];
            if ev.abs() < 1e-12 {
                zeros += 1;
            } else {
                assert_abs_diff_eq!(ev, -1.0, epsilon = 1e-12);
            }
        }
        assert_eq!(zeros, 5); // d + 2
        // mu lies in the kernel.
        let mu = b.project_function(|_| 1.0);
        assert!((&op.matrix * &mu).amax() < 1e-12);
        // <L v1 v2 mu, v1 v2 mu> = -1 (microscopic input).
        let f = b.project_function(|v| v[0] * v[1]);
        assert_abs_diff_eq!((&op.matrix * &f).dot(&f), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn variable_frequency_reduces_to_bgk_at_gamma_zero() {
        let b = basis(3, 6);
        let bgk = bgk_linear(b.clone(), 1.3);
        let vf = variable_frequency_model(b, 1.3, 0.0).unwrap();
        assert!((&bgk.matrix - &vf.matrix).amax() < 1e-12);
        assert!(variable_frequency_model(basis(3, 6), 1.0, 2.5).is_err());
    }

    #[test]
    fn variable_frequency_kernel_and_dissipativity() {
        let b = basis(3, 8);
        let op = variable_frequency_model(b.clone(), 1.0, 1.0).unwrap();
        let se = op.matrix.clone().symmetric_eigen();
        let scale = se.eigenvalues.amax();
        let zeros = (0..b.len())
            .filter(|&i| se.eigenvalues[i].abs() < 1e-9 * scale)
            .count();
        assert_eq!(zeros, 5);
        // Rayleigh dissipativity <Lf,f> <= -nu ||(Id-P)f||_Ssp^2 on samples.
        let w = b.weight_matrix(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let f = RVec::from_fn(b.len(), |_, _| rng.random_range(-1.0..1.0));
            let qf = &f - b.p_matrix() * &f;
            let lhs = (&op.matrix * &f).dot(&f);
            let rhs = -1.0 * (&w * &qf).dot(&qf);
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn audits_pass_for_reference_models() {
        for (d, n) in [(2usize, 8usize), (3, 6)] {
            let b = basis(d, n);
            let rot = standard_rotations(d);
            let xis: Vec<Vec<f64>> = vec![
                vec![0.0; d],
                {
                    let mut x = vec![0.0; d];
                    x[0] = 0.5;
                    x
                },
                vec![0.7; d],
            ];
            let bgk = bgk_linear(b.clone(), 1.0);
            let rep = audit_l1_l4(&bgk, &rot, &xis);
            assert!(rep.passed(), "bgk audit failed: {:?}", rep.failures());
            let gap = rep
                .checks
                .iter()
                .find(|c| c.name == "L3.gap_measured")
                .unwrap()
                .measured;
            assert_abs_diff_eq!(gap, 1.0, epsilon = 1e-9);

            let vf = variable_frequency_model(b.clone(), 1.0, 1.0).unwrap();
            let rep = audit_l1_l4(&vf, &rot, &xis);
            assert!(rep.passed(), "vf audit failed: {:?}", rep.failures());

            let q = bgk_quadratic(b, 1.0);
            let rep = audit_b1_b3(&q, &rot, 32, 0.0, 42);
            assert!(rep.passed(), "Q audit failed: {:?}", rep.failures());
        }
    }

    #[test]
    fn asymmetrized_operator_fails_the_symmetry_check() {
        let b = basis(3, 6);
        let mut op = bgk_linear(b, 1.0);
        op.matrix[(0, 1)] += 1e-3; // rank-1-ish defect
        let rep = audit_l1_l4(&op, &[], &[]);
        assert!(!rep.passed());
        assert!(rep.failures().iter().any(|c| c.name == "L1.symmetry"));
    }

    #[test]
    fn quadratic_matches_finite_difference_of_maxwellian_map() {
        let b = basis(3, 6);
        let q = bgk_quadratic(b.clone(), 1.0);
        // A smooth fluctuation with all moments active.
        let g = b.project_function(|v| {
            0.4 * v[0] - 0.2 * v[1] + 0.3 * (v.iter().map(|x| x * x).sum::<f64>() - 3.0) / 3.0
        });
        let gc = g.map(|x| Complex64::new(x, 0.0));
        let qgg = q.apply(&gc, &gc);

        let mom = |f: &RVec| {
            let fc = f.map(|x| Complex64::new(x, 0.0));
            let mm = moments(&b, &fc);
            let r = 1.0 + mm.rho.re;
            let ubar: Vec<f64> = mm.u.iter().map(|c| c.re).collect();
            let u: Vec<f64> = ubar.iter().map(|x| x / r).collect();
            let e2 = 3.0 + 3.0 * (mm.rho.re + mm.theta.re);
            let t = (e2 - r * u.iter().map(|x| x * x).sum::<f64>() * 1.0) / (3.0 * r);
            (r, u, t)
        };

        let mut errs = Vec::new();
        for &eps in &[1e-2, 5e-3, 2.5e-3] {
            let gp = &g * eps;
            let gm = &g * (-eps);
            let (rp, up, tp) = mom(&gp);
            let (rm, um, tm) = mom(&gm);
            let mp = maxwellian_coeffs(&b, rp, &up, tp);
            let mm_ = maxwellian_coeffs(&b, rm, &um, tm);
            let m0 = maxwellian_coeffs(&b, 1.0, &[0.0; 3], 1.0);
            let fd = (&mp - &m0 * 2.0 + &mm_) / (2.0 * eps * eps);
            let err = (0..b.len())
                .map(|i| (fd[i] - qgg[i].re).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // O(eps^2) convergence of the second difference.
        let slope = (errs[0] / errs[2]).log2() / 2.0;
        assert!(slope > 1.7, "errors {errs:?} give slope {slope}");
        assert!(errs[2] < 1e-6);
    }

    #[test]
    fn quadratic_annihilates_pure_density() {
        // rho never enters the closed form: Q(mu-direction, anything) = 0
        // when the partner carries no velocity/temperature content.
        let b = basis(2, 6);
        let q = bgk_quadratic(b.clone(), 1.0);
        let mu = b
            .project_function(|_| 1.0)
            .map(|x| Complex64::new(x, 0.0));
        let out = q.apply(&mu, &mu);
        assert!(out.map(|c| c.norm()).max() < 1e-14);
    }
}
