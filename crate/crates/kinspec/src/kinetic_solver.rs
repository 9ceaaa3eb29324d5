//! Scaled kinetic solver on the torus lattice: exponential time
//! differencing with exact per-mode linear propagation, the quadratic
//! collision term evaluated pointwise in space, and the decomposition of
//! solutions into diffusive, acoustic, and kinetic parts.

use crate::collision_models::{BilinearCollisionOperator, LinearCollisionOperator};
use crate::linalg::{self, CMat, CVec, LinalgError};
use crate::nsf_solver::{quadratic_transform, Lattice, NsfError, NsfTrajectory};
use crate::parallel::par_map;
use crate::semigroup_engine::{LimitClosure, ModePropagator, SemigroupError};
use crate::spectral_analysis::{assemble_mode, mode_eigensystem, SpectralError};
use crate::velocity_space::{moments, HermiteBasis, MacroMoments};
use num_complex::Complex64;
use serde::Serialize;
use std::io::{Read, Write};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("blow-up guard tripped at t = {t}: ||f|| = {norm:.3e} > {bound:.3e}")]
    Blowup { t: f64, norm: f64, bound: f64 },
    #[error("time {t} of the kinetic output has no matching macroscopic state")]
    TimeMismatch { t: f64 },
    #[error("snapshot stream is malformed: {0}")]
    Snapshot(&'static str),
    #[error(transparent)]
    Nsf(#[from] NsfError),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Velocity-coefficient field over the lattice: one coefficient vector per
/// Fourier mode, at scaling parameter `eps` and time `t`.
#[derive(Debug, Clone)]
pub struct KineticField {
    pub lattice: Arc<Lattice>,
    pub basis: Arc<HermiteBasis>,
    pub coeffs: Vec<CVec>,
    pub eps: f64,
    pub t: f64,
}

impl KineticField {
    pub fn zero(lattice: Arc<Lattice>, basis: Arc<HermiteBasis>, eps: f64) -> Self {
        let coeffs = vec![CVec::zeros(basis.len()); lattice.modes()];
        KineticField { lattice, basis, coeffs, eps, t: 0.0 }
    }

    /// Mixed Sobolev norm sqrt(sum_k <xi_k>^{2s} ||fhat_k||^2).
    pub fn hs_hv_norm(&self, s: f64) -> f64 {
        (0..self.lattice.modes())
            .map(|idx| {
                self.lattice.bracket(idx).powf(2.0 * s) * self.coeffs[idx].norm_squared()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Largest violation of the reality symmetry fhat(-k) = conj fhat(k).
    pub fn reality_defect(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for idx in 0..self.lattice.modes() {
            let cj = self.lattice.conj_index(idx);
            for c in 0..self.basis.len() {
                dev = dev.max((self.coeffs[idx][c] - self.coeffs[cj][c].conj()).norm());
            }
        }
        dev
    }

    /// Macroscopic moments of the spatial mean mode.
    pub fn mean_moments(&self) -> MacroMoments {
        let idx0 = self.lattice.index(&[0, 0, 0]);
        moments(&self.basis, &self.coeffs[idx0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EtdScheme {
    Euler,
    Rk2,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KineticConfig {
    pub dt: f64,
    pub scheme: EtdScheme,
    /// Sobolev index for norms and the blow-up guard.
    pub s: f64,
    /// Blow-up guard: abort when ||f|| > c0 / eps.
    pub c0: f64,
    /// Keep every k-th step in the trajectory (the initial and final states
    /// are always kept).
    pub output_every: usize,
}

#[derive(Debug, Clone)]
pub struct KineticTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<KineticField>,
    pub norms: Vec<f64>,
    pub config: KineticConfig,
}

/// phi2(z) = (e^z - 1 - z) / z^2 with a series branch near zero.
fn phi2(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        // 1/2 + z/6 + z^2/24 + z^3/120; truncation error ~ |z|^4/720.
        Complex64::new(0.5, 0.0)
            + z * (Complex64::new(1.0 / 6.0, 0.0)
                + z * (Complex64::new(1.0 / 24.0, 0.0) + z / 120.0))
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}

struct ModeCache {
    /// e^{dt M} with M = (L - i eps xi . v) / eps^2.
    exp: CMat,
    /// dt phi1(dt M).
    p1: CMat,
    /// dt phi2(dt M) (only built for the two-stage scheme).
    p2: Option<CMat>,
}

fn build_caches(
    op: &LinearCollisionOperator,
    lat: &Lattice,
    eps: f64,
    cfg: &KineticConfig,
) -> Result<Vec<ModeCache>, KineticError> {
    let caches = par_map(lat.modes(), |idx| -> Result<ModeCache, LinalgError> {
        let xi = lat.xi(idx);
        let exi: Vec<f64> = xi.iter().map(|x| eps * x).collect();
        let mode = assemble_mode(op, &exi);
        let m = mode.matrix / Complex64::new(eps * eps, 0.0);
        let eig = linalg::eig(&m)?;
        let dt = cfg.dt;
        let exp = eig.exp(dt);
        let p1 = eig.apply_fn(|l| linalg::phi1(l * dt) * dt);
        let p2 = match cfg.scheme {
            EtdScheme::Euler => None,
            EtdScheme::Rk2 => Some(eig.apply_fn(|l| phi2(l * dt) * dt)),
        };
        Ok(ModeCache { exp, p1, p2 })
    });
    caches
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(KineticError::from)
}

/// Fourier coefficients of the scaled collision term (1/eps) Q(f, f).
fn nonlinear(
    lat: &Lattice,
    basis: &HermiteBasis,
    q: &BilinearCollisionOperator,
    eps: f64,
    coeffs: &[CVec],
) -> Vec<CVec> {
    let mut out = quadratic_transform(lat, basis, q, coeffs);
    let scale = Complex64::new(1.0 / eps, 0.0);
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Integrate the scaled kinetic equation with exponential time differencing:
/// the per-mode linear flow is exact, the collision nonlinearity enters
/// through phi-function weights (first order for `Euler`, second order for
/// `Rk2`). Passing `q = None` drops the nonlinearity, making the scheme
/// exact for the linearized equation at any step size.
pub fn kinetic_integrate(
    f0: &KineticField,
    op: &LinearCollisionOperator,
    q: Option<&BilinearCollisionOperator>,
    cfg: &KineticConfig,
    t_end: f64,
) -> Result<KineticTrajectory, KineticError> {
    let lat = f0.lattice.clone();
    let basis = f0.basis.clone();
    let eps = f0.eps;
    assert!(eps > 0.0, "eps must be positive");
    assert!(cfg.output_every >= 1);
    let n_steps = (t_end / cfg.dt).round() as usize;
    assert!(
        (n_steps as f64 * cfg.dt - t_end).abs() < 1e-9 * t_end.max(1.0),
        "t_end must be an integer number of steps"
    );
    let caches = build_caches(op, &lat, eps, cfg)?;
    let bound = cfg.c0 / eps;
    let mut cur = f0.coeffs.clone();
    let mut t = f0.t;
    let mut times = vec![t];
    let mut states = vec![f0.clone()];
    let mut norms = vec![f0.hs_hv_norm(cfg.s)];
    for step in 1..=n_steps {
        let next: Vec<CVec> = match q {
            None => par_map(lat.modes(), |idx| &caches[idx].exp * &cur[idx]),
            Some(q) => {
                let n0 = nonlinear(&lat, &basis, q, eps, &cur);
                match cfg.scheme {
                    EtdScheme::Euler => par_map(lat.modes(), |idx| {
                        &caches[idx].exp * &cur[idx] + &caches[idx].p1 * &n0[idx]
                    }),
                    EtdScheme::Rk2 => {
                        let a: Vec<CVec> = par_map(lat.modes(), |idx| {
                            &caches[idx].exp * &cur[idx] + &caches[idx].p1 * &n0[idx]
                        });
                        let na = nonlinear(&lat, &basis, q, eps, &a);
                        par_map(lat.modes(), |idx| {
                            let p2 = caches[idx].p2.as_ref().unwrap();
                            &a[idx] + p2 * &(&na[idx] - &n0[idx])
                        })
                    }
                }
            }
        };
        cur = next;
        t = f0.t + step as f64 * cfg.dt;
        let snap = KineticField {
            lattice: lat.clone(),
            basis: basis.clone(),
            coeffs: cur.clone(),
            eps,
            t,
        };
        let norm = snap.hs_hv_norm(cfg.s);
        if norm > bound {
            return Err(KineticError::Blowup { t, norm, bound });
        }
        if step % cfg.output_every == 0 || step == n_steps {
            times.push(t);
            norms.push(norm);
            states.push(snap);
        }
    }
    Ok(KineticTrajectory { times, states, norms, config: *cfg })
}

/// One output time of the solution decomposition, with all norms taken in
/// the mixed Sobolev norm of the trajectory configuration.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionRow {
    pub t: f64,
    pub eps: f64,
    pub norm_total: f64,
    /// || f - (lifted macroscopic solution) ||.
    pub norm_ns_gap: f64,
    pub norm_disp: f64,
    pub norm_kin: f64,
    /// || f - f_ns - f_disp - f_kin ||.
    pub norm_err: f64,
}

/// Decompose a kinetic trajectory against a macroscopic trajectory on the
/// same lattice: f = f_ns + f_disp + f_kin + f_err, where f_ns is the lifted
/// macroscopic solution, f_disp the dispersive acoustic semigroup applied to
/// the initial data, and f_kin the kinetic part of the split propagator
/// applied to the initial data.
pub fn decompose_solution(
    op: &LinearCollisionOperator,
    traj: &KineticTrajectory,
    macro_traj: &NsfTrajectory,
    alpha0: f64,
    lambda_window: f64,
) -> Result<Vec<DecompositionRow>, KineticError> {
    let f0 = &traj.states[0];
    let lat = f0.lattice.clone();
    let basis = f0.basis.clone();
    let eps = f0.eps;
    let s = traj.config.s;
    let nb = basis.len();
    let closure = LimitClosure::new(op)?;
    // Per-mode caches: the full propagator at eps xi and the kinetic
    // complement of the pseudo-hydrodynamic projector (time independent).
    struct Cache {
        prop: ModePropagator,
        ikin: CMat,
    }
    let caches = par_map(lat.modes(), |idx| -> Result<Cache, KineticError> {
        let xi = lat.xi(idx);
        let exi: Vec<f64> = xi.iter().map(|x| eps * x).collect();
        let r = lat.xi_norm(idx) * eps;
        let prop = ModePropagator::new(op, &exi)?;
        let id = CMat::identity(nb, nb);
        let ikin = if r > alpha0 {
            id
        } else if r == 0.0 {
            let p = crate::linalg::complexify(basis.p_matrix());
            id - p
        } else {
            let sys = mode_eigensystem(op, &exi, lambda_window)?;
            id - sys.total_projector(r)?
        };
        Ok(Cache { prop, ikin })
    });
    let caches = caches.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(traj.times.len());
    for (it, state) in traj.states.iter().enumerate() {
        let t_rel = traj.times[it] - traj.times[0];
        // Matching macroscopic state.
        let jm = macro_traj
            .times
            .iter()
            .position(|&tm| (tm - traj.times[it]).abs() < 1e-9)
            .ok_or(KineticError::TimeMismatch { t: traj.times[it] })?;
        let f_ns = crate::nsf_solver::lift_to_kinetic(&macro_traj.states[jm], &basis);
        let mut tot = 0.0;
        let mut gap = 0.0;
        let mut disp = 0.0;
        let mut kin = 0.0;
        let mut err = 0.0;
        for idx in 0..lat.modes() {
            let xi = lat.xi(idx);
            let r = lat.xi_norm(idx);
            let w = lat.bracket(idx).powf(2.0 * s);
            let f = &state.coeffs[idx];
            let f_ini = &f0.coeffs[idx];
            let fd = if r > 0.0 && r * eps <= alpha0 {
                &closure.u_disp(t_rel, &xi, eps) * f_ini
            } else {
                CVec::zeros(nb)
            };
            let s_fast = t_rel / (eps * eps);
            let fk = caches[idx].prop.exp(s_fast) * (&caches[idx].ikin * f_ini);
            let fns = &f_ns.coeffs[idx];
            tot += w * f.norm_squared();
            gap += w * (f - fns).norm_squared();
            disp += w * fd.norm_squared();
            kin += w * fk.norm_squared();
            err += w * (f - fns - fd - fk).norm_squared();
        }
        rows.push(DecompositionRow {
            t: traj.times[it],
            eps,
            norm_total: tot.sqrt(),
            norm_ns_gap: gap.sqrt(),
            norm_disp: disp.sqrt(),
            norm_kin: kin.sqrt(),
            norm_err: err.sqrt(),
        });
    }
    Ok(rows)
}

/// Decomposition CSV: one row per output time.
pub fn write_decomposition_csv<W: Write>(
    out: W,
    rows: &[DecompositionRow],
) -> Result<(), KineticError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "t",
        "eps",
        "norm_total",
        "norm_ns_gap",
        "norm_disp",
        "norm_kin",
        "norm_err",
    ])?;
    for r in rows {
        wtr.write_record([
            format!("{:.12e}", r.t),
            format!("{:.12e}", r.eps),
            format!("{:.12e}", r.norm_total),
            format!("{:.12e}", r.norm_ns_gap),
            format!("{:.12e}", r.norm_disp),
            format!("{:.12e}", r.norm_kin),
            format!("{:.12e}", r.norm_err),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"KINSNAP1";

/// Little-endian binary snapshot of a kinetic field: magic, dimensions,
/// eps and t, then interleaved re/im coefficient planes.
pub fn write_snapshot<W: Write>(mut out: W, f: &KineticField) -> Result<(), KineticError> {
    out.write_all(SNAPSHOT_MAGIC)?;
    for v in [f.lattice.d as u64, f.lattice.n as u64, f.basis.len() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&f.lattice.lam.to_le_bytes())?;
    out.write_all(&f.eps.to_le_bytes())?;
    out.write_all(&f.t.to_le_bytes())?;
    for mode in &f.coeffs {
        for z in mode.iter() {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a snapshot previously written by [`write_snapshot`]; the basis must
/// match the stored coefficient count.
pub fn read_snapshot<R: Read>(
    mut inp: R,
    basis: Arc<HermiteBasis>,
) -> Result<KineticField, KineticError> {
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(KineticError::Snapshot("bad magic"));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |inp: &mut R| -> Result<u64, std::io::Error> {
        inp.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let d = read_u64(&mut inp)? as usize;
    let n = read_u64(&mut inp)? as usize;
    let nb = read_u64(&mut inp)? as usize;
    if nb != basis.len() {
        return Err(KineticError::Snapshot("coefficient count mismatch"));
    }
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |inp: &mut R| -> Result<f64, std::io::Error> {
        inp.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let lam = read_f64(&mut inp)?;
    let eps = read_f64(&mut inp)?;
    let t = read_f64(&mut inp)?;
    let lat = Arc::new(Lattice::new(d, n, lam));
    let mut coeffs = Vec::with_capacity(lat.modes());
    for _ in 0..lat.modes() {
        let mut v = CVec::zeros(nb);
        for c in 0..nb {
            let re = read_f64(&mut inp)?;
            let im = read_f64(&mut inp)?;
            v[c] = Complex64::new(re, im);
        }
        coeffs.push(v);
    }
    Ok(KineticField { lattice: lat, basis, coeffs, eps, t })
}
