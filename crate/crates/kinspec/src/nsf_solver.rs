//! Pseudo-spectral incompressible Navier-Stokes-Fourier solver on the torus
//! lattice, the kinetic lifting of macroscopic states, well-prepared
//! initialization, and the mild-form (Duhamel) residual check against the
//! closed-form limiting semigroups.

use crate::collision_models::{BilinearCollisionOperator, LinearCollisionOperator};
use crate::linalg::{complexify, CMat, CVec, RMat};
use crate::semigroup_engine::SemigroupError;
use crate::spectral_analysis::{p0_matrix, p1_contracted, Branch, SpectralError};
use crate::transport_coefficients::{LPseudoInverse, TransportError};
use crate::velocity_space::{macro_lift, moments, HermiteBasis, MacroMoments};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NsfError {
    #[error("invariant `{name}` violated by {dev:.3e}")]
    Invariant { name: &'static str, dev: f64 },
    #[error("blow-up guard tripped at t = {t}: ||u||_Hs = {norm:.3e} > 1e6")]
    Blowup { t: f64, norm: f64 },
    #[error("lattice mismatch: {0}")]
    LatticeMismatch(&'static str),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Fourier lattice of the torus [0, lam)^d: n points per axis, wave vectors
/// (2 pi / lam) k with signed integer components k in [-n/2, n/2).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub d: usize,
    pub n: usize,
    pub lam: f64,
}

impl Lattice {
    pub fn new(d: usize, n: usize, lam: f64) -> Self {
        assert!(d == 2 || d == 3, "lattice supports d = 2, 3");
        assert!(n >= 4, "need at least 4 points per axis");
        assert!(lam > 0.0);
        Lattice { d, n, lam }
    }

    /// Total number of lattice modes (= spatial grid points), n^d.
    pub fn modes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Per-axis integer coordinates (0..n) of a flat index.
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rem = idx;
        for a in 0..self.d {
            c[a] = rem % self.n;
            rem /= self.n;
        }
        c
    }

    pub fn index(&self, c: &[usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.d).rev() {
            idx = idx * self.n + c[a];
        }
        idx
    }

    /// Signed wavenumber of one axis coordinate.
    pub fn signed(&self, c: usize) -> i64 {
        let n = self.n as i64;
        let c = c as i64;
        if c <= (n - 1) / 2 {
            c
        } else {
            c - n
        }
    }

    /// Wave vector of a flat mode index.
    pub fn xi(&self, idx: usize) -> Vec<f64> {
        let c = self.coords(idx);
        let base = 2.0 * std::f64::consts::PI / self.lam;
        (0..self.d).map(|a| base * self.signed(c[a]) as f64).collect()
    }

    pub fn xi_norm(&self, idx: usize) -> f64 {
        self.xi(idx).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Index of the conjugate mode -k.
    pub fn conj_index(&self, idx: usize) -> usize {
        let c = self.coords(idx);
        let mut m = [0usize; 3];
        for a in 0..self.d {
            m[a] = (self.n - c[a]) % self.n;
        }
        self.index(&m)
    }

    /// 2/3-rule dealiasing: keep the mode iff every |k_a| <= n/3.
    pub fn keep_dealiased(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..self.d).all(|a| 3 * self.signed(c[a]).unsigned_abs() as usize <= self.n)
    }

    /// Japanese bracket <xi> = sqrt(1 + |xi|^2).
    pub fn bracket(&self, idx: usize) -> f64 {
        let r = self.xi_norm(idx);
        (1.0 + r * r).sqrt()
    }

    fn fft_axes(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let mut planner = FftPlanner::new();
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for a in 0..self.d {
            let stride = n.pow(a as u32);
            let lines = self.modes() / n;
            for l in 0..lines {
                // Base offset of line `l` along axis `a`.
                let outer = l / stride;
                let inner = l % stride;
                let base = outer * stride * n + inner;
                for (j, item) in line.iter_mut().enumerate() {
                    *item = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, item) in line.iter().enumerate() {
                    data[base + j * stride] = *item;
                }
            }
        }
    }

    /// Fourier coefficients -> grid values: f(x_j) = sum_k fhat_k e^{i xi_k . x_j}.
    pub fn to_physical(&self, fhat: &[Complex64]) -> Vec<Complex64> {
        let mut data = fhat.to_vec();
        self.fft_axes(&mut data, true);
        data
    }

    /// Grid values -> Fourier coefficients (normalized by n^d).
    pub fn to_fourier(&self, fphys: &[Complex64]) -> Vec<Complex64> {
        let mut data = fphys.to_vec();
        self.fft_axes(&mut data, false);
        let scale = 1.0 / self.modes() as f64;
        for z in &mut data {
            *z *= scale;
        }
        data
    }
}

/// Leray projection per mode: u <- (Id - xihat (x) xihat) u for xi != 0.
pub fn leray_project(lat: &Lattice, u: &mut [Vec<Complex64>]) {
    for idx in 0..lat.modes() {
        let xi = lat.xi(idx);
        let r2: f64 = xi.iter().map(|x| x * x).sum();
        if r2 == 0.0 {
            continue;
        }
        let dot: Complex64 = (0..lat.d).map(|a| u[a][idx] * xi[a]).sum();
        for a in 0..lat.d {
            u[a][idx] -= dot * (xi[a] / r2);
        }
    }
}

/// Macroscopic Fourier state (rho, u, theta) with the divergence-free,
/// Boussinesq (rho = -theta), and reality invariants.
#[derive(Debug, Clone)]
pub struct MacroField {
    pub lattice: Arc<Lattice>,
    pub rho: Vec<Complex64>,
    pub u: Vec<Vec<Complex64>>,
    pub theta: Vec<Complex64>,
    pub t: f64,
}

impl MacroField {
    /// Build a valid state: u is Leray-projected, rho is set to -theta, and
    /// reality is verified.
    pub fn new(
        lattice: Arc<Lattice>,
        mut u: Vec<Vec<Complex64>>,
        theta: Vec<Complex64>,
        t: f64,
    ) -> Result<Self, NsfError> {
        assert_eq!(u.len(), lattice.d);
        leray_project(&lattice, &mut u);
        let rho: Vec<Complex64> = theta.iter().map(|z| -z).collect();
        let state = MacroField { lattice, rho, u, theta, t };
        state.validate()?;
        Ok(state)
    }

    pub fn zero(lattice: Arc<Lattice>) -> Self {
        let m = lattice.modes();
        let z = vec![Complex64::new(0.0, 0.0); m];
        MacroField {
            rho: z.clone(),
            u: vec![z.clone(); lattice.d],
            theta: z,
            lattice,
            t: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), NsfError> {
        let lat = &self.lattice;
        let scale = self
            .u
            .iter()
            .flat_map(|f| f.iter())
            .chain(self.theta.iter())
            .map(|z| z.norm())
            .fold(f64::MIN_POSITIVE, f64::max);
        let mut reality: f64 = 0.0;
        let mut divfree: f64 = 0.0;
        let mut bouss: f64 = 0.0;
        for idx in 0..lat.modes() {
            let cj = lat.conj_index(idx);
            for field in self.u.iter().chain([&self.rho, &self.theta]) {
                reality = reality.max((field[idx] - field[cj].conj()).norm());
            }
            let xi = lat.xi(idx);
            let r: f64 = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: Complex64 = (0..lat.d).map(|a| self.u[a][idx] * xi[a]).sum();
            if r > 0.0 {
                // Relative to the overall field scale: FFT roundoff puts
                // absolute-size residue on individually tiny modes.
                divfree = divfree.max(dot.norm() / (r * scale));
            }
            bouss = bouss.max((self.rho[idx] + self.theta[idx]).norm());
        }
        if reality > 1e-10 * scale {
            return Err(NsfError::Invariant { name: "reality", dev: reality / scale });
        }
        if divfree > 1e-10 {
            return Err(NsfError::Invariant { name: "divergence-free", dev: divfree });
        }
        if bouss > 1e-10 * scale {
            return Err(NsfError::Invariant { name: "boussinesq", dev: bouss / scale });
        }
        Ok(())
    }

    /// Sobolev norm of the velocity: sqrt(sum <xi>^{2s} |u|^2).
    pub fn hs_norm_u(&self, s: f64) -> f64 {
        let lat = &self.lattice;
        (0..lat.modes())
            .map(|idx| {
                let w = lat.bracket(idx).powf(2.0 * s);
                w * (0..lat.d).map(|a| self.u[a][idx].norm_sqr()).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Kinetic energy sum |u-hat|^2 (Parseval, lattice normalization).
    pub fn energy(&self) -> f64 {
        (0..self.lattice.modes())
            .map(|idx| (0..self.lattice.d).map(|a| self.u[a][idx].norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Enstrophy-type dissipation sum |xi|^2 |u-hat|^2.
    pub fn grad_energy(&self) -> f64 {
        (0..self.lattice.modes())
            .map(|idx| {
                let r = self.lattice.xi_norm(idx);
                r * r * (0..self.lattice.d).map(|a| self.u[a][idx].norm_sqr()).sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NsfScheme {
    /// Integrating-factor Heun (second order).
    Rk2,
    /// Integrating-factor classical Runge-Kutta (fourth order).
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Dealiasing {
    TwoThirds,
    None,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NsfConfig {
    pub kappa_inc: f64,
    pub kappa_bou: f64,
    pub theta_inc: f64,
    pub theta_bou: f64,
    pub dt: f64,
    pub scheme: NsfScheme,
    pub dealias: Dealiasing,
    /// Sobolev index for the blow-up guard.
    pub s: f64,
}

#[derive(Debug, Clone)]
pub struct NsfTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MacroField>,
    pub energy: Vec<f64>,
    pub grad_energy: Vec<f64>,
    pub config: NsfConfig,
}

/// Nonlinear right sides in Fourier variables:
/// du = -theta_inc Leray[i xi . (u (x) u)], dtheta = -theta_bou i xi . (u theta),
/// products evaluated pseudo-spectrally with optional 2/3 dealiasing.
fn nonlinear_rhs(
    lat: &Lattice,
    cfg: &NsfConfig,
    u: &[Vec<Complex64>],
    theta: &[Complex64],
) -> (Vec<Vec<Complex64>>, Vec<Complex64>) {
    let d = lat.d;
    let m = lat.modes();
    let u_phys: Vec<Vec<Complex64>> = (0..d).map(|a| lat.to_physical(&u[a])).collect();
    let th_phys = lat.to_physical(theta);
    // Symmetric product tensor (u u)_ab and flux (u theta)_a, back in Fourier.
    let mut uu = vec![vec![Vec::new(); d]; d];
    let mut uth = Vec::with_capacity(d);
    for a in 0..d {
        for b in a..d {
            let prod: Vec<Complex64> =
                (0..m).map(|j| u_phys[a][j] * u_phys[b][j]).collect();
            let mut hat = lat.to_fourier(&prod);
            dealias(lat, cfg, &mut hat);
            uu[a][b] = hat.clone();
            uu[b][a] = hat;
        }
        let prod: Vec<Complex64> = (0..m).map(|j| u_phys[a][j] * th_phys[j]).collect();
        let mut hat = lat.to_fourier(&prod);
        dealias(lat, cfg, &mut hat);
        uth.push(hat);
    }
    let mut du = vec![vec![Complex64::new(0.0, 0.0); m]; d];
    let mut dth = vec![Complex64::new(0.0, 0.0); m];
    for idx in 0..m {
        let xi = lat.xi(idx);
        for a in 0..d {
            let mut div = Complex64::new(0.0, 0.0);
            for b in 0..d {
                div += Complex64::new(0.0, xi[b]) * uu[a][b][idx];
            }
            du[a][idx] = -cfg.theta_inc * div;
        }
        let mut divth = Complex64::new(0.0, 0.0);
        for b in 0..d {
            divth += Complex64::new(0.0, xi[b]) * uth[b][idx];
        }
        dth[idx] = -cfg.theta_bou * divth;
    }
    leray_project(lat, &mut du);
    (du, dth)
}

fn dealias(lat: &Lattice, cfg: &NsfConfig, hat: &mut [Complex64]) {
    if cfg.dealias == Dealiasing::TwoThirds {
        for (idx, z) in hat.iter_mut().enumerate() {
            if !lat.keep_dealiased(idx) {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }
}

struct HeatFactors {
    eu: Vec<f64>,
    eth: Vec<f64>,
}

fn heat_factors(lat: &Lattice, cfg: &NsfConfig, dt: f64) -> HeatFactors {
    let eu = (0..lat.modes())
        .map(|idx| {
            let r = lat.xi_norm(idx);
            (-cfg.kappa_inc * r * r * dt).exp()
        })
        .collect();
    let eth = (0..lat.modes())
        .map(|idx| {
            let r = lat.xi_norm(idx);
            (-cfg.kappa_bou * r * r * dt).exp()
        })
        .collect();
    HeatFactors { eu, eth }
}

type NsfState = (Vec<Vec<Complex64>>, Vec<Complex64>);

fn axpy(dst: &mut NsfState, c: f64, src: &NsfState) {
    for (da, sa) in dst.0.iter_mut().zip(&src.0) {
        for (z, w) in da.iter_mut().zip(sa) {
            *z += w * c;
        }
    }
    for (z, w) in dst.1.iter_mut().zip(&src.1) {
        *z += w * c;
    }
}

fn scaled(state: &NsfState, hf: &HeatFactors) -> NsfState {
    let u = state
        .0
        .iter()
        .map(|f| f.iter().zip(&hf.eu).map(|(z, &e)| z * e).collect())
        .collect();
    let th = state.1.iter().zip(&hf.eth).map(|(z, &e)| z * e).collect();
    (u, th)
}

/// Integrate the incompressible NSF system with the integrating-factor
/// scheme: heat factors exact per mode, nonlinearity pseudo-spectral.
/// The trajectory stores every step (the mild-form residual check needs the
/// full history).
pub fn nsf_integrate(
    state: &MacroField,
    cfg: &NsfConfig,
    t_end: f64,
) -> Result<NsfTrajectory, NsfError> {
    state.validate()?;
    let lat = state.lattice.clone();
    let n_steps = (t_end / cfg.dt).round() as usize;
    assert!(
        (n_steps as f64 * cfg.dt - t_end).abs() < 1e-9 * t_end.max(1.0),
        "t_end must be an integer number of steps"
    );
    let e_full = heat_factors(&lat, cfg, cfg.dt);
    let e_half = heat_factors(&lat, cfg, cfg.dt * 0.5);
    let mut times = vec![state.t];
    let mut states = vec![state.clone()];
    let mut energy = vec![state.energy()];
    let mut grad_energy = vec![state.grad_energy()];
    let mut cur: NsfState = (state.u.clone(), state.theta.clone());
    let mut t = state.t;
    let dt = cfg.dt;
    for _ in 0..n_steps {
        let next = match cfg.scheme {
            NsfScheme::Rk2 => {
                // Heun with integrating factor.
                let k1 = nonlinear_rhs(&lat, cfg, &cur.0, &cur.1);
                let mut pred = cur.clone();
                axpy(&mut pred, dt, &k1);
                let pred = scaled(&pred, &e_full);
                let k2 = nonlinear_rhs(&lat, cfg, &pred.0, &pred.1);
                let mut out = cur.clone();
                axpy(&mut out, 0.5 * dt, &k1);
                let mut out = scaled(&out, &e_full);
                axpy(&mut out, 0.5 * dt, &k2);
                out
            }
            NsfScheme::Rk4 => {
                // Classical integrating-factor RK4.
                let a = nonlinear_rhs(&lat, cfg, &cur.0, &cur.1);
                let mut s1 = cur.clone();
                axpy(&mut s1, 0.5 * dt, &a);
                let s1 = scaled(&s1, &e_half);
                let b = nonlinear_rhs(&lat, cfg, &s1.0, &s1.1);
                let mut s2 = scaled(&cur, &e_half);
                axpy(&mut s2, 0.5 * dt, &b);
                let c = nonlinear_rhs(&lat, cfg, &s2.0, &s2.1);
                let mut s3 = c.clone();
                let s3h = scaled(&s3, &e_half);
                s3 = scaled(&cur, &e_full);
                axpy(&mut s3, dt, &s3h);
                let dd = nonlinear_rhs(&lat, cfg, &s3.0, &s3.1);
                let mut acc = cur.clone();
                axpy(&mut acc, dt / 6.0, &a);
                let mut out = scaled(&acc, &e_full);
                let bc = {
                    let mut v = b.clone();
                    axpy(&mut v, 1.0, &c);
                    scaled(&v, &e_half)
                };
                axpy(&mut out, dt / 3.0, &bc);
                axpy(&mut out, dt / 6.0, &dd);
                out
            }
        };
        cur = next;
        t += dt;
        let rho: Vec<Complex64> = cur.1.iter().map(|z| -z).collect();
        let snap = MacroField {
            lattice: lat.clone(),
            rho,
            u: cur.0.clone(),
            theta: cur.1.clone(),
            t,
        };
        let hn = snap.hs_norm_u(cfg.s);
        if hn > 1e6 {
            return Err(NsfError::Blowup { t, norm: hn });
        }
        energy.push(snap.energy());
        grad_energy.push(snap.grad_energy());
        times.push(t);
        states.push(snap);
    }
    Ok(NsfTrajectory { times, states, energy, grad_energy, config: *cfg })
}

/// Lift a macroscopic state to velocity coefficients per lattice mode:
/// f = (rho + u.v + theta (|v|^2 - E)/(E(K-1))) mu.
pub fn lift_to_kinetic(
    state: &MacroField,
    basis: &Arc<HermiteBasis>,
) -> crate::kinetic_solver::KineticField {
    let lat = &state.lattice;
    let coeffs: Vec<CVec> = (0..lat.modes())
        .map(|idx| {
            let mm = MacroMoments {
                rho: state.rho[idx],
                u: (0..lat.d).map(|a| state.u[a][idx]).collect(),
                theta: state.theta[idx],
            };
            macro_lift(basis, &mm)
        })
        .collect();
    crate::kinetic_solver::KineticField {
        lattice: state.lattice.clone(),
        basis: basis.clone(),
        coeffs,
        eps: 0.0,
        t: state.t,
    }
}

/// Well-prepared macroscopic initialization of a kinetic field:
/// u(0) = Leray[u[f]], theta(0) = (theta[f] - (K-1) rho[f]) / K, rho = -theta.
pub fn well_prepared_init(
    f: &crate::kinetic_solver::KineticField,
) -> Result<MacroField, NsfError> {
    let lat = f.lattice.clone();
    let basis = &f.basis;
    let k = basis.k_const;
    let m = lat.modes();
    let mut u = vec![vec![Complex64::new(0.0, 0.0); m]; lat.d];
    let mut theta = vec![Complex64::new(0.0, 0.0); m];
    for idx in 0..m {
        let mm = moments(basis, &f.coeffs[idx]);
        for a in 0..lat.d {
            u[a][idx] = mm.u[a];
        }
        theta[idx] = (mm.theta - mm.rho * (k - 1.0)) / k;
    }
    MacroField::new(lat, u, theta, f.t)
}

/// Cached per-mode symbols of the limiting semigroups over one lattice.
pub struct DuhamelEngine {
    lat: Arc<Lattice>,
    basis: Arc<HermiteBasis>,
    kappa_inc: f64,
    kappa_bou: f64,
    /// Per mode (xi != 0): zeroth-order diffusive projectors.
    p0: Vec<Option<(CMat, CMat)>>,
    /// Per mode (xi != 0): first-order projector rows.
    p1: Vec<Option<(CMat, CMat)>>,
}

impl DuhamelEngine {
    pub fn new(
        op: &LinearCollisionOperator,
        lat: Arc<Lattice>,
        kappa_inc: f64,
        kappa_bou: f64,
    ) -> Result<Self, NsfError> {
        let basis = op.basis.clone();
        let linv = LPseudoInverse::new(op)?;
        let mut p0 = Vec::with_capacity(lat.modes());
        let mut p1 = Vec::with_capacity(lat.modes());
        for idx in 0..lat.modes() {
            let xi = lat.xi(idx);
            let r = lat.xi_norm(idx);
            if r == 0.0 {
                p0.push(None);
                p1.push(None);
                continue;
            }
            let omega: Vec<f64> = xi.iter().map(|x| x / r).collect();
            let cplx = |m: &RMat| complexify(m);
            p0.push(Some((
                cplx(&p0_matrix(&basis, Branch::Inc, &omega)),
                cplx(&p0_matrix(&basis, Branch::Bou, &omega)),
            )));
            p1.push(Some((
                cplx(&p1_contracted(&basis, &linv, Branch::Inc, &omega)),
                cplx(&p1_contracted(&basis, &linv, Branch::Bou, &omega)),
            )));
        }
        Ok(DuhamelEngine { lat, basis, kappa_inc, kappa_bou, p0, p1 })
    }

    /// Residual history of the mild formulation: per output time,
    /// || f(t) - U_ns(t) f_ini - int_0^t div V_ns(t - tau) Q(f, f)(tau) dtau ||
    /// in the H^s_x(H_v) norm, with trapezoidal quadrature at the solver step.
    /// The mean mode is excluded (constant on both sides).
    pub fn residual_history(
        &self,
        traj: &NsfTrajectory,
        q: &BilinearCollisionOperator,
        s: f64,
    ) -> Result<Vec<(f64, f64)>, NsfError> {
        let lat = &self.lat;
        let nb = self.basis.len();
        let m = lat.modes();
        let nt = traj.times.len();
        if traj.states[0].lattice.as_ref() != lat.as_ref() {
            return Err(NsfError::LatticeMismatch("trajectory vs engine lattice"));
        }
        // Lift every state, and evaluate P1_* Q(f, f) per (time, mode).
        let lifted: Vec<Vec<CVec>> = traj
            .states
            .iter()
            .map(|st| lift_to_kinetic(st, &self.basis).coeffs)
            .collect();
        let mut p1q_inc = vec![vec![CVec::zeros(nb); m]; nt];
        let mut p1q_bou = vec![vec![CVec::zeros(nb); m]; nt];
        for it in 0..nt {
            let qhat = quadratic_transform(lat, &self.basis, q, &lifted[it]);
            for idx in 0..m {
                if let (Some((p1i, p1b)), qv) = (&self.p1[idx], &qhat[idx]) {
                    p1q_inc[it][idx] = p1i * qv;
                    p1q_bou[it][idx] = p1b * qv;
                }
            }
        }
        let dt = traj.config.dt;
        let mut out = Vec::with_capacity(nt);
        for it in 0..nt {
            let t = traj.times[it] - traj.times[0];
            let mut acc = 0.0;
            for idx in 0..m {
                let Some((p0i, p0b)) = &self.p0[idx] else { continue };
                let r = lat.xi_norm(idx);
                let hi = |dtau: f64| (-self.kappa_inc * r * r * dtau).exp();
                let hb = |dtau: f64| (-self.kappa_bou * r * r * dtau).exp();
                let mut rhs = p0i * &lifted[0][idx] * Complex64::new(hi(t), 0.0)
                    + p0b * &lifted[0][idx] * Complex64::new(hb(t), 0.0);
                let ir = Complex64::new(0.0, r);
                for jt in 0..=it {
                    let w = if jt == 0 || jt == it { 0.5 } else { 1.0 };
                    if it == 0 {
                        break;
                    }
                    let dtau = t - (traj.times[jt] - traj.times[0]);
                    rhs += (&p1q_inc[jt][idx] * Complex64::new(hi(dtau), 0.0)
                        + &p1q_bou[jt][idx] * Complex64::new(hb(dtau), 0.0))
                        * (ir * (w * dt));
                }
                let diff = &lifted[it][idx] - rhs;
                acc += lat.bracket(idx).powf(2.0 * s) * diff.norm_squared();
            }
            out.push((traj.times[it], acc.sqrt()));
        }
        Ok(out)
    }
}

/// Pointwise-in-x quadratic transform: Fourier coefficients of Q(f, f) where
/// f is given by per-mode velocity coefficient vectors.
pub fn quadratic_transform(
    lat: &Lattice,
    basis: &HermiteBasis,
    q: &BilinearCollisionOperator,
    fhat: &[CVec],
) -> Vec<CVec> {
    let nb = basis.len();
    let m = lat.modes();
    // Velocity coefficient planes to physical space.
    let mut planes: Vec<Vec<Complex64>> = Vec::with_capacity(nb);
    for c in 0..nb {
        let plane: Vec<Complex64> = (0..m).map(|idx| fhat[idx][c]).collect();
        planes.push(lat.to_physical(&plane));
    }
    // Quadratic form at each grid node.
    let mut q_planes = vec![vec![Complex64::new(0.0, 0.0); m]; nb];
    for j in 0..m {
        let fv = CVec::from_fn(nb, |c, _| planes[c][j]);
        let qv = q.apply(&fv, &fv);
        for c in 0..nb {
            q_planes[c][j] = qv[c];
        }
    }
    // Back to Fourier, with 2/3 dealiasing of the quadratic product.
    let mut out = vec![CVec::zeros(nb); m];
    for (c, qp) in q_planes.iter().enumerate() {
        let hat = lat.to_fourier(qp);
        for idx in 0..m {
            out[idx][c] = if lat.keep_dealiased(idx) {
                hat[idx]
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    }
    out
}

/// Trajectory CSV: one row per (t, mode, field) with fields rho/u0../theta.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &NsfTrajectory) -> Result<(), NsfError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t", "mode", "field", "re", "im"])?;
    let lat = &traj.states[0].lattice;
    for (it, st) in traj.states.iter().enumerate() {
        let t = traj.times[it];
        for idx in 0..lat.modes() {
            let mut fields: Vec<(String, Complex64)> =
                vec![("rho".to_string(), st.rho[idx])];
            for a in 0..lat.d {
                fields.push((format!("u{a}"), st.u[a][idx]));
            }
            fields.push(("theta".to_string(), st.theta[idx]));
            for (name, z) in fields {
                wtr.write_record([
                    format!("{t:.12e}"),
                    idx.to_string(),
                    name,
                    format!("{:.12e}", z.re),
                    format!("{:.12e}", z.im),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// JSON run summary: energy/dissipation histories and optional residuals.
#[derive(Debug, Clone, Serialize)]
pub struct NsfSummary {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub grad_energy: Vec<f64>,
    pub residuals: Option<Vec<(f64, f64)>>,
}
