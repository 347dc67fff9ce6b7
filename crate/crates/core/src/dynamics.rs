//! Linear time-invariant agent dynamics `x(k+1) = A x(k) + v(k)`, process
//! noise sampling, and the matrix primitives the bounds are built on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const CHOLESKY_JITTER: f64 = 1e-12;

const POWER_ITER_TOL: f64 = 1e-10;
const POWER_ITER_MAX: usize = 10_000;
const POWER_ITER_SQUARINGS: usize = 4;

/// Dynamics of one agent: state matrix and process noise covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    a: Matrix,
    noise_cov: Matrix,
}

impl SystemModel {
    pub fn new(a: Matrix, noise_cov: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::dim(None, format!("state matrix is {}x{}", a.nrows(), a.ncols())));
        }
        if noise_cov.shape() != (n, n) {
            return Err(Error::dim(
                None,
                format!("noise covariance is {}x{}, state dimension is {n}", noise_cov.nrows(), noise_cov.ncols()),
            ));
        }
        if a.iter().chain(noise_cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("model", "matrices must have finite entries"));
        }
        check_psd(&noise_cov)?;
        Ok(SystemModel { a, noise_cov })
    }

    /// Scalar model `x(k+1) = a x(k) + v(k)` with `v ~ N(0, variance)`.
    pub fn scalar(a: f64, variance: f64) -> Result<Self> {
        Self::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, variance))
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_trace(&self) -> f64 {
        self.noise_cov.trace()
    }

    pub fn with_a(&self, a: Matrix) -> Result<Self> {
        Self::new(a, self.noise_cov.clone())
    }

    pub fn with_noise_cov(&self, noise_cov: Matrix) -> Result<Self> {
        Self::new(self.a.clone(), noise_cov)
    }
}

fn check_psd(cov: &Matrix) -> Result<()> {
    let asym = (cov - cov.transpose()).abs().max();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotPsd { agent: None, reason: format!("asymmetry {asym:e}") });
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -PSD_TOL {
        return Err(Error::NotPsd { agent: None, reason: format!("smallest eigenvalue {min_eig:e}") });
    }
    Ok(())
}

/// True state of one agent at time `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub x: Vector,
    pub k: usize,
}

impl AgentState {
    pub fn new(x: Vector) -> Self {
        AgentState { x, k: 0 }
    }
}

/// Per-step deterministic disturbance `amplitude * sin(omega * k + phase)`
/// added to the noise mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinusoid {
    pub amplitude: Vector,
    /// Radians per step.
    pub omega: f64,
    pub phase: f64,
}

/// Distribution of the process noise `v(k) ~ N(mean(k), cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    mean: Vector,
    cov: Matrix,
    sine: Option<Sinusoid>,
    factor: Matrix,
}

impl NoiseModel {
    pub fn new(mean: Vector, cov: Matrix, sine: Option<Sinusoid>) -> Result<Self> {
        let n = cov.nrows();
        if !cov.is_square() || mean.len() != n {
            return Err(Error::dim(None, format!("noise mean has length {}, covariance is {}x{}", mean.len(), n, cov.ncols())));
        }
        if let Some(s) = &sine {
            if s.amplitude.len() != n {
                return Err(Error::dim(None, format!("disturbance amplitude has length {}, expected {n}", s.amplitude.len())));
            }
        }
        check_psd(&cov)?;
        let factor = semidefinite_cholesky(&cov)?;
        Ok(NoiseModel { mean, cov, sine, factor })
    }

    /// Zero-mean noise with the model's covariance.
    pub fn zero_mean(model: &SystemModel) -> Self {
        let cov = model.noise_cov().clone();
        let factor = semidefinite_cholesky(&cov).expect("model covariance was validated as PSD");
        NoiseModel { mean: Vector::zeros(model.dim()), cov, sine: None, factor }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn sine(&self) -> Option<&Sinusoid> {
        self.sine.as_ref()
    }

    /// Lower-triangular `L` with `L Lᵀ = cov`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn mean_at(&self, k: usize) -> Vector {
        match &self.sine {
            Some(s) => &self.mean + &s.amplitude * (s.omega * k as f64 + s.phase).sin(),
            None => self.mean.clone(),
        }
    }
}

/// Cholesky factor of a positive semi-definite matrix.
///
/// Pivots within `CHOLESKY_JITTER` (scaled by the largest diagonal entry) of
/// zero produce a zero column, so rank-deficient covariances are sampled
/// exactly on their support and the zero matrix factors to zero.
pub fn semidefinite_cholesky(cov: &Matrix) -> Result<Matrix> {
    let n = cov.nrows();
    let scale = cov.diagonal().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = CHOLESKY_JITTER * scale;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -PSD_TOL * scale {
            return Err(Error::NotPsd { agent: None, reason: format!("negative pivot {d:e} in column {j}") });
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Ok(l)
}

/// One step of `x(k+1) = A x(k) + v(k)`.
pub fn step_system(state: &AgentState, model: &SystemModel, noise: &Vector) -> Result<AgentState> {
    let n = model.dim();
    if state.x.len() != n || noise.len() != n {
        return Err(Error::dim(
            None,
            format!("state length {}, noise length {}, model dimension {n}", state.x.len(), noise.len()),
        ));
    }
    Ok(AgentState { x: model.a() * &state.x + noise, k: state.k + 1 })
}

/// Draws `mean + L z` with `z` standard normal from `rng`.
pub fn sample_noise<R: Rng + ?Sized>(noise: &NoiseModel, rng: &mut R) -> Vector {
    sample_noise_at(noise, 0, rng)
}

/// Like [`sample_noise`] but evaluates a time-varying mean at step `k`.
pub fn sample_noise_at<R: Rng + ?Sized>(noise: &NoiseModel, k: usize, rng: &mut R) -> Vector {
    let z = Vector::from_fn(noise.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    noise.mean_at(k) + noise.factor() * z
}

/// Largest singular value, by power iteration on `mᵀm`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("matrix", "non-finite entry"));
    }
    let gram = m.transpose() * m;
    let scale = gram.norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Iterate with (mᵀm)^(2^s), renormalized after each squaring, so nearly
    // equal leading singular values still separate within the budget. The
    // residual is always measured on mᵀm itself.
    let mut step = &gram / scale;
    for _ in 0..POWER_ITER_SQUARINGS {
        step = &step * &step;
        let s = step.norm();
        step /= s;
    }
    let n = gram.nrows();
    // Fixed, generic start vector: deterministic and almost surely not
    // orthogonal to the dominant singular vector.
    let mut v = Vector::from_fn(n, |i, _| 1.0 + 0.618_033_988_749_895 * ((i as f64 + 1.0) * 0.754_877_666_246_693).fract());
    v.normalize_mut();
    let mut gap = f64::INFINITY;
    for _ in 0..POWER_ITER_MAX {
        let w = &gram * &v;
        let lambda = v.dot(&w);
        if lambda > 0.0 {
            gap = (&w - &v * lambda).norm() / lambda;
            if gap <= POWER_ITER_TOL {
                return Ok(lambda.sqrt());
            }
        }
        let next = &step * &v;
        let norm = next.norm();
        v = if norm > 0.0 {
            next / norm
        } else {
            // Start landed in the null space: restart on the heaviest column.
            let j = gram.diagonal().imax();
            gram.column(j) / gram.column(j).norm()
        };
    }
    Err(Error::NoConvergence { iterations: POWER_ITER_MAX, gap })
}

/// `‖m^p‖₂`, with `m⁰ = I`.
pub fn matrix_power_norm(m: &Matrix, p: u32) -> Result<f64> {
    if p == 0 {
        return Ok(1.0);
    }
    spectral_norm(&matrix_power(m, p))
}

pub fn matrix_power(m: &Matrix, p: u32) -> Matrix {
    let mut out = Matrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

/// Least-squares estimate of `A` from a noise-free or noisy state sequence,
/// minimizing `Σ ‖x(k+1) − A x(k)‖²`.
pub fn identify_lti(states: &[Vector]) -> Result<Matrix> {
    let Some(first) = states.first() else {
        return Err(Error::RankDeficient { rank: 0, required: 1 });
    };
    let n = first.len();
    if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.len() != n) {
        return Err(Error::dim(None, format!("state {i} has length {}, expected {n}", s.len())));
    }
    let samples = states.len().saturating_sub(1);
    // Rows are regressors x(k)ᵀ; solve X Aᵀ = Y column by column.
    let x = Matrix::from_fn(samples, n, |r, c| states[r][c]);
    let y = Matrix::from_fn(samples, n, |r, c| states[r + 1][c]);
    if samples < n {
        let rank = x.rank(rank_tol(&x));
        return Err(Error::RankDeficient { rank, required: n });
    }
    // Householder QR; the rank is read off the singular values of R, which
    // are those of X.
    let tol = rank_tol(&x);
    let qr = x.qr();
    let r = qr.r();
    let rank = r.singular_values().iter().filter(|&&s| s > tol).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, required: n });
    }
    let qty = qr.q().transpose() * y;
    let a_t = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient { rank, required: n })?;
    Ok(a_t.transpose())
}

fn rank_tol(x: &Matrix) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let smax = x.singular_values().max();
    smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64
}
