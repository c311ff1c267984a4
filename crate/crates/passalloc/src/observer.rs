//! Disturbance internal model and observer gain design.
//!
//! The polluted observation `d(t) = d⁰ + Σⱼ Aⱼ·sin(ωⱼt + φⱼ)` is a trajectory
//! of the marginally stable exosystem
//!
//! ```text
//! ξ̇ = S ξ,   d = D ξ,
//! S = diag(0, [0 ω₁; −ω₁ 0], …, [0 ω_k; −ω_k 0]),
//! D = [1, 1, 0, …, 1, 0]
//! ```
//!
//! A Luenberger observer `η̇ = (S − L·D)η + L·d` reconstructs ξ; the row
//! `D_ε = [0, 1, 0, …, 1, 0]` then selects the purely sinusoidal part of the
//! estimate so the controller can subtract it from the observation. The pair
//! `(S, D)` is observable for distinct positive frequencies, so `L` can place
//! the error spectrum anywhere; `design_gain` does Ackermann placement on the
//! dual pair.

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use thiserror::Error;

type C64 = Complex<f64>;

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("frequency {w} must be strictly positive")]
    NonPositiveFrequency { w: f64 },
    #[error("duplicate frequency {w}")]
    DuplicateFrequency { w: f64 },
    #[error("expected {expected} poles for this exosystem, got {got}")]
    WrongPoleCount { expected: usize, got: usize },
    #[error("pole {re}+{im}i does not have negative real part")]
    UnstablePole { re: f64, im: f64 },
    #[error("pole list is not closed under conjugation")]
    NotConjugateClosed,
    #[error("pair (S, D) is unobservable, gain design infeasible")]
    DesignInfeasible,
    #[error(
        "closed-loop characteristic polynomial deviates from the target by \
         {relative_error:.2e} at s = {sample}"
    )]
    PlacementFailed { sample: f64, relative_error: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("gain column has {got} entries, exosystem dimension is {expected}")]
    GainDimension { got: usize, expected: usize },
}

/// Internal model of a constant-plus-sinusoids disturbance with `k` known
/// distinct frequencies. State dimension is `2k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem {
    freqs: Vec<f64>,
}

impl Exosystem {
    /// Validates that frequencies are strictly positive and pairwise
    /// distinct. `k = 0` (constant-only model) is allowed.
    pub fn new(freqs: &[f64]) -> Result<Self, ObserverError> {
        for (i, &w) in freqs.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(ObserverError::NonPositiveFrequency { w });
            }
            for &prev in &freqs[..i] {
                if (w - prev).abs() <= 1e-12 * w.max(prev) {
                    return Err(ObserverError::DuplicateFrequency { w });
                }
            }
        }
        Ok(Self {
            freqs: freqs.to_vec(),
        })
    }

    /// Bypasses validation. Exists so tests can exercise the observability
    /// check on deliberately degenerate models (e.g. a duplicated frequency).
    pub fn new_unchecked(freqs: &[f64]) -> Self {
        Self {
            freqs: freqs.to_vec(),
        }
    }

    pub fn sinusoid_count(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// State dimension `2k + 1`.
    pub fn dim(&self) -> usize {
        2 * self.freqs.len() + 1
    }

    /// Block-diagonal drift `S = diag(0, [0 ω; −ω 0], …)`.
    pub fn s_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut s = DMatrix::zeros(n, n);
        for (j, &w) in self.freqs.iter().enumerate() {
            let base = 1 + 2 * j;
            s[(base, base + 1)] = w;
            s[(base + 1, base)] = -w;
        }
        s
    }

    /// Output row `D = [1, 1, 0, …, 1, 0]`: constant state plus the first
    /// coordinate of each oscillator block.
    pub fn d_row(&self) -> RowDVector<f64> {
        let mut d = RowDVector::zeros(self.dim());
        d[0] = 1.0;
        for j in 0..self.freqs.len() {
            d[1 + 2 * j] = 1.0;
        }
        d
    }

    /// Compensation row `D_ε = [0, 1, 0, …, 1, 0]`: selects only the
    /// oscillator (sinusoidal) part of the state estimate.
    pub fn d_eps_row(&self) -> RowDVector<f64> {
        let mut d = self.d_row();
        d[0] = 0.0;
        d
    }

    /// Exact spectrum of `S`: `{0, ±iω₁, …, ±iω_k}`.
    pub fn s_eigenvalues(&self) -> Vec<C64> {
        let mut eigs = vec![C64::new(0.0, 0.0)];
        for &w in &self.freqs {
            eigs.push(C64::new(0.0, w));
            eigs.push(C64::new(0.0, -w));
        }
        eigs
    }
}

/// Observer gain `L` with the closed-loop matrix `S − L·D` and its spectral
/// abscissa cached.
#[derive(Debug, Clone)]
pub struct ObserverGain {
    l: DVector<f64>,
    closed_loop: DMatrix<f64>,
    spectral_abscissa: f64,
}

impl ObserverGain {
    /// Wraps an explicitly given gain column (no stability requirement; check
    /// [`ObserverGain::spectral_abscissa`] or [`is_hurwitz`] separately).
    pub fn from_column(exo: &Exosystem, l: &[f64]) -> Result<Self, ObserverError> {
        if l.len() != exo.dim() {
            return Err(ObserverError::GainDimension {
                got: l.len(),
                expected: exo.dim(),
            });
        }
        let l = DVector::from_row_slice(l);
        let closed_loop = exo.s_matrix() - &l * exo.d_row();
        let spectral_abscissa = spectral_abscissa(&closed_loop);
        Ok(Self {
            l,
            closed_loop,
            spectral_abscissa,
        })
    }

    pub fn l(&self) -> &DVector<f64> {
        &self.l
    }

    pub fn closed_loop(&self) -> &DMatrix<f64> {
        &self.closed_loop
    }

    pub fn spectral_abscissa(&self) -> f64 {
        self.spectral_abscissa
    }
}

/// PBH observability test for `(S, D)`: `rank [Sᵀ − λI, Dᵀ] = dim` at every
/// eigenvalue `λ` of `S`.
pub fn observability_check(exo: &Exosystem) -> bool {
    let n = exo.dim();
    let st = exo.s_matrix().transpose();
    let dt = exo.d_row().transpose();
    for lambda in exo.s_eigenvalues() {
        let mut m = DMatrix::<C64>::zeros(n, n + 1);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = C64::new(st[(i, j)], 0.0);
            }
            m[(i, i)] -= lambda;
            m[(i, n)] = C64::new(dt[i], 0.0);
        }
        if complex_rank(&m) < n {
            return false;
        }
    }
    true
}

/// Rank of a complex matrix via the real embedding `[[Re, −Im], [Im, Re]]`,
/// whose real rank is exactly twice the complex rank.
fn complex_rank(m: &DMatrix<C64>) -> usize {
    let (rows, cols) = m.shape();
    let mut real = DMatrix::zeros(2 * rows, 2 * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = m[(i, j)];
            real[(i, j)] = v.re;
            real[(i, j + cols)] = -v.im;
            real[(i + rows, j)] = v.im;
            real[(i + rows, j + cols)] = v.re;
        }
    }
    let svd = real.svd(false, false);
    let max_sv = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let eps = 1e-8 * max_sv.max(1.0);
    svd.rank(eps) / 2
}

/// Places the spectrum of `S − L·D` at the requested poles and verifies the
/// result to 1e-6.
///
/// The pole list must have length `2k + 1`, be closed under conjugation, and
/// have strictly negative real parts.
///
/// With `q(s) = det(sI − S)` and `r(s) = D·adj(sI − S)·L`, the closed-loop
/// characteristic polynomial is `q(s) + r(s)`. Evaluating the target
/// polynomial `p` at each (distinct) eigenvalue `μ` of `S` pins `r` down, and
/// the known eigenstructure of `S` turns each evaluation into one coordinate
/// of `L` in the eigenbasis:
///
/// ```text
/// c_μ = p(μ) / Π_{ν≠μ}(μ − ν)
/// ```
///
/// with `L = [c₀, 2·Re c₁, −2·Im c₁, …]`. This stays well-conditioned where
/// the classical controllability-matrix route (powers of `S`, entries ~ω^2k)
/// degrades for larger frequency sets.
pub fn design_gain(exo: &Exosystem, poles: &[C64]) -> Result<ObserverGain, ObserverError> {
    let n = exo.dim();
    validate_poles(poles, n)?;
    if !observability_check(exo) {
        return Err(ObserverError::DesignInfeasible);
    }

    let p = |s: C64| -> C64 {
        poles
            .iter()
            .fold(C64::new(1.0, 0.0), |acc, &pole| acc * (s - pole))
    };
    let eigs = exo.s_eigenvalues();
    let interpolation_coeff = |mu: C64| -> C64 {
        let mut denom = C64::new(1.0, 0.0);
        for &nu in &eigs {
            if (nu - mu).norm() > 0.0 {
                denom *= mu - nu;
            }
        }
        p(mu) / denom
    };

    let mut l = vec![0.0; n];
    l[0] = interpolation_coeff(C64::new(0.0, 0.0)).re;
    for (m, &w) in exo.freqs().iter().enumerate() {
        let c = interpolation_coeff(C64::new(0.0, w));
        l[1 + 2 * m] = 2.0 * c.re;
        l[2 + 2 * m] = -2.0 * c.im;
    }
    let gain = ObserverGain::from_column(exo, &l)?;

    // Confirm the placement: compare det(sI − (S − L·D)) against the target
    // polynomial at a few real sample points. This catches a wrong gain
    // without inheriting the eigensolver's sensitivity on tightly clustered
    // spectra (individual eigenvalues of a non-normal closed loop can be far
    // less accurate than the placement itself).
    let radius = poles.iter().map(|q| q.norm()).fold(1.0_f64, f64::max);
    for mult in [0.7, 1.3, 2.9] {
        let sample = mult * radius;
        let m = DMatrix::<f64>::identity(n, n) * sample - &gain.closed_loop;
        let det = m.lu().determinant();
        let want = p(C64::new(sample, 0.0)).re;
        let relative_error = (det - want).abs() / want.abs().max(1.0);
        if relative_error > 1e-6 {
            return Err(ObserverError::PlacementFailed {
                sample,
                relative_error,
            });
        }
    }
    Ok(gain)
}

fn validate_poles(poles: &[C64], expected: usize) -> Result<(), ObserverError> {
    if poles.len() != expected {
        return Err(ObserverError::WrongPoleCount {
            expected,
            got: poles.len(),
        });
    }
    for p in poles {
        if !(p.re < 0.0) {
            return Err(ObserverError::UnstablePole { re: p.re, im: p.im });
        }
    }
    let mut remaining: Vec<C64> = poles.iter().copied().filter(|p| p.im != 0.0).collect();
    while let Some(p) = remaining.pop() {
        let conj = p.conj();
        match remaining
            .iter()
            .position(|q| (q - conj).norm() < 1e-9 * (1.0 + conj.norm()))
        {
            Some(idx) => {
                remaining.swap_remove(idx);
            }
            None => return Err(ObserverError::NotConjugateClosed),
        }
    }
    Ok(())
}

/// Default observer poles for a `2k + 1`-dimensional exosystem: one real pole
/// at -5 plus conjugate pairs `-5 ± 0.1m·i`, kept distinct so the placement
/// stays well-conditioned.
pub fn default_poles(dim: usize) -> Vec<C64> {
    let k = (dim - 1) / 2;
    let mut poles = vec![C64::new(-5.0, 0.0)];
    for m in 1..=k {
        let im = 0.1 * m as f64;
        poles.push(C64::new(-5.0, im));
        poles.push(C64::new(-5.0, -im));
    }
    poles
}

/// Max real part of the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True iff every eigenvalue has real part below -1e-9.
pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool, ObserverError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(ObserverError::NotSquare { rows, cols });
    }
    Ok(spectral_abscissa(a) < -1e-9)
}
