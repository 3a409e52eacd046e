//! Real-valued problem construction and Jacobi preconditioning.
//!
//! Both detection problems are reduced to the same binary quadratic form
//! `min_{s̃ ∈ {±1}^N} s̃ᵀ T s̃` where the last entry of `s̃` is pinned to `+1`.
//! For coherent detection `T` is the Gram matrix of `[A, −b]` (PSD), for
//! joint channel estimation and detection it is the negated Gram matrix of
//! `[A, b]` (NSD), where `A` is the real-valued lift of the channel (or of
//! the data part of the receive block) and `b` the lifted observation.
//!
//! QPSK points are `(±1 ± j)/√2`, so the lift carries a `1/√2` factor and
//! `s̃ᵀ T s̃` equals the complex residual exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

const BPSK_POINTS: [C64; 2] = [C64::new(1.0, 0.0), C64::new(-1.0, 0.0)];
const QPSK_POINTS: [C64; 4] = [
    C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    C64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    C64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    C64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

/// Constant-modulus constellations supported by the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constellation {
    Bpsk,
    Qpsk,
}

impl Constellation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Constellation::Bpsk => 1,
            Constellation::Qpsk => 2,
        }
    }

    /// Number of real binary variables per complex symbol.
    pub fn real_dims(self) -> usize {
        self.bits_per_symbol()
    }

    /// Constellation points in candidate-enumeration order.
    pub fn points(self) -> &'static [C64] {
        match self {
            Constellation::Bpsk => &BPSK_POINTS,
            Constellation::Qpsk => &QPSK_POINTS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Constellation::Bpsk => "bpsk",
            Constellation::Qpsk => "qpsk",
        }
    }

    pub fn contains(self, s: C64) -> bool {
        self.points().iter().any(|p| (p - s).norm() < 1e-9)
    }

    /// Nearest constellation point. Zero components decide towards `+`.
    pub fn slice(self, z: C64) -> C64 {
        match self {
            Constellation::Bpsk => C64::new(sign(z.re) as f64, 0.0),
            Constellation::Qpsk => C64::new(
                sign(z.re) as f64 * FRAC_1_SQRT_2,
                sign(z.im) as f64 * FRAC_1_SQRT_2,
            ),
        }
    }

    /// Position of `s` in [`Constellation::points`].
    pub fn index_of(self, s: C64) -> Option<usize> {
        self.points().iter().position(|p| (p - s).norm() < 1e-9)
    }

    /// Gray-mapped bits of a constellation point: bit 0 from the real part,
    /// bit 1 (QPSK only) from the imaginary part; a negative component is `1`.
    pub fn bits(self, s: C64) -> impl Iterator<Item = bool> {
        let re = s.re < 0.0;
        let im = s.im < 0.0;
        let n = self.bits_per_symbol();
        [re, im].into_iter().take(n)
    }

    /// Symbol built from real-lift signs (`im` ignored for BPSK).
    pub fn from_signs(self, re: i8, im: i8) -> C64 {
        match self {
            Constellation::Bpsk => C64::new(re as f64, 0.0),
            Constellation::Qpsk => C64::new(
                re as f64 * FRAC_1_SQRT_2,
                im as f64 * FRAC_1_SQRT_2,
            ),
        }
    }
}

/// `sign` with `sign(0) = +1`.
pub fn sign(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

/// One MU-MIMO receive vector `y = H s + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentInstance {
    pub y: DVector<C64>,
    pub h: DMatrix<C64>,
    pub constellation: Constellation,
    /// Complex noise variance per receive antenna.
    pub n0: f64,
}

impl CoherentInstance {
    pub fn bs_antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn users(&self) -> usize {
        self.h.ncols()
    }

    fn check(&self) -> Result<()> {
        if self.y.len() != self.h.nrows() {
            return Err(Error::DimensionMismatch {
                what: "receive vector vs channel rows",
                expected: self.h.nrows(),
                found: self.y.len(),
            });
        }
        if self.h.nrows() == 0 || self.h.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "channel matrix must be non-empty",
                expected: 1,
                found: 0,
            });
        }
        Ok(())
    }
}

/// A SIMO receive block `Y = h sᴴ + N` over `K + 1` slots whose first
/// symbol `s0` is known at the receiver.
///
/// Column `k` of `Y` therefore carries `h · conj(s_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimoBurst {
    pub y: DMatrix<C64>,
    pub s0: C64,
    pub constellation: Constellation,
    pub n0: f64,
}

impl SimoBurst {
    pub fn bs_antennas(&self) -> usize {
        self.y.nrows()
    }

    /// Number of unknown data slots `K`.
    pub fn data_slots(&self) -> usize {
        self.y.ncols().saturating_sub(1)
    }

    fn check(&self) -> Result<()> {
        if self.y.ncols() < 2 || self.y.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "receive block needs B >= 1 rows and K + 1 >= 2 columns",
                expected: 2,
                found: self.y.ncols(),
            });
        }
        if !self.constellation.contains(self.s0) {
            return Err(Error::PilotNotInConstellation(self.s0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Coherent,
    Jed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Coherent => "coherent",
            Mode::Jed => "jed",
        }
    }
}

/// Definiteness of `T` for the problem being minimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConvention {
    PsdMin,
    NsdMin,
}

/// Whether the solver descends on the stored (unit-diagonal, PSD) matrix or
/// ascends on it. `Maximize` is used for JED where `T` itself is NSD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    pub fn factor(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

/// The binary quadratic program `min s̃ᵀ T s̃`, `s̃ = [s̄; 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealProblem {
    pub t_matrix: DMatrix<f64>,
    pub mode: Mode,
    pub constellation: Constellation,
    pub sign_convention: SignConvention,
}

impl RealProblem {
    pub fn n_dim(&self) -> usize {
        self.t_matrix.nrows()
    }

    /// Number of complex symbols recovered from the `N − 1` signs.
    pub fn symbols(&self) -> usize {
        (self.n_dim() - 1) / self.constellation.real_dims()
    }

    /// `s̃ᵀ T s̃` for `s̃ = [signs; 1]`.
    pub fn objective(&self, signs: &[i8]) -> f64 {
        let n = self.n_dim();
        debug_assert_eq!(signs.len() + 1, n);
        let s = |i: usize| if i + 1 == n { 1.0 } else { signs[i] as f64 };
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.t_matrix[(i, j)] * s(j);
            }
            acc += s(i) * row;
        }
        acc
    }
}

/// Real-valued lift of a complex matrix acting on `s̄` for the given
/// constellation: `[Re; Im]` for BPSK, `[[Re, −Im], [Im, Re]] / √2` for QPSK.
pub fn real_lift(m: &DMatrix<C64>, constellation: Constellation) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    match constellation {
        Constellation::Bpsk => DMatrix::from_fn(2 * rows, cols, |r, c| {
            if r < rows {
                m[(r, c)].re
            } else {
                m[(r - rows, c)].im
            }
        }),
        Constellation::Qpsk => DMatrix::from_fn(2 * rows, 2 * cols, |r, c| {
            let z = m[(r % rows, c % cols)];
            let v = match (r < rows, c < cols) {
                (true, true) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
                (false, false) => z.re,
            };
            v * FRAC_1_SQRT_2
        }),
    }
}

/// `[Re(v); Im(v)]`.
pub fn real_vector(v: &DVector<C64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |r, _| if r < n { v[r].re } else { v[r - n].im })
}

/// Gram matrix of `[a, c·b]`.
fn augmented_gram(a: &DMatrix<f64>, b: &DVector<f64>, c: f64) -> DMatrix<f64> {
    let n = a.ncols() + 1;
    let mut m = DMatrix::zeros(a.nrows(), n);
    m.columns_mut(0, n - 1).copy_from(a);
    m.column_mut(n - 1).copy_from(&(b * c));
    let mut g = m.tr_mul(&m);
    // tr_mul is symmetric up to summation order only.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Builds `T` for coherent ML detection so that `s̃ᵀ T s̃ = ‖y − H s‖²`.
pub fn build_coherent_problem(inst: &CoherentInstance) -> Result<RealProblem> {
    inst.check()?;
    let a = real_lift(&inst.h, inst.constellation);
    let b = real_vector(&inst.y);
    Ok(RealProblem {
        t_matrix: augmented_gram(&a, &b, -1.0),
        mode: Mode::Coherent,
        constellation: inst.constellation,
        sign_convention: SignConvention::PsdMin,
    })
}

/// Builds the NSD `T` for JED so that `s̃ᵀ T s̃ = −‖y₀ s₀ + Y_r s_r‖²`.
pub fn build_jed_problem(burst: &SimoBurst) -> Result<RealProblem> {
    burst.check()?;
    let k = burst.data_slots();
    let y_r = burst.y.columns(1, k).into_owned();
    let a = real_lift(&y_r, burst.constellation);
    let b = real_vector(&(burst.y.column(0) * burst.s0));
    Ok(RealProblem {
        t_matrix: -augmented_gram(&a, &b, 1.0),
        mode: Mode::Jed,
        constellation: burst.constellation,
        sign_convention: SignConvention::NsdMin,
    })
}

/// Jacobi-preconditioned problem with its fixed step size.
///
/// `t_tilde` is always stored with a unit main diagonal. For NSD problems it
/// holds `D⁻¹(−T)D⁻¹` and `sense` is [`Sense::Maximize`], so the matrix the
/// iteration actually descends on is `sense.factor() · t_tilde = D⁻¹TD⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecondProblem {
    pub t_tilde: DMatrix<f64>,
    pub d_diag: DVector<f64>,
    pub tau: f64,
    pub alpha: f64,
    pub spectral_norm: f64,
    pub sense: Sense,
    pub mode: Mode,
    pub constellation: Constellation,
}

impl PrecondProblem {
    pub fn n_dim(&self) -> usize {
        self.t_tilde.nrows()
    }

    /// `T̂ = 2τ · D⁻¹TD⁻¹`, the matrix the gradient step multiplies with.
    pub fn scaled_gradient_matrix(&self) -> DMatrix<f64> {
        &self.t_tilde * (2.0 * self.tau * self.sense.factor())
    }
}

const POWER_ITERATIONS: usize = 200;
const POWER_REL_TOL: f64 = 1e-8;

/// Largest-magnitude eigenvalue of a symmetric matrix by power iteration
/// from the all-ones vector.
///
/// If that start lies (numerically) in the null space, the iteration is
/// restarted from `v_i = i + 1`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let est = power_iteration(m, DVector::from_element(n, 1.0));
    if est > 1e-9 * m.norm() {
        return est;
    }
    power_iteration(m, DVector::from_fn(n, |i, _| (i + 1) as f64))
}

fn power_iteration(m: &DMatrix<f64>, start: DVector<f64>) -> f64 {
    let mut v = start.normalize();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (norm - estimate).abs() < POWER_REL_TOL * norm;
        estimate = norm;
        if converged {
            break;
        }
    }
    estimate
}

/// Jacobi preconditioning `T̃ = D⁻¹TD⁻¹` with `D = diag(√|T_kk|)` and the
/// step size `τ = α / ‖T̃‖₂`.
pub fn jacobi_precondition(prob: &RealProblem, alpha: f64) -> Result<PrecondProblem> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let sense = match prob.sign_convention {
        SignConvention::PsdMin => Sense::Minimize,
        SignConvention::NsdMin => Sense::Maximize,
    };
    let n = prob.n_dim();
    let g = &prob.t_matrix * sense.factor();
    let mut d = DVector::zeros(n);
    for k in 0..n {
        let v = g[(k, k)];
        if v.is_nan() || v <= 0.0 {
            return Err(Error::NonpositiveDiagonal { index: k, value: v });
        }
        d[k] = v.sqrt();
    }
    let mut t_tilde = DMatrix::from_fn(n, n, |i, j| g[(i, j)] / (d[i] * d[j]));
    for k in 0..n {
        t_tilde[(k, k)] = 1.0;
    }
    let norm = spectral_norm(&t_tilde);
    Ok(PrecondProblem {
        t_tilde,
        d_diag: d,
        tau: alpha / norm,
        alpha,
        spectral_norm: norm,
        sense,
        mode: prob.mode,
        constellation: prob.constellation,
    })
}

/// Maps the `N − 1` real signs back to complex symbols.
///
/// For JED the result holds the `K` data symbols; the pinned first slot is
/// not part of the binary program.
pub fn extract_complex_solution(signs: &[i8], prob: &RealProblem) -> Result<Vec<C64>> {
    symbols_from_signs(signs, prob.constellation, prob.n_dim() - 1)
}

pub(crate) fn symbols_from_signs(
    signs: &[i8],
    constellation: Constellation,
    expected: usize,
) -> Result<Vec<C64>> {
    if signs.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: signs.len(),
        });
    }
    Ok(match constellation {
        Constellation::Bpsk => signs.iter().map(|&s| constellation.from_signs(s, 1)).collect(),
        Constellation::Qpsk => {
            let u = signs.len() / 2;
            (0..u)
                .map(|i| constellation.from_signs(signs[i], signs[i + u]))
                .collect()
        }
    })
}

/// Inverse of [`extract_complex_solution`]: real-lift signs of a symbol vector.
pub fn signs_from_symbols(symbols: &[C64], constellation: Constellation) -> Vec<i8> {
    match constellation {
        Constellation::Bpsk => symbols.iter().map(|s| sign(s.re)).collect(),
        Constellation::Qpsk => symbols
            .iter()
            .map(|s| sign(s.re))
            .chain(symbols.iter().map(|s| sign(s.im)))
            .collect(),
    }
}
