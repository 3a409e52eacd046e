//! Preconditioned forward-backward splitting on the triangular factor.
//!
//! The relaxed problem `min Tr(L̃ T̃ L̃ᵀ)` s.t. `‖l̃_k‖₂ = D_kk` is iterated as
//!
//! ```text
//! L̃⁽⁰⁾ = D
//! V⁽ᵗ⁾ = L̃⁽ᵗ⁻¹⁾ − tril(2τ L̃⁽ᵗ⁻¹⁾ T̃)
//! L̃⁽ᵗ⁾ = column-wise D_kk · v_k / ‖v_k‖₂
//! ```
//!
//! and the binary estimate is read off the last row of `L̃`.
//!
//! The last column holds the single entry `L̃_{N,N}`, whose constraint only
//! fixes its magnitude. Flipping the sign of a whole row changes neither the
//! objective nor the constraints, so the solver keeps `L̃_{N,N} = +D_NN`
//! throughout, as the hardware does. Without this, any step with `τ > 1/2`
//! (common once `‖T̃‖₂ < 2`) flips `L̃_{N,N}` every iteration and the last
//! row settles on the wrong side.

use crate::error::{Error, Result};
use crate::model::{sign, PrecondProblem};

const ZERO_COLUMN_NORM: f64 = 1e-30;

/// Dense row-major `N × N` lower-triangular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFactor {
    n: usize,
    data: Vec<f64>,
}

impl TriangularFactor {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut l = Self::zeros(d.len());
        for (k, &v) in d.iter().enumerate() {
            l.data[k * l.n + k] = v;
        }
        l
    }

    /// Builds a factor from a row-major dense buffer, zeroing the strict
    /// upper triangle.
    pub fn from_row_major(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "dense factor buffer",
                expected: n * n,
                found: values.len(),
            });
        }
        let mut l = Self::zeros(n);
        for i in 0..n {
            l.data[i * n..=i * n + i].copy_from_slice(&values[i * n..=i * n + i]);
        }
        Ok(l)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets a lower-triangle entry.
    ///
    /// # Panics
    /// If `j > i`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i, "({i}, {j}) lies above the diagonal");
        self.data[i * self.n + j] = v;
    }

    /// Entries `0..=i` of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..=i * self.n + i]
    }

    pub fn column_norm(&self, k: usize) -> f64 {
        (k..self.n)
            .map(|i| self.get(i, k).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Frobenius distance modulo row sign flips: each row contributes
    /// `min(‖a − b‖², ‖a + b‖²)`. Flipping a row changes neither the
    /// objective nor the column-norm constraints.
    pub fn row_sign_distance(&self, other: &Self) -> f64 {
        (0..self.n)
            .map(|i| {
                let (mut minus, mut plus) = (0.0, 0.0);
                for (x, y) in self.row(i).iter().zip(other.row(i)) {
                    minus += (x - y) * (x - y);
                    plus += (x + y) * (x + y);
                }
                f64::min(minus, plus)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == 0.0))
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// Binary estimate `sign(L_{N,k})`, `k < N`.
    pub fn last_row_signs(&self) -> Vec<i8> {
        let last = self.n - 1;
        (0..last).map(|k| sign(self.get(last, k))).collect()
    }
}

/// Iteration budget and step-size knob.
#[derive(Debug, Clone, PartialEq)]
pub struct TaserConfig {
    pub t_max: usize,
    /// Step size fraction `α` in `τ = α / ‖T̃‖₂`.
    pub alpha: f64,
    /// Stop once `‖L̃⁽ᵗ⁾ − L̃⁽ᵗ⁻¹⁾‖_F` drops below this; `0` runs all `t_max`.
    pub convergence_tol: f64,
    /// Record `Tr(L̃T̃L̃ᵀ)` per iteration (O(N³) each).
    pub record_objective: bool,
}

impl Default for TaserConfig {
    fn default() -> Self {
        Self {
            t_max: 20,
            alpha: 0.99,
            convergence_tol: 0.0,
            record_objective: false,
        }
    }
}

impl TaserConfig {
    pub fn with_t_max(t_max: usize) -> Self {
        Self {
            t_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::InvalidConfig("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaserTrace {
    /// `Tr(L̃T̃L̃ᵀ)` after each iteration; empty unless recording was enabled.
    pub objective: Vec<f64>,
    /// Per-iteration Frobenius step, taken modulo row sign flips.
    pub step_norms: Vec<f64>,
    pub iterations_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaserOutput {
    pub signs: Vec<i8>,
    pub factor: TriangularFactor,
    pub trace: TaserTrace,
}

/// Multiplication tally hooked into the iteration kernels.
pub(crate) trait MulTally {
    fn add(&mut self, count: u64);
}

impl MulTally for () {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

impl MulTally for u64 {
    #[inline(always)]
    fn add(&mut self, count: u64) {
        *self += count;
    }
}

fn check_dims(l: &TriangularFactor, pre: &PrecondProblem) -> Result<()> {
    if l.n() != pre.n_dim() {
        return Err(Error::DimensionMismatch {
            what: "factor vs preconditioned problem",
            expected: pre.n_dim(),
            found: l.n(),
        });
    }
    Ok(())
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `V = L − tril(L · T̂)` visiting only `j ≤ i` and `k ≤ i`.
fn gradient_kernel<C: MulTally>(
    l: &TriangularFactor,
    t_hat: &[f64],
    v: &mut TriangularFactor,
    tally: &mut C,
) {
    let n = l.n;
    for i in 0..n {
        let out = &mut v.data[i * n..=i * n + i];
        out.copy_from_slice(&l.data[i * n..=i * n + i]);
        for k in 0..=i {
            let a = l.data[i * n + k];
            let t_row = &t_hat[k * n..=k * n + i];
            for (o, &t) in out.iter_mut().zip(t_row) {
                *o -= a * t;
            }
        }
        tally.add(((i + 1) * (i + 1)) as u64);
    }
}

/// Column rescaling to `‖l_k‖₂ = D_kk`, in place.
///
/// With `pin_corner` the one-entry last column is set to `+D_NN` instead of
/// `D_NN · sign(V_NN)`.
fn prox_kernel<C: MulTally>(
    v: &mut TriangularFactor,
    d: &[f64],
    pin_corner: bool,
    tally: &mut C,
) -> Result<()> {
    let n = v.n;
    let mut sq = vec![0.0; n];
    for i in 0..n {
        for (k, &x) in v.data[i * n..=i * n + i].iter().enumerate() {
            sq[k] += x * x;
        }
    }
    tally.add((n * (n + 1) / 2) as u64);
    let mut scale = vec![0.0; n];
    for k in 0..n {
        if pin_corner && k + 1 == n {
            continue;
        }
        let norm = sq[k].sqrt();
        if norm < ZERO_COLUMN_NORM {
            return Err(Error::ZeroColumn { column: k });
        }
        scale[k] = d[k] / norm;
    }
    tally.add(n as u64);
    for i in 0..n {
        for (x, s) in v.data[i * n..=i * n + i].iter_mut().zip(&scale) {
            *x *= s;
        }
    }
    if pin_corner {
        v.data[n * n - 1] = d[n - 1];
    }
    tally.add((n * (n + 1) / 2) as u64);
    Ok(())
}

/// Forward (gradient) step `V = L̃ − tril(2τ L̃ T̃)`.
pub fn gradient_step(l: &TriangularFactor, pre: &PrecondProblem) -> Result<TriangularFactor> {
    check_dims(l, pre)?;
    let t_hat = row_major(&pre.scaled_gradient_matrix());
    let mut v = TriangularFactor::zeros(l.n());
    gradient_kernel(l, &t_hat, &mut v, &mut ());
    Ok(v)
}

/// Backward (proximal) step: column `k` becomes `D_kk · v_k / ‖v_k‖₂`.
pub fn prox_step(v: &TriangularFactor, pre: &PrecondProblem) -> Result<TriangularFactor> {
    check_dims(v, pre)?;
    let mut out = v.clone();
    prox_kernel(&mut out, pre.d_diag.as_slice(), false, &mut ())?;
    Ok(out)
}

/// `Tr(L̃ T̃ Lᵀ)` with `T̃ = D⁻¹TD⁻¹` (sign included).
pub fn objective(l: &TriangularFactor, pre: &PrecondProblem) -> f64 {
    let t = pre.t_tilde.clone() * pre.sense.factor();
    let lm = l.to_matrix();
    (&lm * t * lm.transpose()).trace()
}

struct Iterate {
    t_hat: Vec<f64>,
    d: Vec<f64>,
    l: TriangularFactor,
    v: TriangularFactor,
}

impl Iterate {
    fn new(pre: &PrecondProblem) -> Self {
        let d = pre.d_diag.as_slice().to_vec();
        let l = TriangularFactor::from_diagonal(&d);
        Self {
            t_hat: row_major(&pre.scaled_gradient_matrix()),
            v: TriangularFactor::zeros(d.len()),
            d,
            l,
        }
    }

    /// One FBS iteration; returns the Frobenius step norm.
    fn step<C: MulTally>(&mut self, tally: &mut C) -> Result<f64> {
        gradient_kernel(&self.l, &self.t_hat, &mut self.v, tally);
        prox_kernel(&mut self.v, &self.d, true, tally)?;
        std::mem::swap(&mut self.l, &mut self.v);
        Ok(self.l.row_sign_distance(&self.v))
    }
}

fn run<C: MulTally>(pre: &PrecondProblem, cfg: &TaserConfig, tally: &mut C) -> Result<TaserOutput> {
    cfg.validate()?;
    let mut it = Iterate::new(pre);
    let mut trace = TaserTrace::default();
    for _ in 0..cfg.t_max {
        let step = it.step(tally)?;
        trace.step_norms.push(step);
        if cfg.record_objective {
            trace.objective.push(objective(&it.l, pre));
        }
        trace.iterations_run += 1;
        if cfg.convergence_tol > 0.0 && step < cfg.convergence_tol {
            break;
        }
    }
    Ok(TaserOutput {
        signs: it.l.last_row_signs(),
        factor: it.l,
        trace,
    })
}

/// Runs TASER from `L̃⁽⁰⁾ = D` and returns the `N − 1` sign estimates.
pub fn solve(pre: &PrecondProblem, cfg: &TaserConfig) -> Result<TaserOutput> {
    run(pre, cfg, &mut ())
}

/// As [`solve`], also returning the number of real multiplications the
/// iteration performed (tril product, squared norms, `D`-scaling of the
/// inverse square roots, and column scaling).
pub fn solve_counted(pre: &PrecondProblem, cfg: &TaserConfig) -> Result<(TaserOutput, u64)> {
    let mut count = 0u64;
    let out = run(pre, cfg, &mut count)?;
    Ok((out, count))
}

/// Sign estimates after each iteration count in `checkpoints` from a single
/// trajectory (no early stopping). Checkpoints must be non-decreasing.
pub fn solve_checkpoints(pre: &PrecondProblem, checkpoints: &[usize]) -> Result<Vec<Vec<i8>>> {
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("checkpoints must be sorted".into()));
    }
    let mut it = Iterate::new(pre);
    let mut done = 0;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        while done < t {
            it.step(&mut ())?;
            done += 1;
        }
        out.push(it.l.last_row_signs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::{
        build_coherent_problem, jacobi_precondition, CoherentInstance, Constellation, Mode, Sense,
    };
    use crate::C64;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn manual(t_tilde: DMatrix<f64>, d: Vec<f64>, tau: f64) -> PrecondProblem {
        PrecondProblem {
            spectral_norm: crate::model::spectral_norm(&t_tilde),
            t_tilde,
            d_diag: DVector::from_vec(d),
            tau,
            alpha: 0.5,
            sense: Sense::Minimize,
            mode: Mode::Coherent,
            constellation: Constellation::Bpsk,
        }
    }

    fn seed0_problem(n_users: usize) -> PrecondProblem {
        let (inst, _) = coherent(0, 8, n_users, Constellation::Bpsk, 0.3);
        jacobi_precondition(&build_coherent_problem(&inst).unwrap(), 0.99).unwrap()
    }

    fn random_factor(seed: u64, n: usize) -> TriangularFactor {
        let mut r = rng(seed);
        let dense: Vec<f64> = (0..n * n).map(|_| cn(&mut r, 2.0).re).collect();
        TriangularFactor::from_row_major(n, &dense).unwrap()
    }

    #[test]
    fn gradient_step_identity_case() {
        let pre = manual(DMatrix::identity(3, 3), vec![1.0; 3], 0.5);
        let v = gradient_step(&TriangularFactor::from_diagonal(&[1.0; 3]), &pre).unwrap();
        assert_eq!(v, TriangularFactor::zeros(3));
    }

    #[test]
    fn gradient_step_zero_step_is_identity() {
        let mut pre = seed0_problem(4);
        pre.tau = 0.0;
        let l = random_factor(1, 5);
        assert_eq!(gradient_step(&l, &pre).unwrap(), l);
    }

    #[test]
    fn gradient_step_dimension_mismatch() {
        let pre = seed0_problem(4);
        assert!(matches!(
            gradient_step(&TriangularFactor::zeros(3), &pre),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let pre = seed0_problem(4);
        let n = pre.n_dim();
        let l = random_factor(0, n);
        let v = gradient_step(&l, &pre).unwrap();
        let h = 1e-5;
        for i in 0..n {
            for j in 0..=i {
                let mut plus = l.clone();
                plus.set(i, j, l.get(i, j) + h);
                let mut minus = l.clone();
                minus.set(i, j, l.get(i, j) - h);
                let fd = (objective(&plus, &pre) - objective(&minus, &pre)) / (2.0 * h);
                let analytic = (l.get(i, j) - v.get(i, j)) / pre.tau;
                let rel = (analytic - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-6, "({i},{j}) analytic {analytic} fd {fd}");
            }
        }
        assert!(v.is_lower_triangular());
    }

    #[test]
    fn prox_three_four_five() {
        let pre = manual(DMatrix::identity(2, 2), vec![1.0, 1.0], 0.5);
        let v = TriangularFactor::from_row_major(2, &[3.0, 0.0, 4.0, 2.0]).unwrap();
        let l = prox_step(&v, &pre).unwrap();
        assert_relative_eq!(l.get(0, 0), 0.6, epsilon = 1e-15);
        assert_relative_eq!(l.get(1, 0), 0.8, epsilon = 1e-15);
        assert_relative_eq!(l.get(1, 1), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn prox_fixed_point() {
        let pre = seed0_problem(4);
        let l = prox_step(&random_factor(3, 5), &pre).unwrap();
        let again = prox_step(&l, &pre).unwrap();
        for i in 0..5 {
            for j in 0..=i {
                assert_relative_eq!(again.get(i, j), l.get(i, j), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn prox_positive_scale_invariance() {
        let pre = seed0_problem(4);
        let v = random_factor(0, 5);
        let mut scaled = v.clone();
        for i in 0..5 {
            for j in 0..=i {
                scaled.set(i, j, 7.3 * v.get(i, j));
            }
        }
        let a = prox_step(&v, &pre).unwrap();
        let b = prox_step(&scaled, &pre).unwrap();
        assert!(a.frobenius_distance(&b) < 1e-12);
    }

    #[test]
    fn prox_column_norms_equal_diagonal() {
        let pre = seed0_problem(4);
        let l = prox_step(&random_factor(5, 5), &pre).unwrap();
        for k in 0..5 {
            let d = pre.d_diag[k];
            assert!((l.column_norm(k) - d).abs() < 1e-9 * d);
        }
    }

    #[test]
    fn prox_rejects_zero_column() {
        let pre = seed0_problem(4);
        let mut v = random_factor(2, 5);
        for i in 2..5 {
            v.set(i, 2, 0.0);
        }
        assert_eq!(prox_step(&v, &pre), Err(Error::ZeroColumn { column: 2 }));
    }

    #[test]
    fn solve_noiseless_scalar() {
        let inst = CoherentInstance {
            y: DVector::from_vec(vec![C64::new(1.0, 0.0)]),
            h: DMatrix::from_vec(1, 1, vec![C64::new(1.0, 0.0)]),
            constellation: Constellation::Bpsk,
            n0: 0.0,
        };
        let p = build_coherent_problem(&inst).unwrap();
        let pre = jacobi_precondition(&p, 0.99).unwrap();
        let out = solve(&pre, &TaserConfig::with_t_max(20)).unwrap();
        // Exhaustive ML over the two candidates.
        let ml = if p.objective(&[1]) <= p.objective(&[-1]) { 1 } else { -1 };
        assert_eq!(out.signs, vec![ml]);
        assert_eq!(out.signs, vec![1]);
    }

    #[test]
    fn runs_exactly_t_max_without_tolerance() {
        let pre = seed0_problem(4);
        let cfg = TaserConfig {
            t_max: 17,
            record_objective: true,
            ..TaserConfig::default()
        };
        let out = solve(&pre, &cfg).unwrap();
        assert_eq!(out.trace.iterations_run, 17);
        assert_eq!(out.trace.step_norms.len(), 17);
        assert_eq!(out.trace.objective.len(), 17);
    }

    #[test]
    fn early_stop_honours_tolerance() {
        let pre = seed0_problem(4);
        let cfg = TaserConfig {
            t_max: 100_000,
            convergence_tol: 1e-8,
            ..TaserConfig::default()
        };
        let out = solve(&pre, &cfg).unwrap();
        assert!(out.trace.iterations_run < cfg.t_max);
        assert!(*out.trace.step_norms.last().unwrap() < 1e-8);
    }

    #[test]
    fn iterates_stay_triangular_with_fixed_column_norms() {
        let pre = seed0_problem(4);
        let mut it = Iterate::new(&pre);
        for _ in 0..50 {
            it.step(&mut ()).unwrap();
            assert!(it.l.is_lower_triangular());
            for k in 0..pre.n_dim() {
                let d = pre.d_diag[k];
                assert!((it.l.column_norm(k) - d).abs() < 1e-9 * d);
            }
        }
    }

    #[test]
    fn scaling_t_and_tau_inversely_gives_same_iterates() {
        let pre = seed0_problem(4);
        let c = 3.7;
        let mut scaled = pre.clone();
        scaled.t_tilde *= c;
        scaled.tau /= c;
        let cfg = TaserConfig::with_t_max(30);
        let a = solve(&pre, &cfg).unwrap();
        let b = solve(&scaled, &cfg).unwrap();
        assert_eq!(a.signs, b.signs);
        assert!(a.factor.frobenius_distance(&b.factor) < 1e-12);
    }

    #[test]
    fn checkpoints_match_fresh_runs() {
        let pre = seed0_problem(4);
        let snaps = solve_checkpoints(&pre, &[1, 3, 3, 8]).unwrap();
        for (t, s) in [1, 3, 3, 8].iter().zip(&snaps) {
            assert_eq!(&solve(&pre, &TaserConfig::with_t_max(*t)).unwrap().signs, s);
        }
        assert!(solve_checkpoints(&pre, &[3, 1]).is_err());
    }

    #[test]
    fn counted_multiplications_per_iteration() {
        let pre = seed0_problem(4);
        let n = 5u64;
        let (_, count) = solve_counted(&pre, &TaserConfig::with_t_max(2)).unwrap();
        let per_iter: u64 = (1..=n).map(|i| i * i).sum::<u64>() + n * (n + 1) + n;
        assert_eq!(count, 2 * per_iter);
    }

    #[test]
    fn config_validation() {
        assert!(TaserConfig::with_t_max(0).validate().is_err());
        let cfg = TaserConfig {
            alpha: 1.5,
            ..TaserConfig::default()
        };
        assert_eq!(cfg.validate(), Err(Error::InvalidAlpha(1.5)));
    }

    #[test]
    fn last_row_sign_rule() {
        let l = TriangularFactor::from_row_major(2, &[1.0, 0.0, -0.5, 1.0]).unwrap();
        assert_eq!(l.last_row_signs(), vec![-1]);
        let l = TriangularFactor::from_row_major(2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(l.last_row_signs(), vec![1]);
    }

    #[test]
    fn corner_stays_pinned_with_large_steps() {
        // Unit-diagonal 5×5 problems here have ‖T̃‖ < 2, so τ > 1/2 and an
        // unpinned corner would change sign every iteration.
        let pre = seed0_problem(4);
        assert!(pre.tau > 0.5);
        for t in 1..6 {
            let out = solve(&pre, &TaserConfig::with_t_max(t)).unwrap();
            assert_eq!(out.factor.get(4, 4), pre.d_diag[4]);
        }
    }
}
