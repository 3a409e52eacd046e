//! Reference detectors: exhaustive ML (coherent and JED), linear MMSE,
//! matched-filter SIMO references and pilot-based channel estimation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{real_lift, real_vector, symbols_from_signs, CoherentInstance, Constellation, SimoBurst};
use crate::C64;

/// Largest candidate set the exhaustive searches accept.
pub const MAX_CANDIDATES: u128 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub symbols: Vec<C64>,
    pub hard_bits: Vec<bool>,
    pub detector_name: String,
    channel_estimate: Option<DVector<C64>>,
}

impl DetectionResult {
    pub fn new(name: &str, symbols: Vec<C64>, constellation: Constellation) -> Self {
        let hard_bits = symbols.iter().flat_map(|&s| constellation.bits(s)).collect();
        Self {
            symbols,
            hard_bits,
            detector_name: name.to_string(),
            channel_estimate: None,
        }
    }

    /// Channel estimate produced alongside the symbols (JED and CHEST only).
    pub fn channel_estimate(&self) -> Option<&DVector<C64>> {
        self.channel_estimate.as_ref()
    }

    pub fn with_channel_estimate(mut self, h: DVector<C64>) -> Self {
        self.channel_estimate = Some(h);
        self
    }
}

/// `ĥ = Y s` for the full burst `s = [s₀; data]`.
pub fn jed_channel_estimate(burst: &SimoBurst, data: &[C64]) -> DVector<C64> {
    let full: Vec<C64> = std::iter::once(burst.s0).chain(data.iter().copied()).collect();
    &burst.y * DVector::from_vec(full)
}

fn check_search_space(constellation: Constellation, symbols: usize) -> Result<()> {
    let candidates = (constellation.points().len() as u128).saturating_pow(symbols as u32);
    if candidates > MAX_CANDIDATES {
        return Err(Error::SearchSpaceTooLarge { candidates });
    }
    Ok(())
}

/// Lexicographic candidate rank of a real sign vector, symbol 0 most
/// significant, digits taken from [`Constellation::points`] order.
fn candidate_rank(signs: &[i8], constellation: Constellation) -> u128 {
    let symbols = symbols_from_signs(signs, constellation, signs.len())
        .expect("length matches by construction");
    let base = constellation.points().len() as u128;
    symbols.iter().fold(0u128, |acc, &s| {
        acc * base + constellation.index_of(s).expect("constellation point") as u128
    })
}

/// Minimises `sᵀQs − 2pᵀs` over `s ∈ {±1}^m` by Gray-code enumeration with
/// O(m) updates per candidate. Near-ties resolve to the lowest `rank`.
fn minimize_binary_quadratic(
    q: &DMatrix<f64>,
    p: &DVector<f64>,
    rank: impl Fn(&[i8]) -> u128,
) -> Vec<i8> {
    let m = p.len();
    let mut s = vec![1i8; m];
    let mut qs: Vec<f64> = (0..m).map(|i| q.row(i).sum()).collect();
    let mut f = qs.iter().sum::<f64>() - 2.0 * p.sum();
    let tol = 1e-11 * (q.diagonal().abs().sum() + p.abs().sum() + 1.0);

    let mut best = s.clone();
    let mut best_f = f;
    let mut best_rank = rank(&s);
    for g in 1u64..(1u64 << m) {
        let bit = g.trailing_zeros() as usize;
        let delta = -2.0 * s[bit] as f64;
        f += 2.0 * delta * qs[bit] + delta * delta * q[(bit, bit)] - 2.0 * delta * p[bit];
        for (acc, &qv) in qs.iter_mut().zip(q.column(bit).iter()) {
            *acc += delta * qv;
        }
        s[bit] = -s[bit];
        if f < best_f - tol {
            best_f = f;
            best.copy_from_slice(&s);
            best_rank = rank(&s);
        } else if f <= best_f + tol {
            let r = rank(&s);
            if r < best_rank {
                best_f = best_f.min(f);
                best.copy_from_slice(&s);
                best_rank = r;
            }
        }
    }
    best
}

/// Exact ML detection `argmin_s ‖y − Hs‖₂` by exhaustive search.
pub fn ml_exhaustive(inst: &CoherentInstance) -> Result<DetectionResult> {
    if inst.y.len() != inst.h.nrows() {
        return Err(Error::DimensionMismatch {
            what: "receive vector vs channel rows",
            expected: inst.h.nrows(),
            found: inst.y.len(),
        });
    }
    let c = inst.constellation;
    check_search_space(c, inst.users())?;
    let a = real_lift(&inst.h, c);
    let b = real_vector(&inst.y);
    let q = a.tr_mul(&a);
    let p = a.tr_mul(&b);
    let signs = minimize_binary_quadratic(&q, &p, |s| candidate_rank(s, c));
    let symbols = symbols_from_signs(&signs, c, signs.len())?;
    Ok(DetectionResult::new("ml", symbols, c))
}

/// Exact JED `argmax_s ‖Y s‖₂` with `s₀` pinned; the channel estimate
/// `ĥ = Y ŝ` is attached to the result.
pub fn ml_jed_exhaustive(burst: &SimoBurst) -> Result<DetectionResult> {
    let c = burst.constellation;
    let k = burst.data_slots();
    if k == 0 {
        return Err(Error::DimensionMismatch {
            what: "receive block needs at least one data slot",
            expected: 2,
            found: burst.y.ncols(),
        });
    }
    if !c.contains(burst.s0) {
        return Err(Error::PilotNotInConstellation(burst.s0));
    }
    check_search_space(c, k)?;
    let y_r = burst.y.columns(1, k).into_owned();
    let a = real_lift(&y_r, c);
    let b = real_vector(&(burst.y.column(0) * burst.s0));
    // max ‖b + A s‖² ⇔ min sᵀ(−AᵀA)s − 2(Aᵀb)ᵀs
    let q = -a.tr_mul(&a);
    let p = a.tr_mul(&b);
    let signs = minimize_binary_quadratic(&q, &p, |s| candidate_rank(s, c));
    let data = symbols_from_signs(&signs, c, signs.len())?;
    let h_hat = jed_channel_estimate(burst, &data);
    Ok(DetectionResult::new("ml", data, c).with_channel_estimate(h_hat))
}

/// Linear MMSE `(HᴴH + N₀I)⁻¹Hᴴy` followed by per-entry slicing.
pub fn mmse_detect(inst: &CoherentInstance) -> Result<DetectionResult> {
    if inst.y.len() != inst.h.nrows() {
        return Err(Error::DimensionMismatch {
            what: "receive vector vs channel rows",
            expected: inst.h.nrows(),
            found: inst.y.len(),
        });
    }
    if inst.n0.is_nan() || inst.n0 < 0.0 {
        return Err(Error::InvalidConfig(format!("noise variance {} is negative", inst.n0)));
    }
    let hh = inst.h.adjoint();
    let mut gram = &hh * &inst.h;
    for k in 0..gram.nrows() {
        gram[(k, k)] += C64::new(inst.n0, 0.0);
    }
    let scale = (0..gram.nrows()).map(|k| gram[(k, k)].re).fold(0.0, f64::max);
    let chol = gram.cholesky().ok_or(Error::SingularMatrix)?;
    // Reject numerically rank-deficient systems the factorisation let through.
    if chol.l_dirty().diagonal().iter().any(|d| d.re * d.re <= 1e-12 * scale) {
        return Err(Error::SingularMatrix);
    }
    let est = chol.solve(&(&hh * &inst.y));
    if est.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    let c = inst.constellation;
    let symbols = est.iter().map(|&z| c.slice(z)).collect();
    Ok(DetectionResult::new("mmse", symbols, c))
}

/// Matched-filter decision for `y = h s + n`.
pub fn mrc_decide(y: &DVector<C64>, h: &DVector<C64>, constellation: Constellation) -> C64 {
    constellation.slice(h.dotc(y))
}

/// Interference-free per-user reference on a given instance: user `u` is
/// detected by MRC after the other users' true contributions are removed.
pub fn simo_genie_detect(inst: &CoherentInstance, transmitted: &[C64]) -> Result<DetectionResult> {
    if transmitted.len() != inst.users() {
        return Err(Error::DimensionMismatch {
            what: "transmitted symbols vs users",
            expected: inst.users(),
            found: transmitted.len(),
        });
    }
    let c = inst.constellation;
    let full = &inst.h * DVector::from_column_slice(transmitted);
    let symbols = (0..inst.users())
        .map(|u| {
            let h_u = inst.h.column(u).into_owned();
            let residual = &inst.y - &full + &h_u * transmitted[u];
            mrc_decide(&residual, &h_u, c)
        })
        .collect();
    Ok(DetectionResult::new("simo", symbols, c))
}

/// Error counts of the single-user interference-free reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimoBound {
    pub trials: u64,
    pub symbol_errors: u64,
    pub bit_errors: u64,
    pub bits_per_symbol: usize,
}

impl SimoBound {
    pub fn symbol_error_rate(&self) -> f64 {
        self.symbol_errors as f64 / self.trials as f64
    }

    pub fn bit_error_rate(&self) -> f64 {
        self.bit_errors as f64 / (self.trials as f64 * self.bits_per_symbol as f64)
    }

    /// Vector error rate of `users` independent interference-free users.
    pub fn vector_error_rate(&self, users: usize) -> f64 {
        1.0 - (1.0 - self.symbol_error_rate()).powi(users as i32)
    }
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Monte-Carlo estimate of the single-user, `bs_antennas`-antenna MRC
/// error rate over i.i.d. Rayleigh fading.
pub fn simo_lower_bound(
    bs_antennas: usize,
    constellation: Constellation,
    n0: f64,
    trials: u64,
    seed: u64,
) -> SimoBound {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = constellation.points();
    let mut bound = SimoBound {
        trials,
        symbol_errors: 0,
        bit_errors: 0,
        bits_per_symbol: constellation.bits_per_symbol(),
    };
    for _ in 0..trials {
        let h = DVector::from_fn(bs_antennas, |_, _| complex_normal(&mut rng, 1.0));
        let s = points[rng.random_range(0..points.len())];
        let y = &h * s + DVector::from_fn(bs_antennas, |_, _| complex_normal(&mut rng, n0));
        let s_hat = mrc_decide(&y, &h, constellation);
        if s_hat != s {
            bound.symbol_errors += 1;
            bound.bit_errors += constellation
                .bits(s)
                .zip(constellation.bits(s_hat))
                .filter(|(a, b)| a != b)
                .count() as u64;
        }
    }
    bound
}

fn mrc_burst(burst: &SimoBurst, h: &DVector<C64>, name: &str) -> DetectionResult {
    let c = burst.constellation;
    // Column k carries h·conj(s_k).
    let symbols = (1..=burst.data_slots())
        .map(|k| c.slice(h.dotc(&burst.y.column(k).into_owned()).conj()))
        .collect();
    let mut out = DetectionResult::new(name, symbols, c);
    out.channel_estimate = Some(h.clone());
    out
}

/// Single-pilot channel estimate `ĥ = y₀ s₀ / |s₀|²` followed by MRC of the
/// `K` data slots.
pub fn chest_mrc_detect(burst: &SimoBurst) -> Result<DetectionResult> {
    if burst.data_slots() == 0 {
        return Err(Error::DimensionMismatch {
            what: "receive block needs at least one data slot",
            expected: 2,
            found: burst.y.ncols(),
        });
    }
    let h_hat = burst.y.column(0) * (burst.s0 / burst.s0.norm_sqr());
    Ok(mrc_burst(burst, &h_hat, "chest"))
}

/// MRC of the data slots with the true channel (perfect CSIR reference).
pub fn csir_mrc_detect(burst: &SimoBurst, h: &DVector<C64>) -> Result<DetectionResult> {
    if h.len() != burst.bs_antennas() {
        return Err(Error::DimensionMismatch {
            what: "channel vector vs receive antennas",
            expected: burst.bs_antennas(),
            found: h.len(),
        });
    }
    Ok(mrc_burst(burst, h, "csir"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::{build_jed_problem, signs_from_symbols};

    fn brute_force_ml(inst: &CoherentInstance) -> Vec<C64> {
        let c = inst.constellation;
        let pts = c.points();
        let u = inst.users();
        let total = pts.len().pow(u as u32);
        let mut best = (f64::INFINITY, vec![]);
        for idx in 0..total {
            let s: Vec<C64> = (0..u)
                .map(|i| pts[idx / pts.len().pow((u - 1 - i) as u32) % pts.len()])
                .collect();
            let r = (&inst.y - &inst.h * DVector::from_vec(s.clone())).norm_squared();
            if r < best.0 {
                best = (r, s);
            }
        }
        best.1
    }

    #[test]
    fn ml_noiseless_recovers_transmit_vector() {
        for c in [Constellation::Bpsk, Constellation::Qpsk] {
            let (inst, s) = coherent(21, 6, 4, c, 0.0);
            let res = ml_exhaustive(&inst).unwrap();
            assert_eq!(res.symbols, s);
            assert_eq!(res.hard_bits.len(), 4 * c.bits_per_symbol());
        }
    }

    #[test]
    fn ml_ties_resolve_lexicographically() {
        // Two users with identical channels: s = (+1, −1) and (−1, +1) both
        // give H s = 0 and therefore the same residual ‖y‖.
        let one = C64::new(1.0, 0.0);
        let inst = CoherentInstance {
            y: DVector::from_vec(vec![C64::new(0.0, 0.0); 2]),
            h: DMatrix::from_row_slice(2, 2, &[one, one, one, one]),
            constellation: Constellation::Bpsk,
            n0: 0.0,
        };
        let res = ml_exhaustive(&inst).unwrap();
        assert_eq!(res.symbols, vec![one, -one]);
    }

    #[test]
    fn ml_matches_independent_enumeration() {
        let n0 = 2.0 / 10f64.powf(1.0);
        for seed in 0..20 {
            let (inst, _) = coherent(seed, 4, 2, Constellation::Qpsk, n0);
            assert_eq!(ml_exhaustive(&inst).unwrap().symbols, brute_force_ml(&inst));
        }
    }

    #[test]
    fn ml_search_space_guard() {
        let (inst, _) = coherent(0, 4, 11, Constellation::Qpsk, 0.1);
        assert_eq!(
            ml_exhaustive(&inst),
            Err(Error::SearchSpaceTooLarge { candidates: 1 << 22 })
        );
    }

    #[test]
    fn ml_residual_is_minimal_among_detectors() {
        for seed in 0..10 {
            let (inst, s) = coherent(seed, 6, 5, Constellation::Qpsk, 1.0);
            let r = |x: &[C64]| (&inst.y - &inst.h * DVector::from_column_slice(x)).norm_squared();
            let ml = r(&ml_exhaustive(&inst).unwrap().symbols);
            assert!(ml <= r(&mmse_detect(&inst).unwrap().symbols) + 1e-12);
            assert!(ml <= r(&simo_genie_detect(&inst, &s).unwrap().symbols) + 1e-12);
        }
    }

    #[test]
    fn jed_two_candidates_pick_larger_norm() {
        let (burst, _) = burst(5, 4, 1, Constellation::Bpsk, 0.5);
        let res = ml_jed_exhaustive(&burst).unwrap();
        let norm = |s1: f64| {
            (&burst.y * DVector::from_vec(vec![burst.s0, C64::new(s1, 0.0)])).norm()
        };
        let expected = if norm(1.0) >= norm(-1.0) { 1.0 } else { -1.0 };
        assert_eq!(res.symbols, vec![C64::new(expected, 0.0)]);
    }

    #[test]
    fn jed_noiseless_recovers_data() {
        for c in [Constellation::Bpsk, Constellation::Qpsk] {
            let (burst, data) = burst(3, 8, 6, c, 0.0);
            let res = ml_jed_exhaustive(&burst).unwrap();
            assert_eq!(res.symbols, data);
            let h_hat = res.channel_estimate().unwrap();
            assert_eq!(h_hat.len(), 8);
        }
    }

    #[test]
    fn jed_matches_real_problem_minimiser() {
        let n0 = 1.0 / 10f64.powf(0.6);
        let (burst, _) = burst(0, 16, 15, Constellation::Bpsk, n0);
        let p = build_jed_problem(&burst).unwrap();
        let mut best = (f64::INFINITY, vec![]);
        for signs in all_signs(15) {
            let f = p.objective(&signs);
            if f < best.0 {
                best = (f, signs);
            }
        }
        let res = ml_jed_exhaustive(&burst).unwrap();
        assert_eq!(signs_from_symbols(&res.symbols, Constellation::Bpsk), best.1);
    }

    #[test]
    fn mmse_zero_noise_is_zero_forcing() {
        let (inst, s) = coherent(4, 5, 5, Constellation::Qpsk, 0.0);
        assert_eq!(mmse_detect(&inst).unwrap().symbols, s);
    }

    #[test]
    fn mmse_single_user_is_matched_filter() {
        for seed in 0..50 {
            let (inst, _) = coherent(seed, 4, 1, Constellation::Qpsk, 2.0);
            let h = inst.h.column(0).into_owned();
            assert_eq!(
                mmse_detect(&inst).unwrap().symbols,
                vec![mrc_decide(&inst.y, &h, Constellation::Qpsk)]
            );
        }
    }

    #[test]
    fn mmse_singular_zero_forcing() {
        let one = C64::new(1.0, 0.0);
        let inst = CoherentInstance {
            y: DVector::from_vec(vec![one; 2]),
            h: DMatrix::from_row_slice(2, 2, &[one, one, one, one]),
            constellation: Constellation::Bpsk,
            n0: 0.0,
        };
        assert_eq!(mmse_detect(&inst), Err(Error::SingularMatrix));
    }

    #[test]
    fn simo_bound_noiseless_is_error_free() {
        let b = simo_lower_bound(4, Constellation::Qpsk, 0.0, 1000, 1);
        assert_eq!(b.symbol_errors, 0);
        assert_eq!(b.vector_error_rate(8), 0.0);
    }

    #[test]
    fn simo_bound_matches_rayleigh_closed_form() {
        let gamma: f64 = 10.0;
        let trials = 200_000u64;
        let b = simo_lower_bound(1, Constellation::Bpsk, 1.0 / gamma, trials, 7);
        let p = 0.5 * (1.0 - (gamma / (1.0 + gamma)).sqrt());
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (b.bit_error_rate() - p).abs() < 3.0 * sigma,
            "{} vs {p}",
            b.bit_error_rate()
        );
    }

    #[test]
    fn chest_noiseless_exact() {
        for c in [Constellation::Bpsk, Constellation::Qpsk] {
            let (burst, data) = burst(8, 4, 5, c, 0.0);
            assert_eq!(chest_mrc_detect(&burst).unwrap().symbols, data);
        }
    }

    #[test]
    fn csir_uses_supplied_channel() {
        let (burst, data) = burst(8, 4, 5, Constellation::Qpsk, 0.0);
        let h_hat = burst.y.column(0) * burst.s0;
        let res = csir_mrc_detect(&burst, &h_hat).unwrap();
        assert_eq!(res.symbols, data);
        assert_eq!(res.channel_estimate(), Some(&h_hat));
        assert!(csir_mrc_detect(&burst, &DVector::zeros(3)).is_err());
    }
}
