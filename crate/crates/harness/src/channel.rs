//! i.i.d. flat Rayleigh fading trial generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use taser_core::baselines::complex_normal;
use taser_core::{CoherentInstance, Constellation, SimoBurst, C64};

fn random_symbols<R: Rng + ?Sized>(rng: &mut R, c: Constellation, n: usize) -> Vec<C64> {
    let pts = c.points();
    (0..n).map(|_| pts[rng.random_range(0..pts.len())]).collect()
}

/// `y = Hs + n` with `H_ij ~ CN(0,1)`, uniform symbols and `n ~ CN(0, n0·I)`.
pub fn generate_coherent_trial<R: Rng + ?Sized>(
    b: usize,
    u: usize,
    constellation: Constellation,
    n0: f64,
    rng: &mut R,
) -> (CoherentInstance, Vec<C64>) {
    let h = DMatrix::from_fn(b, u, |_, _| complex_normal(rng, 1.0));
    let s = random_symbols(rng, constellation, u);
    let noise = DVector::from_fn(b, |_, _| complex_normal(rng, n0));
    let y = &h * DVector::from_column_slice(&s) + noise;
    (CoherentInstance { y, h, constellation, n0 }, s)
}

/// Block-fading SIMO burst over `K + 1` slots, pilot `s₀ = points()[0]`.
///
/// Slot `k` receives `h·conj(s_k) + n_k`. Returns the burst, the `K` data
/// symbols and the channel.
pub fn generate_jed_trial<R: Rng + ?Sized>(
    b: usize,
    k: usize,
    constellation: Constellation,
    n0: f64,
    rng: &mut R,
) -> (SimoBurst, Vec<C64>, DVector<C64>) {
    let h = DVector::from_fn(b, |_, _| complex_normal(rng, 1.0));
    let s0 = constellation.points()[0];
    let data = random_symbols(rng, constellation, k);
    let y = DMatrix::from_fn(b, k + 1, |i, j| {
        let s = if j == 0 { s0 } else { data[j - 1] };
        h[i] * s.conj() + complex_normal(rng, n0)
    });
    (SimoBurst { y, s0, constellation, n0 }, data, h)
}
