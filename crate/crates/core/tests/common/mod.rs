#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taser_core::baselines::complex_normal;
use taser_core::{CoherentInstance, Constellation, SimoBurst, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn symbols(r: &mut ChaCha8Rng, c: Constellation, n: usize) -> Vec<C64> {
    let pts = c.points();
    (0..n).map(|_| pts[r.random_range(0..pts.len())]).collect()
}

/// `y = Hs + n` with i.i.d. CN(0,1) channel and CN(0, n0) noise.
pub fn coherent(seed: u64, b: usize, u: usize, c: Constellation, n0: f64) -> (CoherentInstance, Vec<C64>) {
    let mut r = rng(seed);
    let h = DMatrix::from_fn(b, u, |_, _| complex_normal(&mut r, 1.0));
    let s = symbols(&mut r, c, u);
    let noise = DVector::from_fn(b, |_, _| complex_normal(&mut r, n0));
    let y = &h * DVector::from_column_slice(&s) + noise;
    (CoherentInstance { y, h, constellation: c, n0 }, s)
}

/// SIMO burst with column k = h·conj(s_k) + noise and pilot `points()[0]`.
pub fn burst(seed: u64, b: usize, k: usize, c: Constellation, n0: f64) -> (SimoBurst, Vec<C64>) {
    let mut r = rng(seed);
    let h = DVector::from_fn(b, |_, _| complex_normal(&mut r, 1.0));
    let s0 = c.points()[0];
    let data = symbols(&mut r, c, k);
    let y = DMatrix::from_fn(b, k + 1, |i, j| {
        let s = if j == 0 { s0 } else { data[j - 1] };
        h[i] * s.conj()
    }) + DMatrix::from_fn(b, k + 1, |_, _| complex_normal(&mut r, n0));
    (SimoBurst { y, s0, constellation: c, n0 }, data)
}

pub fn n0_coherent(users: usize, snr_db: f64) -> f64 {
    users as f64 / 10f64.powf(snr_db / 10.0)
}
