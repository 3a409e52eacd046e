//! Cycle-level and multiplication-count model of the triangular systolic
//! array.
//!
//! One iteration takes `N` cycles for the tril product, one more for the
//! last squared column norm, two in the scale unit, one to broadcast the
//! scale factor and one to apply it (`N + 5`), plus two stage-register
//! penalty cycles around the broadcast units.

/// Cycles per iteration on top of `N`.
pub const SCHEDULE_OVERHEAD: u64 = 5;
/// Stage-register penalty cycles per iteration.
pub const PENALTY_CYCLES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayGeometry {
    pub n_dim: usize,
    pub pe_count: usize,
}

impl ArrayGeometry {
    pub fn new(n_dim: usize) -> Self {
        Self {
            n_dim,
            pe_count: n_dim * (n_dim + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub n_dim: usize,
    pub t_max: u64,
    pub cycles_per_iteration: u64,
    pub total_latency_cycles: u64,
    pub real_multiplications: u64,
}

pub fn cycles_per_iteration(n_dim: usize) -> u64 {
    n_dim as u64 + SCHEDULE_OVERHEAD + PENALTY_CYCLES
}

/// Latency and multiplication count for `t_max` iterations on an `N`-array.
///
/// # Panics
/// If `n_dim < 2` or `t_max == 0`.
pub fn cycle_model(n_dim: usize, t_max: u64) -> CostReport {
    assert!(n_dim >= 2, "array needs N >= 2");
    assert!(t_max >= 1, "t_max must be at least 1");
    let per_iter = cycles_per_iteration(n_dim);
    CostReport {
        n_dim,
        t_max,
        cycles_per_iteration: per_iter,
        total_latency_cycles: t_max * per_iter,
        real_multiplications: mult_count(n_dim, t_max),
    }
}

/// Real multiplications for `t_max` iterations:
/// `t_max · (N³/3 + 3N²/2 + 13N/6)`.
///
/// Per iteration: `Σᵢ i²` for the triangular product, `N(N+1)/2`
/// squarings, `N` products of `D_jj` with the inverse square root and
/// `N(N+1)/2` column-scaling products.
pub fn mult_count(n_dim: usize, t_max: u64) -> u64 {
    let n = n_dim as u64;
    t_max * (2 * n * n * n + 9 * n * n + 13 * n) / 6
}

/// Detection throughput in bit/s.
pub fn throughput_model(n_dim: usize, t_max: u64, clock_hz: f64, bits_per_vector: u64) -> f64 {
    let latency = cycle_model(n_dim, t_max).total_latency_cycles;
    bits_per_vector as f64 * clock_hz / latency as f64
}
