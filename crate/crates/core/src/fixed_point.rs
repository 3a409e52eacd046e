//! Bit-accurate model of the 14-bit fixed-point TASER datapath.
//!
//! Word formats (total bits, fraction bits):
//!
//! | quantity                          | format        |
//! |-----------------------------------|---------------|
//! | `L̃`, `V` rows `1..N−1`            | (14, 8)       |
//! | `L̃`, `V` row `N`                  | (14, 7)       |
//! | `L̃_{N,N}` (constant register)     | (14, 5)       |
//! | `T̂ = 2τT̃`                          | (14, 11)      |
//! | `D_jj`                            | (14, 8)       |
//! | inverse square-root LUT word      | (14, 13) unsigned |
//! | column scale factor `D_jj/‖v_j‖`  | (14, 12) unsigned |
//!
//! Every product and sum is carried at full width and rounded once
//! (round-to-nearest-even) into the destination format, saturating at its
//! bounds. Before quantisation the problem is rescaled by a power of two so
//! the largest `D_jj` (`j < N`) lies in `[4, 8)`; the relaxation is
//! invariant to this scaling. Squared column norms are shifted by an even
//! power of two so their typical value lands mid-table, and the shift is
//! undone on the scale factor.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::PrecondProblem;
use crate::taser::TaserConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
    pub signed: bool,
}

impl QFormat {
    pub const fn signed(total_bits: u32, frac_bits: u32) -> Self {
        Self {
            total_bits,
            frac_bits,
            signed: true,
        }
    }

    pub const fn unsigned(total_bits: u32, frac_bits: u32) -> Self {
        Self {
            total_bits,
            frac_bits,
            signed: false,
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.frac_bits >= self.total_bits || self.total_bits > 32 {
            return Err(Error::InvalidConfig(format!(
                "format ({}, {}) needs 0 <= frac < total <= 32",
                self.total_bits, self.frac_bits
            )));
        }
        Ok(self)
    }

    pub fn max_raw(self) -> i64 {
        if self.signed {
            (1i64 << (self.total_bits - 1)) - 1
        } else {
            (1i64 << self.total_bits) - 1
        }
    }

    pub fn min_raw(self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    /// Weight of one least-significant bit.
    pub fn lsb(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }
}

pub const L_FORMAT: QFormat = QFormat::signed(14, 8);
pub const LAST_ROW_FORMAT: QFormat = QFormat::signed(14, 7);
pub const CORNER_FORMAT: QFormat = QFormat::signed(14, 5);
pub const T_HAT_FORMAT: QFormat = QFormat::signed(14, 11);
pub const D_FORMAT: QFormat = QFormat::signed(14, 8);
pub const LUT_WORD_FORMAT: QFormat = QFormat::unsigned(14, 13);
/// Scaled squared column norm as presented to the LUT address decoder.
pub const LUT_INPUT_FORMAT: QFormat = QFormat::unsigned(24, 20);
pub const SCALE_FORMAT: QFormat = QFormat::unsigned(14, 12);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    NearestEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxValue {
    raw: i64,
    format: QFormat,
}

impl FxValue {
    /// Wraps a raw word, saturating it into the format's range.
    pub fn from_raw(raw: i64, format: QFormat) -> Self {
        Self {
            raw: raw.clamp(format.min_raw(), format.max_raw()),
            format,
        }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }
}

/// `v / 2^shift` rounded to nearest, ties to even.
fn round_shift_right(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Re-expresses a wide value with `from_frac` fraction bits in `format`.
fn requantize(v: i128, from_frac: i32, format: QFormat) -> i64 {
    let shift = format.frac_bits as i32 - from_frac;
    let r = if shift >= 0 {
        v << shift
    } else {
        round_shift_right(v, (-shift) as u32)
    };
    r.clamp(format.min_raw() as i128, format.max_raw() as i128) as i64
}

/// Nearest representable value, saturating at the format bounds.
pub fn fx_quantize(x: f64, format: QFormat, _mode: Rounding) -> FxValue {
    let scaled = (x * (format.frac_bits as f64).exp2()).round_ties_even();
    let raw = if scaled.is_nan() {
        0
    } else {
        scaled.clamp(format.min_raw() as f64, format.max_raw() as f64) as i64
    };
    FxValue { raw, format }
}

/// Subtract-accumulate `acc − a·b`: exact product and difference, one
/// rounding into `acc`'s format.
pub fn fx_mac(acc: FxValue, a: FxValue, b: FxValue) -> FxValue {
    let prod_frac = (a.format.frac_bits + b.format.frac_bits) as i32;
    let acc_frac = acc.format.frac_bits as i32;
    let wide_frac = prod_frac.max(acc_frac);
    let acc_w = (acc.raw as i128) << (wide_frac - acc_frac);
    let prod_w = ((a.raw as i128) * (b.raw as i128)) << (wide_frac - prod_frac);
    FxValue {
        raw: requantize(acc_w - prod_w, wide_frac, acc.format),
        format: acc.format,
    }
}

pub const LUT_ADDRESS_BITS: u32 = 11;
pub const LUT_ENTRIES: usize = 1 << LUT_ADDRESS_BITS;
/// log2 of the reciprocal cell width.
const LUT_CELL_BITS: u32 = 9;
/// Lower end of the addressed input range; cells cover `[0.5, 4.5)`.
pub const LUT_INPUT_MIN: f64 = 0.5;

/// 2¹¹-entry inverse square-root table, 14-bit words with 13 fraction bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvSqrtLut {
    table: Vec<u16>,
}

impl Default for InvSqrtLut {
    fn default() -> Self {
        Self::new()
    }
}

impl InvSqrtLut {
    pub fn new() -> Self {
        let cell = (-(LUT_CELL_BITS as f64)).exp2();
        let table = (0..LUT_ENTRIES)
            .map(|i| {
                let mid = LUT_INPUT_MIN + (i as f64 + 0.5) * cell;
                fx_quantize(1.0 / mid.sqrt(), LUT_WORD_FORMAT, Rounding::NearestEven).raw as u16
            })
            .collect();
        Self { table }
    }

    /// Shared default table.
    pub fn shared() -> &'static Self {
        static LUT: OnceLock<InvSqrtLut> = OnceLock::new();
        LUT.get_or_init(Self::new)
    }

    pub fn entries(&self) -> &[u16] {
        &self.table
    }

    /// `[lo, hi)` covered by the address decoder; inputs outside clamp to
    /// the first or last cell.
    pub fn input_range() -> (f64, f64) {
        let width = (LUT_ENTRIES as f64) * (-(LUT_CELL_BITS as f64)).exp2();
        (LUT_INPUT_MIN, LUT_INPUT_MIN + width)
    }

    /// Cell address of `x`: the top 11 bits of `x − 0.5` in a format with
    /// two integer bits.
    pub fn address(&self, x: FxValue) -> usize {
        let frac = x.format.frac_bits as i32;
        let offset = (x.raw as i128) - requantize_exact(LUT_INPUT_MIN, frac);
        if offset <= 0 {
            return 0;
        }
        let shift = frac - LUT_CELL_BITS as i32;
        let idx = if shift >= 0 {
            offset >> shift
        } else {
            offset << (-shift)
        };
        idx.min(LUT_ENTRIES as i128 - 1) as usize
    }

    /// One 4-digit hexadecimal word per line, address order.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(LUT_ENTRIES * 5);
        for w in &self.table {
            s.push_str(&format!("{w:04x}\n"));
        }
        s
    }

    pub fn write_hex(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_hex().as_bytes())
    }
}

/// Raw representation of an exactly representable constant.
fn requantize_exact(x: f64, frac: i32) -> i128 {
    (x * (frac as f64).exp2()) as i128
}

/// `1/√x` by table lookup, result in (14, 13) unsigned.
pub fn inv_sqrt_lookup(x: FxValue, lut: &InvSqrtLut) -> Result<FxValue> {
    if x.raw <= 0 {
        return Err(Error::DomainError { raw: x.raw });
    }
    Ok(FxValue {
        raw: lut.table[lut.address(x)] as i64,
        format: LUT_WORD_FORMAT,
    })
}

/// Largest array the model accepts.
pub const MAX_ARRAY: usize = 65;

/// Fixed-point TASER state: the lower triangle of `L̃` as raw words.
///
/// Rows `0..N−1` hold (14, 8) words, row `N−1` holds (14, 7) words except
/// for the constant corner `L̃_{N,N}`, which is a (14, 5) register.
#[derive(Debug, Clone, PartialEq)]
pub struct FxTaser {
    n: usize,
    t_hat: Vec<i64>,
    d: Vec<i64>,
    corner: i64,
    l: Vec<i64>,
    v: Vec<i64>,
    /// Even exponent `e`: the LUT sees `‖v_j‖² · 2^{−e}`.
    lut_shift: i32,
    lut_in_range: Vec<bool>,
}

impl FxTaser {
    pub fn new(pre: &PrecondProblem) -> Result<Self> {
        let n = pre.n_dim();
        if n > MAX_ARRAY {
            return Err(Error::ArrayTooLarge { n, max: MAX_ARRAY });
        }
        if n < 2 {
            return Err(Error::InvalidConfig("fixed-point array needs N >= 2".into()));
        }
        let d = pre.d_diag.as_slice();
        let d_max = d[..n - 1].iter().cloned().fold(0.0, f64::max);
        let scale = (2 - d_max.log2().floor() as i32) as f64;
        let scale = scale.exp2();

        let q = |x: f64, fmt| fx_quantize(x, fmt, Rounding::NearestEven).raw;
        let d_raw: Vec<i64> = d[..n - 1].iter().map(|&x| q(x * scale, D_FORMAT)).collect();
        let corner = q(d[n - 1] * scale, CORNER_FORMAT);

        let t_hat_f = pre.scaled_gradient_matrix();
        let mut t_hat = vec![0; n * n];
        for k in 0..n {
            for j in 0..n {
                t_hat[k * n + j] = q(t_hat_f[(k, j)], T_HAT_FORMAT);
            }
        }

        let mean_sq = d_raw
            .iter()
            .map(|&r| (r as f64 * D_FORMAT.lsb()).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let lut_shift = 2 * (mean_sq.log2() / 2.0).floor() as i32;

        let mut l = vec![0; n * n];
        for (k, &dk) in d_raw.iter().enumerate() {
            l[k * n + k] = dk;
        }
        l[n * n - 1] = corner;
        Ok(Self {
            n,
            t_hat,
            d: d_raw,
            corner,
            v: l.clone(),
            l,
            lut_shift,
            lut_in_range: vec![true; n - 1],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn row_format(&self, i: usize) -> QFormat {
        if i + 1 == self.n {
            LAST_ROW_FORMAT
        } else {
            L_FORMAT
        }
    }

    /// One iteration: tril product, squared norms, LUT scaling.
    pub fn step(&mut self) -> Result<()> {
        let n = self.n;
        let last = n - 1;
        let t_frac = T_HAT_FORMAT.frac_bits as i32;

        for i in 0..n {
            let fmt = self.row_format(i);
            let f = fmt.frac_bits as i32;
            let wide = f + t_frac;
            let cols = if i == last { last } else { i + 1 };
            for j in 0..cols {
                let mut acc = (self.l[i * n + j] as i128) << t_frac;
                for k in 0..=i {
                    let (lik, shift) = if i == last && k == last {
                        (self.corner, wide - CORNER_FORMAT.frac_bits as i32 - t_frac)
                    } else {
                        (self.l[i * n + k], 0)
                    };
                    acc -= ((lik as i128) * (self.t_hat[k * n + j] as i128)) << shift;
                }
                self.v[i * n + j] = requantize(acc, wide, fmt);
            }
        }

        let lut = InvSqrtLut::shared();
        let (lo, hi) = InvSqrtLut::input_range();
        let norm_frac = 2 * L_FORMAT.frac_bits as i32;
        let last_shift = norm_frac - 2 * LAST_ROW_FORMAT.frac_bits as i32;
        for j in 0..last {
            let mut sq: i128 = 0;
            for i in j..last {
                let x = self.v[i * n + j] as i128;
                sq += x * x;
            }
            let x = self.v[last * n + j] as i128;
            sq += (x * x) << last_shift;
            if sq == 0 {
                return Err(Error::ZeroColumn { column: j });
            }

            let lut_in = FxValue {
                raw: requantize(sq, norm_frac + self.lut_shift, LUT_INPUT_FORMAT),
                format: LUT_INPUT_FORMAT,
            };
            let in_value = lut_in.to_f64();
            self.lut_in_range[j] = in_value >= lo && in_value < hi;
            let inv = inv_sqrt_lookup(lut_in, lut)?;

            let prod = (self.d[j] as i128) * (inv.raw as i128);
            let prod_frac = (D_FORMAT.frac_bits + LUT_WORD_FORMAT.frac_bits) as i32 + self.lut_shift / 2;
            let scale = requantize(prod, prod_frac, SCALE_FORMAT) as i128;

            for i in j..n {
                let fmt = self.row_format(i);
                let f = fmt.frac_bits as i32;
                let p = (self.v[i * n + j] as i128) * scale;
                self.l[i * n + j] = requantize(p, f + SCALE_FORMAT.frac_bits as i32, fmt);
            }
        }
        Ok(())
    }

    /// `sign(L̃_{N,k})` for `k < N`, zero deciding `+1`.
    pub fn signs(&self) -> Vec<i8> {
        let last = self.n - 1;
        (0..last)
            .map(|k| if self.l[last * self.n + k] < 0 { -1 } else { 1 })
            .collect()
    }

    /// Dequantised `L̃` entry (in the internally rescaled units).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == self.n - 1 && j == self.n - 1 {
            return self.corner as f64 * CORNER_FORMAT.lsb();
        }
        self.l[i * self.n + j] as f64 * self.row_format(i).lsb()
    }

    /// Raw words of the lower triangle, row by row.
    pub fn raw_factor(&self) -> Vec<i64> {
        (0..self.n)
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .map(|(i, j)| self.l[i * self.n + j])
            .collect()
    }

    pub fn column_norm(&self, k: usize) -> f64 {
        (k..self.n).map(|i| self.entry(i, k).powi(2)).sum::<f64>().sqrt()
    }

    /// Quantised, rescaled `D_kk` the column norms are driven to.
    pub fn target_norm(&self, k: usize) -> f64 {
        if k == self.n - 1 {
            self.corner as f64 * CORNER_FORMAT.lsb()
        } else {
            self.d[k] as f64 * D_FORMAT.lsb()
        }
    }

    /// Whether column `k`'s last LUT input fell inside the addressed range.
    pub fn lut_input_in_range(&self, k: usize) -> bool {
        self.lut_in_range[k]
    }
}

/// Algorithm iterations entirely in the modelled fixed-point datapath.
pub fn taser_solve_fx(pre: &PrecondProblem, cfg: &TaserConfig) -> Result<Vec<i8>> {
    cfg.validate()?;
    let mut state = FxTaser::new(pre)?;
    for _ in 0..cfg.t_max {
        state.step()?;
    }
    Ok(state.signs())
}

/// Fixed-point signs after each iteration count in `checkpoints`.
pub fn taser_fx_checkpoints(pre: &PrecondProblem, checkpoints: &[usize]) -> Result<Vec<Vec<i8>>> {
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("checkpoints must be sorted".into()));
    }
    let mut state = FxTaser::new(pre)?;
    let mut done = 0;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        while done < t {
            state.step()?;
            done += 1;
        }
        out.push(state.signs());
    }
    Ok(out)
}
