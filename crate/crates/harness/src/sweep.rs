//! Monte-Carlo sweeps over SNR and iteration budget.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use taser_core::baselines::{
    chest_mrc_detect, csir_mrc_detect, ml_exhaustive, ml_jed_exhaustive, mmse_detect, simo_genie_detect,
    DetectionResult,
};
use taser_core::pipeline::{Arithmetic, TaserDetector};
use taser_core::{Constellation, C64};

use crate::channel::{generate_coherent_trial, generate_jed_trial};
use crate::error::{HarnessError, Result};
use crate::stats::wilson_ci_95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SystemMode {
    Coherent,
    Jed,
}

impl SystemMode {
    pub fn name(self) -> &'static str {
        match self {
            SystemMode::Coherent => "coherent",
            SystemMode::Jed => "jed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn constellation(self) -> Constellation {
        match self {
            Modulation::Bpsk => Constellation::Bpsk,
            Modulation::Qpsk => Constellation::Qpsk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArithmeticMode {
    Float,
    Fixed,
}

impl ArithmeticMode {
    fn core(self) -> Arithmetic {
        match self {
            ArithmeticMode::Float => Arithmetic::Float,
            ArithmeticMode::Fixed => Arithmetic::Fixed,
        }
    }
}

/// Registered detectors.
///
/// `taser` follows the sweep's arithmetic setting; `taser-fx` is always the
/// fixed-point model. `simo` is the genie-aided single-user bound evaluated
/// on the same channel draws; `chest` and `csir` are the JED references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Taser,
    TaserFx,
    Mmse,
    Ml,
    Simo,
    Chest,
    Csir,
}

impl DetectorKind {
    pub fn parse(name: &str, mode: SystemMode) -> Result<Self> {
        let kind = match name {
            "taser" => Self::Taser,
            "taser-fx" => Self::TaserFx,
            "ml" => Self::Ml,
            "mmse" if mode == SystemMode::Coherent => Self::Mmse,
            "simo" if mode == SystemMode::Coherent => Self::Simo,
            "chest" if mode == SystemMode::Jed => Self::Chest,
            "csir" if mode == SystemMode::Jed => Self::Csir,
            _ => {
                return Err(HarnessError::UnknownDetector {
                    name: name.to_string(),
                    mode: mode.name(),
                })
            }
        };
        Ok(kind)
    }

    fn is_iterative(self) -> bool {
        matches!(self, Self::Taser | Self::TaserFx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: SystemMode,
    /// Receive antennas `B`.
    pub bs_antennas: usize,
    /// Users `U` (coherent) or data slots `K` (JED).
    pub users_or_slots: usize,
    pub modulation: Modulation,
    pub snr_db_list: Vec<f64>,
    pub t_max_list: Vec<usize>,
    pub alpha: f64,
    pub trials: u64,
    pub seed: u64,
    pub detectors: Vec<String>,
    pub arithmetic: ArithmeticMode,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<Vec<DetectorKind>> {
        let names: Vec<&str> = self.detectors.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(HarnessError::EmptyDetectors);
        }
        let kinds = names
            .iter()
            .map(|n| DetectorKind::parse(n, self.mode))
            .collect::<Result<Vec<_>>>()?;
        let bad = |msg: &str| Err(HarnessError::InvalidConfig(msg.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.snr_db_list.is_empty() || self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return bad("SNR list must be non-empty and finite");
        }
        if kinds.iter().any(|k| k.is_iterative()) {
            if self.t_max_list.is_empty() || self.t_max_list.contains(&0) {
                return bad("t_max list must be non-empty with entries >= 1");
            }
            if !(self.alpha > 0.0 && self.alpha < 1.0) {
                return bad("alpha must lie in (0, 1)");
            }
        }
        if self.bs_antennas == 0 || self.users_or_slots == 0 {
            return bad("system dimensions must be positive");
        }
        if self.trials >= 1 << 40 || self.snr_db_list.len() >= 1 << 24 {
            return bad("too many trials or SNR points");
        }
        Ok(kinds)
    }

    pub fn bits_per_vector(&self) -> u64 {
        (self.users_or_slots * self.modulation.constellation().bits_per_symbol()) as u64
    }

    /// Noise variance for an SNR in dB: `N0 = U / SNR` (coherent, per receive
    /// antenna with unit-energy symbols) or `N0 = 1 / SNR` (JED).
    pub fn n0(&self, snr_db: f64) -> f64 {
        let lin = 10f64.powf(snr_db / 10.0);
        match self.mode {
            SystemMode::Coherent => self.users_or_slots as f64 / lin,
            SystemMode::Jed => 1.0 / lin,
        }
    }

    /// Real dimension `N` of the relaxed problem.
    pub fn problem_dim(&self) -> usize {
        self.users_or_slots * self.modulation.constellation().real_dims() + 1
    }

    fn t_list(&self) -> Vec<usize> {
        let mut t = self.t_max_list.clone();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub detector: String,
    pub mode: SystemMode,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "U_or_K")]
    pub u_or_k: usize,
    pub modulation: Modulation,
    pub arithmetic: ArithmeticMode,
    pub alpha: f64,
    /// 0 for non-iterative detectors.
    pub t_max: usize,
    pub snr_db: f64,
    pub trials: u64,
    pub vector_errors: u64,
    pub bit_errors: u64,
    pub ver: f64,
    pub ber: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// A (detector, t_max) column of the per-trial tally.
#[derive(Debug, Clone)]
struct Slot {
    name: String,
    kind: DetectorKind,
    t_max: usize,
}

fn build_slots(cfg: &SweepConfig, kinds: &[DetectorKind]) -> Vec<Slot> {
    let names: Vec<&str> = cfg.detectors.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let mut slots = Vec::new();
    for (name, &kind) in names.iter().zip(kinds) {
        if slots.iter().any(|s: &Slot| s.name == *name) {
            continue;
        }
        if kind.is_iterative() {
            for t in cfg.t_list() {
                slots.push(Slot {
                    name: name.to_string(),
                    kind,
                    t_max: t,
                });
            }
        } else {
            slots.push(Slot {
                name: name.to_string(),
                kind,
                t_max: 0,
            });
        }
    }
    slots
}

/// Instance RNG shared by every detector at one (SNR point, trial).
///
/// The key comes from the sweep seed; the ChaCha stream id packs the SNR
/// index (high bits) and trial index (low 40 bits), so substreams never
/// overlap.
pub fn trial_rng(seed: u64, snr_index: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((snr_index as u64) << 40) | trial);
    rng
}

fn count_errors(res: &DetectionResult, truth: &[C64], c: Constellation) -> (u64, u64) {
    let mut bits = 0;
    for (&a, &b) in res.symbols.iter().zip(truth) {
        if a != b {
            bits += c.bits(a).zip(c.bits(b)).filter(|(x, y)| x != y).count() as u64;
        }
    }
    (u64::from(res.symbols != truth), bits)
}

fn taser_for(cfg: &SweepConfig, kind: DetectorKind) -> TaserDetector {
    TaserDetector {
        alpha: cfg.alpha,
        arithmetic: match kind {
            DetectorKind::TaserFx => Arithmetic::Fixed,
            _ => cfg.arithmetic.core(),
        },
    }
}

/// Runs every detector on one shared instance; returns (vector, bit) errors
/// per slot.
fn run_trial(cfg: &SweepConfig, slots: &[Slot], snr_index: usize, trial: u64) -> Result<Vec<(u64, u64)>> {
    let snr_db = cfg.snr_db_list[snr_index];
    let n0 = cfg.n0(snr_db);
    let c = cfg.modulation.constellation();
    let mut rng = trial_rng(cfg.seed, snr_index, trial);
    let wrap = |source| HarnessError::Trial { trial, snr_db, source };
    let t_list = cfg.t_list();
    let mut out = vec![(0, 0); slots.len()];

    let mut i = 0;
    match cfg.mode {
        SystemMode::Coherent => {
            let (inst, truth) = generate_coherent_trial(cfg.bs_antennas, cfg.users_or_slots, c, n0, &mut rng);
            while i < slots.len() {
                let kind = slots[i].kind;
                if kind.is_iterative() {
                    let res = taser_for(cfg, kind).detect_coherent_at(&inst, &t_list).map_err(wrap)?;
                    for r in res {
                        out[i] = count_errors(&r, &truth, c);
                        i += 1;
                    }
                    continue;
                }
                let res = match kind {
                    DetectorKind::Mmse => mmse_detect(&inst),
                    DetectorKind::Ml => ml_exhaustive(&inst),
                    DetectorKind::Simo => simo_genie_detect(&inst, &truth),
                    _ => unreachable!("validated detector set"),
                }
                .map_err(wrap)?;
                out[i] = count_errors(&res, &truth, c);
                i += 1;
            }
        }
        SystemMode::Jed => {
            let (burst, truth, h) = generate_jed_trial(cfg.bs_antennas, cfg.users_or_slots, c, n0, &mut rng);
            while i < slots.len() {
                let kind = slots[i].kind;
                if kind.is_iterative() {
                    let res = taser_for(cfg, kind).detect_jed_at(&burst, &t_list).map_err(wrap)?;
                    for r in res {
                        out[i] = count_errors(&r, &truth, c);
                        i += 1;
                    }
                    continue;
                }
                let res = match kind {
                    DetectorKind::Ml => ml_jed_exhaustive(&burst),
                    DetectorKind::Chest => chest_mrc_detect(&burst),
                    DetectorKind::Csir => csir_mrc_detect(&burst, &h),
                    _ => unreachable!("validated detector set"),
                }
                .map_err(wrap)?;
                out[i] = count_errors(&res, &truth, c);
                i += 1;
            }
        }
    }
    Ok(out)
}

fn add(mut a: Vec<(u64, u64)>, b: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    for (x, y) in a.iter_mut().zip(b) {
        x.0 += y.0;
        x.1 += y.1;
    }
    a
}

/// Runs the sweep; rows sorted by (detector, SNR, t_max).
///
/// All detectors see the same channel, symbol and noise draws at a given
/// (SNR point, trial), so curve differences are not diluted by independent
/// sampling noise. Trials run in parallel on the current rayon pool; the
/// integer tallies make the result independent of scheduling.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let kinds = cfg.validate()?;
    let slots = build_slots(cfg, &kinds);
    let bits_per_vector = cfg.bits_per_vector();
    let mut rows = Vec::with_capacity(slots.len() * cfg.snr_db_list.len());
    for (snr_index, &snr_db) in cfg.snr_db_list.iter().enumerate() {
        let tally = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg, &slots, snr_index, trial))
            .try_reduce(|| vec![(0, 0); slots.len()], |a, b| Ok(add(a, b)))?;
        for (slot, (vector_errors, bit_errors)) in slots.iter().zip(tally) {
            let (ci_lo, ci_hi) = wilson_ci_95(vector_errors, cfg.trials);
            let arithmetic = match slot.kind {
                DetectorKind::Taser => cfg.arithmetic,
                DetectorKind::TaserFx => ArithmeticMode::Fixed,
                _ => ArithmeticMode::Float,
            };
            rows.push(SweepRow {
                detector: slot.name.clone(),
                mode: cfg.mode,
                b: cfg.bs_antennas,
                u_or_k: cfg.users_or_slots,
                modulation: cfg.modulation,
                arithmetic,
                alpha: cfg.alpha,
                t_max: slot.t_max,
                snr_db,
                trials: cfg.trials,
                vector_errors,
                bit_errors,
                ver: vector_errors as f64 / cfg.trials as f64,
                ber: bit_errors as f64 / (cfg.trials * bits_per_vector) as f64,
                ci_lo,
                ci_hi,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.detector
            .cmp(&b.detector)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.t_max.cmp(&b.t_max))
    });
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SweepConfig {
        SweepConfig {
            mode: SystemMode::Coherent,
            bs_antennas: 8,
            users_or_slots: 2,
            modulation: Modulation::Qpsk,
            snr_db_list: vec![0.0, 10.0],
            t_max_list: vec![5, 2],
            alpha: 0.99,
            trials: 50,
            seed: 3,
            detectors: vec!["taser".into(), "mmse".into(), "ml".into(), "simo".into()],
            arithmetic: ArithmeticMode::Float,
        }
    }

    #[test]
    fn rows_are_sorted_and_consistent() {
        let c = cfg();
        let rows = run_sweep(&c).unwrap();
        assert_eq!(rows.len(), 2 * (2 + 1 + 1 + 1));
        let keys: Vec<_> = rows.iter().map(|r| (r.detector.clone(), r.snr_db, r.t_max)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        assert_eq!(keys, sorted);
        for r in &rows {
            assert_eq!(r.ver, r.vector_errors as f64 / r.trials as f64);
            assert!(r.bit_errors <= r.vector_errors * c.bits_per_vector());
            assert!(r.ci_lo <= r.ver && r.ver <= r.ci_hi);
            assert_eq!(r.t_max == 0, r.detector != "taser");
        }
    }

    #[test]
    fn unknown_and_misplaced_detectors_rejected() {
        let mut c = cfg();
        c.detectors = vec!["sphere".into()];
        assert!(matches!(run_sweep(&c), Err(HarnessError::UnknownDetector { .. })));
        c.detectors = vec!["chest".into()];
        assert!(matches!(run_sweep(&c), Err(HarnessError::UnknownDetector { .. })));
        c.detectors = vec![];
        assert!(matches!(run_sweep(&c), Err(HarnessError::EmptyDetectors)));
    }

    #[test]
    fn trial_errors_carry_the_trial_index() {
        let mut c = cfg();
        c.users_or_slots = 11;
        c.detectors = vec!["ml".into()];
        match run_sweep(&c) {
            Err(HarnessError::Trial { source, .. }) => {
                assert!(matches!(source, taser_core::Error::SearchSpaceTooLarge { .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn substreams_differ() {
        use rand::Rng;
        let a: u64 = trial_rng(1, 0, 0).random();
        let b: u64 = trial_rng(1, 0, 1).random();
        let c: u64 = trial_rng(1, 1, 0).random();
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn noiseless_jed_sweep_is_error_free() {
        let c = SweepConfig {
            mode: SystemMode::Jed,
            bs_antennas: 8,
            users_or_slots: 5,
            modulation: Modulation::Bpsk,
            snr_db_list: vec![60.0],
            t_max_list: vec![10],
            alpha: 0.99,
            trials: 20,
            seed: 0,
            detectors: vec!["taser".into(), "ml".into(), "chest".into(), "csir".into()],
            arithmetic: ArithmeticMode::Float,
        };
        for r in run_sweep(&c).unwrap() {
            assert_eq!(r.vector_errors, 0, "{}", r.detector);
        }
    }
}
