//! End-to-end TASER detectors: problem construction, preconditioning,
//! iterations in float or fixed-point arithmetic, symbol extraction.

use crate::baselines::{jed_channel_estimate, DetectionResult};
use crate::error::{Error, Result};
use crate::fixed_point::taser_fx_checkpoints;
use crate::model::{
    build_coherent_problem, build_jed_problem, extract_complex_solution, jacobi_precondition,
    CoherentInstance, RealProblem, SimoBurst,
};
use crate::taser::{solve_checkpoints, TaserConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arithmetic {
    Float,
    Fixed,
}

impl Arithmetic {
    pub fn name(self) -> &'static str {
        match self {
            Arithmetic::Float => "float",
            Arithmetic::Fixed => "fixed",
        }
    }
}

/// TASER detector with a step-size factor and arithmetic choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaserDetector {
    pub alpha: f64,
    pub arithmetic: Arithmetic,
}

impl Default for TaserDetector {
    fn default() -> Self {
        Self {
            alpha: TaserConfig::default().alpha,
            arithmetic: Arithmetic::Float,
        }
    }
}

impl TaserDetector {
    pub fn name(&self) -> &'static str {
        match self.arithmetic {
            Arithmetic::Float => "taser",
            Arithmetic::Fixed => "taser-fx",
        }
    }

    /// Sign vectors after each iteration count in `t_list` (sorted), from a
    /// single trajectory.
    fn signs_at(&self, prob: &RealProblem, t_list: &[usize]) -> Result<Vec<Vec<i8>>> {
        if t_list.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("iteration counts must be sorted".into()));
        }
        let pre = jacobi_precondition(prob, self.alpha)?;
        match self.arithmetic {
            Arithmetic::Float => solve_checkpoints(&pre, t_list),
            Arithmetic::Fixed => taser_fx_checkpoints(&pre, t_list),
        }
    }

    pub fn detect_coherent_at(&self, inst: &CoherentInstance, t_list: &[usize]) -> Result<Vec<DetectionResult>> {
        let prob = build_coherent_problem(inst)?;
        self.signs_at(&prob, t_list)?
            .into_iter()
            .map(|signs| {
                let symbols = extract_complex_solution(&signs, &prob)?;
                Ok(DetectionResult::new(self.name(), symbols, inst.constellation))
            })
            .collect()
    }

    pub fn detect_jed_at(&self, burst: &SimoBurst, t_list: &[usize]) -> Result<Vec<DetectionResult>> {
        let prob = build_jed_problem(burst)?;
        self.signs_at(&prob, t_list)?
            .into_iter()
            .map(|signs| {
                let data = extract_complex_solution(&signs, &prob)?;
                let h_hat = jed_channel_estimate(burst, &data);
                Ok(DetectionResult::new(self.name(), data, burst.constellation).with_channel_estimate(h_hat))
            })
            .collect()
    }

    pub fn detect_coherent(&self, inst: &CoherentInstance, t_max: usize) -> Result<DetectionResult> {
        Ok(self.detect_coherent_at(inst, &[t_max])?.remove(0))
    }

    pub fn detect_jed(&self, burst: &SimoBurst, t_max: usize) -> Result<DetectionResult> {
        Ok(self.detect_jed_at(burst, &[t_max])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::Constellation;

    #[test]
    fn noiseless_coherent_recovers_symbols() {
        for c in [Constellation::Bpsk, Constellation::Qpsk] {
            let (inst, s) = coherent(11, 64, 4, c, 0.0);
            for arithmetic in [Arithmetic::Float, Arithmetic::Fixed] {
                let det = TaserDetector { alpha: 0.99, arithmetic };
                let out = det.detect_coherent(&inst, 10).unwrap();
                assert_eq!(out.symbols, s, "{c:?} {arithmetic:?}");
                assert_eq!(out.hard_bits.len(), 4 * c.bits_per_symbol());
            }
        }
    }

    #[test]
    fn noiseless_jed_recovers_data_and_channel_direction() {
        let (burst, data) = burst(12, 16, 7, Constellation::Qpsk, 0.0);
        let out = TaserDetector::default().detect_jed(&burst, 20).unwrap();
        assert_eq!(out.symbols, data);
        let h_hat = out.channel_estimate().unwrap();
        assert_eq!(h_hat.len(), 16);
    }

    #[test]
    fn unsorted_checkpoints_rejected() {
        let (inst, _) = coherent(13, 8, 2, Constellation::Bpsk, 0.1);
        assert!(TaserDetector::default().detect_coherent_at(&inst, &[3, 1]).is_err());
    }

    #[test]
    fn names() {
        assert_eq!(TaserDetector::default().name(), "taser");
        let fx = TaserDetector {
            alpha: 0.99,
            arithmetic: Arithmetic::Fixed,
        };
        assert_eq!(fx.name(), "taser-fx");
    }
}
