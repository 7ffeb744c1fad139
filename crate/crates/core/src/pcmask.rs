//! Periodical checkerboard mask over the time axis of a window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary `T x D` mask, stored time-major. Entry `(t, d)` equals
/// `floor(t / period) mod 2`, independent of `d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PCMask {
    bits: Vec<u8>,
    window_len: usize,
    dims: usize,
    period: usize,
}

impl PCMask {
    /// Build the mask for global period `period`. Periods that would leave
    /// the window single-valued (`period >= T`) are clamped to `ceil(T / 2)`.
    pub fn build(period: usize, window_len: usize, dims: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidArgument("mask period must be positive".into()));
        }
        if window_len < 2 || dims == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask needs T >= 2 and D >= 1, got T = {window_len}, D = {dims}"
            )));
        }
        let period = if period >= window_len {
            window_len.div_ceil(2)
        } else {
            period
        };
        let bits = (0..window_len)
            .flat_map(|t| std::iter::repeat_n(((t / period) % 2) as u8, dims))
            .collect();
        Ok(Self {
            bits,
            window_len,
            dims,
            period,
        })
    }

    /// First half of the window zero, second half one.
    pub fn half_split(window_len: usize, dims: usize) -> Result<Self> {
        if window_len < 2 || dims == 0 {
            return Err(Error::InvalidArgument("mask needs T >= 2 and D >= 1".into()));
        }
        let cut = window_len / 2;
        let bits = (0..window_len)
            .flat_map(|t| std::iter::repeat_n(u8::from(t >= cut), dims))
            .collect();
        Ok(Self {
            bits,
            window_len,
            dims,
            period: cut,
        })
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| 1 - b).collect(),
            ..self.clone()
        }
    }

    /// Effective block length after clamping.
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, t: usize, d: usize) -> u8 {
        self.bits[t * self.dims + d]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Mask as float64 values in row-major order.
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }

    /// One time-pattern row (the mask is constant across dimensions).
    pub fn time_pattern(&self) -> Vec<u8> {
        self.bits.iter().step_by(self.dims).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn period_two() {
        let m = PCMask::build(2, 8, 1).unwrap();
        assert_eq!(m.time_pattern(), vec![0, 0, 1, 1, 0, 0, 1, 1]);
    }

    #[test]
    fn period_one_two_dims() {
        let m = PCMask::build(1, 4, 2).unwrap();
        for d in 0..2 {
            let row: Vec<u8> = (0..4).map(|t| m.get(t, d)).collect();
            assert_eq!(row, vec![0, 1, 0, 1]);
        }
    }

    #[test]
    fn period_at_window_length_is_clamped() {
        let m = PCMask::build(60, 60, 1).unwrap();
        assert_eq!(m.period(), 30);
        let p = m.time_pattern();
        assert!(p[..30].iter().all(|&b| b == 0));
        assert!(p[30..].iter().all(|&b| b == 1));
    }

    #[test]
    fn zero_period_rejected() {
        assert!(PCMask::build(0, 8, 1).is_err());
    }

    #[test]
    fn complement_examples() {
        let m = PCMask::build(2, 4, 1).unwrap();
        assert_eq!(m.complement().time_pattern(), vec![1, 1, 0, 0]);
        assert_eq!(m.complement().complement(), m);
    }

    #[test]
    fn half_split_differs_from_short_period() {
        let h = PCMask::half_split(60, 3).unwrap();
        assert_eq!(h.ones(), 90);
        assert_ne!(h, PCMask::build(20, 60, 3).unwrap());
    }

    proptest! {
        #[test]
        fn mask_and_complement_partition(p in 1usize..40, t in 2usize..80, d in 1usize..4) {
            let m = PCMask::build(p, t, d).unwrap();
            let c = m.complement();
            prop_assert_eq!(m.ones() + c.ones(), t * d);
            for (a, b) in m.bits().iter().zip(c.bits()) {
                prop_assert_eq!(a * b, 0);
                prop_assert_eq!(a + b, 1);
            }
            prop_assert_eq!(m.period(), c.period());
        }

        #[test]
        fn half_ones_when_window_is_whole_cycles(p in 1usize..20, cycles in 1usize..5, d in 1usize..4) {
            let t = 2 * p * cycles;
            let m = PCMask::build(p, t, d).unwrap();
            prop_assert_eq!(2 * m.ones(), t * d);
        }

        #[test]
        fn mask_is_deterministic_and_both_values_occur(p in 1usize..300, t in 2usize..120, d in 1usize..3) {
            let a = PCMask::build(p, t, d).unwrap();
            prop_assert_eq!(&a, &PCMask::build(p, t, d).unwrap());
            prop_assert!(a.ones() > 0 && a.ones() < t * d);
        }
    }
}
