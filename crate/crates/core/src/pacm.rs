//! Periodicity-aware cause miner.
//!
//! Embeds a window, picks its strongest local periods, folds the embedding
//! into one `rows x period` grid per period, runs a shared depthwise 3x3
//! transform over each grid, pools, and projects to `N` cause slots.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{glorot, uniform, Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::spectral::{self, AmplitudeSpectrum, PeriodSet};

#[derive(Clone, Debug)]
pub struct PacmParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub kernel: ParamId,
    pub kernel_b: ParamId,
    pub slot_w: ParamId,
    pub slot_b: ParamId,
    pub dims: usize,
    pub hidden: usize,
    pub slots: usize,
}

/// Per-period cause blocks of one window, living on a graph.
#[derive(Clone, Debug)]
pub struct PyramidVars {
    /// One `1 x (N * D_h)` block per period, row-major `N x D_h`.
    pub blocks: Vec<Var>,
    /// Channel-averaged amplitudes of the selected bins, `1 x k`.
    pub weights: Var,
    pub periods: PeriodSet,
    /// The spectrum had fewer than `k` non-zero bins; zero-amplitude bins
    /// fill the remaining slots.
    pub short: bool,
}

/// Value-level pyramid: `k` blocks of `N x D_h` plus amplitude weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalPyramid {
    pub factors: Vec<Tensor>,
    pub weights: Vec<f64>,
    pub periods: PeriodSet,
    pub short: bool,
}

impl PyramidVars {
    pub fn to_values(&self, g: &Graph, slots: usize, hidden: usize) -> CausalPyramid {
        CausalPyramid {
            factors: self
                .blocks
                .iter()
                .map(|&b| g.value(b).reshaped(vec![slots, hidden]).expect("block shape"))
                .collect(),
            weights: g.value(self.weights).data().to_vec(),
            periods: self.periods.clone(),
            short: self.short,
        }
    }
}

/// Padded grid geometry for period `p` over a window of `len` steps.
pub fn grid_shape(len: usize, period: usize) -> (usize, usize) {
    (len.div_ceil(period), period)
}

impl PacmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        dims: usize,
        hidden: usize,
        slots: usize,
    ) -> Result<Self> {
        Ok(Self {
            embed_w: store.add("pacm.embed.weight", glorot(rng, dims, hidden))?,
            embed_b: store.add("pacm.embed.bias", Tensor::zeros(1, hidden))?,
            kernel: store.add("pacm.grid.kernel", uniform(rng, 9, hidden, 0.2))?,
            kernel_b: store.add("pacm.grid.bias", Tensor::zeros(1, hidden))?,
            slot_w: store.add("pacm.slots.weight", glorot(rng, hidden, slots * hidden))?,
            slot_b: store.add("pacm.slots.bias", uniform(rng, 1, slots * hidden, 0.3))?,
            dims,
            hidden,
            slots,
        })
    }

    /// `H = X W_e + b_e` for a `T x D` window.
    pub fn embed(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, bound.var(self.embed_w))?;
        g.add_row(h, bound.var(self.embed_b))
    }

    fn select_periods(&self, h: &Tensor, k: usize) -> Result<(PeriodSet, bool)> {
        let mut set = spectral::top_k_periods(h.data(), self.hidden, k)?;
        let short = set.is_short();
        if short {
            let spec = AmplitudeSpectrum::averaged(h.data(), self.hidden)?;
            for f in spectral::ranked_bins(&spec) {
                if set.len() == k {
                    break;
                }
                if !set.frequencies.contains(&f) {
                    set.frequencies.push(f);
                    set.periods.push(spec.period_of(f));
                    set.weights.push(spec.amplitudes[f]);
                }
            }
        }
        Ok((set, short))
    }

    /// Build the pyramid from an embedded `T x D_h` window.
    pub fn extract_pyramid(&self, g: &mut Graph, bound: &Bound, h: Var, k: usize) -> Result<PyramidVars> {
        let hv = g.value(h);
        if hv.cols() != self.hidden {
            return Err(Error::Shape {
                op: "extract_pyramid",
                left: hv.shape().to_vec(),
                right: vec![hv.rows(), self.hidden],
            });
        }
        let len = hv.rows();
        let (periods, short) = self.select_periods(hv, k)?;

        // differentiable amplitudes of the selected bins
        let mut cos = Tensor::zeros(k, len);
        let mut sin = Tensor::zeros(k, len);
        for (i, &f) in periods.frequencies.iter().enumerate() {
            for t in 0..len {
                let ang = 2.0 * PI * (f * t) as f64 / len as f64;
                cos.set(i, t, ang.cos());
                sin.set(i, t, -ang.sin());
            }
        }
        let cos = g.constant(cos);
        let sin = g.constant(sin);
        let re = g.matmul(cos, h)?;
        let im = g.matmul(sin, h)?;
        let re2 = g.square(re);
        let im2 = g.square(im);
        let pow = g.add(re2, im2)?;
        let amp = g.sqrt(pow);
        let amp = g.mean_cols(amp);
        let weights = g.reshape(amp, 1, k)?;

        let mut blocks = Vec::with_capacity(k);
        for &p in &periods.periods {
            let (rows, cols) = grid_shape(len, p);
            let padded = g.pad_rows(h, rows * cols)?;
            let conv = g.grid_conv(padded, bound.var(self.kernel), cols)?;
            let conv = g.add_row(conv, bound.var(self.kernel_b))?;
            let act = g.tanh(conv);
            let grid = g.add(padded, act)?;
            let pooled = g.mean_rows(grid);
            let c = g.matmul(pooled, bound.var(self.slot_w))?;
            blocks.push(g.add_row(c, bound.var(self.slot_b))?);
        }
        Ok(PyramidVars {
            blocks,
            weights,
            periods,
            short,
        })
    }
}

/// Value-level embedding of a row-major `T x D` window.
pub fn embed(store: &ParamStore, params: &PacmParams, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let xv = g.constant(x.clone());
    let h = params.embed(&mut g, &bound, xv)?;
    Ok(g.value(h).clone())
}

/// Value-level pyramid of an embedded window.
pub fn extract_pyramid(store: &ParamStore, params: &PacmParams, h: &Tensor, k: usize) -> Result<CausalPyramid> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let hv = g.constant(h.clone());
    let pyr = params.extract_pyramid(&mut g, &bound, hv, k)?;
    Ok(pyr.to_values(&g, params.slots, params.hidden))
}
