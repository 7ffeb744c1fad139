//! Multi-period cause fusion: attention over period tokens combined with
//! softmax-normalised amplitudes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{glorot, Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::pacm::PyramidVars;

#[derive(Clone, Debug)]
pub struct MpcfParams {
    pub query: ParamId,
    pub key: ParamId,
    pub hidden: usize,
    pub slots: usize,
}

/// Fusion outputs on a graph.
#[derive(Clone, Debug)]
pub struct FusedVars {
    /// `1 x (N * D_h)`, row-major `N x D_h`.
    pub omni: Var,
    /// Per-period attention `a_p`, `1 x k`.
    pub attention: Var,
    /// `softmax(w_p)`, `1 x k`.
    pub amplitude: Var,
    /// Combined convex weights `u`, `1 x k`.
    pub combined: Var,
}

/// Value-level fusion result.
#[derive(Clone, Debug, PartialEq)]
pub struct OmniRepresentation {
    pub values: Tensor,
    pub attention: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub combined: Vec<f64>,
}

/// `v / sum(v)` for a `1 x k` row.
pub(crate) fn normalize_row(g: &mut Graph, v: Var) -> Result<Var> {
    let k = g.value(v).cols();
    let s = g.sum(v);
    let ones = g.constant(Tensor::filled(1, k, 1.0));
    let tiled = g.matmul(s, ones)?;
    g.div(v, tiled)
}

impl MpcfParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, hidden: usize, slots: usize) -> Result<Self> {
        Ok(Self {
            query: store.add("mpcf.query", glorot(rng, hidden, hidden))?,
            key: store.add("mpcf.key", glorot(rng, hidden, hidden))?,
            hidden,
            slots,
        })
    }

    pub fn fuse(&self, g: &mut Graph, bound: &Bound, pyramid: &PyramidVars) -> Result<FusedVars> {
        let k = pyramid.blocks.len();
        if k == 0 {
            return Err(Error::InvalidArgument("cannot fuse an empty pyramid".into()));
        }
        let mut tokens = Vec::with_capacity(k);
        for &b in &pyramid.blocks {
            let block = g.reshape(b, self.slots, self.hidden)?;
            tokens.push(g.mean_rows(block));
        }
        let tokens = g.concat_rows(&tokens)?;
        let q = g.matmul(tokens, bound.var(self.query))?;
        let kk = g.matmul(tokens, bound.var(self.key))?;
        let kt = g.transpose(kk);
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, 1.0 / (self.hidden as f64).sqrt());
        let attn = g.softmax_rows(logits);
        // column means of a row-stochastic matrix already sum to one
        let col_mean = g.mean_rows(attn);
        let attention = normalize_row(g, col_mean)?;
        let amplitude = g.softmax_rows(pyramid.weights);
        let joint = g.mul(amplitude, attention)?;
        let combined = normalize_row(g, joint)?;
        let stacked = g.concat_rows(&pyramid.blocks)?;
        let omni = g.matmul(combined, stacked)?;
        Ok(FusedVars {
            omni,
            attention,
            amplitude,
            combined,
        })
    }
}

impl FusedVars {
    pub fn to_values(&self, g: &Graph, slots: usize, hidden: usize) -> OmniRepresentation {
        OmniRepresentation {
            values: g.value(self.omni).reshaped(vec![slots, hidden]).expect("omni shape"),
            attention: g.value(self.attention).data().to_vec(),
            amplitude: g.value(self.amplitude).data().to_vec(),
            combined: g.value(self.combined).data().to_vec(),
        }
    }
}

/// Value-level fusion of an explicit pyramid.
pub fn fuse(
    store: &ParamStore,
    params: &MpcfParams,
    factors: &[Tensor],
    weights: &[f64],
) -> Result<OmniRepresentation> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("cannot fuse an empty pyramid".into()));
    }
    if factors.len() != weights.len() {
        return Err(Error::Shape {
            op: "fuse",
            left: vec![factors.len()],
            right: vec![weights.len()],
        });
    }
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let mut blocks = Vec::with_capacity(factors.len());
    for f in factors {
        let flat = f.reshaped(vec![1, params.slots * params.hidden])?;
        blocks.push(g.constant(flat));
    }
    let w = g.constant(Tensor::row(weights.to_vec()));
    let pyr = PyramidVars {
        blocks,
        weights: w,
        periods: crate::spectral::PeriodSet {
            frequencies: vec![],
            periods: vec![],
            weights: weights.to_vec(),
            requested: factors.len(),
        },
        short: false,
    };
    let fused = params.fuse(&mut g, &bound, &pyr)?;
    Ok(fused.to_values(&g, params.slots, params.hidden))
}
