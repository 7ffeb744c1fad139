//! Clean/intervened cause extraction with the consistency and
//! joint-independence losses.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mpcf::{FusedVars, MpcfParams};
use crate::numeric::{Bound, Graph, ParamStore, Tensor, Var};
use crate::pacm::{PacmParams, PyramidVars};
use crate::spectral::Intervention;

const MIN_NORM: f64 = 1e-12;

/// `1 - cos(vec(a), vec(b))`.
pub fn similarity_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (g.value(a), g.value(b));
    let na = av.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = bv.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(Error::InvalidArgument(format!(
            "cosine undefined for near-zero representation (norms {na:e}, {nb:e})"
        )));
    }
    let ab = g.mul(a, b)?;
    let dot = g.sum(ab);
    let a2 = g.square(a);
    let a2 = g.sum(a2);
    let b2 = g.square(b);
    let b2 = g.sum(b2);
    let denom = g.mul(a2, b2)?;
    let denom = g.sqrt(denom);
    let cos = g.div(dot, denom)?;
    let neg = g.scale(cos, -1.0);
    Ok(g.offset(neg, 1.0))
}

/// `|| C C^T - I_N ||_F^2` over the `N` factor rows of `c`.
pub fn independence_loss(g: &mut Graph, c: Var, slots: usize, hidden: usize) -> Result<Var> {
    let m = g.reshape(c, slots, hidden)?;
    let mt = g.transpose(m);
    let gram = g.matmul(m, mt)?;
    let eye = g.constant(Tensor::identity(slots));
    let diff = g.sub(gram, eye)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
}

pub fn similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "similarity",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = similarity_loss(&mut g, av, bv)?;
    Ok(g.scalar(l))
}

pub fn independence(c: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (rows, cols) = (c.rows(), c.cols());
    let cv = g.constant(c.clone());
    let l = independence_loss(&mut g, cv, rows, cols)?;
    Ok(g.scalar(l))
}

/// Cause path of one window on a graph.
#[derive(Clone, Debug)]
pub struct PathVars {
    pub pyramid: PyramidVars,
    pub fused: FusedVars,
}

/// Both paths, their midpoint, and the two losses.
#[derive(Clone, Debug)]
pub struct CausalVars {
    pub clean: PathVars,
    /// `None` when no intervention was applied; `c_ind` is then `C_o`.
    pub intervened: Option<PathVars>,
    pub c_ind: Var,
    pub l_sim: Var,
    pub l_ind: Var,
}

/// Value-level view of [`CausalVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct CausalBundle {
    pub c_o: Tensor,
    pub c_o_prime: Tensor,
    pub c_ind: Tensor,
    pub l_sim: f64,
    pub l_ind: f64,
}

/// Shared modules of the cause path.
#[derive(Clone, Copy, Debug)]
pub struct CauseEncoder<'a> {
    pub pacm: &'a PacmParams,
    pub mpcf: &'a MpcfParams,
    pub k: usize,
}

impl CauseEncoder<'_> {
    pub fn path(&self, g: &mut Graph, bound: &Bound, x: &Tensor) -> Result<PathVars> {
        let xv = g.constant(x.clone());
        let h = self.pacm.embed(g, bound, xv)?;
        let pyramid = self.pacm.extract_pyramid(g, bound, h, self.k)?;
        let fused = self.mpcf.fuse(g, bound, &pyramid)?;
        Ok(PathVars { pyramid, fused })
    }

    /// Run the clean window and, when `intervention` is given, its perturbed
    /// copy through the same parameters.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        intervention: Option<&Intervention>,
        rng: &mut R,
    ) -> Result<CausalVars> {
        let clean = self.path(g, bound, x)?;
        let (slots, hidden) = (self.pacm.slots, self.pacm.hidden);
        match intervention {
            Some(iv) => {
                let perturbed = iv.apply(x.data(), x.cols(), rng)?;
                let xp = Tensor::matrix(x.rows(), x.cols(), perturbed)?;
                let other = self.path(g, bound, &xp)?;
                let l_sim = similarity_loss(g, clean.fused.omni, other.fused.omni)?;
                let sum = g.add(clean.fused.omni, other.fused.omni)?;
                let c_ind = g.scale(sum, 0.5);
                let l_ind = independence_loss(g, c_ind, slots, hidden)?;
                Ok(CausalVars {
                    clean,
                    intervened: Some(other),
                    c_ind,
                    l_sim,
                    l_ind,
                })
            }
            None => {
                let c_ind = clean.fused.omni;
                let l_sim = g.constant(Tensor::scalar(0.0));
                let l_ind = independence_loss(g, c_ind, slots, hidden)?;
                Ok(CausalVars {
                    clean,
                    intervened: None,
                    c_ind,
                    l_sim,
                    l_ind,
                })
            }
        }
    }
}

impl CausalVars {
    pub fn to_bundle(&self, g: &Graph, slots: usize, hidden: usize) -> CausalBundle {
        let shape = |v: Var| g.value(v).reshaped(vec![slots, hidden]).expect("cause shape");
        let c_o = shape(self.clean.fused.omni);
        let c_o_prime = self
            .intervened
            .as_ref()
            .map(|p| shape(p.fused.omni))
            .unwrap_or_else(|| c_o.clone());
        CausalBundle {
            c_o,
            c_o_prime,
            c_ind: shape(self.c_ind),
            l_sim: g.scalar(self.l_sim),
            l_ind: g.scalar(self.l_ind),
        }
    }
}

/// Value-level causal forward pass for one `T x D` window.
pub fn causal_forward<R: Rng + ?Sized>(
    store: &ParamStore,
    encoder: CauseEncoder<'_>,
    x: &Tensor,
    intervention: &Intervention,
    rng: &mut R,
) -> Result<CausalBundle> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let vars = encoder.forward(&mut g, &bound, x, Some(intervention), rng)?;
    Ok(vars.to_bundle(&g, encoder.pacm.slots, encoder.pacm.hidden))
}
