//! Conditional affine-coupling flow with periodic masks.
//!
//! Layer `l` keeps the entries selected by its mask (the checkerboard for
//! even `l`, its complement for odd `l`) and maps every other entry as
//!
//! ```text
//! h_out = (h_in - shift(kept, ctx)) * exp(-scale(kept, ctx))
//! ```
//!
//! so its log-determinant is `-sum(scale)` over the transformed entries.
//! The scale and shift networks run once per timestep with shared weights.
//! At step `t` they read the kept entries at steps `t - r ..= t + r`, where
//! `r` is the mask block length, together with the keep pattern of that
//! neighbourhood and the conditioning vector. Transformed entries never feed
//! the networks, so every layer stays exactly triangular.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{glorot, Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::pcmask::PCMask;

/// Soft bound on the scale network output: `s <- c * tanh(s / c)`.
pub const SCALE_CLAMP: f64 = 5.0;

pub fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    /// `(weight, bias)` per layer; the last pair is the linear output layer.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl DenseNet {
    /// `blocks` tanh hidden layers of width `hidden`, then a zero-initialised
    /// output layer.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input: usize,
        hidden: usize,
        blocks: usize,
        output: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(blocks + 1);
        let mut width = input;
        for b in 0..blocks {
            let w = store.add(format!("{prefix}.hidden{b}.weight"), glorot(rng, width, hidden))?;
            let bias = store.add(format!("{prefix}.hidden{b}.bias"), Tensor::zeros(1, hidden))?;
            layers.push((w, bias));
            width = hidden;
        }
        let w = store.add(format!("{prefix}.out.weight"), Tensor::zeros(width, output))?;
        let bias = store.add(format!("{prefix}.out.bias"), Tensor::zeros(1, output))?;
        layers.push((w, bias));
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.matmul(h, bound.var(w))?;
            h = g.add_row(h, bound.var(b))?;
            if i < last {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn output_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("at least one layer")
    }
}

/// Linear map from the flattened cause matrix to the flow context.
#[derive(Clone, Debug)]
pub struct Conditioner {
    pub weight: ParamId,
    pub bias: ParamId,
    pub slots: usize,
    pub hidden: usize,
}

impl Conditioner {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, slots: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add("cond.weight", glorot(rng, slots * hidden, hidden))?,
            bias: store.add("cond.bias", Tensor::zeros(1, hidden))?,
            slots,
            hidden,
        })
    }

    /// `B x (N * D_h) -> B x D_h`.
    pub fn context(&self, g: &mut Graph, bound: &Bound, c_ind: Var) -> Result<Var> {
        let cv = g.value(c_ind);
        if cv.cols() != self.slots * self.hidden {
            return Err(Error::Shape {
                op: "condition",
                left: cv.shape().to_vec(),
                right: vec![self.slots, self.hidden],
            });
        }
        let h = g.matmul(c_ind, bound.var(self.weight))?;
        g.add_row(h, bound.var(self.bias))
    }

    /// `H_c`: the context vector of `c_ind` (`N x D_h`) tiled over `T` steps.
    pub fn condition(&self, store: &ParamStore, c_ind: &Tensor, window_len: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let flat = c_ind.reshaped(vec![1, c_ind.len()])?;
        let cv = g.constant(flat);
        let ctx = self.context(&mut g, &bound, cv)?;
        let row = g.value(ctx).data().to_vec();
        let data = (0..window_len).flat_map(|_| row.iter().copied()).collect();
        Tensor::matrix(window_len, self.hidden, data)
    }
}

#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub scale: DenseNet,
    pub shift: DenseNet,
    keep: Vec<f64>,
    offsets: Vec<isize>,
    window_len: usize,
    dims: usize,
}

impl CouplingLayer {
    fn masks(&self, g: &mut Graph) -> (Var, Var) {
        let keep = g.constant(Tensor::row(self.keep.clone()));
        let moving = g.constant(Tensor::row(self.keep.iter().map(|k| 1.0 - k).collect()));
        (keep, moving)
    }

    /// Keep bits of each step's neighbourhood, `T x K`.
    fn pattern(&self) -> Vec<f64> {
        let len = self.window_len as isize;
        (0..len)
            .flat_map(|t| {
                self.offsets.iter().map(move |&o| {
                    let s = t + o;
                    if (0..len).contains(&s) {
                        self.keep[s as usize * self.dims]
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    fn scale_shift(&self, g: &mut Graph, bound: &Bound, kept: Var, ctx: Var, moving: Var) -> Result<(Var, Var)> {
        let batch = g.value(kept).rows();
        let (len, dims) = (self.window_len, self.dims);
        let local = g.unfold_time(kept, len, &self.offsets)?;
        let pattern = self.pattern();
        let bits = Tensor::matrix(batch * len, self.offsets.len(), pattern.repeat(batch))?;
        let bits = g.constant(bits);
        let ctx = g.repeat_rows(ctx, len)?;
        let input = g.concat_cols(&[local, bits, ctx])?;
        let raw = self.scale.forward(g, bound, input)?;
        let raw = g.reshape(raw, batch, len * dims)?;
        let s = g.scale(raw, 1.0 / SCALE_CLAMP);
        let s = g.tanh(s);
        let s = g.scale(s, SCALE_CLAMP);
        let s = g.mul_row(s, moving)?;
        let t = self.shift.forward(g, bound, input)?;
        let t = g.reshape(t, batch, len * dims)?;
        let t = g.mul_row(t, moving)?;
        Ok((s, t))
    }
}

/// Neighbourhood offsets `-r ..= r` for mask block length `r`.
pub fn neighbourhood(radius: usize) -> Vec<isize> {
    let r = radius as isize;
    (-r..=r).collect()
}

/// Flow outputs for a batch of flattened windows.
#[derive(Clone, Debug)]
pub struct FlowVars {
    /// `B x (T * D)`.
    pub z: Var,
    /// `B x 1`.
    pub logdet: Var,
    /// `B x 1`.
    pub log_prob: Var,
    /// Masked scale outputs per layer, `B x (T * D)` each.
    pub scales: Vec<Var>,
}

/// Latent codes and log-determinants for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    /// Row-major `B x T x D`.
    pub z: Vec<f64>,
    pub logdet: Vec<f64>,
}

/// Window score with its exact per-timestep decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowScore {
    pub total: f64,
    pub per_step: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub layers: Vec<CouplingLayer>,
    pub conditioner: Conditioner,
    mask: PCMask,
    hidden: usize,
}

impl FlowModel {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        mask: PCMask,
        hidden: usize,
        slots: usize,
        num_layers: usize,
        blocks: usize,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::InvalidArgument("flow needs at least one layer".into()));
        }
        let (len, dims) = (mask.window_len(), mask.dims());
        let conditioner = Conditioner::init(store, rng, slots, hidden)?;
        let checker = mask.as_f64();
        let complement = mask.complement().as_f64();
        let offsets = neighbourhood(mask.period());
        let input = offsets.len() * (dims + 1) + hidden;
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let scale = DenseNet::init(store, rng, &format!("flow.{l}.scale"), input, hidden, blocks, dims)?;
            let shift = DenseNet::init(store, rng, &format!("flow.{l}.shift"), input, hidden, blocks, dims)?;
            let keep = if l % 2 == 0 {
                checker.clone()
            } else {
                complement.clone()
            };
            layers.push(CouplingLayer {
                scale,
                shift,
                keep,
                offsets: offsets.clone(),
                window_len: len,
                dims,
            });
        }
        Ok(Self {
            layers,
            conditioner,
            mask,
            hidden,
        })
    }

    pub fn mask(&self) -> &PCMask {
        &self.mask
    }

    pub fn window_len(&self) -> usize {
        self.mask.window_len()
    }

    pub fn dims(&self) -> usize {
        self.mask.dims()
    }

    pub fn entries(&self) -> usize {
        self.window_len() * self.dims()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn check_input(&self, g: &Graph, x: Var, ctx: Var) -> Result<()> {
        let (xv, cv) = (g.value(x), g.value(ctx));
        if xv.cols() != self.entries() {
            return Err(Error::Shape {
                op: "flow input",
                left: xv.shape().to_vec(),
                right: vec![xv.rows(), self.entries()],
            });
        }
        if cv.cols() != self.hidden || cv.rows() != xv.rows() {
            return Err(Error::Shape {
                op: "flow context",
                left: cv.shape().to_vec(),
                right: vec![xv.rows(), self.hidden],
            });
        }
        Ok(())
    }

    /// `X -> Z` on a graph; `x` is `B x (T * D)`, `ctx` is `B x D_h`.
    pub fn forward_vars(&self, g: &mut Graph, bound: &Bound, x: Var, ctx: Var) -> Result<FlowVars> {
        self.check_input(g, x, ctx)?;
        let entries = self.entries() as f64;
        let mut h = x;
        let mut logdet: Option<Var> = None;
        let mut scales = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (keep, moving) = layer.masks(g);
            let kept = g.mul_row(h, keep)?;
            let (s, t) = layer.scale_shift(g, bound, kept, ctx, moving)?;
            let mv = g.mul_row(h, moving)?;
            let centred = g.sub(mv, t)?;
            let neg_s = g.scale(s, -1.0);
            let factor = g.exp(neg_s);
            let scaled = g.mul(centred, factor)?;
            h = g.add(kept, scaled)?;
            if !g.value(h).is_finite() {
                return Err(Error::NonFinite(format!("flow layer {l}")));
            }
            let row_mean = g.mean_cols(s);
            let ld = g.scale(row_mean, -entries);
            logdet = Some(match logdet {
                Some(acc) => g.add(acc, ld)?,
                None => ld,
            });
            scales.push(s);
        }
        let logdet = logdet.expect("at least one layer");
        let sq = g.square(h);
        let sq = g.mean_cols(sq);
        let quad = g.scale(sq, -0.5 * entries);
        let base = g.offset(quad, -entries * half_log_two_pi());
        let log_prob = g.add(base, logdet)?;
        Ok(FlowVars {
            z: h,
            logdet,
            log_prob,
            scales,
        })
    }

    /// `Z -> X` on a graph.
    pub fn inverse_vars(&self, g: &mut Graph, bound: &Bound, z: Var, ctx: Var) -> Result<Var> {
        self.check_input(g, z, ctx)?;
        let mut h = z;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (keep, moving) = layer.masks(g);
            let kept = g.mul_row(h, keep)?;
            let (s, t) = layer.scale_shift(g, bound, kept, ctx, moving)?;
            let mv = g.mul_row(h, moving)?;
            let factor = g.exp(s);
            let scaled = g.mul(mv, factor)?;
            let restored = g.add(scaled, t)?;
            h = g.add(kept, restored)?;
            if !g.value(h).is_finite() {
                return Err(Error::NonFinite(format!("inverse flow layer {l}")));
            }
        }
        Ok(h)
    }

    fn context_rows(&self, h_c: &[&Tensor]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(h_c.len() * self.hidden);
        for h in h_c {
            if h.cols() != self.hidden {
                return Err(Error::Shape {
                    op: "flow context",
                    left: h.shape().to_vec(),
                    right: vec![self.window_len(), self.hidden],
                });
            }
            // H_c is tiled over time; its row mean is the context vector
            let rows = h.rows() as f64;
            data.extend((0..self.hidden).map(|j| (0..h.rows()).map(|t| h.get(t, j)).sum::<f64>() / rows));
        }
        Tensor::matrix(h_c.len(), self.hidden, data)
    }

    fn flatten(&self, windows: &[&Tensor]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(windows.len() * self.entries());
        for w in windows {
            if w.len() != self.entries() {
                return Err(Error::Shape {
                    op: "flow input",
                    left: w.shape().to_vec(),
                    right: vec![self.window_len(), self.dims()],
                });
            }
            data.extend_from_slice(w.data());
        }
        Tensor::matrix(windows.len(), self.entries(), data)
    }

    pub fn forward_batch(&self, store: &ParamStore, windows: &[&Tensor], h_c: &[&Tensor]) -> Result<LatentBatch> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(self.flatten(windows)?);
        let ctx = g.constant(self.context_rows(h_c)?);
        let out = self.forward_vars(&mut g, &bound, x, ctx)?;
        Ok(LatentBatch {
            z: g.value(out.z).data().to_vec(),
            logdet: g.value(out.logdet).data().to_vec(),
        })
    }

    /// Single window `T x D` to `(Z, log|det dZ/dX|)`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, h_c: &Tensor) -> Result<(Tensor, f64)> {
        let out = self.forward_batch(store, &[x], &[h_c])?;
        let z = Tensor::matrix(self.window_len(), self.dims(), out.z)?;
        Ok((z, out.logdet[0]))
    }

    pub fn inverse(&self, store: &ParamStore, z: &Tensor, h_c: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let zv = g.constant(self.flatten(&[z])?);
        let ctx = g.constant(self.context_rows(&[h_c])?);
        let x = self.inverse_vars(&mut g, &bound, zv, ctx)?;
        Tensor::matrix(self.window_len(), self.dims(), g.value(x).data().to_vec())
    }

    pub fn log_prob(&self, store: &ParamStore, x: &Tensor, h_c: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let xv = g.constant(self.flatten(&[x])?);
        let ctx = g.constant(self.context_rows(&[h_c])?);
        let out = self.forward_vars(&mut g, &bound, xv, ctx)?;
        Ok(g.scalar(out.log_prob))
    }

    /// Mean negative log-likelihood over a batch of windows.
    pub fn nll_loss(&self, store: &ParamStore, windows: &[&Tensor], h_c: &[&Tensor]) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(self.flatten(windows)?);
        let ctx = g.constant(self.context_rows(h_c)?);
        let out = self.forward_vars(&mut g, &bound, x, ctx)?;
        let m = g.mean(out.log_prob);
        Ok(-g.scalar(m))
    }

    pub fn anomaly_score(&self, store: &ParamStore, x: &Tensor, h_c: &Tensor) -> Result<WindowScore> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let xv = g.constant(self.flatten(&[x])?);
        let ctx = g.constant(self.context_rows(&[h_c])?);
        let out = self.forward_vars(&mut g, &bound, xv, ctx)?;
        Ok(self.decompose(&g, &out).remove(0))
    }

    /// Per-window scores `-log p` and their per-timestep split
    /// `0.5 |z_t|^2 + (D/2) log 2 pi + sum_layers sum_d s_{t,d}`.
    pub fn decompose(&self, g: &Graph, out: &FlowVars) -> Vec<WindowScore> {
        let (len, dims) = (self.window_len(), self.dims());
        let z = g.value(out.z);
        let lp = g.value(out.log_prob);
        (0..z.rows())
            .map(|b| {
                let zr = z.row_slice(b);
                let per_step = (0..len)
                    .map(|t| {
                        let cells = t * dims..(t + 1) * dims;
                        let quad: f64 = zr[cells.clone()].iter().map(|v| 0.5 * v * v).sum();
                        let s: f64 = out
                            .scales
                            .iter()
                            .map(|&sv| g.value(sv).row_slice(b)[cells.clone()].iter().sum::<f64>())
                            .sum();
                        quad + dims as f64 * half_log_two_pi() + s
                    })
                    .collect();
                WindowScore {
                    total: -lp.get(b, 0),
                    per_step,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(
        period: usize,
        len: usize,
        dims: usize,
        hidden: usize,
        layers: usize,
        seed: u64,
    ) -> (ParamStore, FlowModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mask = PCMask::build(period, len, dims).unwrap();
        let flow = FlowModel::init(&mut store, &mut rng, mask, hidden, 2, layers, 2).unwrap();
        (store, flow)
    }

    fn randomize_outputs(store: &mut ParamStore, flow: &FlowModel, rng: &mut ChaCha8Rng, scale: f64) {
        for layer in &flow.layers {
            for net in [&layer.scale, &layer.shift] {
                let (w, b) = net.output_layer();
                let (r, c) = (store.get(w).rows(), store.get(w).cols());
                *store.get_mut(w) = uniform(rng, r, c, scale);
                *store.get_mut(b) = uniform(rng, 1, c, scale);
            }
        }
    }

    #[test]
    fn zero_output_layers_give_identity() {
        let (store, flow) = model(2, 8, 2, 4, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = uniform(&mut rng, 8, 2, 2.0);
        let hc = uniform(&mut rng, 8, 4, 1.0);
        let (z, logdet) = flow.forward(&store, &x, &hc).unwrap();
        assert_eq!(z, x);
        assert_eq!(logdet, 0.0);
        assert_eq!(flow.inverse(&store, &z, &hc).unwrap(), z);
    }

    #[test]
    fn single_entry_closed_form() {
        // T = 2, D = 1, one layer with mask [0, 1]: entry 0 moves, entry 1 is kept
        let (mut store, flow) = model(1, 2, 1, 3, 1, 3);
        let (s, t) = (0.7, -0.4);
        let layer = &flow.layers[0];
        let (sw, sb) = layer.scale.output_layer();
        let (tw, tb) = layer.shift.output_layer();
        let raw_s = SCALE_CLAMP * (s / SCALE_CLAMP).atanh();
        *store.get_mut(sb) = Tensor::row(vec![raw_s]);
        *store.get_mut(tb) = Tensor::row(vec![t]);
        assert!(store.get(sw).data().iter().all(|&v| v == 0.0));
        assert!(store.get(tw).data().iter().all(|&v| v == 0.0));
        let x = Tensor::matrix(2, 1, vec![1.3, -0.2]).unwrap();
        let hc = Tensor::zeros(2, 3);
        let (z, logdet) = flow.forward(&store, &x, &hc).unwrap();
        assert!((z.get(0, 0) - (1.3 - t) * (-s).exp()).abs() < 1e-12);
        assert_eq!(z.get(1, 0), -0.2);
        assert!((logdet + s).abs() < 1e-12);
        // inverse closed form x = z e^s + t
        let back = flow.inverse(&store, &z, &hc).unwrap();
        assert!((back.get(0, 0) - (z.get(0, 0) * s.exp() + t)).abs() < 1e-12);
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn log_prob_of_identity_at_origin() {
        let (store, flow) = model(1, 2, 3, 4, 2, 4);
        let lp = flow
            .log_prob(&store, &Tensor::zeros(2, 3), &Tensor::zeros(2, 4))
            .unwrap();
        assert!((lp + 3.0 * (2.0 * PI).ln()).abs() < 1e-12);
        let nll = flow
            .nll_loss(
                &store,
                &[&Tensor::zeros(2, 3), &Tensor::zeros(2, 3)],
                &[&Tensor::zeros(2, 4), &Tensor::zeros(2, 4)],
            )
            .unwrap();
        assert!((nll - 3.0 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn random_model_roundtrips() {
        let (mut store, flow) = model(2, 6, 3, 5, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        randomize_outputs(&mut store, &flow, &mut rng, 0.5);
        for _ in 0..20 {
            let x = uniform(&mut rng, 6, 3, 3.0);
            let hc = uniform(&mut rng, 1, 5, 1.0);
            let hc = Tensor::matrix(6, 5, hc.data().repeat(6)).unwrap();
            let (z, _) = flow.forward(&store, &x, &hc).unwrap();
            assert!(flow.inverse(&store, &z, &hc).unwrap().max_abs_diff(&x) < 1e-9);
        }
    }

    #[test]
    fn per_step_scores_sum_to_window_score() {
        let (mut store, flow) = model(3, 9, 2, 4, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        randomize_outputs(&mut store, &flow, &mut rng, 0.4);
        let x = uniform(&mut rng, 9, 2, 2.0);
        let hc = Tensor::zeros(9, 4);
        let s = flow.anomaly_score(&store, &x, &hc).unwrap();
        let sum: f64 = s.per_step.iter().sum();
        assert!((sum - s.total).abs() < 1e-9);
        assert!((s.total + flow.log_prob(&store, &x, &hc).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identity_flow_scores_grow_with_norm() {
        let (store, flow) = model(2, 4, 1, 3, 2, 9);
        let hc = Tensor::zeros(4, 3);
        let calm = Tensor::zeros(4, 1);
        let spike = Tensor::matrix(4, 1, vec![0.0, 5.0, 0.0, 0.0]).unwrap();
        let a = flow.anomaly_score(&store, &calm, &hc).unwrap();
        let b = flow.anomaly_score(&store, &spike, &hc).unwrap();
        assert!(b.total > a.total);
        let top = (0..4).max_by(|&i, &j| b.per_step[i].total_cmp(&b.per_step[j])).unwrap();
        assert_eq!(top, 1);
        assert!((b.per_step[1] - (12.5 + half_log_two_pi())).abs() < 1e-12);
    }

    #[test]
    fn conditioning_changes_density() {
        let (mut store, flow) = model(2, 4, 2, 3, 2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        randomize_outputs(&mut store, &flow, &mut rng, 0.5);
        let x = uniform(&mut rng, 4, 2, 1.0);
        let c1 = uniform(&mut rng, 2, 3, 1.0);
        let c2 = uniform(&mut rng, 2, 3, 1.0);
        let h1 = flow.conditioner.condition(&store, &c1, 4).unwrap();
        let h2 = flow.conditioner.condition(&store, &c2, 4).unwrap();
        let (a, b) = (
            flow.log_prob(&store, &x, &h1).unwrap(),
            flow.log_prob(&store, &x, &h2).unwrap(),
        );
        assert!((a - b).abs() > 1e-6);
    }

    #[test]
    fn condition_tiles_and_zero_maps_to_zero() {
        let (store, flow) = model(2, 5, 1, 3, 1, 12);
        let h = flow.conditioner.condition(&store, &Tensor::zeros(2, 3), 5).unwrap();
        assert_eq!(h, Tensor::zeros(5, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = uniform(&mut rng, 2, 3, 1.0);
        let h = flow.conditioner.condition(&store, &c, 5).unwrap();
        for t in 1..5 {
            assert_eq!(h.row_slice(t), h.row_slice(0));
        }
        assert_eq!(h, flow.conditioner.condition(&store, &c, 5).unwrap());
        assert!(flow.conditioner.condition(&store, &Tensor::zeros(3, 3), 5).is_err());
    }

    #[test]
    fn consecutive_layers_cover_every_entry() {
        let (_, flow) = model(3, 12, 2, 3, 2, 13);
        for i in 0..24 {
            let moved = flow.layers.iter().filter(|l| l.keep[i] == 0.0).count();
            assert_eq!(moved, 1);
        }
    }

    #[test]
    fn wrong_window_shape_errors() {
        let (store, flow) = model(2, 4, 2, 3, 1, 14);
        assert!(flow
            .forward(&store, &Tensor::zeros(5, 2), &Tensor::zeros(5, 3))
            .is_err());
    }
}
