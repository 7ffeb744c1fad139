//! The full detector: cause encoder, conditioner, and flow sharing one
//! parameter store, plus its on-disk checkpoint.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{CausalVars, CauseEncoder};
use crate::error::{Error, Result};
use crate::mpcf::MpcfParams;
use crate::numeric::{Bound, Graph, ParamStore, Tensor, Var};
use crate::pacm::PacmParams;
use crate::pcmask::PCMask;
use crate::penf::{FlowModel, FlowVars, WindowScore};
use crate::series::{Standardization, WindowBatch};
use crate::spectral::Intervention;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "pulseflow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Windows per graph when scoring.
const SCORE_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Checkerboard over blocks of the global period.
    #[default]
    Periodic,
    /// First half of the window against the second half.
    Half,
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Self::Periodic),
            "half" => Ok(Self::Half),
            other => Err(Error::InvalidArgument(format!(
                "unknown mask kind `{other}` (expected periodic or half)"
            ))),
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Periodic => "periodic",
            Self::Half => "half",
        })
    }
}

impl MaskKind {
    pub fn build(self, global_period: usize, window_len: usize, dims: usize) -> Result<PCMask> {
        match self {
            Self::Periodic => PCMask::build(global_period, window_len, dims),
            Self::Half => PCMask::half_split(window_len, dims),
        }
    }
}

/// Graph outputs of a batch forward pass.
#[derive(Clone, Debug)]
pub struct BatchVars {
    pub causal: Vec<CausalVars>,
    pub flow: FlowVars,
    /// Mean negative log-likelihood, `1 x 1`.
    pub l_nf: Var,
    /// Batch means of the per-window losses, `1 x 1`.
    pub l_sim: Var,
    pub l_ind: Var,
}

/// Per-window scoring output with the fusion diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredWindow {
    pub start: usize,
    pub score: WindowScore,
    pub periods: Vec<usize>,
    pub amplitude: Vec<f64>,
    pub attention: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub store: ParamStore,
    pub pacm: PacmParams,
    pub mpcf: MpcfParams,
    pub flow: FlowModel,
    pub config: TrainConfig,
    pub dims: usize,
    pub mask_kind: MaskKind,
    pub global_period: usize,
    pub standardization: Standardization,
}

fn mean_of(g: &mut Graph, scalars: &[Var]) -> Result<Var> {
    let stacked = g.concat_rows(scalars)?;
    Ok(g.mean(stacked))
}

impl Detector {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(
        config: &TrainConfig,
        dims: usize,
        mask_kind: MaskKind,
        global_period: usize,
        standardization: Standardization,
    ) -> Result<Self> {
        config.validate()?;
        let mask = mask_kind.build(global_period, config.window, dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let pacm = PacmParams::init(&mut store, &mut rng, dims, config.hidden, config.slots)?;
        let mpcf = MpcfParams::init(&mut store, &mut rng, config.hidden, config.slots)?;
        let flow = FlowModel::init(
            &mut store,
            &mut rng,
            mask,
            config.hidden,
            config.slots,
            config.layers,
            config.blocks,
        )?;
        Ok(Self {
            store,
            pacm,
            mpcf,
            flow,
            config: config.clone(),
            dims,
            mask_kind,
            global_period,
            standardization,
        })
    }

    pub fn encoder(&self) -> CauseEncoder<'_> {
        CauseEncoder {
            pacm: &self.pacm,
            mpcf: &self.mpcf,
            k: self.config.k,
        }
    }

    pub fn mask(&self) -> &PCMask {
        self.flow.mask()
    }

    pub fn window_len(&self) -> usize {
        self.flow.window_len()
    }

    /// Cause path per window, conditioner, and flow over the stacked batch.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        windows: &[&[f64]],
        intervention: Option<&Intervention>,
        rng: &mut R,
    ) -> Result<BatchVars> {
        if windows.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (len, dims) = (self.window_len(), self.dims);
        let encoder = self.encoder();
        let mut causal = Vec::with_capacity(windows.len());
        let mut flat = Vec::with_capacity(windows.len() * len * dims);
        for w in windows {
            let x = Tensor::matrix(len, dims, w.to_vec())?;
            causal.push(encoder.forward(g, bound, &x, intervention, rng)?);
            flat.extend_from_slice(w);
        }
        let c_rows: Vec<Var> = causal.iter().map(|c| c.c_ind).collect();
        let c_rows = g.concat_rows(&c_rows)?;
        let ctx = self.flow.conditioner.context(g, bound, c_rows)?;
        let x = g.constant(Tensor::matrix(windows.len(), len * dims, flat)?);
        let flow = self.flow.forward_vars(g, bound, x, ctx)?;
        let mean_lp = g.mean(flow.log_prob);
        let l_nf = g.scale(mean_lp, -1.0);
        let sims: Vec<Var> = causal.iter().map(|c| c.l_sim).collect();
        let inds: Vec<Var> = causal.iter().map(|c| c.l_ind).collect();
        let l_sim = mean_of(g, &sims)?;
        let l_ind = mean_of(g, &inds)?;
        Ok(BatchVars {
            causal,
            flow,
            l_nf,
            l_sim,
            l_ind,
        })
    }

    /// Mean NLL of the clean windows, conditioned on their own causes.
    pub fn nll(&self, batch: &WindowBatch) -> Result<f64> {
        let mut total = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in (0..batch.len()).collect::<Vec<_>>().chunks(SCORE_CHUNK) {
            let mut g = Graph::new();
            let bound = self.store.bind(&mut g);
            let windows: Vec<&[f64]> = chunk.iter().map(|&i| batch.window(i)).collect();
            let out = self.forward_batch(&mut g, &bound, &windows, None, &mut rng)?;
            total += g.scalar(out.l_nf) * chunk.len() as f64;
        }
        Ok(total / batch.len() as f64)
    }

    /// Anomaly scores of every window, clean path only.
    pub fn score(&self, batch: &WindowBatch) -> Result<Vec<ScoredWindow>> {
        let mut out = Vec::with_capacity(batch.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (slots, hidden) = (self.config.slots, self.config.hidden);
        for chunk in (0..batch.len()).collect::<Vec<_>>().chunks(SCORE_CHUNK) {
            let mut g = Graph::new();
            let bound = self.store.bind(&mut g);
            let windows: Vec<&[f64]> = chunk.iter().map(|&i| batch.window(i)).collect();
            let vars = self.forward_batch(&mut g, &bound, &windows, None, &mut rng)?;
            let scores = self.flow.decompose(&g, &vars.flow);
            for ((&i, score), causal) in chunk.iter().zip(scores).zip(&vars.causal) {
                let fused = causal.clean.fused.to_values(&g, slots, hidden);
                out.push(ScoredWindow {
                    start: batch.starts()[i],
                    score,
                    periods: causal.clean.pyramid.periods.periods.clone(),
                    amplitude: fused.amplitude,
                    attention: fused.attention,
                });
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            dims: self.dims,
            mask_kind: self.mask_kind,
            mask_period: self.mask().period(),
            global_period: self.global_period,
            standardization: self.standardization.clone(),
            params: self
                .store
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unrecognised format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut det = Self::new(&ck.config, ck.dims, ck.mask_kind, ck.global_period, ck.standardization)?;
        if det.mask().period() != ck.mask_period {
            return Err(Error::Checkpoint(format!(
                "mask period {} does not match rebuilt period {}",
                ck.mask_period,
                det.mask().period()
            )));
        }
        if ck.params.len() != det.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                det.store.len(),
                ck.params.len()
            )));
        }
        for p in ck.params {
            let t = Tensor::new(p.shape, p.data).map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", p.name)))?;
            if det.store.id(&p.name).is_none() {
                return Err(Error::Checkpoint(format!("unknown tensor `{}`", p.name)));
            }
            det.store
                .assign(&p.name, t)
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", p.name)))?;
        }
        Ok(det)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON container for a trained detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub dims: usize,
    pub mask_kind: MaskKind,
    pub mask_period: usize,
    pub global_period: usize,
    pub standardization: Standardization,
    pub params: Vec<NamedTensor>,
}
