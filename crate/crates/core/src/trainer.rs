//! Joint training of the cause encoder and the flow.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchVars, Detector, MaskKind};
use crate::numeric::{Adam, Bound, Graph, Var};
use crate::series::{make_windows, MultivariateSeries, SplitRanges, SplitSpec, Standardization, WindowBatch};
use crate::spectral::{discover_global_period, BandLocation, Intervention, NoiseKind};

const EVAL_CHUNK: usize = 64;
const SHUFFLE_STREAM: u64 = 0x7261_696e;
const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Window length `T`.
    pub window: usize,
    pub stride: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Local periods per window.
    pub k: usize,
    /// Cause slots `N`.
    pub slots: usize,
    /// Hidden width `D_h`.
    pub hidden: usize,
    /// Coupling layers `L`.
    pub layers: usize,
    /// Hidden layers per scale/shift network.
    pub blocks: usize,
    pub sigma: f64,
    pub k_h_frac: f64,
    pub noise: NoiseKind,
    pub band: BandLocation,
    pub patience: usize,
    pub mask: MaskKind,
    pub standardize: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch_size: 32,
            window: 60,
            stride: 5,
            alpha: 0.1,
            beta: 0.1,
            k: 3,
            slots: 10,
            hidden: 32,
            layers: 2,
            blocks: 2,
            sigma: 0.1,
            k_h_frac: 0.25,
            noise: NoiseKind::Gaussian,
            band: BandLocation::High,
            patience: 10,
            mask: MaskKind::Periodic,
            standardize: true,
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("window", self.window),
            ("stride", self.stride),
            ("k", self.k),
            ("slots", self.slots),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("patience", self.patience),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    message: "must be positive".into(),
                });
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config {
                key: "lr".into(),
                message: format!("must be positive, got {}", self.lr),
            });
        }
        for (key, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    key: key.into(),
                    message: format!("must be >= 0, got {v}"),
                });
            }
        }
        if self.window < 4 {
            return Err(Error::Config {
                key: "window".into(),
                message: "must be at least 4".into(),
            });
        }
        if 2 * self.k >= self.window {
            return Err(Error::Config {
                key: "k".into(),
                message: format!("must be below window / 2 = {}", self.window / 2),
            });
        }
        self.intervention().validate().map_err(|e| Error::Config {
            key: "sigma".into(),
            message: e.to_string(),
        })?;
        self.split().map_err(|e| Error::Config {
            key: "train_frac".into(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    pub fn intervention(&self) -> Intervention {
        Intervention {
            k_h_frac: self.k_h_frac,
            sigma: self.sigma,
            noise: self.noise,
            location: self.band,
        }
    }

    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.train_frac, self.val_frac, self.test_frac)
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_nf: f64,
    pub l_sim: f64,
    pub l_ind: f64,
    pub val_nll: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub l_nf: f64,
    pub l_sim: f64,
    pub l_ind: f64,
}

/// `L_nf + alpha L_sim + beta L_ind` on a graph. Zero weights leave their
/// term out entirely.
pub fn loss_graph<R: Rng + ?Sized>(
    det: &Detector,
    g: &mut Graph,
    bound: &Bound,
    windows: &[&[f64]],
    rng: &mut R,
) -> Result<(Var, BatchVars)> {
    let iv = det.config.intervention();
    let vars = det.forward_batch(g, bound, windows, Some(&iv), rng)?;
    let mut total = vars.l_nf;
    if det.config.alpha != 0.0 {
        let t = g.scale(vars.l_sim, det.config.alpha);
        total = g.add(total, t)?;
    }
    if det.config.beta != 0.0 {
        let t = g.scale(vars.l_ind, det.config.beta);
        total = g.add(total, t)?;
    }
    Ok((total, vars))
}

fn components(g: &Graph, total: Var, vars: &BatchVars) -> LossComponents {
    LossComponents {
        total: g.scalar(total),
        l_nf: g.scalar(vars.l_nf),
        l_sim: g.scalar(vars.l_sim),
        l_ind: g.scalar(vars.l_ind),
    }
}

/// Value of the objective and each of its terms on one batch.
pub fn total_loss<R: Rng + ?Sized>(det: &Detector, windows: &[&[f64]], rng: &mut R) -> Result<LossComponents> {
    let mut g = Graph::new();
    let bound = det.store.bind(&mut g);
    let (total, vars) = loss_graph(det, &mut g, &bound, windows, rng)?;
    Ok(components(&g, total, &vars))
}

/// One Adam update on one batch.
pub fn train_step<R: Rng + ?Sized>(
    det: &mut Detector,
    windows: &[&[f64]],
    adam: &Adam,
    rng: &mut R,
) -> Result<LossComponents> {
    let mut g = Graph::new();
    let bound = det.store.bind(&mut g);
    let (total, vars) = loss_graph(det, &mut g, &bound, windows, rng)?;
    let comps = components(&g, total, &vars);
    if !comps.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = g.backward(total)?;
    det.store.zero_grad();
    det.store.accumulate(&grads, &bound);
    det.store.adam_step(adam)?;
    Ok(comps)
}

/// Mean loss terms over a whole batch of windows without updating.
pub fn evaluate<R: Rng + ?Sized>(det: &Detector, batch: &WindowBatch, rng: &mut R) -> Result<LossComponents> {
    let mut acc = LossComponents::default();
    let idx: Vec<usize> = (0..batch.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let windows: Vec<&[f64]> = chunk.iter().map(|&i| batch.window(i)).collect();
        let c = total_loss(det, &windows, rng)?;
        let w = chunk.len() as f64;
        acc.total += c.total * w;
        acc.l_nf += c.l_nf * w;
        acc.l_sim += c.l_sim * w;
        acc.l_ind += c.l_ind * w;
    }
    let n = batch.len() as f64;
    Ok(LossComponents {
        total: acc.total / n,
        l_nf: acc.l_nf / n,
        l_sim: acc.l_sim / n,
        l_ind: acc.l_ind / n,
    })
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters with the lowest validation NLL.
    pub detector: Detector,
    /// Epoch 0 holds the losses before any update.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

fn diverged(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { epoch, batch },
        other => other,
    }
}

/// Mini-batch Adam with per-epoch validation, best-model retention and
/// early stopping. When `checkpoint` is given, the best model so far is
/// written there after every improvement.
pub fn fit(mut det: Detector, train: &WindowBatch, val: &WindowBatch, checkpoint: Option<&Path>) -> Result<FitOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation splits need windows".into(),
        ));
    }
    let config = det.config.clone();
    let adam = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let eval_rng = || {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(EVAL_STREAM);
        r
    };
    let start = evaluate(&det, train, &mut eval_rng()).map_err(|e| diverged(e, 0, 0))?;
    let val_nll = det.nll(val).map_err(|e| diverged(e, 0, 0))?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        l_nf: start.l_nf,
        l_sim: start.l_sim,
        l_ind: start.l_ind,
        val_nll,
    }];
    let mut best = (0usize, val_nll, det.clone());
    if let Some(p) = checkpoint {
        det.save(p)?;
    }
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossComponents::default();
        let batches = order.chunks(config.batch_size);
        let n_batches = batches.len();
        for (b, chunk) in batches.enumerate() {
            let windows: Vec<&[f64]> = chunk.iter().map(|&i| train.window(i)).collect();
            let c = train_step(&mut det, &windows, &adam, &mut rng).map_err(|e| diverged(e, epoch, b))?;
            let w = chunk.len() as f64;
            acc.l_nf += c.l_nf * w;
            acc.l_sim += c.l_sim * w;
            acc.l_ind += c.l_ind * w;
        }
        let val_nll = det.nll(val).map_err(|e| diverged(e, epoch, n_batches))?;
        if !val_nll.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: n_batches,
            });
        }
        let n = train.len() as f64;
        history.push(EpochRecord {
            epoch,
            l_nf: acc.l_nf / n,
            l_sim: acc.l_sim / n,
            l_ind: acc.l_ind / n,
            val_nll,
        });
        if val_nll < best.1 {
            best = (epoch, val_nll, det.clone());
            since_best = 0;
            if let Some(p) = checkpoint {
                det.save(p)?;
            }
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_nll, detector) = best;
    Ok(FitOutcome {
        detector,
        history,
        best_epoch,
        best_val_nll,
    })
}

/// Everything produced by [`train_on_series`].
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub outcome: FitOutcome,
    pub splits: SplitRanges,
    /// The whole series under the training-split standardization.
    pub standardized: MultivariateSeries,
}

/// Standardize on the train split, find the global period there, window
/// the train and validation splits, and fit.
pub fn train_on_series(
    series: &MultivariateSeries,
    config: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainedRun> {
    config.validate()?;
    let splits = config.split()?.ranges(series.len());
    for (name, r) in [("train", &splits.train), ("val", &splits.val)] {
        if r.len() < config.window {
            return Err(Error::InvalidArgument(format!(
                "{name} split has {} points, fewer than the window length {}",
                r.len(),
                config.window
            )));
        }
    }
    let standardization = if config.standardize {
        Standardization::fit(series, splits.train.clone())?
    } else {
        Standardization::identity(series.dims())
    };
    let standardized = standardization.apply(series)?;
    let train_series = standardized.slice(splits.train.clone())?;
    let global_period = discover_global_period(&train_series)?.period;
    let val_series = standardized.slice(splits.val.clone())?;
    let train = make_windows(&train_series, config.window, config.stride)?;
    let val = make_windows(&val_series, config.window, config.stride)?;
    let det = Detector::new(config, series.dims(), config.mask, global_period, standardization)?;
    let outcome = fit(det, &train, &val, checkpoint)?;
    Ok(TrainedRun {
        outcome,
        splits,
        standardized,
    })
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
