//! Supervised training: MSE loss, Adam, minibatch fitting with early
//! stopping, and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, MetricSpread, MetricsReport};
use crate::model::{Model, ModelConfig, ModelParams, PreparedSample, Sample};
use crate::pipeline::normalizer::Normalizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when this many epochs pass without a new validation best.
    pub patience: usize,
    pub fold_count: usize,
    /// Shuffling and fold-assignment seed (model init uses the model
    /// config's own seed).
    pub seed: u64,
    /// Validate every this many epochs.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 15,
            fold_count: 5,
            seed: 0,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.betas.0), ("beta2", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.val_every == 0 {
            return Err(Error::Config(
                "batch size, max epochs, and validation cadence must be at least 1".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.fold_count < 2 {
            return Err(Error::Config("fold count must be at least 2".into()));
        }
        Ok(())
    }
}

/// Mean squared error of paired series.
pub fn mse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::Dimension(format!(
            "{} predictions against {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("mean squared error of no pairs".into()));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(obs)
        .map(|(&p, &o)| (p - o) * (p - o))
        .sum::<f64>()
        / n)
}

/// First and second moment accumulators, one flat vector per parameter
/// tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update on a flat parameter slice. `t` is the 1-based step
/// count used for bias correction.
pub fn adam_update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    learning_rate: f64,
    betas: (f64, f64),
    epsilon: f64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::State(
            "Adam step count starts at 1; bias correction is undefined at t=0".into(),
        ));
    }
    if w.len() != g.len() || w.len() != m.len() || w.len() != v.len() {
        return Err(Error::Dimension(format!(
            "Adam buffers disagree: w={}, g={}, m={}, v={}",
            w.len(),
            g.len(),
            m.len(),
            v.len()
        )));
    }
    let (b1, b2) = betas;
    let mc = 1.0 - b1.powi(t as i32);
    let vc = 1.0 - b2.powi(t as i32);
    for k in 0..w.len() {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        let m_hat = m[k] / mc;
        let v_hat = v[k] / vc;
        w[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Applies one Adam step to every tensor of the model.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    t: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if param_tensors.len() != grad_tensors.len() || param_tensors.len() != state.m.len() {
        return Err(Error::Dimension(
            "parameter, gradient, and state tensor counts differ".into(),
        ));
    }
    for k in 0..param_tensors.len() {
        adam_update(
            param_tensors[k].data_mut(),
            grad_tensors[k].data(),
            &mut state.m[k],
            &mut state.v[k],
            t,
            cfg.learning_rate,
            cfg.betas,
            cfg.epsilon,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    /// Present on validated epochs (per `val_every`).
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// The epoch training actually halted at (early stop or the limit).
    pub stopping_epoch: usize,
    pub fold: Option<usize>,
}

pub struct TrainOutcome {
    /// The model restored to its best-validation-epoch parameters.
    pub model: Model,
    pub report: TrainReport,
}

/// Fits a model on `train`, watching `val` for early stopping. The
/// normalizer is fitted on the training split only; losses are in
/// target-scaled units.
pub fn fit(
    model_cfg: &ModelConfig,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if val.is_empty() {
        return Err(Error::Input("early stopping needs a validation set".into()));
    }
    let mut val_preps: Option<Vec<PreparedSample>> = None;
    fit_with_validator(model_cfg, train, cfg, |_, model| {
        if val_preps.is_none() {
            let preps: Vec<PreparedSample> =
                val.iter().map(|s| model.prepare(s)).collect::<Result<_>>()?;
            for p in &preps {
                if p.target_scaled.is_none() {
                    return Err(Error::Input("validation sample without a target".into()));
                }
            }
            val_preps = Some(preps);
        }
        let preps = val_preps.as_ref().expect("just filled");
        let mut se = 0.0;
        for p in preps {
            let d = model.forward_prepared(p)? - p.target_scaled.unwrap();
            se += d * d;
        }
        Ok(se / preps.len() as f64)
    })
}

/// [`fit`] with the validation pass supplied as a closure: it receives
/// the epoch number and the current model and returns the validation MSE
/// used for early stopping.
pub fn fit_with_validator<F>(
    model_cfg: &ModelConfig,
    train: &[Sample],
    cfg: &TrainConfig,
    mut validate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model) -> Result<f64>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    let normalizer = Normalizer::fit(train)?;
    let mut model = Model::init(model_cfg.clone(), normalizer)?;
    let preps: Vec<PreparedSample> = train
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    for p in &preps {
        if p.target_scaled.is_none() {
            return Err(Error::Input("training sample without a target".into()));
        }
    }

    let mut adam = AdamState::new(&model.params);
    let mut step = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..preps.len()).collect();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut epochs = Vec::new();
    let mut stopping_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        stopping_epoch = epoch;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 2.0 / chunk.len() as f64;
            let results: Vec<(f64, ModelParams)> = chunk
                .par_iter()
                .map(|&i| {
                    let (pred, trace) = model.forward_traced(&preps[i])?;
                    let err = pred - preps[i].target_scaled.unwrap();
                    let g = model.backward(&trace, scale * err)?;
                    Ok((err * err, g))
                })
                .collect::<Result<_>>()?;
            let mut grads = model.params.zeros_like();
            let mut batch_se = 0.0;
            for (se, g) in &results {
                batch_se += se;
                grads.add_scaled(g, 1.0)?;
            }
            loss_sum += batch_se / chunk.len() as f64;
            batches += 1;
            step += 1;
            adam_step(&mut model.params, &grads, &mut adam, step, cfg)?;
        }
        let train_mse = loss_sum / batches as f64;
        if !train_mse.is_finite() || !model.params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: "loss or parameters became non-finite".into(),
            });
        }

        let val_mse = if epoch % cfg.val_every == 0 {
            let v = validate(epoch, &model)?;
            if !v.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("validation loss {v} is not finite"),
                });
            }
            Some(v)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });

        if let Some(v) = val_mse {
            // Strict improvement only: ties keep the earlier epoch.
            if best.as_ref().is_none_or(|(_, bv, _)| v < *bv) {
                best = Some((epoch, v, model.params.clone()));
            }
        }
        if let Some((be, _, _)) = &best {
            if epoch - be >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_mse, best_params) = best.ok_or_else(|| {
        Error::State("training finished without a single validation pass".into())
    })?;
    model.params = best_params;
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs,
            best_epoch,
            best_val_mse,
            stopping_epoch,
            fold: None,
        },
    })
}

/// Shuffles `0..n` and cuts it into `k` folds whose sizes differ by at
/// most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Input("cannot split into zero folds".into()));
    }
    if n < k {
        return Err(Error::Input(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

pub struct FoldOutcome {
    pub fold: usize,
    pub report: TrainReport,
    /// Metrics on the held-out fold, in W/m².
    pub metrics: MetricsReport,
    pub model: Model,
}

pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub rmse: MetricSpread,
    pub mbe: MetricSpread,
    pub r2: MetricSpread,
    pub r: MetricSpread,
}

/// K-fold cross-validation: each fold trains an independent model (its
/// own seed) on the remaining folds and is scored on the held-out one.
pub fn cross_validate(
    model_cfg: &ModelConfig,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<CvOutcome> {
    cfg.validate()?;
    let folds = kfold_split(samples.len(), cfg.fold_count, cfg.seed)?;
    let mut outcomes = Vec::with_capacity(folds.len());
    for (f, held_out) in folds.iter().enumerate() {
        let in_fold: Vec<bool> = {
            let mut mask = vec![false; samples.len()];
            for &i in held_out {
                mask[i] = true;
            }
            mask
        };
        let train: Vec<Sample> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_fold[*i])
            .map(|(_, s)| s.clone())
            .collect();
        let val: Vec<Sample> = held_out.iter().map(|&i| samples[i].clone()).collect();

        let mut mc = model_cfg.clone();
        mc.seed = model_cfg.seed.wrapping_add(f as u64);
        let mut tc = cfg.clone();
        tc.seed = cfg.seed.wrapping_add(f as u64);
        let mut outcome = fit(&mc, &train, &val, &tc)?;
        outcome.report.fold = Some(f);

        let mut est = Vec::with_capacity(val.len());
        let mut obs = Vec::with_capacity(val.len());
        for s in &val {
            est.push(outcome.model.predict(s)?);
            obs.push(
                s.target_ghi
                    .ok_or_else(|| Error::Input("held-out sample without a target".into()))?,
            );
        }
        let metrics = eval::metrics_report(&format!("fold{f}"), &est, &obs)?;
        outcomes.push(FoldOutcome {
            fold: f,
            report: outcome.report,
            metrics,
            model: outcome.model,
        });
    }

    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
        outcomes.iter().map(|o| f(&o.metrics)).collect()
    };
    Ok(CvOutcome {
        rmse: eval::metric_spread(&collect(|m| m.rmse)),
        mbe: eval::metric_spread(&collect(|m| m.mbe)),
        r2: eval::metric_spread(&collect(|m| m.r2)),
        r: eval::metric_spread(&collect(|m| m.r)),
        folds: outcomes,
    })
}
