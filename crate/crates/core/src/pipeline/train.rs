use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_schedule, AdamW, Mixture, TrainConfig};
use crate::dsp::{Spectrogram, Stdct, Waveform};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Mfnet, ModelConfig, ParamStore};
use crate::objectives::loss_mfnet_on;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub curve: Vec<LossPoint>,
    pub epoch_means: Vec<f64>,
    /// Checkpoints written, oldest first; the last one holds `params`.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.curve.first().map_or(f64::NAN, |p| p.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.loss)
    }
}

/// Trains a fresh model on `data`, one shuffled pass per epoch.
///
/// With `out_dir`, periodic checkpoints, `final.ckpt` and `loss_curve.json`
/// are written there. A non-finite loss stops training; the weights from
/// before that step are saved as `last_good.ckpt` and the partial curve is
/// still written.
pub fn train(
    data: &[Mixture],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one pair"));
    }
    let net = Mfnet::new(model_cfg.clone())?;
    let mut params = net.init_params::<f32>(cfg.seed);
    let mut opt = AdamW::new(params.tensors(), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let stdct = Stdct::default();
    let weights = cfg.loss_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let segment = (cfg.segment_secs * crate::dsp::SAMPLE_RATE as f64).round() as usize;

    let mut curve = Vec::with_capacity(cfg.total_epochs * steps_per_epoch);
    let mut epoch_means = Vec::with_capacity(cfg.total_epochs);
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.total_epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (noisy, clean) = make_batch(data, batch, segment, &stdct, &mut rng)?;
            let lr = lr_schedule(step, steps_per_epoch, cfg);

            let mut tape = Tape::new().with_finite_check(cfg.finite_check);
            let vars = params.bind(&mut tape, true);
            let x = tape.constant(noisy);
            let s = tape.constant(clean);
            let outcome = net
                .forward(&mut tape, &vars, x)
                .and_then(|y| loss_mfnet_on(&mut tape, s, y, weights));
            let loss_var = match outcome {
                Ok(v) => v,
                Err(Error::NonFinite { op }) => {
                    warn!("non-finite activation in {op} at step {step}");
                    return abort(out_dir, model_cfg, &params, &curve, step, lr, f64::NAN);
                }
                Err(e) => return Err(e),
            };
            let loss = tape.value(loss_var).data()[0] as f64;
            if !loss.is_finite() {
                return abort(out_dir, model_cfg, &params, &curve, step, lr, loss);
            }
            let mut grads = tape.backward(loss_var)?;
            let grads: Vec<Vec<f32>> = vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.numel()]))
                .collect();
            opt.step(params.tensors_mut(), &grads, lr)?;

            debug!("epoch {epoch} step {step} lr {lr:.3e} loss {loss:.6e}");
            curve.push(LossPoint { epoch, step, lr, loss });
            epoch_sum += loss;
            step += 1;
        }
        let mean = epoch_sum / steps_per_epoch as f64;
        epoch_means.push(mean);
        info!("epoch {epoch}: mean loss {mean:.6e}");
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let p = dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
                save_checkpoint(&p, model_cfg, &params)?;
                checkpoints.push(p);
            }
        }
    }

    if let Some(dir) = out_dir {
        let p = dir.join("final.ckpt");
        save_checkpoint(&p, model_cfg, &params)?;
        checkpoints.push(p);
        write_curve(dir, &curve)?;
    }
    Ok(TrainOutcome {
        params,
        curve,
        epoch_means,
        checkpoints,
    })
}

fn abort(
    out_dir: Option<&Path>,
    model_cfg: &ModelConfig,
    params: &ParamStore<f32>,
    curve: &[LossPoint],
    step: usize,
    lr: f64,
    loss: f64,
) -> Result<TrainOutcome> {
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("last_good.ckpt"), model_cfg, params)?;
        write_curve(dir, curve)?;
    }
    Err(Error::NonFiniteLoss { step, lr, loss })
}

pub(crate) fn write_curve(dir: &Path, curve: &[LossPoint]) -> Result<()> {
    let p = dir.join("loss_curve.json");
    let text = serde_json::to_string_pretty(curve).expect("curve serializes");
    std::fs::write(&p, text).map_err(|e| Error::io(p, e))
}

/// Crops every pair in the batch to a shared length and stacks the spectra
/// as `[B, 1, T, F]`.
fn make_batch(
    data: &[Mixture],
    batch: &[usize],
    segment: usize,
    stdct: &Stdct,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let len = batch
        .iter()
        .map(|&i| data[i].noisy.len())
        .min()
        .expect("non-empty batch")
        .min(segment);
    let mut noisy = Vec::new();
    let mut clean = Vec::new();
    let mut shape = [0, 1, 0, 0];
    for &i in batch {
        let m = &data[i];
        let start = rng.gen_range(0..=m.noisy.len() - len);
        let spec = |w: &Waveform| -> Result<Spectrogram> { stdct.analyze(&w.slice(start, len)?) };
        let (n, c) = (spec(&m.noisy)?, spec(&m.clean)?);
        shape = [batch.len(), 1, n.frames(), n.bins()];
        noisy.extend(n.data().iter().map(|&v| v as f32));
        clean.extend(c.data().iter().map(|&v| v as f32));
    }
    Ok((
        Tensor::from_vec(shape.to_vec(), noisy)?,
        Tensor::from_vec(shape.to_vec(), clean)?,
    ))
}
