//! Batch training loop and amortised inference.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::CongealConfig;
use super::loss::total_loss;
use super::report::{EpochStats, RunReport};
use crate::autodiff::{Tape, Tensor};
use crate::dataset::ImageSource;
use crate::error::{Error, Result};
use crate::io::checkpoint::{save_checkpoint, Checkpoint, Progress};
use crate::metrics::{apsnr, StackStats};
use crate::models::{aligner_forward, bind, ModelState, NetworkSpec, PenaltyWeights, Trainable};
use crate::warp::{item_rng, WarpParams};

/// Salt separating the shuffling streams from any data-generation streams
/// that share the user seed.
const SHUFFLE_SALT: u64 = 0x5eed_5a17_c0de_0001;
const PROBE_SIZE: usize = 256;

/// Optional behaviour of [`train`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Checkpoint file, rewritten atomically.
    pub checkpoint: Option<PathBuf>,
    /// Continue from a saved state instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
    /// Receives one progress line per epoch.
    pub progress: Option<&'a mut dyn Write>,
    /// Weights of the autoencoder are not updated when set.
    pub freeze_autoencoder: bool,
}

/// Trained model plus the report of the run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub reference: Tensor<f32>,
    pub report: RunReport,
    pub progress: Progress,
}

/// Aligned images and their corner displacements.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub params: Vec<WarpParams>,
    pub aligned: Tensor<f32>,
    pub flagged: usize,
}

/// Aligns `images` (`N x C x H x W`) to `reference` with one forward pass of
/// the trained aligner.
pub fn infer_align(model: &ModelState, reference: &Tensor<f32>, images: &Tensor<f32>) -> Result<Alignment> {
    let spec = &model.spec;
    let (_, c, h, w) = images.dims4()?;
    if (c, h, w) != (spec.channels, spec.height, spec.width) {
        return Err(Error::ShapeMismatch {
            op: "infer_align",
            left: images.shape().to_vec(),
            right: vec![0, spec.channels, spec.height, spec.width],
        });
    }
    let mut tape = Tape::new();
    let net = bind(&mut tape, spec, &model.layout, &model.params, Trainable::NONE)?;
    let x = tape.constant(images.clone())?;
    let r = tape.constant(reference_tensor(reference, spec)?)?;
    let out = aligner_forward(&mut tape, &net, x, r)?;
    let params = tape
        .value(out.params)
        .data()
        .chunks(8)
        .map(|row| WarpParams(std::array::from_fn(|k| row[k] as f64)))
        .collect();
    Ok(Alignment {
        params,
        aligned: tape.value(out.warped).clone(),
        flagged: out.flagged,
    })
}

fn reference_tensor(reference: &Tensor<f32>, spec: &NetworkSpec) -> Result<Tensor<f32>> {
    let want = [1, spec.channels, spec.height, spec.width];
    if reference.len() != want.iter().product::<usize>() {
        return Err(Error::ShapeMismatch {
            op: "reference",
            left: reference.shape().to_vec(),
            right: want.to_vec(),
        });
    }
    reference.clone().reshape(want)
}

/// Aligns every image of `source` in batches, feeding each aligned image and
/// its parameters to `sink` in dataset order. The reference keeps the
/// identity warp.
pub fn align_source(
    model: &ModelState,
    reference: &Tensor<f32>,
    reference_index: usize,
    source: &dyn ImageSource,
    indices: &[usize],
    batch: usize,
    mut sink: impl FnMut(usize, &[f32], &WarpParams) -> Result<()>,
) -> Result<usize> {
    let per = reference.len();
    let mut flagged = 0;
    for chunk in indices.chunks(batch.max(1)) {
        let others: Vec<usize> = chunk.iter().copied().filter(|&i| i != reference_index).collect();
        let aligned = if others.is_empty() {
            None
        } else {
            let a = infer_align(model, reference, &source.batch(&others)?)?;
            flagged += a.flagged;
            Some(a)
        };
        let mut k = 0;
        for &i in chunk {
            if i == reference_index {
                sink(i, reference.data(), &WarpParams::identity())?;
            } else {
                let a = aligned.as_ref().expect("non-empty batch");
                sink(i, &a.aligned.data()[k * per..(k + 1) * per], &a.params[k])?;
                k += 1;
            }
        }
    }
    Ok(flagged)
}

fn stats_of(source: &dyn ImageSource, indices: &[usize]) -> Result<StackStats> {
    let mut s = StackStats::new(source.dims());
    let mut buf = vec![
        0.0f32;
        {
            let (c, h, w) = source.dims();
            c * h * w
        }
    ];
    for &i in indices {
        source.load(i, &mut buf)?;
        s.push(&buf)?;
    }
    Ok(s)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Trains the aligner and the autoencoder jointly on `source`, aligning
/// every image to image `cfg.reference_index`, which is held fixed.
pub fn train(
    source: &dyn ImageSource,
    spec: &NetworkSpec,
    cfg: &CongealConfig,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    spec.validate()?;
    let n = source.len();
    if n == 0 {
        return Err(Error::EmptyStack);
    }
    if cfg.reference_index >= n {
        return Err(Error::InvalidConfig(format!(
            "reference index {} out of range for {n} images",
            cfg.reference_index
        )));
    }
    let dims = source.dims();
    if dims != (spec.channels, spec.height, spec.width) {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: vec![dims.0, dims.1, dims.2],
            right: vec![spec.channels, spec.height, spec.width],
        });
    }
    let weights = PenaltyWeights::new(spec.code_size(), cfg.k)?;
    let reference = source.batch(&[cfg.reference_index])?;
    let all: Vec<usize> = (0..n).collect();
    let probe: Vec<usize> = (0..n.min(PROBE_SIZE)).collect();
    let before = stats_of(source, &all)?;
    let apsnr_before = apsnr(&before)?;

    let (mut model, mut progress) = match opts.resume.take() {
        Some(ck) => {
            if ck.model.spec != *spec {
                return Err(Error::InvalidConfig(
                    "checkpoint was trained with another network".into(),
                ));
            }
            if !resumable(&ck.config, cfg) {
                return Err(Error::InvalidConfig(
                    "checkpoint was trained with another configuration".into(),
                ));
            }
            if ck.reference != reference {
                return Err(Error::InvalidConfig(
                    "checkpoint reference differs from the dataset's".into(),
                ));
            }
            (ck.model, ck.progress)
        }
        None => (ModelState::new(spec, cfg.seed)?, Progress::new(cfg.seed)),
    };

    let trainable = Trainable {
        aligner: true,
        autoencoder: cfg.uses_complexity() && !opts.freeze_autoencoder,
    };
    let adam = cfg.adam();
    let mut order: Vec<usize> = all.iter().copied().filter(|&i| i != cfg.reference_index).collect();
    while progress.epochs_done < cfg.epochs && !progress.stopped {
        let epoch = progress.epochs_done;
        order.sort_unstable();
        order.shuffle(&mut item_rng(cfg.seed ^ SHUFFLE_SALT, epoch as u64));
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let images = source.batch(chunk)?;
            let mut tape = Tape::<f32>::new();
            let net = bind(&mut tape, spec, &model.layout, &model.params, trainable)?;
            let x = tape.constant(images)?;
            let r = tape.constant(reference.clone())?;
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::Diverged { epoch },
                e => e,
            };
            let losses = total_loss(&mut tape, &net, x, r, cfg, &weights).map_err(diverged)?;
            let total = tape.scalar(losses.total) as f64;
            if !total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let b = chunk.len() as f64;
            sums[0] += total * b;
            if let Some(d) = losses.distortion {
                sums[1] += tape.scalar(d) as f64 * b;
            }
            if let Some(c) = &losses.complexity {
                sums[2] += tape.scalar(c.reconstruction) as f64 * b;
                sums[3] += tape.scalar(c.penalty) as f64 * b;
            }
            seen += chunk.len();
            let vars = net.vars.clone();
            let grads = tape.backward(losses.total).map_err(diverged)?;
            let grads: Vec<Option<Vec<f32>>> = vars.iter().map(|&v| grads.get(v).map(<[f32]>::to_vec)).collect();
            model.step(&grads, &adam).map_err(diverged)?;
        }
        let mean = |s: f64| if seen == 0 { 0.0 } else { s / seen as f64 };
        let mut probe_stats = StackStats::new(dims);
        align_source(
            &model,
            &reference,
            cfg.reference_index,
            source,
            &probe,
            cfg.batch,
            |_, img, _| probe_stats.push(img),
        )?;
        let stats = EpochStats {
            epoch: epoch + 1,
            total: mean(sums[0]),
            distortion: cfg.uses_distortion().then(|| mean(sums[1])),
            reconstruction: cfg.uses_complexity().then(|| mean(sums[2])),
            penalty: cfg.uses_complexity().then(|| mean(sums[3])),
            probe_apsnr: apsnr(&probe_stats)?,
        };
        if let Some(out) = opts.progress.as_mut() {
            let _ = writeln!(
                out,
                "epoch={} D={} Crec={} Cpen={} apsnr={}",
                stats.epoch,
                fmt_opt(stats.distortion),
                fmt_opt(stats.reconstruction),
                fmt_opt(stats.penalty),
                stats.probe_apsnr
            );
        }
        progress.record(stats, cfg.patience);
        let due = cfg.checkpoint_every > 0 && progress.epochs_done % cfg.checkpoint_every == 0;
        if let Some(path) = &opts.checkpoint {
            if due {
                save_checkpoint(path, cfg, &model, &reference, &progress)?;
            }
        }
    }
    if let Some(path) = &opts.checkpoint {
        save_checkpoint(path, cfg, &model, &reference, &progress)?;
    }

    let mut after = StackStats::new(dims);
    let mut params = vec![WarpParams::identity(); n];
    let flagged = align_source(
        &model,
        &reference,
        cfg.reference_index,
        source,
        &all,
        cfg.batch,
        |i, img, p| {
            params[i] = *p;
            after.push(img)
        },
    )?;
    let report = RunReport {
        method: "congeal".into(),
        config: cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        n,
        dims,
        epochs: progress.history.clone(),
        apsnr_before,
        apsnr_after: apsnr(&after)?,
        before,
        after,
        mean_area_ratio: mean_area_ratio(&params, cfg.reference_index, dims.2, dims.1)?,
        params,
        flagged,
        stopped_early: progress.stopped,
        images: Vec::new(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model,
        reference,
        report,
        progress,
    })
}

/// Configurations may differ only in run length and bookkeeping.
fn resumable(saved: &CongealConfig, now: &CongealConfig) -> bool {
    let strip = |c: &CongealConfig| CongealConfig {
        epochs: 0,
        patience: 0,
        checkpoint_every: 0,
        ..c.clone()
    };
    strip(saved) == strip(now)
}

/// Mean area ratio of the warped frame over all non-reference images.
pub fn mean_area_ratio(params: &[WarpParams], reference_index: usize, width: usize, height: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, p) in params.iter().enumerate() {
        if i == reference_index {
            continue;
        }
        total += p.to_homography(width, height)?.area_ratio(width, height);
        count += 1;
    }
    Ok(if count == 0 { 1.0 } else { total / count as f64 })
}
