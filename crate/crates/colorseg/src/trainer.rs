//! The training loop: sample a batch, run per-image tapes, sum gradients in
//! a fixed order, take an Adam step, log, and checkpoint.
//!
//! Everything is deterministic for a given seed and build: batch indices
//! and augmentations come from one RNG whose state is checkpointed, per-
//! image losses are summed in batch order, and the loss log prints floats
//! with shortest-round-trip formatting — so a resumed run appends exactly
//! the rows the uninterrupted run would have written.

use std::io::Write;
use std::path::{Path, PathBuf};

use colorseg_core::adam::{adam_step, AdamParams, AdamState};
use colorseg_core::loss::{coloring_targets, LossConfig};
use colorseg_core::net::{NetConfig, Network};
use colorseg_core::probmap::ColorProbMap;
use colorseg_core::rng::Rng;
use colorseg_core::synth::{augment, Sample};
use colorseg_core::tensor::tape::Tape;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub struct TrainState {
    pub net: Network,
    pub adam: Vec<AdamState>,
    pub iteration: u64,
    pub rng: Rng,
}

/// RNG stream index for the training loop (scene generation uses the
/// per-sample index streams; network init derives its own).
const TRAIN_STREAM: u64 = 1;

impl TrainState {
    pub fn fresh(run: &RunConfig, input_channels: usize) -> Result<TrainState> {
        let cfg = NetConfig {
            input_channels,
            colors: run.colors,
            depth: run.depth,
            base_channels: run.base_channels,
            use_batchnorm: run.batchnorm,
        };
        let net = Network::init(cfg, run.seed).map_err(CliError::Config)?;
        let adam = net
            .params()
            .iter()
            .map(|p| AdamState::new(p.tensor.numel()))
            .collect();
        Ok(TrainState {
            net,
            adam,
            iteration: 0,
            rng: Rng::stream(run.seed, TRAIN_STREAM),
        })
    }

    pub fn resume(path: &Path, run: &RunConfig, input_channels: usize) -> Result<TrainState> {
        let ckpt = read_checkpoint(path)?;
        let cfg = ckpt.net.cfg();
        if cfg.input_channels != input_channels
            || cfg.colors != run.colors
            || cfg.depth != run.depth
            || cfg.base_channels != run.base_channels
            || cfg.use_batchnorm != run.batchnorm
        {
            return Err(CliError::Checkpoint(format!(
                "checkpoint architecture {cfg:?} does not match the requested run \
                 (input_channels={input_channels}, colors={}, depth={}, base_channels={}, batchnorm={})",
                run.colors, run.depth, run.base_channels, run.batchnorm
            )));
        }
        Ok(TrainState {
            net: ckpt.net,
            adam: ckpt.adam,
            iteration: ckpt.iteration,
            rng: Rng::restore(ckpt.rng_state),
        })
    }
}

pub fn loss_config(run: &RunConfig) -> LossConfig {
    let mut cfg = LossConfig::new(run.colors, run.margin, run.mu);
    cfg.background_weight = run.background_weight;
    cfg.element = run.element;
    cfg
}

/// One optimization step on `batch` samples drawn i.i.d. from `samples`.
/// Returns the summed batch loss and the per-color instance counts
/// (index 0 = color 2, …).
pub fn train_step(
    state: &mut TrainState,
    samples: &[Sample],
    run: &RunConfig,
    lcfg: &LossConfig,
    hp: &AdamParams,
) -> Result<(f64, Vec<u64>)> {
    let n = samples.len() as u64;
    let mut grad_acc: Vec<Vec<f64>> = state
        .net
        .params()
        .iter()
        .map(|p| vec![0.0; p.tensor.numel()])
        .collect();
    let mut loss_sum = 0.0;
    let mut color_counts = vec![0u64; run.colors as usize - 1];

    for _ in 0..run.batch {
        let idx = state.rng.below(n) as usize;
        let picked = &samples[idx];
        let owned;
        let sample = if run.augment {
            owned = augment(
                picked,
                picked.labels.height(),
                picked.labels.width(),
                &mut state.rng,
            )
            .map_err(CliError::Data)?;
            &owned
        } else {
            picked
        };

        let mut tape = Tape::new();
        let pass = state
            .net
            .forward(&mut tape, &sample.image.to_tensor())
            .map_err(CliError::Numeric)?;
        let y = ColorProbMap::from_tensor(tape.value(pass.output)).map_err(CliError::Numeric)?;
        let targets =
            coloring_targets(&y, &sample.labels, None, lcfg).map_err(CliError::Numeric)?;
        let loss_node = tape
            .weighted_nll(pass.output, targets.channels, targets.weights)
            .map_err(|e| CliError::Numeric(format!("{e:?}")))?;
        let loss = tape.value(loss_node).item().map_err(|e| CliError::Numeric(format!("{e:?}")))?;
        if !loss.is_finite() {
            return Err(CliError::Numeric(format!(
                "loss became non-finite at iteration {} (sample {idx})",
                state.iteration + 1
            )));
        }
        loss_sum += loss;
        for &c in &targets.assignment {
            color_counts[c as usize - 2] += 1;
        }

        let grads = tape
            .backward(loss_node)
            .map_err(|e| CliError::Numeric(format!("{e:?}")))?;
        for (acc, node) in grad_acc.iter_mut().zip(&pass.param_nodes) {
            if let Some(g) = grads.wrt(*node) {
                for (a, &gi) in acc.iter_mut().zip(g) {
                    *a += gi;
                }
            }
        }
    }

    for ((param, state_i), acc) in state
        .net
        .params_mut()
        .iter_mut()
        .zip(&mut state.adam)
        .zip(&grad_acc)
    {
        if !acc.iter().all(|g| g.is_finite()) {
            return Err(CliError::Numeric(format!(
                "gradient of `{}` became non-finite at iteration {}",
                param.name,
                state.iteration + 1
            )));
        }
        adam_step(param.tensor.data_mut(), acc, state_i, hp);
    }
    state.iteration += 1;
    Ok((loss_sum, color_counts))
}

fn open_loss_log(path: &Path, colors: u8) -> Result<std::fs::File> {
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    if fresh {
        let mut header = String::from("iter,loss");
        for c in 2..=colors {
            header.push_str(&format!(",n{c}"));
        }
        header.push('\n');
        file.write_all(header.as_bytes())
            .map_err(|e| CliError::io(path, e))?;
    }
    Ok(file)
}

#[derive(Debug)]
pub struct TrainReport {
    pub final_loss: f64,
    pub iterations: u64,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

/// Runs (or resumes) training to `run.iters` iterations, writing
/// `checkpoint.bin` and appending to `loss.csv` under `out_dir`.
pub fn train(
    run: &RunConfig,
    samples: &[Sample],
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    run.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| CliError::Data("training set is empty".into()))?;
    let channels = first.image.channels();
    for (i, s) in samples.iter().enumerate() {
        if s.image.channels() != channels {
            return Err(CliError::Data(format!(
                "sample {i} has {} channels, expected {channels}",
                s.image.channels()
            )));
        }
    }
    let lcfg = loss_config(run);
    lcfg.validate().map_err(CliError::Config)?;

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    let log_path = out_dir.join("loss.csv");

    let mut state = match resume {
        Some(path) => TrainState::resume(path, run, channels)?,
        None => TrainState::fresh(run, channels)?,
    };
    if state.iteration > run.iters {
        return Err(CliError::Config(format!(
            "checkpoint is already at iteration {}, past the requested {}",
            state.iteration, run.iters
        )));
    }
    let mut log = open_loss_log(&log_path, run.colors)?;
    let hp = AdamParams::with_lr(run.lr);
    let progress_every = (run.iters / 10).max(1);

    let mut last_loss = f64::NAN;
    while state.iteration < run.iters {
        let (loss, counts) = train_step(&mut state, samples, run, &lcfg, &hp)?;
        last_loss = loss;

        let mut row = format!("{},{}", state.iteration, loss);
        for c in &counts {
            row.push_str(&format!(",{c}"));
        }
        row.push('\n');
        log.write_all(row.as_bytes())
            .map_err(|e| CliError::io(&log_path, e))?;

        if state.iteration % progress_every == 0 || state.iteration == run.iters {
            eprintln!("iter {}/{} loss {loss:.4}", state.iteration, run.iters);
        }
        if run.checkpoint_every > 0 && state.iteration % run.checkpoint_every == 0 {
            write_checkpoint(
                &ckpt_path,
                &state.net,
                &state.adam,
                state.iteration,
                state.rng.state(),
            )?;
        }
    }
    write_checkpoint(
        &ckpt_path,
        &state.net,
        &state.adam,
        state.iteration,
        state.rng.state(),
    )?;
    Ok(TrainReport {
        final_loss: last_loss,
        iterations: state.iteration,
        checkpoint: ckpt_path,
        loss_log: log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use colorseg_core::synth::{generate, SceneConfig};
    use tempfile::tempdir;

    fn tiny_run() -> RunConfig {
        RunConfig {
            colors: 3,
            margin: 2.0,
            mu: 1.0,
            depth: 1,
            base_channels: 2,
            batch: 2,
            iters: 4,
            checkpoint_every: 2,
            seed: 5,
            ..RunConfig::default()
        }
    }

    fn tiny_samples() -> Vec<Sample> {
        let mut cfg = SceneConfig::blobs(16, 16);
        cfg.max_size = 3.5;
        cfg.min_size = 2.0;
        cfg.min_instances = 1;
        cfg.max_instances = 2;
        (0..3).map(|i| generate(&cfg, i).unwrap()).collect()
    }

    #[test]
    fn loss_decreases_and_artifacts_appear() {
        let dir = tempdir().unwrap();
        let samples = tiny_samples();
        let mut run = tiny_run();
        run.iters = 30;
        let report = train(&run, &samples, dir.path(), None).unwrap();
        assert_eq!(report.iterations, 30);
        assert!(report.checkpoint.exists());
        let log = std::fs::read_to_string(&report.loss_log).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], "iter,loss,n2,n3");
        assert_eq!(lines.len(), 31);
        let first: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert!(
            report.final_loss < first,
            "loss should drop: {first} -> {}",
            report.final_loss
        );
    }

    #[test]
    fn resumed_run_reproduces_the_uninterrupted_log() {
        let samples = tiny_samples();

        // One uninterrupted 6-iteration run.
        let full_dir = tempdir().unwrap();
        let mut run = tiny_run();
        run.iters = 6;
        train(&run, &samples, full_dir.path(), None).unwrap();
        let full_log = std::fs::read_to_string(full_dir.path().join("loss.csv")).unwrap();

        // 3 iterations, then resume to 6 in a separate directory.
        let part_dir = tempdir().unwrap();
        let mut run_a = tiny_run();
        run_a.iters = 3;
        run_a.checkpoint_every = 0; // rely on the final checkpoint
        let report_a = train(&run_a, &samples, part_dir.path(), None).unwrap();
        let mut run_b = tiny_run();
        run_b.iters = 6;
        let report_b = train(&run_b, &samples, part_dir.path(), Some(&report_a.checkpoint)).unwrap();
        let part_log = std::fs::read_to_string(part_dir.path().join("loss.csv")).unwrap();

        assert_eq!(part_log, full_log, "resume must replay bit-identically");

        // Final checkpoints are byte-identical too.
        let a = std::fs::read(full_dir.path().join("checkpoint.bin")).unwrap();
        let b = std::fs::read(&report_b.checkpoint).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_rejects_mismatched_architecture() {
        let dir = tempdir().unwrap();
        let samples = tiny_samples();
        let run = tiny_run();
        let report = train(&run, &samples, dir.path(), None).unwrap();
        let mut other = tiny_run();
        other.base_channels = 4;
        let err = train(&other, &samples, dir.path(), Some(&report.checkpoint)).unwrap_err();
        assert!(err.to_string().starts_with("error[E_CHECKPOINT]"), "{err}");
    }

    #[test]
    fn augmented_training_runs_and_stays_finite() {
        let dir = tempdir().unwrap();
        let samples = tiny_samples();
        let mut run = tiny_run();
        run.augment = true;
        run.iters = 3;
        let report = train(&run, &samples, dir.path(), None).unwrap();
        assert!(report.final_loss.is_finite());
    }
}
