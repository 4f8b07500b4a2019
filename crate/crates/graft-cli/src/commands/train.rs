//! `graft train` and `graft ablate`: dataset in, checkpoint out.
//!
//! `ablate` is the train pipeline with each sample's attention mask
//! replaced before training; `--mask graph` is exactly `train`.

use anyhow::{Context, Result};
use graft_core::attention::ModelConfig;
use graft_core::diffusion::DiffusionConfig;
use graft_core::encoder::EncoderConfig;
use graft_core::graph::{build_mask, mask_edge_type_ids, MaskSpec, EDGE_TYPE_COUNT};
use graft_core::tasks::{
    generate_dataset, read_dataset, train, write_dataset, TrainConfig, VarMisuseSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::{MaskKind, TrainArgs};

/// Mask replacement settings carried by `ablate`.
pub struct MaskAblation {
    pub kind: MaskKind,
    pub density: f64,
    pub seed: u64,
}

pub fn run(args: &TrainArgs, ablation: Option<MaskAblation>) -> Result<()> {
    if let Some(count) = args.gen_samples {
        let samples = generate_dataset(
            count,
            args.gen_bug_rate,
            (args.gen_min_statements, args.gen_max_statements),
            args.gen_seed,
        )?;
        if let Some(parent) = args.dataset.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        write_dataset(&args.dataset, &samples)?;
        eprintln!(
            "train: generated {count} samples (bug rate {}, seed {}) into {}",
            args.gen_bug_rate,
            args.gen_seed,
            args.dataset.display()
        );
    }

    let mut samples = read_dataset(&args.dataset)?;
    if let Some(ablation) = &ablation {
        apply_mask_ablation(&mut samples, ablation)?;
    }

    let run_cfg = RunConfig::load(args.config.as_deref())?;
    let k = args.k.unwrap_or(run_cfg.k);
    let alpha = args.alpha.unwrap_or(run_cfg.alpha);
    let diffusion = if args.diffusion {
        Some(DiffusionConfig::new(k, alpha)?)
    } else {
        None
    };
    let encoder_cfg = EncoderConfig {
        model: ModelConfig {
            layers: run_cfg.layers,
            heads: run_cfg.heads,
            d_model: run_cfg.d_model,
            d_k: run_cfg.d_k,
            d_v: run_cfg.d_v,
            d_ff: run_cfg.d_ff,
        },
        diffusion,
        use_positional_encoding: args.pe,
        // Pinned to the training vocabulary inside `train`.
        vocab_size: 0,
        edge_type_count: EDGE_TYPE_COUNT,
        dropout_rate: run_cfg.dropout,
    };
    let tcfg = TrainConfig {
        lr: run_cfg.lr,
        epochs: run_cfg.epochs,
        batch_size: run_cfg.batch_size,
        seed: args.seed,
        patience: run_cfg.patience,
        target_joint: run_cfg.target_joint,
        ..TrainConfig::default()
    };

    let (train_set, val_set) = split_tail(&samples, run_cfg.val_fraction)?;
    eprintln!(
        "train: {} train / {} validation samples, {} layers, d_model {}, diffusion {}",
        train_set.len(),
        val_set.len(),
        run_cfg.layers,
        run_cfg.d_model,
        match &encoder_cfg.diffusion {
            Some(d) => format!("k={} alpha={}", d.k(), d.alpha()),
            None => "off".to_string(),
        }
    );

    let (model, reports) = train(train_set, val_set, &encoder_cfg, &tcfg)?;
    for r in &reports {
        eprintln!(
            "train: epoch {} train loss {:.4} val loss {:.4} val joint {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_metrics.joint_acc
        );
    }

    if let Some(parent) = args.checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    model.save(&args.checkpoint)?;
    eprintln!("train: checkpoint written to {}", args.checkpoint.display());

    // The saved model is the best-by-validation snapshot, so the reported
    // metrics are recomputed from it rather than copied from the last
    // epoch.
    let (val_loss, metrics) = model.evaluate(val_set)?;
    eprintln!(
        "train: final val loss {:.4} joint {:.4} bugfree {:.4} loc {:.4} repair {:.4}",
        val_loss,
        metrics.joint_acc,
        metrics.bugfree_acc,
        metrics.localization_acc,
        metrics.repair_acc
    );
    if let Some(path) = &args.metrics {
        let report = json!({
            "val_loss": val_loss,
            "val_metrics": metrics,
            "epochs_run": reports.len(),
            "history": reports,
        });
        super::write_output(path, &super::to_json_line(&report)?)?;
        eprintln!("train: metrics written to {}", path.display());
    }
    Ok(())
}

/// Deterministic split: the last `ceil(fraction * n)` samples validate.
fn split_tail(
    samples: &[VarMisuseSample],
    fraction: f64,
) -> Result<(&[VarMisuseSample], &[VarMisuseSample])> {
    anyhow::ensure!(
        samples.len() >= 2,
        "need at least 2 samples to split, got {}",
        samples.len()
    );
    let val = ((samples.len() as f64 * fraction).ceil() as usize).clamp(1, samples.len() - 1);
    Ok(samples.split_at(samples.len() - val))
}

/// Replaces each sample's attention mask in place. The stale structural
/// edge list on `CodeGraph` is left alone: training only consumes the
/// adjacency and the per-slot edge types.
fn apply_mask_ablation(samples: &mut [VarMisuseSample], ablation: &MaskAblation) -> Result<()> {
    if ablation.kind == MaskKind::Graph {
        eprintln!("ablate: keeping structural graph masks");
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ablation.seed);
    for sample in samples.iter_mut() {
        let nodes = sample.graph.node_count();
        let spec = match ablation.kind {
            MaskKind::Graph => unreachable!("handled above"),
            MaskKind::Complete => MaskSpec::Complete,
            MaskKind::Random => {
                // A density below the self-loop floor cannot produce a
                // valid mask for small programs; raise it per sample and
                // keep the requested density for everything larger.
                let floor = (nodes as f64 + 0.5) / (nodes * nodes) as f64;
                MaskSpec::Random {
                    density: ablation.density.max(floor),
                    seed: rng.gen(),
                }
            }
        };
        let mask = build_mask(&spec, nodes)?;
        sample.graph.edge_type_ids = mask_edge_type_ids(&mask);
        sample.graph.adjacency = mask;
    }
    eprintln!(
        "ablate: replaced {} masks with {:?}",
        samples.len(),
        ablation.kind
    );
    Ok(())
}
