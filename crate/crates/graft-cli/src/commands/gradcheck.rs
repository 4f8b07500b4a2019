//! `graft gradcheck`: end-to-end analytic gradients versus central finite
//! differences.
//!
//! Each seed builds a small randomly initialized model and one generated
//! buggy program, then sweeps every tensor: the analytic gradient from the
//! backward pass must match the finite-difference gradient of the scalar
//! loss. Dimensions are kept small so the sweep stays in seconds; the
//! gradient code paths are identical at any size.

use anyhow::{ensure, Result};
use graft_core::attention::ModelConfig;
use graft_core::diffusion::DiffusionConfig;
use graft_core::encoder::EncoderConfig;
use graft_core::graph::EDGE_TYPE_COUNT;
use graft_core::linalg::{fd_gradient, max_rel_err};
use graft_core::tasks::{dataset_vocab, generate_dataset, VarMisuseModel};
use graft_core::{DenseMatrix, Real};
use serde_json::json;

use crate::GradcheckArgs;

const FD_EPS: Real = 1e-6;

/// Gradients whose analytic and numeric magnitudes both sit below this are
/// flat directions (a uniform shift of one softmax's logits); comparing
/// relative error there would divide rounding noise by rounding noise.
const ABS_FLOOR: Real = 1e-8;

pub fn run(args: &GradcheckArgs) -> Result<()> {
    ensure!(args.seeds > 0, "need at least one seed");
    ensure!(args.tol > 0.0, "tolerance must be positive");

    let mut worst: Real = 0.0;
    let mut worst_tensor = String::from("none");
    let mut per_seed = Vec::new();
    for seed in 0..args.seeds {
        let (err, tensor) = check_seed(seed)?;
        eprintln!("gradcheck: seed {seed} worst relative error {err:.3e} ({tensor})");
        per_seed.push(json!({
            "seed": seed,
            "max_rel_err": err,
            "worst_tensor": tensor,
        }));
        if err > worst {
            worst = err;
            worst_tensor = tensor;
        }
    }

    let pass = worst < args.tol;
    println!(
        "gradcheck: {} seeds, worst relative error {:.3e} in {}, tolerance {:.1e}: {}",
        args.seeds,
        worst,
        worst_tensor,
        args.tol,
        if pass { "pass" } else { "FAIL" }
    );
    if let Some(out) = &args.out {
        let report = json!({
            "seeds": args.seeds,
            "tolerance": args.tol,
            "worst_rel_err": worst,
            "worst_tensor": worst_tensor,
            "pass": pass,
            "per_seed": per_seed,
        });
        super::write_output(out, &super::to_json_line(&report)?)?;
    }
    ensure!(pass, "gradient check failed");
    Ok(())
}

/// Worst relative error over every tensor of one seeded instance.
fn check_seed(seed: u64) -> Result<(Real, String)> {
    let samples = generate_dataset(1, 1.0, (3, 4), 1000 + seed)?;
    let sample = &samples[0];
    let vocab = dataset_vocab(&samples);
    let cfg = EncoderConfig {
        model: ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 12,
            d_k: 4,
            d_v: 4,
            d_ff: 16,
        },
        diffusion: Some(DiffusionConfig::new(2, 0.25)?),
        use_positional_encoding: true,
        vocab_size: vocab.size(),
        edge_type_count: EDGE_TYPE_COUNT,
        dropout_rate: 0.0,
    };
    let model = VarMisuseModel::init(cfg, vocab, seed)?;
    let (_, grads) = model.sample_pass(sample, false, 0)?;

    let mut analytic: Vec<(String, DenseMatrix)> = Vec::new();
    grads
        .encoder
        .for_each_tensor(&mut |name, t| analytic.push((name, t.clone())));
    grads
        .heads
        .for_each_tensor(&mut |name, t| analytic.push((name, t.clone())));

    let mut starts: Vec<(String, DenseMatrix)> = Vec::new();
    model.for_each_tensor(&mut |name, t| starts.push((name, t.clone())));

    let mut worst: Real = 0.0;
    let mut worst_tensor = String::from("none");
    for ((name, grad), (start_name, start)) in analytic.iter().zip(&starts) {
        assert_eq!(name, start_name, "gradient visitors must align");
        let fd = fd_gradient(
            |candidate| {
                let mut probe = model.clone();
                probe.for_each_tensor_mut(&mut |n, t| {
                    if &n == name {
                        *t = candidate.clone();
                    }
                });
                probe
                    .loss_only(sample)
                    .expect("perturbed forward pass stays valid")
                    .loss
            },
            start,
            FD_EPS,
        )?;
        if grad.max_abs().max(fd.max_abs()) < ABS_FLOOR {
            continue;
        }
        let err = max_rel_err(grad, &fd);
        if err > worst {
            worst = err;
            worst_tensor = name.clone();
        }
    }
    Ok((worst, worst_tensor))
}
