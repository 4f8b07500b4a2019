//! `graft bench`: the scaling harness, emitting curves.csv and
//! summary.json.

use anyhow::{Context, Result};
use graft_core::bench::{
    default_lengths, emit, run_bench, summarize, BenchConfig, BenchVariant,
};

use crate::BenchArgs;

pub fn run(args: &BenchArgs) -> Result<()> {
    let variants = if args.variants.is_empty() {
        BenchVariant::ALL.to_vec()
    } else {
        args.variants
            .iter()
            .map(|label| BenchVariant::parse(label))
            .collect::<graft_core::Result<Vec<_>>>()?
    };
    let cfg = BenchConfig {
        lengths: default_lengths(args.max_len),
        edges_per_token: args.edges_per_token,
        variants,
        repeats: args.repeats,
        dense_cutoff: args.dense_cutoff,
        memory_budget_bytes: args.memory_budget,
        seed: args.seed,
    };
    eprintln!(
        "bench: {} lengths up to {}, {} variants, {} repeats, seed {}",
        cfg.lengths.len(),
        cfg.lengths.last().copied().unwrap_or(0),
        cfg.variants.len(),
        cfg.repeats,
        cfg.seed
    );

    let report = run_bench(&cfg)?;
    emit(&args.out, &cfg, &report).context("writing benchmark artifacts")?;

    let summary = summarize(&cfg, &report);
    for (variant, fits) in &summary.fits {
        eprintln!(
            "bench: {variant} memory exponent {:.3} (r2 {:.4}), time exponent {:.3} (r2 {:.4})",
            fits.memory.exponent, fits.memory.r2, fits.time.exponent, fits.time.r2
        );
    }
    for skip in &report.skipped {
        eprintln!(
            "bench: skipped {} at length {}: {}",
            skip.variant.as_str(),
            skip.length,
            skip.reason
        );
    }
    eprintln!(
        "bench: {} measured points written to {}",
        report.records.len(),
        args.out.display()
    );
    Ok(())
}
