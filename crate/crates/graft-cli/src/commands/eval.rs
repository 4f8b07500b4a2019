//! `graft eval`: checkpoint + dataset -> task metrics JSON on stdout.

use anyhow::Result;
use graft_core::tasks::{read_dataset, VarMisuseModel};

use crate::EvalArgs;

pub fn run(args: &EvalArgs) -> Result<()> {
    let model = VarMisuseModel::load(&args.checkpoint)?;
    let samples = read_dataset(&args.dataset)?;
    let (loss, metrics) = model.evaluate(&samples)?;
    eprintln!(
        "eval: {} samples from {}, mean loss {:.4}",
        samples.len(),
        args.dataset.display(),
        loss
    );
    let json = super::to_json_line(&metrics)?;
    print!("{json}");
    if let Some(out) = &args.out {
        super::write_output(out, &json)?;
        eprintln!("eval: metrics written to {}", out.display());
    }
    Ok(())
}
