//! `graft ensemble`: a shallow checkpoint gates bug presence, a deep one
//! localizes and repairs; metrics JSON on stdout.

use anyhow::Result;
use graft_core::tasks::{ensemble_evaluate, read_dataset, VarMisuseModel};

use crate::EnsembleArgs;

pub fn run(args: &EnsembleArgs) -> Result<()> {
    let deep = VarMisuseModel::load(&args.deep)?;
    let shallow = VarMisuseModel::load(&args.shallow)?;
    let samples = read_dataset(&args.dataset)?;
    let metrics = ensemble_evaluate(&deep, &shallow, &samples)?;
    eprintln!(
        "ensemble: {} samples, deep {} / shallow {}",
        samples.len(),
        args.deep.display(),
        args.shallow.display()
    );
    let json = super::to_json_line(&metrics)?;
    print!("{json}");
    if let Some(out) = &args.out {
        super::write_output(out, &json)?;
        eprintln!("ensemble: metrics written to {}", out.display());
    }
    Ok(())
}
