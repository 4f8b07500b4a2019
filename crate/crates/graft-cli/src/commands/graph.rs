//! `graft graph`: structural summaries and the edge-growth regression.

use anyhow::{bail, Result};
use graft_core::graph::graph_stats;

use crate::GraphArgs;

pub fn run(args: &GraphArgs) -> Result<()> {
    let entries = super::parse::load_sources(&args.input)?;
    if entries.is_empty() {
        bail!("no .mini files under {}", args.input.display());
    }
    let mut paths = Vec::with_capacity(entries.len());
    let mut graphs = Vec::with_capacity(entries.len());
    let mut failures = 0usize;
    for (path, graph) in entries {
        match graph {
            Ok(graph) => {
                paths.push(path);
                graphs.push(graph);
            }
            Err(err) => {
                failures += 1;
                eprintln!("graph: {} failed: {err}", path.display());
            }
        }
    }
    if failures > 0 {
        bail!("{failures} file(s) failed to parse");
    }

    if args.stats {
        let stats = graph_stats(&graphs)?;
        println!(
            "graphs {} edge-growth slope {:.6}",
            stats.rows.len(),
            stats.slope
        );
        if let Some(out) = &args.out {
            super::write_output(out, &super::to_json_line(&stats)?)?;
            eprintln!("graph: statistics written to {}", out.display());
        }
    } else {
        for (path, graph) in paths.iter().zip(&graphs) {
            println!(
                "{}: tokens {} nodes {} undirected-edges {}",
                path.display(),
                graph.token_count(),
                graph.node_count(),
                graph.undirected_edge_count()
            );
        }
    }
    Ok(())
}
