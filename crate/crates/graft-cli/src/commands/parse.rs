//! `graft parse`: source files in, graph JSON files out.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use graft_core::graph::{ingest_corpus, CodeGraph, GraphJson};

use crate::ParseArgs;

/// Loads `input` as a single file or as a directory of `*.mini` files.
/// Directory entries keep per-file errors so one bad program does not hide
/// the others.
pub fn load_sources(input: &PathBuf) -> Result<Vec<(PathBuf, graft_core::Result<CodeGraph>)>> {
    if input.is_dir() {
        Ok(ingest_corpus(input)?
            .into_iter()
            .map(|entry| (entry.path, entry.graph))
            .collect())
    } else {
        let source = std::fs::read_to_string(input)
            .with_context(|| format!("reading {}", input.display()))?;
        Ok(vec![(input.clone(), CodeGraph::from_source(&source))])
    }
}

pub fn run(args: &ParseArgs) -> Result<()> {
    let entries = load_sources(&args.input)?;
    if entries.is_empty() {
        bail!("no .mini files under {}", args.input.display());
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut failures = 0usize;
    for (path, graph) in entries {
        match graph {
            Ok(graph) => {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "graph".to_string());
                let out_path = args.out.join(format!("{stem}.json"));
                let json = super::to_json_line(&GraphJson::from_graph(&graph))?;
                super::write_output(&out_path, &json)?;
                eprintln!(
                    "parse: {} -> {} ({} nodes, {} edges)",
                    path.display(),
                    out_path.display(),
                    graph.node_count(),
                    graph.undirected_edge_count()
                );
            }
            Err(err) => {
                failures += 1;
                eprintln!("parse: {} failed: {err}", path.display());
            }
        }
    }
    if failures > 0 {
        bail!("{failures} file(s) failed to parse");
    }
    Ok(())
}
