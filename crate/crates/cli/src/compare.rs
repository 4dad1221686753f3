//! Side-by-side table of finished runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::experiment::{Summary, SUMMARY_FILE};

pub fn read_summary(dir: &Path) -> anyhow::Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("run directory {} has no readable {SUMMARY_FILE}", dir.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// One row per (run, seed). All runs must share a fixture.
pub fn compare<W: std::io::Write>(dirs: &[PathBuf], out: W) -> anyhow::Result<usize> {
    if dirs.is_empty() {
        bail!("compare needs at least one run directory");
    }
    let summaries = dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let first = &summaries[0];
    for (s, d) in summaries.iter().zip(dirs).skip(1) {
        if s.fixture_id != first.fixture_id {
            bail!(
                "{} was run on fixture {} but {} on {}; runs are not comparable",
                d.display(),
                s.fixture_id,
                dirs[0].display(),
                first.fixture_id
            );
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "searcher",
        "seed",
        "samples_to_optimum",
        "exploration_cost_pct",
        "qos_violating_samples",
    ])?;
    let mut rows = 0;
    for s in &summaries {
        for r in &s.runs {
            w.write_record([
                s.search.as_str().to_string(),
                r.seed.to_string(),
                r.samples_to_optimum.map(|v| v.to_string()).unwrap_or_default(),
                r.exploration_cost_pct_of_exhaustive
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_default(),
                r.qos_violating_samples.to_string(),
            ])?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}
