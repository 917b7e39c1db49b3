//! Run artifacts: the metrics CSV, its companion plot script, the config
//! echo, the seed record, and the final model's per-member share files.
//!
//! The CSV column order is a stable external interface; downstream
//! tooling indexes it by position. All formatting is deterministic, so
//! two runs from the same seed write byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::Result;
use crate::nn::{save_checkpoint, Model};
use crate::orchestrator::{RoundRecord, Session};

pub const CSV_HEADER: &str =
    "round,accuracy,aggregator,attack,rate,placement,bytes,comparisons,excluded_ids,seed";

/// One data row. `bytes` and `comparisons` are the aggregation step's
/// meter movement alone, so a linear rule reports zeros here no matter
/// what the surrounding round moved. `excluded_ids` joins the trimmed
/// upload ids with `;` and stays empty for rules that exclude nothing.
pub fn csv_row(cfg: &RunConfig, r: &RoundRecord) -> String {
    let ids: Vec<String> = r.excluded.iter().map(u64::to_string).collect();
    format!(
        "{},{:.6},{},{},{},{},{},{},{},{}",
        r.round,
        r.accuracy,
        cfg.aggregator().label(),
        cfg.attack.label(),
        cfg.rate,
        cfg.placement.label(),
        r.agg_cost.bytes,
        r.agg_cost.comparisons,
        ids.join(";"),
        cfg.seed,
    )
}

pub fn render_csv(cfg: &RunConfig, records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(cfg, r));
        out.push('\n');
    }
    out
}

/// Python script that plots every `metrics.csv` it can find: the one next
/// to it, plus any in immediate subdirectories (a scenario directory holds
/// one run per subdirectory). Plain matplotlib, no other dependencies.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot accuracy curves from metrics.csv files near this script."""
import csv
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
files = sorted(glob.glob(os.path.join(here, "metrics.csv")) +
               glob.glob(os.path.join(here, "*", "metrics.csv")))
if not files:
    raise SystemExit("no metrics.csv found next to or below this script")

fig, ax = plt.subplots(figsize=(7.5, 4.5))
for path in files:
    run = os.path.relpath(os.path.dirname(path), here)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    label = "" if run == "." else run
    tag = rows[0]["aggregator"]
    if rows[0]["attack"] != "none":
        tag += " %s@%s/%s" % (rows[0]["attack"], rows[0]["rate"], rows[0]["placement"])
    label = (label + " " + tag).strip()
    ax.plot([int(r["round"]) for r in rows],
            [float(r["accuracy"]) for r in rows], label=label)
ax.set_xlabel("round")
ax.set_ylabel("validation accuracy")
ax.grid(True, alpha=0.3)
ax.legend(fontsize=7)
fig.tight_layout()
out = os.path.join(here, "accuracy.png")
fig.savefig(out, dpi=150)
print("wrote", out)
"#;

/// Writes the full artifact set for one finished run into `dir` and
/// returns the paths: `metrics.csv`, `plot.py`, `config.txt` (re-parses
/// to the same config), `seed.txt`, and one `model.<member>.share`
/// checkpoint per global-committee member.
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    session: &mut Session,
    records: &[RoundRecord],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let put = |name: String, contents: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    };
    written.push(put("metrics.csv".into(), render_csv(cfg, records))?);
    written.push(put("plot.py".into(), PLOT_SCRIPT.into())?);
    written.push(put("config.txt".into(), cfg.echo())?);
    written.push(put("seed.txt".into(), format!("{}\n", cfg.seed))?);
    for (member, params) in session.checkpoint_shares()? {
        let path = dir.join(format!("model.{member}.share"));
        save_checkpoint(&path, &Model { arch: cfg.arch.clone(), params })?;
        written.push(path);
    }
    Ok(written)
}
