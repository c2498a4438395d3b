//! `flamekit metrics` — variability of a sequence and the parameter-L1
//! distance to a reference; emits JSON plus an aligned text table.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use flamekit::diffusion::{Channel, FlameSequence};
use flamekit::metrics::{flame_l1_report, variability_report, MetricReport};

use crate::commands::ensure_dir;
use crate::Shared;

#[derive(Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    shared: Shared,
    /// Sequence to score.
    #[arg(long)]
    seq: PathBuf,
    /// Optional reference sequence (same channel and length) for the L1
    /// comparison.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Output file stem within the output directory.
    #[arg(long, default_value = "metrics")]
    name: String,
}

pub fn run(args: MetricsArgs) -> Result<()> {
    let cfg = args.shared.file_config()?;
    let out = args.shared.out_or(&cfg, "out");
    ensure_dir(&out)?;

    let seq = FlameSequence::load(&args.seq)
        .with_context(|| format!("loading {}", args.seq.display()))?;
    let reference = args
        .reference
        .as_ref()
        .map(|p| FlameSequence::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;

    let variability = match seq.channel() {
        Channel::Pose => Some(variability_report(&seq)?),
        Channel::Expr => None,
    };
    let flame_l1 = reference
        .as_ref()
        .map(|r| match seq.channel() {
            Channel::Pose => flame_l1_report(Some((&seq, r)), None),
            Channel::Expr => flame_l1_report(None, Some((&seq, r))),
        })
        .transpose()?;
    let report = MetricReport {
        variability,
        flame_l1,
    };

    let json_path = out.join(format!("{}.json", args.name));
    std::fs::write(&json_path, serde_json::to_vec_pretty(&report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    let table_path = out.join(format!("{}.txt", args.name));
    std::fs::write(&table_path, report.to_table())
        .with_context(|| format!("writing {}", table_path.display()))?;

    crate::summary(serde_json::json!({
        "status": "ok",
        "command": "metrics",
        "report": json_path,
        "table": table_path,
        "variability": report.variability.as_ref().map(|v| v.mean),
        "flame_l1": report.flame_l1.as_ref().map(|l| l.combined),
    }));
    Ok(())
}
