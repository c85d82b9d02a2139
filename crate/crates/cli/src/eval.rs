use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use stochseg::io::load_mask;
use stochseg::metrics::{average, MetricRecord};

use crate::{csv_writer, CliError};

const MASK_EXTENSIONS: [&str; 5] = ["png", "pgm", "pbm", "ppm", "pnm"];

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted masks.
    pub pred: PathBuf,
    /// Directory of ground-truth masks, matched to predictions by file stem.
    pub gt: PathBuf,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Mask files in `dir` keyed by file stem.
pub fn mask_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::missing(format!("no such directory: {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| MASK_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Runtime recorded by `segment` next to the mask, if there is one.
fn recorded_runtime(mask: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(mask.with_extension("json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("timings")?.get("total_ms")?.as_f64()
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let gt = mask_files(&args.gt)?;
    if gt.is_empty() {
        return Err(CliError::missing(format!("no masks in {}", args.gt.display())));
    }
    let pred = mask_files(&args.pred)?;
    for name in pred.keys().filter(|k| !gt.contains_key(*k)) {
        eprintln!("warning: {name}: no ground truth, skipped");
    }
    for name in gt.keys().filter(|k| !pred.contains_key(*k)) {
        eprintln!("warning: {name}: no prediction, skipped");
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = pred
        .iter()
        .filter_map(|(name, p)| gt.get(name).map(|g| (name, p, g)))
        .collect();

    let results: Vec<_> = pairs
        .par_iter()
        .map(|(name, p, g)| {
            let pm = load_mask(p)?;
            let gm = load_mask(g)?;
            MetricRecord::evaluate(name, &pm, &gm, recorded_runtime(p).unwrap_or(0.0))
        })
        .collect();
    let mut records = Vec::new();
    for ((name, _, _), r) in pairs.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => eprintln!("warning: {name}: {e}, skipped"),
        }
    }
    if records.is_empty() {
        return Err(CliError::missing("every image was skipped"));
    }

    let mut w = csv_writer(args.out.as_deref())?;
    for r in &records {
        w.serialize(r)?;
        eprintln!("{}", r.summary_line());
    }
    let avg = average(&records).expect("records is non-empty");
    w.serialize(&avg)?;
    w.flush()?;
    eprintln!("{}", avg.summary_line());
    Ok(())
}
