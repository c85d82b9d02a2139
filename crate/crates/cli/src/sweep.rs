use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use stochseg::divergence::DivergenceKind;
use stochseg::io::{load_image, load_mask, load_scribbles};
use stochseg::metrics::MetricRecord;
use stochseg::pipeline::{prepare, segment, PrepKey, Prepared};
use stochseg::RunConfig;

use crate::{csv_writer, require_file, CliError, RunArgs};

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub image: PathBuf,
    pub scribbles: PathBuf,
    /// Ground-truth mask used to score every grid point.
    pub gt: PathBuf,
    /// Grid axis as `name=v1,v2,...`; repeat for more axes. Names: degree,
    /// sigma, beta, tau, divergence.
    #[arg(long = "grid", value_name = "AXIS")]
    pub grid: Vec<String>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone)]
enum Axis {
    Degree(Vec<f64>),
    Sigma(Vec<f64>),
    Beta(Vec<f64>),
    Tau(Vec<f64>),
    Divergence(Vec<DivergenceKind>),
}

impl Axis {
    fn len(&self) -> usize {
        match self {
            Axis::Degree(v) | Axis::Sigma(v) | Axis::Beta(v) | Axis::Tau(v) => v.len(),
            Axis::Divergence(v) => v.len(),
        }
    }

    fn set(&self, k: usize, cfg: &mut RunConfig) {
        match self {
            Axis::Degree(v) => cfg.degree = v[k],
            Axis::Sigma(v) => cfg.sigma = v[k],
            Axis::Beta(v) => cfg.beta = v[k],
            Axis::Tau(v) => cfg.tau = v[k],
            Axis::Divergence(v) => cfg.divergence = v[k],
        }
    }
}

fn parse_axis(spec: &str) -> Result<Axis, CliError> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("grid axis '{spec}' is not name=v1,v2")))?;
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::usage(format!("grid axis '{name}' has no values")));
    }
    let floats = || -> Result<Vec<f64>, CliError> {
        items
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::usage(format!("bad {name} value '{s}'")))
            })
            .collect()
    };
    Ok(match name.trim() {
        "degree" | "target_degree" => Axis::Degree(floats()?),
        "sigma" => Axis::Sigma(floats()?),
        "beta" => Axis::Beta(floats()?),
        "tau" => Axis::Tau(floats()?),
        "divergence" => Axis::Divergence(items.iter().map(|s| s.parse()).collect::<Result<_, _>>()?),
        other => return Err(CliError::usage(format!("unknown grid axis '{other}'"))),
    })
}

/// Cartesian product of the axes over `base`, duplicates removed.
fn expand(base: &RunConfig, axes: &[Axis]) -> Result<Vec<RunConfig>, CliError> {
    let mut points = vec![base.clone()];
    for axis in axes {
        points = points
            .iter()
            .flat_map(|p| {
                (0..axis.len()).map(move |k| {
                    let mut c = p.clone();
                    axis.set(k, &mut c);
                    c
                })
            })
            .collect();
    }
    let mut seen = HashSet::new();
    let mut unique = Vec::new();
    for p in points {
        p.validate()?;
        let key = p.to_toml_string();
        if seen.insert(key) {
            unique.push(p);
        } else {
            eprintln!(
                "warning: duplicate grid point (divergence={} tau={} degree={} sigma={} beta={}) dropped",
                p.divergence, p.tau, p.degree, p.sigma, p.beta
            );
        }
    }
    Ok(unique)
}

#[derive(Debug, Serialize)]
struct Row {
    divergence: String,
    mode: String,
    tau: f64,
    degree: f64,
    sigma: f64,
    beta: f64,
    seed: u64,
    edges: usize,
    degree_mean: f64,
    energy: f64,
    region_f1: f64,
    boundary_f1: f64,
    iou: f64,
    runtime_ms: f64,
}

pub fn run(args: SweepArgs) -> Result<(), CliError> {
    for p in [&args.image, &args.scribbles, &args.gt] {
        require_file(p)?;
    }
    let base = args.run.resolve()?;
    let axes = args.grid.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>()?;
    let points = expand(&base, &axes)?;

    let img = load_image(&args.image)?;
    let scribbles = load_scribbles(&args.scribbles)?;
    let gt = load_mask(&args.gt)?;
    scribbles.check_dims(&img)?;
    scribbles.require_both_classes()?;

    // one statistics and clustering pass per distinct preparation setting
    let mut preps: HashMap<PrepKey, Prepared> = HashMap::new();
    for p in &points {
        let key = PrepKey::of(p, img.len());
        if let Entry::Vacant(slot) = preps.entry(key) {
            slot.insert(prepare(&img, p)?);
        }
    }

    let rows: Vec<Row> = points
        .par_iter()
        .map(|cfg| -> Result<Row, CliError> {
            let prep = &preps[&PrepKey::of(cfg, img.len())];
            let out = segment(&img, prep, &scribbles, cfg)?;
            let r = &out.report;
            let m = MetricRecord::evaluate("sweep", &out.mask, &gt, r.timings.total_ms)?;
            Ok(Row {
                divergence: r.divergence.clone(),
                mode: r.mode.clone(),
                tau: cfg.tau,
                degree: cfg.degree,
                sigma: cfg.sigma,
                beta: cfg.beta,
                seed: cfg.seed,
                edges: r.edges,
                degree_mean: r.degree_mean,
                energy: r.energy,
                region_f1: m.region_f1,
                boundary_f1: m.boundary_f1,
                iou: m.iou,
                runtime_ms: m.runtime_ms,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut w = csv_writer(args.out.as_deref())?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
