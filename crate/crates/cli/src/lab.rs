use std::path::PathBuf;

use clap::Args;
use stochseg::graph::{regime_summary, sparsification_bounds};

use crate::{csv_writer, CliError};

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Node count.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
}

pub fn bounds(args: BoundsArgs) -> Result<(), CliError> {
    let b = sparsification_bounds(args.n, args.epsilon)?;
    print!("{}", b.render());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GraphLabArgs {
    /// Node counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Edge probabilities, comma separated. Defaults to c/n for c in
    /// {0.5, 1, 2}, c ln(n)/n for c in {0.5, 1, 2}, and the cut bound.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Tolerance for the cut-bound probability in the default set.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Probabilities either side of the giant-component and connectivity
/// thresholds.
fn default_probabilities(n: usize, epsilon: f64) -> Result<Vec<f64>, CliError> {
    let b = sparsification_bounds(n, epsilon)?;
    let nf = n as f64;
    let mut ps: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|c| c / nf).collect();
    ps.extend([0.5, 1.0, 2.0].iter().map(|c| c * b.p_lower));
    ps.push(b.p_upper);
    ps.retain(|p| *p <= 1.0);
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    Ok(ps)
}

pub fn graph_lab(args: GraphLabArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::usage("trials must be >= 1"));
    }
    let mut w = csv_writer(args.out.as_deref())?;
    for &n in &args.n {
        if n < 2 {
            return Err(CliError::usage(format!("n must be >= 2, got {n}")));
        }
        let ps = if args.p.is_empty() {
            default_probabilities(n, args.epsilon)?
        } else {
            args.p.clone()
        };
        for p in ps {
            w.serialize(regime_summary(n, p, args.trials, args.seed)?)?;
        }
    }
    w.flush()?;
    Ok(())
}
