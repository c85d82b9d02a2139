use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use stochseg::api::{strokes_from_mask, SegmentRequest};
use stochseg::io::{encode_image_png, encode_mask_png, load_image, load_scribbles};
use stochseg::pipeline::{run as run_pipeline, RunReport};
use stochseg::RunConfig;
use stochseg_client::{decode_mask_png, Client, ClientError};

use crate::{require_file, CliError, RunArgs};

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Input image (PNG or PNM).
    pub image: PathBuf,
    /// Scribble image: pure red marks foreground, pure blue background.
    pub scribbles: PathBuf,
    /// Output mask PNG.
    #[arg(long, default_value = "mask.png")]
    pub out: PathBuf,
    /// Run report; defaults to the mask path with a .json extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the sampled long-range cliques as CSV.
    #[arg(long, conflicts_with = "server")]
    pub cliques: Option<PathBuf>,
    /// Run on a session service at this URL instead of in-process.
    #[arg(long)]
    pub server: Option<String>,
    #[command(flatten)]
    pub run: RunArgs,
}

/// What lands in the report file.
#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    report: &'a RunReport,
}

pub fn run(args: SegmentArgs) -> Result<(), CliError> {
    require_file(&args.image)?;
    require_file(&args.scribbles)?;
    let cfg = args.run.resolve()?;
    let img = load_image(&args.image)?;
    let scribbles = load_scribbles(&args.scribbles)?;
    scribbles.check_dims(&img)?;

    let (mask_png, report) = match &args.server {
        None => {
            let out = run_pipeline(&img, &scribbles, &cfg)?;
            if let Some(path) = &args.cliques {
                out.cliques.write_csv(std::fs::File::create(path)?)?;
            }
            (encode_mask_png(&out.mask)?, out.report)
        }
        Some(url) => {
            let strokes = strokes_from_mask(&scribbles);
            let image_png = encode_image_png(&img)?;
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            rt.block_on(remote(url, image_png, strokes, &cfg))
                .map_err(client_error)?
        }
    };

    std::fs::write(&args.out, &mask_png)?;
    let report_path = args.report.clone().unwrap_or_else(|| args.out.with_extension("json"));
    let file = ReportFile {
        config: &cfg,
        report: &report,
    };
    std::fs::write(&report_path, serde_json::to_string_pretty(&file)?)?;
    print_summary(&args.out, &report);
    Ok(())
}

async fn remote(
    url: &str,
    image_png: Vec<u8>,
    strokes: Vec<stochseg::api::Stroke>,
    cfg: &RunConfig,
) -> Result<(Vec<u8>, RunReport), ClientError> {
    let client = Client::new(url);
    let session = client.create_session(image_png, Some(cfg)).await?;
    let result = async {
        client.put_scribbles(&session.id, strokes, true).await?;
        let resp = client.segment(&session.id, &SegmentRequest::default()).await?;
        Ok((decode_mask_png(&resp)?, resp.report))
    }
    .await;
    // best effort; the service evicts idle sessions anyway
    let _ = client.delete_session(&session.id).await;
    result
}

fn client_error(e: ClientError) -> CliError {
    let code = match e.status() {
        Some(409) => 3,
        Some(400) | Some(413) => 4,
        _ => 1,
    };
    CliError::new(code, e.to_string())
}

fn print_summary(out: &Path, r: &RunReport) {
    println!(
        "mask: {} ({}x{}, {} foreground)",
        out.display(),
        r.width,
        r.height,
        r.foreground_pixels
    );
    println!("energy: {:.6}", r.energy);
    println!(
        "long-range cliques: {} (mean degree {:.3}, min {}, max {}, target {:.3})",
        r.edges, r.degree_mean, r.degree_min, r.degree_max, r.target_degree
    );
    println!(
        "bounds: implied p {:.4e}, p_lower {:.4e}, p_upper {:.4e} (epsilon {}); below connectedness: {}, above cut bound: {}",
        r.implied_p, r.p_lower, r.p_upper, r.epsilon, r.below_connectedness, r.above_cut_bound
    );
    let t = &r.timings;
    println!(
        "timings ms: stats {:.1}, cluster {:.1}, calibrate {:.1}, sample {:.1}, energy {:.1}, inference {:.1}, total {:.1}",
        t.stats_ms, t.cluster_ms, t.calibrate_ms, t.sample_ms, t.energy_ms, t.inference_ms, t.total_ms
    );
}
