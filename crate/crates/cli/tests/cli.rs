use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stochseg::io::{encode_image_png, encode_scribbles_png, load_mask, save_mask};
use stochseg::{ImageGrid, ScribbleLabel, ScribbleMask, SegmentationMask};
use stochseg_service::{serve, AppState, ServiceConfig};
use tempfile::TempDir;

const W: usize = 40;
const H: usize = 32;

fn stochseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn inside(x: usize, y: usize) -> bool {
    (x as f64 - 20.0).powi(2) + (y as f64 - 16.0).powi(2) < 100.0
}

fn gt_mask() -> SegmentationMask {
    let labels = (0..W * H).map(|i| u8::from(inside(i % W, i / W))).collect();
    SegmentationMask::new(W, H, labels).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let img = ImageGrid::from_fn(W, H, 1, |x, y, _| {
            let tex = ((x * 7 + y * 13) % 5) as f64 * 0.03;
            if inside(x, y) {
                0.8 + tex
            } else {
                0.15 + tex
            }
        })
        .unwrap();
        std::fs::write(dir.path().join("image.png"), encode_image_png(&img).unwrap()).unwrap();
        let mut s = ScribbleMask::new(W, H);
        for x in 17..24 {
            s.set(x, 16, ScribbleLabel::Foreground);
        }
        let fg_only = s.clone();
        std::fs::write(dir.path().join("fg_only.png"), encode_scribbles_png(&fg_only).unwrap()).unwrap();
        for y in 0..H {
            s.set(0, y, ScribbleLabel::Background);
            s.set(W - 1, y, ScribbleLabel::Background);
        }
        std::fs::write(dir.path().join("scribbles.png"), encode_scribbles_png(&s).unwrap()).unwrap();
        save_mask(&gt_mask(), &dir.path().join("gt.png")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn segment(&self, out: &str, extra: &[&str]) -> Output {
        let (img, scr, out) = (self.p("image.png"), self.p("scribbles.png"), self.p(out));
        let mut args = vec![
            "segment",
            img.as_str(),
            scr.as_str(),
            "--out",
            out.as_str(),
            "--q",
            "100",
        ];
        args.extend_from_slice(extra);
        stochseg(&args)
    }
}

#[test]
fn segment_writes_mask_and_report() {
    let f = Fixture::new();
    let cliques = f.p("cliques.csv");
    let o = f.segment("mask.png", &["--seed", "5", "--cliques", &cliques]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mask = load_mask(&f.path("mask.png")).unwrap();
    assert_eq!((mask.width, mask.height), (W, H));
    assert_eq!(mask.get(20, 16), 1);
    assert_eq!(mask.get(2, 2), 0);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("mask.json")).unwrap()).unwrap();
    for key in [
        "energy",
        "edges",
        "degree_mean",
        "degree_min",
        "degree_max",
        "below_connectedness",
        "above_cut_bound",
        "timings",
    ] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(report["seed"], 5);
    assert_eq!(report["config"]["q"], 100);
    let csv = std::fs::read_to_string(&cliques).unwrap();
    assert!(csv.starts_with("i,j,f\n"));
    assert_eq!(csv.lines().count() as u64 - 1, report["edges"].as_u64().unwrap());
    assert!(stdout(&o).contains("below connectedness"));
}

#[test]
fn segment_is_reproducible_across_runs_and_threads() {
    let f = Fixture::new();
    assert_eq!(code(&f.segment("a.png", &["--seed", "9"])), 0);
    assert_eq!(code(&f.segment("b.png", &["--seed", "9", "--threads", "1"])), 0);
    let a = std::fs::read(f.path("a.png")).unwrap();
    assert_eq!(a, std::fs::read(f.path("b.png")).unwrap());
}

#[test]
fn segment_exit_codes() {
    let f = Fixture::new();
    let (img, fg_only, out) = (f.p("image.png"), f.p("fg_only.png"), f.p("x.png"));
    let o = stochseg(&["segment", &img, &fg_only, "--out", &out]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("background"));

    let o = stochseg(&["segment", &img, &f.p("missing.png"), "--out", &out]);
    assert_eq!(code(&o), 2);

    assert_eq!(code(&f.segment("x.png", &["--tau=-1"])), 4);
    assert_eq!(code(&f.segment("x.png", &["--divergence", "js"])), 4);

    std::fs::write(f.path("bad.toml"), "unknown_key = 1\n").unwrap();
    assert_eq!(code(&f.segment("x.png", &["--config", &f.p("bad.toml")])), 4);
    assert_eq!(code(&f.segment("x.png", &["--config", &f.p("absent.toml")])), 2);

    std::fs::write(f.path("ok.toml"), "divergence = \"hellinger\"\ndegree = 8.0\n").unwrap();
    let o = f.segment("x.png", &["--config", &f.p("ok.toml")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("x.json")).unwrap()).unwrap();
    assert_eq!(report["divergence"], "hellinger");
    assert_eq!(report["target_degree"], 8.0);
}

fn spawn_service() -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, AppState::new(ServiceConfig::default())).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[test]
fn service_and_local_masks_are_byte_identical() {
    let f = Fixture::new();
    let url = spawn_service();
    for (seed, div) in [("0", "kl"), ("7", "hellinger"), ("3", "bregman")] {
        let local = f.segment("local.png", &["--seed", seed, "--divergence", div]);
        assert_eq!(code(&local), 0, "{}", stderr(&local));
        let remote = f.segment("remote.png", &["--seed", seed, "--divergence", div, "--server", &url]);
        assert_eq!(code(&remote), 0, "{}", stderr(&remote));
        assert_eq!(
            std::fs::read(f.path("local.png")).unwrap(),
            std::fs::read(f.path("remote.png")).unwrap(),
            "seed {seed} divergence {div}"
        );
    }
    let (img, fg_only, out) = (f.p("image.png"), f.p("fg_only.png"), f.p("x.png"));
    // the service answers 409, which maps to the same exit code
    let o = stochseg(&["segment", &img, &fg_only, "--out", &out, "--server", &url]);
    assert_eq!(code(&o), 3);
}

fn write_masks(dir: &Path, masks: &[(&str, &SegmentationMask)]) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, m) in masks {
        save_mask(m, &dir.join(name)).unwrap();
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn eval_scores_and_averages() {
    let f = Fixture::new();
    let gt = SegmentationMask::new(4, 4, vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0]).unwrap();
    let pred = SegmentationMask::new(4, 4, vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0]).unwrap();
    let disc = gt_mask();
    write_masks(
        &f.path("gt"),
        &[("a.png", &gt), ("b.png", &disc), ("lonely.png", &disc)],
    );
    write_masks(
        &f.path("pred"),
        &[("a.png", &pred), ("b.png", &disc), ("extra.png", &disc)],
    );

    let o = stochseg(&["eval", &f.p("pred"), &f.p("gt")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows[0], ["name", "region_f1", "boundary_f1", "iou", "runtime_ms"]);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1][0], "a");
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 0.8);
    assert!((rows[1][3].parse::<f64>().unwrap() - 0.66667).abs() < 1e-5);
    assert_eq!(rows[2][0], "b");
    assert!(rows[2][1..4].iter().all(|v| v.parse::<f64>().unwrap() == 1.0));
    assert_eq!(rows[3][0], "average");
    assert!((rows[3][1].parse::<f64>().unwrap() - 0.9).abs() < 1e-12);
    let err = stderr(&o);
    assert!(err.contains("extra") && err.contains("lonely"));
}

#[test]
fn eval_identical_dirs_and_failures() {
    let f = Fixture::new();
    let disc = gt_mask();
    write_masks(&f.path("gt"), &[("x.png", &disc), ("y.png", &disc.inverted())]);
    let out = f.p("scores.csv");
    let o = stochseg(&["eval", &f.p("gt"), &f.p("gt"), "--out", &out]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r[1..4].iter().all(|v| v == "1.0")));

    std::fs::create_dir_all(f.path("empty")).unwrap();
    assert_eq!(code(&stochseg(&["eval", &f.p("gt"), &f.p("empty")])), 2);
    write_masks(&f.path("other"), &[("z.png", &disc)]);
    assert_eq!(code(&stochseg(&["eval", &f.p("other"), &f.p("gt")])), 2);
    assert_eq!(code(&stochseg(&["eval", &f.p("gt"), &f.p("nowhere")])), 2);
}

#[test]
fn eval_picks_up_recorded_runtime() {
    let f = Fixture::new();
    std::fs::create_dir_all(f.path("pred")).unwrap();
    assert_eq!(code(&f.segment("pred/image.png", &[])), 0);
    write_masks(&f.path("gt"), &[("image.png", &gt_mask())]);
    let o = stochseg(&["eval", &f.p("pred"), &f.p("gt")]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&stdout(&o));
    assert!(rows[1][4].parse::<f64>().unwrap() > 0.0);
    assert!(rows[1][1].parse::<f64>().unwrap() > 0.9);
}

#[test]
fn bounds_prints_worked_numbers() {
    let o = stochseg(&["bounds", "--n", "120000", "--epsilon", "0.1"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("p_lower = 9.7460e-5"), "{text}");
    assert!(text.contains("max_edges = 1.4034e8"), "{text}");
    assert!(text.contains("12 neighbours"), "{text}");

    let text = stdout(&stochseg(&["bounds", "--n", "5000", "--epsilon", "1"]));
    let value = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .map(|v| v.split_whitespace().next().unwrap().to_string())
            .unwrap()
    };
    assert_eq!(value("p_lower = "), value("p_upper = "));

    assert_eq!(code(&stochseg(&["bounds", "--n", "1"])), 4);
    assert_eq!(code(&stochseg(&["bounds", "--n", "100", "--epsilon", "0"])), 4);
    assert_eq!(code(&stochseg(&["bounds", "--n", "100", "--epsilon", "1.5"])), 4);
    assert_eq!(code(&stochseg(&["bounds"])), 4);
}

#[test]
fn sweep_single_point_matches_segment_then_eval() {
    let f = Fixture::new();
    let (img, scr, gt) = (f.p("image.png"), f.p("scribbles.png"), f.p("gt.png"));
    let o = stochseg(&[
        "sweep",
        &img,
        &scr,
        &gt,
        "--q",
        "100",
        "--seed",
        "2",
        "--grid",
        "degree=12",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();

    std::fs::create_dir_all(f.path("pred")).unwrap();
    assert_eq!(code(&f.segment("pred/gt.png", &["--seed", "2", "--degree", "12"])), 0);
    write_masks(&f.path("truth"), &[("gt.png", &gt_mask())]);
    let e = stochseg(&["eval", &f.p("pred"), &f.p("truth")]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let erows = csv_rows(&stdout(&e));
    for (k, name) in [(1, "region_f1"), (2, "boundary_f1"), (3, "iou")] {
        assert_eq!(rows[1][col(name)], erows[1][k], "{name}");
    }
}

#[test]
fn sweep_degree_grid_and_duplicates() {
    let f = Fixture::new();
    let (img, scr, gt, out) = (f.p("image.png"), f.p("scribbles.png"), f.p("gt.png"), f.p("sweep.csv"));
    let o = stochseg(&[
        "sweep",
        &img,
        &scr,
        &gt,
        "--q",
        "100",
        "--grid",
        "degree=5,30,100,30",
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate"));
    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 4);
    let edges = rows[0].iter().position(|h| h == "edges").unwrap();
    let e: Vec<usize> = rows[1..].iter().map(|r| r[edges].parse().unwrap()).collect();
    assert!(e[0] < e[1] && e[1] < e[2], "{e:?}");

    let o = stochseg(&["sweep", &img, &scr, &gt, "--grid", "gamma=1"]);
    assert_eq!(code(&o), 4);
    let o = stochseg(&["sweep", &img, &f.p("fg_only.png"), &gt, "--grid", "degree=5"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn graph_lab_csv() {
    let o = stochseg(&[
        "graph-lab",
        "--n",
        "300",
        "--p",
        "0.001,0.05",
        "--trials",
        "20",
        "--seed",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(
        rows[0],
        ["n", "p", "trials", "fraction_connected", "mean_largest_component"]
    );
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][3], "0.0");
    assert_eq!(rows[2][3], "1.0");
    assert_eq!(
        stdout(&o),
        stdout(&stochseg(&[
            "graph-lab",
            "--n",
            "300",
            "--p",
            "0.001,0.05",
            "--trials",
            "20",
            "--seed",
            "4"
        ]))
    );

    let o = stochseg(&["graph-lab", "--n", "500", "--trials", "5"]);
    assert_eq!(code(&o), 0);
    assert!(csv_rows(&stdout(&o)).len() >= 7);
    assert_eq!(code(&stochseg(&["graph-lab", "--n", "1"])), 4);
}
