//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria run one after another so timings and memory readings
//! are not disturbed by parallel tests.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use gigaseg::model::{forward, init_params, ArchSpec};
use gigaseg::train::{read_log, LogRecord, BEST_CHECKPOINT, LOG_FILE};
use gigaseg::{Error, Shape, Tensor};
use serde_json::Value;

const SEARCH_LIMIT: Duration = Duration::from_secs(60);
const GRADCHECK_SEEDS: u64 = 5;
const SWEEP_INSTANCES: usize = 100;
const TRAIN_STEPS: usize = 800;
const VAL_EVERY: usize = 25;
const DICE_MIN: f64 = 0.95;
const TRAIN_LIMIT: Duration = Duration::from_secs(45 * 60);
const MEM_SLACK: f64 = 0.20;
const FIT_R2_MIN: f64 = 0.99;
const PUBLISHED_GIGAPIXEL_GB: f64 = 103.61;
const PUBLISHED_STEP_S: f64 = 81.0;

fn gigaseg(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gigaseg"))
        .args(args)
        .env_remove("GIGASEG_HOME")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "gigaseg {} failed ({}): {}",
        args.join(" "),
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{text}"))
        .trim()
}

fn arch_search(dir: &Path) -> String {
    let file = dir.join("arch.txt");
    let t0 = Instant::now();
    let text = stdout(&gigaseg(&["find-arch", "--out", file.to_str().unwrap()]));
    let took = t0.elapsed();
    let layers: usize = field(&text, "layers:").parse().unwrap();
    let params: usize = field(&text, "parameters:").parse().unwrap();
    assert_eq!((layers, params), (7, 4492));
    assert!(took < SEARCH_LIMIT, "search took {took:?}");
    assert_eq!(ArchSpec::parse(&fs::read_to_string(file).unwrap()).unwrap(), ArchSpec::pinned());
    format!("{layers} layers, {params} parameters, {:.2} s", took.as_secs_f64())
}

fn gradient() -> String {
    let mut worst = 0.0f64;
    let mut frozen = 0;
    for seed in 0..GRADCHECK_SEEDS {
        let r = common::gradcheck(seed);
        assert_eq!(r.plain + r.frozen, 4492);
        worst = worst.max(r.worst);
        frozen += r.frozen;
    }
    format!(
        "{GRADCHECK_SEEDS} seeds x 4492 parameters, worst relative error {worst:.2e} (< 1e-4), {frozen} kink-adjacent coordinates on a held pattern"
    )
}

fn kernels() -> String {
    common::conv_oracle_sweep(11, SWEEP_INSTANCES);
    common::tconv_oracle_sweep(12, SWEEP_INSTANCES);
    common::morph_oracle_sweep(13, SWEEP_INSTANCES);
    format!("conv, tconv, median/erode/dilate/fill each on {SWEEP_INSTANCES} random instances")
}

struct Run {
    dir: PathBuf,
    data: PathBuf,
}

impl Run {
    fn new(root: &Path) -> Run {
        let data = root.join("data");
        gigaseg(&["--data", data.to_str().unwrap(), "synth"]);
        gigaseg(&["--data", data.to_str().unwrap(), "preprocess"]);
        gigaseg(&["--data", data.to_str().unwrap(), "make-labels"]);
        Run { dir: root.to_path_buf(), data }
    }

    fn train(&self, name: &str) -> (PathBuf, Duration) {
        let ck = self.dir.join(name);
        let t0 = Instant::now();
        gigaseg(&[
            "--data",
            self.data.to_str().unwrap(),
            "train",
            "--max-steps",
            &TRAIN_STEPS.to_string(),
            "--val-every",
            &VAL_EVERY.to_string(),
            "--checkpoint-dir",
            ck.to_str().unwrap(),
        ]);
        (ck, t0.elapsed())
    }
}

fn validation_records(log: &[LogRecord]) -> Vec<(usize, f64)> {
    log.iter().filter_map(|r| r.val_loss.map(|v| (r.step, v))).collect()
}

fn convergence(run: &Run, ck: &Path, took: Duration) -> String {
    let log = read_log(ck.join(LOG_FILE)).unwrap();
    let vals = validation_records(&log);
    let (min_step, min_loss) = vals.iter().copied().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let best = gigaseg::io::load_checkpoint(ck.join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.step as usize, min_step, "best checkpoint is not the validation minimizer");
    assert_eq!(best.val_loss, min_loss);

    let report = json(&gigaseg(&[
        "--data",
        run.data.to_str().unwrap(),
        "eval",
        "--checkpoint",
        ck.join(BEST_CHECKPOINT).to_str().unwrap(),
        "--json",
    ]));
    let dice = report["mean"].as_f64().unwrap();
    let n = report["dice"].as_array().unwrap().len();
    assert_eq!(n, 16);
    assert!(dice >= DICE_MIN, "mean test Dice {dice:.4}");
    assert!(took < TRAIN_LIMIT, "training took {took:?}");
    format!(
        "test Dice {dice:.4} +- {:.4} over {n} images (>= {DICE_MIN}), best step {min_step} of {TRAIN_STEPS}, validation loss {min_loss:.5}, {:.1} min",
        report["std"].as_f64().unwrap(),
        took.as_secs_f64() / 60.0
    )
}

fn determinism(first: &Path, second: &Path) -> String {
    let mut names: Vec<_> = fs::read_dir(first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".ckpt"))
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in &names {
        let a = fs::read(first.join(n)).unwrap();
        let b = fs::read(second.join(n)).unwrap();
        assert!(a == b, "{} differs between runs", n.to_string_lossy());
    }
    let key = |p: &Path| -> Vec<_> {
        read_log(p.join(LOG_FILE))
            .unwrap()
            .into_iter()
            .map(|r| (r.step, r.loss.map(f64::to_bits), r.val_loss.map(f64::to_bits), r.checkpoint))
            .collect()
    };
    let (a, b) = (key(first), key(second));
    assert_eq!(a, b, "training logs differ");
    format!("{} checkpoint file(s) and {} log records bitwise identical", names.len(), a.len())
}

fn memory() -> String {
    let mut parts = Vec::new();
    for (h, w) in [(512usize, 2048usize), (2000, 8000)] {
        let v = json(&gigaseg(&[
            "estimate-mem",
            "--height",
            &h.to_string(),
            "--width",
            &w.to_string(),
            "--measure",
            "--json",
        ]));
        let m = &v["measured"];
        let pred = m["predicted"].as_u64().unwrap() as f64;
        let peak = m["peak_rss"].as_u64().unwrap() as f64;
        let baseline = m["baseline_rss"].as_u64().unwrap() as f64;
        assert_eq!(pred, v["peak_bytes"].as_u64().unwrap() as f64);
        let upper = pred * (1.0 + MEM_SLACK) + baseline;
        assert!(pred <= peak && peak <= upper, "{h}x{w}: peak {peak} outside [{pred}, {upper}]");
        parts.push(format!(
            "{h}x{w} predicted {:.1} MB, process peak {:.1} MB (baseline {:.1} MB, step {:.4}x predicted)",
            pred / 1e6,
            peak / 1e6,
            baseline / 1e6,
            m["step_bytes"].as_u64().unwrap() as f64 / pred
        ));
    }
    let v = json(&gigaseg(&["estimate-mem", "--height", "16000", "--width", "64000", "--json"]));
    assert_eq!(v["input_bytes"].as_u64(), Some(4_096_000_000));
    let giga = v["peak_bytes"].as_u64().unwrap() as f64 / 1e9;
    parts.push(format!(
        "16000x64000 predicted {giga:.2} GB (published figure {PUBLISHED_GIGAPIXEL_GB} GB, ratio {:.3})",
        giga / PUBLISHED_GIGAPIXEL_GB
    ));
    parts.join("; ")
}

fn shapes() -> String {
    let arch = ArchSpec::pinned();
    let params = init_params::<f32>(&arch, 0);
    for (h, w) in [(64usize, 256usize), (512, 2048), (2000, 8000)] {
        let shape = Shape::new(1, 1, h, w).unwrap();
        assert_eq!(arch.output_shape(shape).unwrap(), shape);
        let out = forward(&arch, &params, &Tensor::<f32>::zeros(shape)).unwrap();
        assert_eq!(out.shape(), shape);
    }
    for (h, w) in [(72usize, 256usize), (64, 264)] {
        let shape = Shape::new(1, 1, h, w).unwrap();
        assert!(matches!(arch.output_shape(shape), Err(Error::Indivisible { .. })), "{h}x{w}");
    }
    "64x256, 512x2048, 2000x8000 map to themselves; 72x256 and 64x264 rejected as indivisible".into()
}

fn throughput() -> String {
    let v = json(&gigaseg(&["bench", "--json"]));
    let r2 = v["fit"]["r2"].as_f64().unwrap();
    let slope = v["fit"]["slope"].as_f64().unwrap();
    let times: Vec<String> = v["sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| format!("{}x{} {:.0} ms", s["height"], s["width"], s["median_ms"].as_f64().unwrap()))
        .collect();
    assert!(r2 > FIT_R2_MIN, "r^2 {r2}");
    let giga_s = slope * 16000.0 * 64000.0 / 1e3;
    format!(
        "{}, r^2 {r2:.5} (> {FIT_R2_MIN}); extrapolated 16000x64000 step {giga_s:.0} s on {} thread(s) (published {PUBLISHED_STEP_S} s on a unified-memory SoC)",
        times.join(", "),
        rayon::current_num_threads()
    )
}

fn check(name: &str, results: &mut Vec<bool>, f: impl FnOnce() -> String) {
    let t0 = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f));
    let secs = t0.elapsed().as_secs_f64();
    results.push(r.is_ok());
    match r {
        Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("FAIL {name}: {msg} [{secs:.1} s]");
        }
    }
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let tmp = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    check("memory", &mut results, memory);
    check("throughput", &mut results, throughput);
    check("architecture", &mut results, || arch_search(tmp.path()));
    check("gradient", &mut results, gradient);
    check("kernels", &mut results, kernels);
    check("shapes", &mut results, shapes);

    let mut first = None;
    check("convergence", &mut results, || {
        let run = Run::new(tmp.path());
        let (ck, took) = run.train("run-a");
        let detail = convergence(&run, &ck, took);
        first = Some((run, ck));
        detail
    });
    check("determinism", &mut results, || {
        let (run, ck) = first.as_ref().expect("convergence run completed");
        let (again, _) = run.train("run-b");
        determinism(ck, &again)
    });

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
