use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gigaseg::io::{
    load_checkpoint, read_image, write_image, write_raw_tensor, ElementKind, RawImageHeader, RawReader, RawWriter,
};
use gigaseg::memplan::{estimate_training_peak, format_bytes, max_trainable_dims, RowKind};
use gigaseg::model::{forward, search_architecture, ArchSpec};
use gigaseg::pipeline::{
    generate_label_raster, generate_label_streamed, preprocess_input, preprocess_streamed, Raster, RowSink, SynthScene,
};
use gigaseg::train::{
    self, dice, evaluate_checkpoint, item_stem, measure_training_step, BenchConfig, DiskDataset, INPUTS_DIR,
    LABELS_DIR, REFERENCE_DIR, RGB_DIR,
};
use gigaseg::Tensor;
use serde_json::json;

use crate::config::RunConfig;
use crate::{BenchArgs, CliError, EstimateArgs, ImageFormat};

/// Rows per band when streaming raw images.
const BAND_ROWS: usize = 256;
/// Pixel count from which `--format auto` writes raw instead of PNG.
const RAW_FROM_PIXELS: usize = 100_000_000;
/// Seed distance between splits of the synthetic corpus.
const SPLIT_SEED_STRIDE: u64 = 1_000_000;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(gigaseg::Error::Io { path: path.into(), source: e })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// `1234567` -> `"1,234,567"`.
fn grouped(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn multiple(cfg: &RunConfig, arch: &ArchSpec) -> usize {
    arch.downsampling().max(cfg.recipe.downsample_factor)
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw"))
}

/// Image files of a directory, sorted by name.
fn images_in(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if matches!(ext.as_str(), "png" | "ppm" | "pgm" | "raw") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `(input, output)` pairs: the explicit pair, or every RGB image of every
/// split mapped into `out_dir` with extension `ext`.
fn jobs(cfg: &RunConfig, single: Option<(&Path, &Path)>, out_dir: &str, ext: &str) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    if let Some((i, o)) = single {
        return Ok(vec![(i.into(), o.into())]);
    }
    let mut out = Vec::new();
    for (split, _) in cfg.dataset.splits() {
        let rgb = cfg.paths.data.join(split).join(RGB_DIR);
        if !rgb.exists() {
            continue;
        }
        let dst = cfg.paths.data.join(split).join(out_dir);
        create_dir(&dst)?;
        for src in images_in(&rgb)? {
            let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((src, dst.join(format!("{stem}.{ext}"))));
        }
    }
    if out.is_empty() {
        return Err(CliError::Core(gigaseg::Error::Empty(format!(
            "{} (no */{RGB_DIR}/ images)",
            cfg.paths.data.display()
        ))));
    }
    Ok(out)
}

pub fn find_arch(cfg: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let t0 = Instant::now();
    let arch = search_architecture(&cfg.arch)?;
    print!("{arch}");
    println!("layers: {}", arch.layers.len());
    println!("parameters: {}", arch.param_count());
    eprintln!("search took {:.2} s", t0.elapsed().as_secs_f64());
    if let Some(p) = out {
        fs::write(p, arch.to_string()).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

fn f32_bytes(rows: &[f32]) -> Vec<u8> {
    rows.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn preprocess(cfg: &RunConfig, single: Option<(&Path, &Path)>) -> Result<(), CliError> {
    let (h, w) = (cfg.dataset.crop_height, cfg.dataset.crop_width);
    let jobs = jobs(cfg, single, INPUTS_DIR, "raw")?;
    for (src, dst) in &jobs {
        if is_raw(src) {
            let mut reader = RawReader::open(src)?;
            let header = RawImageHeader { channels: 1, height: h as u32, width: w as u32, kind: ElementKind::F32 };
            let mut writer = RawWriter::create(dst, header)?;
            preprocess_streamed(&mut reader, h, w, BAND_ROWS, |rows| writer.write_bytes(&f32_bytes(rows)))?;
            writer.finish()?;
        } else {
            write_raw_tensor(dst, &preprocess_input(&read_image(src)?, h, w)?)?;
        }
    }
    println!("preprocessed {} image(s) to {h}x{w}", jobs.len());
    Ok(())
}

/// Collects streamed label rows.
struct Rows(Vec<u8>);

impl RowSink for Rows {
    fn write_rows(&mut self, rows: &[u8]) -> gigaseg::Result<()> {
        self.0.extend_from_slice(rows);
        Ok(())
    }
}

fn label_of(cfg: &RunConfig, src: &Path) -> Result<Raster, CliError> {
    let (h, w) = (cfg.dataset.crop_height, cfg.dataset.crop_width);
    let check = |ih: usize, iw: usize| {
        if (ih, iw) != (h, w) {
            return Err(CliError::Core(gigaseg::Error::format(
                src,
                format!("image is {ih}x{iw}, the dataset crop is {h}x{w}"),
            )));
        }
        Ok(())
    };
    if is_raw(src) {
        let mut reader = RawReader::open(src)?;
        let hd = reader.header();
        check(hd.height as usize, hd.width as usize)?;
        let mut rows = Rows(Vec::with_capacity(h * w));
        generate_label_streamed(&mut reader, &cfg.recipe, &mut rows)?;
        Ok(Raster::from_vec(1, h, w, rows.0)?)
    } else {
        let rgb = read_image(src)?;
        check(rgb.height, rgb.width)?;
        Ok(generate_label_raster(&rgb, &cfg.recipe)?)
    }
}

pub fn make_labels(cfg: &RunConfig, single: Option<(&Path, &Path)>) -> Result<(), CliError> {
    let jobs = jobs(cfg, single, LABELS_DIR, "png")?;
    let mut scores = Vec::new();
    for (src, dst) in &jobs {
        let label = label_of(cfg, src)?;
        // Score against the generator's mask when one sits next to the image.
        let reference = src
            .parent()
            .and_then(Path::parent)
            .map(|split| split.join(REFERENCE_DIR).join(src.file_name().unwrap_or_default()))
            .filter(|p| single.is_none() && p.exists());
        if let Some(r) = reference {
            let r = read_image(&r)?;
            scores.push(dice(&label.to_mask_tensor(), &r.to_mask_tensor())?);
        }
        write_image(dst, &label)?;
    }
    println!("labelled {} image(s)", jobs.len());
    if !scores.is_empty() {
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        println!("dice vs reference masks: mean {mean:.4}, min {min:.4} over {}", scores.len());
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, format: ImageFormat) -> Result<(), CliError> {
    let arch = cfg.arch_spec()?;
    let (h, w) = (cfg.dataset.crop_height, cfg.dataset.crop_width);
    let raw = match format {
        ImageFormat::Raw => true,
        ImageFormat::Png => false,
        ImageFormat::Auto => h * w >= RAW_FROM_PIXELS,
    };
    let ext = if raw { "raw" } else { "png" };
    let mut total = 0;
    for (k, (split, count)) in cfg.dataset.splits().into_iter().enumerate() {
        let dir = cfg.paths.data.join(split);
        let (rgb_dir, ref_dir) = (dir.join(RGB_DIR), dir.join(REFERENCE_DIR));
        create_dir(&rgb_dir)?;
        create_dir(&ref_dir)?;
        for i in 0..count {
            let seed = cfg.data_seed + k as u64 * SPLIT_SEED_STRIDE + i as u64;
            let scene = SynthScene::new(seed, h, w, &cfg.synth, multiple(cfg, &arch))?;
            let name = format!("{}.{ext}", item_stem(i));
            if raw {
                let header = |c| RawImageHeader { channels: c, height: h as u32, width: w as u32, kind: ElementKind::U8 };
                let mut rgb = RawWriter::create(rgb_dir.join(&name), header(3))?;
                let mut mask = RawWriter::create(ref_dir.join(&name), header(1))?;
                for y0 in (0..h).step_by(BAND_ROWS) {
                    let (c, m) = scene.render_rows(y0, BAND_ROWS.min(h - y0));
                    rgb.write_bytes(&c)?;
                    mask.write_bytes(&m)?;
                }
                rgb.finish()?;
                mask.finish()?;
            } else {
                let (rgb, mask) = scene.render();
                write_image(rgb_dir.join(&name), &rgb)?;
                write_image(ref_dir.join(&name), &mask)?;
            }
            total += 1;
        }
    }
    println!("wrote {total} synthetic image(s) of {h}x{w} under {}", cfg.paths.data.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let arch = cfg.arch_spec()?;
    let train_set = DiskDataset::open(cfg.paths.data.join("train"))?;
    let val_set = DiskDataset::open(cfg.paths.data.join("val"))?;
    eprintln!(
        "training on {} image(s), validating on {}, {} step(s)",
        train_set.items.len(),
        val_set.items.len(),
        cfg.train.max_steps
    );
    let out = train::train(&arch, &cfg.train, &train_set, &val_set, |r| {
        if let Some(v) = r.val_loss {
            let loss = r.loss.map_or(String::from("-"), |l| format!("{l:.5}"));
            let mark = r.checkpoint.as_deref().map_or(String::new(), |c| format!(" -> {c}"));
            eprintln!("step {:>6} loss {loss} val {v:.5} {:.0} ms{mark}", r.step, r.wall_ms);
        }
    })?;
    println!("best step: {}", out.best_step);
    println!("best validation loss: {:.6}", out.best_val_loss);
    println!("best checkpoint: {}", out.best_path.display());
    println!("log: {}", out.log_path.display());
    Ok(())
}

fn default_checkpoint(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| cfg.train.checkpoint_dir.join(train::BEST_CHECKPOINT), Path::to_path_buf)
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str, as_json: bool) -> Result<(), CliError> {
    let arch = cfg.arch_spec()?;
    let ck = load_checkpoint(default_checkpoint(cfg, checkpoint))?;
    let set = DiskDataset::open(cfg.paths.data.join(split))?;
    let report = evaluate_checkpoint(&ck, &arch, &set)?;
    if as_json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("checkpoint step {} (validation loss {:.6})", ck.step, ck.val_loss);
        println!("{report}");
    }
    Ok(())
}

pub fn predict(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    checkpoint: Option<&Path>,
    threshold: f64,
) -> Result<(), CliError> {
    let arch = cfg.arch_spec()?;
    let ck = load_checkpoint(default_checkpoint(cfg, checkpoint))?;
    if ck.arch != arch {
        return Err(CliError::Core(gigaseg::Error::ArchMismatch));
    }
    let x: Tensor<f32> = match RawReader::open(input) {
        Ok(mut r) if r.header().kind == ElementKind::F32 => r.read_tensor()?,
        _ => preprocess_input(&read_image(input)?, cfg.dataset.crop_height, cfg.dataset.crop_width)?,
    };
    let p = forward(&arch, &ck.params, &x)?;
    let mask = Raster::from_tensor_threshold(&p, threshold as f32);
    write_image(output, &mask)?;
    let fg = mask.count_nonzero();
    println!(
        "wrote {} ({}x{}, {:.2}% foreground)",
        output.display(),
        mask.height,
        mask.width,
        100.0 * fg as f64 / (mask.height * mask.width) as f64
    );
    Ok(())
}

fn parse_size(s: &str, sep: char) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("`{s}` is not of the form H{sep}W"));
    let (a, b) = s.trim().split_once(sep).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn estimate_mem(cfg: &RunConfig, a: &EstimateArgs) -> Result<(), CliError> {
    let arch = cfg.arch_spec()?;
    let h = a.height.unwrap_or(cfg.dataset.crop_height);
    let w = a.width.unwrap_or(cfg.dataset.crop_width);
    let workers = a.workers.unwrap_or_else(rayon::current_num_threads);
    let est = estimate_training_peak(&arch, h, w, a.element_width, workers)?;
    if let Some(p) = &a.csv {
        fs::write(p, est.to_csv()).map_err(|e| io_err(p, e))?;
    }
    let input_bytes = est.rows.iter().find(|r| r.name == "input").map_or(0, |r| r.bytes);
    let max_dims = match a.budget {
        Some(budget) => Some(max_trainable_dims(&arch, budget, parse_size(&a.aspect, ':')?, a.element_width, workers)?),
        None => None,
    };
    let measured = if a.measure {
        if a.element_width != 4 {
            return Err(CliError::Config("--measure runs the f32 trainer; use --element-width 4".into()));
        }
        Some(measure_training_step(&arch, h, w, cfg.train.seed)?)
    } else {
        None
    };

    if a.json {
        let mut v = json!({
            "height": h,
            "width": w,
            "element_width": a.element_width,
            "workers": workers,
            "peak_bytes": est.peak_bytes,
            "peak_step": est.tape_timeline[est.peak_step].label,
            "input_bytes": input_bytes,
            "parameter_state_bytes": est.parameter_state_bytes(),
            "breakdown": est.breakdown,
        });
        if let Some((mh, mw)) = max_dims {
            v["max_dims"] = json!([mh, mw]);
        }
        if let Some(m) = &measured {
            v["measured"] = serde_json::to_value(m).expect("serializes");
            v["measured"]["step_bytes"] = json!(m.step_bytes());
        }
        println!("{v}");
        return Ok(());
    }
    print!("{est}");
    println!("input row: {} bytes", grouped(input_bytes));
    let moments: u64 = est.rows_of(RowKind::Moment).map(|r| r.bytes).sum();
    println!(
        "parameters + gradients + moments: {} bytes (moments {})",
        grouped(est.parameter_state_bytes()),
        grouped(moments)
    );
    if let Some((mh, mw)) = max_dims {
        println!("largest trainable input within {}: {mh}x{mw}", format_bytes(a.budget.unwrap_or(0)));
    }
    if let Some(m) = &measured {
        println!(
            "measured: baseline rss {}, peak rss {}, step {} ({:.4} of predicted)",
            format_bytes(m.baseline_rss),
            format_bytes(m.peak_rss),
            format_bytes(m.step_bytes()),
            m.step_bytes() as f64 / m.predicted as f64
        );
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig, a: &BenchArgs) -> Result<(), CliError> {
    let arch = cfg.arch_spec()?;
    let sizes = a.sizes.split(',').map(|s| parse_size(s, 'x')).collect::<Result<Vec<_>, _>>()?;
    let bc = BenchConfig {
        sizes,
        steps: a.steps,
        warmup: a.warmup,
        val_every: a.val_every,
        val_images: a.val_images,
        seed: cfg.train.seed,
        adam: cfg.train.adam(),
    };
    let report = train::bench(&arch, &bc)?;
    if a.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
        return Ok(());
    }
    println!("{:>6} {:>6} {:>12} {:>12} {:>12}", "height", "width", "pixels", "mean ms", "median ms");
    for s in &report.sizes {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
        println!("{:>6} {:>6} {:>12} {:>12} {:>12}", s.height, s.width, s.pixels, f(s.mean_ms), f(s.median_ms));
    }
    match &report.fit {
        Some(fit) => println!(
            "fit: {:.4e} ms/pixel + {:.2} ms, r^2 = {:.5}",
            fit.slope, fit.intercept, fit.r2
        ),
        None => println!("fit: needs timings at two or more sizes"),
    }
    Ok(())
}
