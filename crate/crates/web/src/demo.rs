use gigaseg::memplan::{estimate_training_peak, format_bytes, max_trainable_dims};
use gigaseg::model::ArchSpec;
use gigaseg::pipeline::{dilate, erode, fill_holes, generate_label_raster, median_blur, LabelRecipe, Raster, SynthParams, SynthScene};
use gigaseg::{Error, Result};
use serde_json::json;

pub struct LabelView {
    pub width: usize,
    pub height: usize,
    pub image: Vec<u8>,
    pub overlay: Vec<u8>,
    pub dice: f64,
    pub tissue_fraction: f64,
}

/// Renders scene `seed`, labels it with `recipe` and scores the label
/// against the scene's own mask.
pub fn label_view(seed: u64, height: usize, width: usize, recipe: &LabelRecipe) -> Result<LabelView> {
    recipe.validate()?;
    let arch = ArchSpec::pinned();
    let multiple = arch.downsampling().max(recipe.downsample_factor);
    let scene = SynthScene::new(seed, height, width, &SynthParams::default(), multiple)?;
    let (rgb, reference) = scene.render();
    let label = generate_label_raster(&rgb, recipe)?;

    let n = height * width;
    let mut image = Vec::with_capacity(4 * n);
    let mut overlay = Vec::with_capacity(4 * n);
    let (mut both, mut ours, mut theirs) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let px = &rgb.data[3 * i..3 * i + 3];
        image.extend_from_slice(&[px[0], px[1], px[2], 255]);
        let (l, r) = (label.data[i] > 0, reference.data[i] > 0);
        both += (l && r) as usize;
        ours += l as usize;
        theirs += r as usize;
        let tinted = match (l, r) {
            (true, true) => [px[0] / 2, px[1] / 2 + 100, px[2] / 2],
            (true, false) => [230, 40, 40],
            (false, true) => [40, 80, 230],
            (false, false) => [px[0], px[1], px[2]],
        };
        overlay.extend_from_slice(&[tinted[0], tinted[1], tinted[2], 255]);
    }
    let dice = if ours + theirs == 0 {
        1.0
    } else {
        2.0 * both as f64 / (ours + theirs) as f64
    };
    Ok(LabelView {
        width,
        height,
        image,
        overlay,
        dice,
        tissue_fraction: ours as f64 / n as f64,
    })
}

pub fn memory_json(height: usize, width: usize, element_width: usize, workers: usize) -> Result<String> {
    let est = estimate_training_peak(&ArchSpec::pinned(), height, width, element_width, workers)?;
    let timeline: Vec<_> = est
        .tape_timeline
        .iter()
        .enumerate()
        .map(|(i, s)| json!({ "label": s.label, "tape_bytes": s.live_bytes, "total_bytes": est.live_at(i) }))
        .collect();
    let tensors: Vec<_> = est
        .rows
        .iter()
        .map(|r| json!({ "name": r.name, "kind": r.kind.name(), "bytes": r.bytes }))
        .collect();
    Ok(json!({
        "height": height,
        "width": width,
        "peak_bytes": est.peak_bytes,
        "peak": format_bytes(est.peak_bytes),
        "peak_step": est.tape_timeline[est.peak_step].label,
        "breakdown": est.breakdown,
        "timeline": timeline,
        "tensors": tensors,
    })
    .to_string())
}

pub fn max_dims(budget: u64, aspect: (usize, usize), workers: usize) -> Result<(usize, usize)> {
    max_trainable_dims(&ArchSpec::pinned(), budget, aspect, 4, workers)
}

pub fn morphology(op: &str, mask: &[u8], height: usize, width: usize, size: usize, iterations: usize) -> Result<Vec<u8>> {
    let img = Raster::from_vec(1, height, width, mask.to_vec())?.binarized();
    let out = match op {
        "median" => median_blur(&img, size)?,
        "erode" => erode(&img, size, iterations)?,
        "dilate" => dilate(&img, size, iterations)?,
        "fill" => fill_holes(&img)?,
        other => return Err(Error::config("op", format!("unknown operation `{other}`"))),
    };
    Ok(out.data)
}
