//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The `demo` module holds plain Rust versions of each operation so they can
//! be tested natively; the exported functions only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(e: gigaseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Synthetic tissue image, its recipe label and the overlap with the
/// generator's reference mask.
#[wasm_bindgen]
pub struct LabelView(demo::LabelView);

#[wasm_bindgen]
impl LabelView {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.0.height
    }

    /// RGBA pixels of the synthetic image.
    pub fn image(&self) -> Vec<u8> {
        self.0.image.clone()
    }

    /// RGBA pixels of the image with the label tinted and disagreements with
    /// the reference marked.
    pub fn overlay(&self) -> Vec<u8> {
        self.0.overlay.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn dice(&self) -> f64 {
        self.0.dice
    }

    #[wasm_bindgen(getter)]
    pub fn tissue_fraction(&self) -> f64 {
        self.0.tissue_fraction
    }
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn label_demo(
    seed: u32,
    height: usize,
    width: usize,
    background_threshold: u8,
    median_kernel: usize,
    morph_size: usize,
    erode_iterations: usize,
    dilate_iterations: usize,
) -> Result<LabelView, JsError> {
    let recipe = gigaseg::pipeline::LabelRecipe {
        background_threshold,
        median_kernel,
        morph_size,
        erode_iterations,
        dilate_iterations,
        ..Default::default()
    };
    demo::label_view(seed as u64, height, width, &recipe).map(LabelView).map_err(js)
}

/// Planner output for one training step as JSON.
#[wasm_bindgen]
pub fn memory_estimate(height: usize, width: usize, element_width: usize, workers: usize) -> Result<String, JsError> {
    demo::memory_json(height, width, element_width, workers).map_err(js)
}

/// Largest `[height, width]` of the given aspect that trains within
/// `budget_bytes`.
#[wasm_bindgen]
pub fn max_dims(budget_bytes: f64, aspect_height: usize, aspect_width: usize, workers: usize) -> Result<Vec<u32>, JsError> {
    demo::max_dims(budget_bytes as u64, (aspect_height, aspect_width), workers)
        .map(|(h, w)| vec![h as u32, w as u32])
        .map_err(js)
}

/// Applies `op` (`median`, `erode`, `dilate` or `fill`) to a 0/255 mask.
#[wasm_bindgen]
pub fn morphology(
    op: &str,
    mask: &[u8],
    height: usize,
    width: usize,
    size: usize,
    iterations: usize,
) -> Result<Vec<u8>, JsError> {
    demo::morphology(op, mask, height, width, size, iterations).map_err(js)
}
