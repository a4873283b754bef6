use gigaseg::memplan::estimate_training_peak;
use gigaseg::model::ArchSpec;
use gigaseg::pipeline::{erode, LabelRecipe, Raster};
use gigaseg_web::demo;
use serde_json::Value;

#[test]
fn default_recipe_recovers_the_synthetic_mask() {
    let v = demo::label_view(1, 128, 512, &LabelRecipe::default()).unwrap();
    assert_eq!(v.image.len(), 4 * 128 * 512);
    assert_eq!(v.overlay.len(), v.image.len());
    assert!(v.dice > 0.9, "dice {}", v.dice);
    assert!(v.tissue_fraction > 0.0 && v.tissue_fraction < 1.0);

    // A threshold below every tissue value labels nothing.
    let none = LabelRecipe {
        background_threshold: 0,
        ..Default::default()
    };
    let v = demo::label_view(1, 128, 512, &none).unwrap();
    assert_eq!(v.tissue_fraction, 0.0);
}

#[test]
fn bad_inputs_are_errors() {
    let even = LabelRecipe {
        median_kernel: 4,
        ..Default::default()
    };
    assert!(demo::label_view(1, 128, 512, &even).is_err());
    assert!(demo::label_view(1, 100, 512, &LabelRecipe::default()).is_err());
    assert!(demo::memory_json(72, 256, 4, 1).is_err());
    assert!(demo::morphology("open", &[0; 16], 4, 4, 3, 1).is_err());
    assert!(demo::morphology("erode", &[0; 15], 4, 4, 3, 1).is_err());
}

#[test]
fn memory_json_matches_the_planner() {
    let v: Value = serde_json::from_str(&demo::memory_json(512, 2048, 4, 2).unwrap()).unwrap();
    let est = estimate_training_peak(&ArchSpec::pinned(), 512, 2048, 4, 2).unwrap();
    assert_eq!(v["peak_bytes"].as_u64(), Some(est.peak_bytes));
    let timeline = v["timeline"].as_array().unwrap();
    assert_eq!(timeline.len(), est.tape_timeline.len());
    let max = timeline.iter().map(|s| s["total_bytes"].as_u64().unwrap()).max().unwrap();
    assert_eq!(max, est.peak_bytes);
    assert_eq!(v["peak_step"], est.tape_timeline[est.peak_step].label.as_str());
}

#[test]
fn max_dims_fit_the_budget() {
    let (h, w) = demo::max_dims(2_000_000_000, (1, 4), 1).unwrap();
    assert_eq!(w, 4 * h);
    let peak = estimate_training_peak(&ArchSpec::pinned(), h, w, 4, 1).unwrap().peak_bytes;
    assert!(peak <= 2_000_000_000);
}

#[test]
fn morphology_matches_the_library() {
    let (h, w) = (24, 40);
    let mask: Vec<u8> = (0..h * w).map(|i| if (i * 7919) % 5 < 3 { 255 } else { 0 }).collect();
    let got = demo::morphology("erode", &mask, h, w, 3, 2).unwrap();
    let want = erode(&Raster::from_vec(1, h, w, mask.clone()).unwrap(), 3, 2).unwrap();
    assert_eq!(got, want.data);

    // Closing is idempotent.
    let close = |m: &[u8]| {
        let d = demo::morphology("dilate", m, h, w, 3, 1).unwrap();
        demo::morphology("erode", &d, h, w, 3, 1).unwrap()
    };
    let once = close(&mask);
    assert_eq!(close(&once), once);

    // Filling a ring closes its hole.
    let mut ring = vec![0u8; 9 * 9];
    for y in 2..7 {
        for x in 2..7 {
            if y == 2 || y == 6 || x == 2 || x == 6 {
                ring[y * 9 + x] = 255;
            }
        }
    }
    let filled = demo::morphology("fill", &ring, 9, 9, 1, 1).unwrap();
    assert_eq!(filled.iter().filter(|&&v| v > 0).count(), 25);
}
