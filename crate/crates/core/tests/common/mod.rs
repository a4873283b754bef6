//! Shared test helpers: slow reference implementations written from the
//! definitions, independent of the optimized kernels.
#![allow(dead_code)]

use gigaseg::model::{init_params, Activation, ArchSpec, ModelParams};
use gigaseg::ops::{self, conv2d_forward, tconv2d_forward, ConvSpec};
use gigaseg::pipeline::{dilate, erode, fill_holes, median_blur, LabelRecipe, Raster, SynthParams};
use gigaseg::train::{loss_and_grads, synth_sample};
use gigaseg::{Element, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Valid strided cross-correlation, weights `(out, in, kh, kw)`.
pub fn conv_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let s = spec.stride;
    let oh = (xs.height - spec.kernel_h) / s + 1;
    let ow = (xs.width - spec.kernel_w) / s + 1;
    let out = Shape::new(xs.batch, spec.out_channels, oh, ow).unwrap();
    Tensor::from_fn(out, |n, o, y, xx| {
        let mut acc = 0.0;
        for i in 0..xs.channels {
            for ky in 0..spec.kernel_h {
                for kx in 0..spec.kernel_w {
                    acc += w.get(o, i, ky, kx) * x.get(n, i, y * s + ky, xx * s + kx);
                }
            }
        }
        acc + b.map_or(0.0, |b| b[o])
    })
}

/// Transposed convolution as an explicit scatter, weights `(in, out, kh, kw)`.
pub fn tconv_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let s = spec.stride;
    let oh = (xs.height - 1) * s + spec.kernel_h;
    let ow = (xs.width - 1) * s + spec.kernel_w;
    let shape = Shape::new(xs.batch, spec.out_channels, oh, ow).unwrap();
    let mut out = vec![0.0; shape.numel()];
    for n in 0..xs.batch {
        for i in 0..xs.channels {
            for y in 0..xs.height {
                for xx in 0..xs.width {
                    let v = x.get(n, i, y, xx);
                    for o in 0..spec.out_channels {
                        for ky in 0..spec.kernel_h {
                            for kx in 0..spec.kernel_w {
                                out[shape.offset(n, o, y * s + ky, xx * s + kx)] += v * w.get(i, o, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut t = Tensor::from_vec(shape, out).unwrap();
    if let Some(b) = b {
        t = Tensor::from_fn(shape, |n, o, y, xx| t.get(n, o, y, xx) + b[o]);
    }
    t
}

/// The model written out layer by layer on top of the reference kernels.
/// Returns the output and every pre-activation.
pub fn forward_ref(arch: &ArchSpec, p: &ModelParams<f64>, image: &Tensor<f64>) -> (Tensor<f64>, Vec<Tensor<f64>>) {
    let mut outs: Vec<Tensor<f64>> = Vec::new();
    let mut pre = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        let x = if i == 0 { image } else { &outs[i - 1] };
        let lp = &p.layers[i];
        let b = lp.bias.as_ref().map(|b| b.data());
        let mut z = if layer.conv.transposed {
            tconv_ref(x, &lp.weight, b, &layer.conv)
        } else {
            conv_ref(x, &lp.weight, b, &layer.conv)
        };
        for &src in &layer.skip_from {
            let s = &outs[src];
            z = Tensor::from_fn(z.shape(), |n, c, y, xx| z.get(n, c, y, xx) + s.get(n, c, y, xx));
        }
        let a = match layer.activation {
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Sigmoid => z.map(|v| 1.0 / (1.0 + (-v).exp())),
        };
        pre.push(z);
        outs.push(a);
    }
    (outs.pop().unwrap(), pre)
}

/// Mean binary cross-entropy, no clamping.
pub fn bce_ref(p: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let s: f64 = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum();
    s / p.numel() as f64
}

pub fn random_binary(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Raster {
    let p: f64 = rng.random_range(0.2..0.8);
    let data = (0..h * w).map(|_| if rng.random_bool(p) { 255 } else { 0 }).collect();
    Raster::from_vec(1, h, w, data).unwrap()
}

pub fn at(img: &Raster, y: usize, x: usize) -> bool {
    img.data[y * img.width + x] != 0
}

pub fn brute_median(img: &Raster, k: usize) -> Raster {
    let r = (k / 2) as isize;
    let (h, w) = (img.height as isize, img.width as isize);
    let mut out = Raster::new(1, img.height, img.width);
    for y in 0..h {
        for x in 0..w {
            let mut window = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    window.push(img.data[yy * img.width + xx]);
                }
            }
            window.sort_unstable();
            out.data[(y * w + x) as usize] = window[window.len() / 2];
        }
    }
    out
}

pub fn brute_morph(img: &Raster, size: usize, iterations: usize, is_min: bool) -> Raster {
    let r = (size / 2) as isize;
    let (h, w) = (img.height as isize, img.width as isize);
    let mut cur = img.clone();
    for _ in 0..iterations {
        let mut next = Raster::new(1, img.height, img.width);
        for y in 0..h {
            for x in 0..w {
                let mut vals = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && yy < h && xx >= 0 && xx < w {
                            vals.push(at(&cur, yy as usize, xx as usize));
                        }
                    }
                }
                let v = if is_min { vals.iter().all(|&v| v) } else { vals.iter().any(|&v| v) };
                next.data[(y * w + x) as usize] = if v { 255 } else { 0 };
            }
        }
        cur = next;
    }
    cur
}

/// Flood fill by repeated relaxation: a background pixel is outside when it
/// is on the border or 4-adjacent to an outside pixel.
pub fn brute_fill(img: &Raster) -> Raster {
    let (h, w) = (img.height, img.width);
    let mut outside = vec![false; h * w];
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if outside[i] || at(img, y, x) {
                    continue;
                }
                let border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
                let near = (y > 0 && outside[i - w])
                    || (y + 1 < h && outside[i + w])
                    || (x > 0 && outside[i - 1])
                    || (x + 1 < w && outside[i + 1]);
                if border || near {
                    outside[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Raster::from_vec(1, h, w, outside.iter().map(|&o| if o { 0 } else { 255 }).collect()).unwrap()
}

pub fn complement(img: &Raster) -> Raster {
    Raster {
        data: img.data.iter().map(|&v| if v == 0 { 255 } else { 0 }).collect(),
        ..img.clone()
    }
}

/// Median, erosion, dilation and hole filling against the brute-force
/// versions on `n` random 64x64 binary images.
pub fn morph_oracle_sweep(seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let img = random_binary(&mut rng, 64, 64);
        let k = [3, 5, 7][case % 3];
        let size = [1, 3, 5][case % 3];
        let iters = 1 + case % 3;
        assert_eq!(median_blur(&img, k).unwrap(), brute_median(&img, k), "median case {case}");
        assert_eq!(erode(&img, size, iters).unwrap(), brute_morph(&img, size, iters, true), "erode case {case}");
        assert_eq!(dilate(&img, size, iters).unwrap(), brute_morph(&img, size, iters, false), "dilate case {case}");
        assert_eq!(fill_holes(&img).unwrap(), brute_fill(&img), "fill case {case}");
    }
}


pub fn random<T: Element>(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<T> {
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// A random valid conv spec and input shape.
pub fn random_case(rng: &mut ChaCha8Rng, transposed: bool) -> (ConvSpec, Shape) {
    let s = rng.random_range(1..=3);
    let k = rng.random_range(s..=5);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let mut spec = if transposed { ConvSpec::tconv(k, s, cin, cout) } else { ConvSpec::conv(k, s, cin, cout) };
    if rng.random_bool(0.3) {
        spec = spec.without_bias();
    }
    let batch = rng.random_range(1..=2);
    let (h, w) = if transposed {
        (rng.random_range(1..=6), rng.random_range(1..=6))
    } else {
        (k + s * rng.random_range(0..=4), k + s * rng.random_range(0..=4))
    };
    (spec, Shape::new(batch, cin, h, w).unwrap())
}

pub fn params(rng: &mut ChaCha8Rng, spec: &ConvSpec) -> (Tensor<f64>, Option<Vec<f64>>) {
    let w = random(rng, spec.weight_shape());
    let b = spec.has_bias.then(|| (0..spec.out_channels).map(|_| rng.random_range(-1.0..1.0)).collect());
    (w, b)
}

pub fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Forward convolution against [`conv_ref`] on `n` random specs: exact in
/// f64 (same summation order), within 1e-6 in f32.
pub fn conv_oracle_sweep(seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let (spec, xs) = random_case(&mut rng, false);
        // f32-representable values, so both precisions see the same inputs
        let x = random::<f64>(&mut rng, xs).cast::<f32>().cast::<f64>();
        let (w, b) = params(&mut rng, &spec);
        let w = w.cast::<f32>().cast::<f64>();
        let b: Option<Vec<f64>> = b.map(|b| b.iter().map(|&v| v as f32 as f64).collect());
        let want = conv_ref(&x, &w, b.as_deref(), &spec);
        assert_eq!(conv2d_forward(&x, &w, b.as_deref(), &spec).unwrap(), want, "{spec:?} {xs}");

        let b32: Option<Vec<f32>> = b.as_ref().map(|b| b.iter().map(|&v| v as f32).collect());
        let got = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), b32.as_deref(), &spec).unwrap();
        for (g, e) in got.data().iter().zip(want.data()) {
            assert!((*g as f64 - e).abs() <= 1e-6 * e.abs().max(1.0), "{g} vs {e}");
        }
    }
}

/// Transposed convolution against the scatter oracle [`tconv_ref`].
pub fn tconv_oracle_sweep(seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let (spec, xs) = random_case(&mut rng, true);
        let x = random::<f64>(&mut rng, xs);
        let (w, b) = params(&mut rng, &spec);
        let got = tconv2d_forward(&x, &w, b.as_deref(), &spec).unwrap();
        let want = tconv_ref(&x, &w, b.as_deref(), &spec);
        assert!(max_rel(&got, &want) <= 1e-12, "{spec:?} {xs}");
        let got32 = tconv2d_forward(
            &x.cast::<f32>(),
            &w.cast::<f32>(),
            b.as_ref().map(|b| b.iter().map(|&v| v as f32).collect::<Vec<_>>()).as_deref(),
            &spec,
        )
        .unwrap();
        for (g, e) in got32.data().iter().zip(want.data()) {
            assert!((*g as f64 - e).abs() <= 1e-6 * e.abs().max(1.0) * 4.0);
        }
    }
}


pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding are judged on absolute error instead.
pub const FLOOR: f64 = 1e-7;

/// Layer outputs from `from` onward, reusing `cache` for earlier layers.
/// Returns the loss and the sign pattern of every ReLU pre-activation
/// computed. With `frozen`, each ReLU multiplies by that sign pattern
/// instead of looking at its own input.
pub fn run_from(
    arch: &ArchSpec,
    p: &ModelParams<f64>,
    image: &Tensor<f64>,
    target: &Tensor<f64>,
    from: usize,
    cache: &mut Vec<Tensor<f64>>,
    frozen: Option<&[bool]>,
) -> (f64, Vec<bool>) {
    cache.truncate(from);
    let mut signs = Vec::new();
    for i in from..arch.layers.len() {
        let layer = &arch.layers[i];
        let x = if i == 0 { image } else { &cache[i - 1] };
        let lp = &p.layers[i];
        let b = lp.bias.as_ref().map(|b| b.data());
        let mut z = if layer.conv.transposed {
            ops::tconv2d_forward(x, &lp.weight, b, &layer.conv).unwrap()
        } else {
            ops::conv2d_forward(x, &lp.weight, b, &layer.conv).unwrap()
        };
        for &src in &layer.skip_from {
            z.accumulate(&cache[src]).unwrap();
        }
        let a = match layer.activation {
            Activation::Relu => {
                let at = signs.len();
                signs.extend(z.data().iter().map(|&v| v > 0.0));
                match frozen {
                    Some(mask) => {
                        let mut z = z;
                        for (v, &on) in z.data_mut().iter_mut().zip(&mask[at..]) {
                            if !on {
                                *v = 0.0;
                            }
                        }
                        z
                    }
                    None => ops::relu_forward(&z),
                }
            }
            Activation::Sigmoid => ops::sigmoid_forward(&z),
        };
        cache.push(a);
    }
    (bce_compensated(cache.last().unwrap(), target), signs)
}

/// Mean BCE with Neumaier summation: the plain sum's rounding noise, divided
/// by 2h, would otherwise dominate the smallest gradients.
pub fn bce_compensated(p: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (&p, &t) in p.data().iter().zip(t.data()) {
        let term = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        let next = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - next) + term } else { (term - next) + sum };
        sum = next;
    }
    (sum + comp) / p.numel() as f64
}

pub struct GradReport {
    pub plain: usize,
    pub frozen: usize,
    pub worst: f64,
}

/// Backprop gradient of the pinned model at 64x256 in f64 against central
/// differences, for every parameter. Panics on the first mismatch.
pub fn gradcheck(seed: u64) -> GradReport {
    let arch = ArchSpec::pinned();
    let mut p = init_params::<f64>(&arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in &mut p.layers {
        if let Some(b) = &mut l.bias {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let (img, target) = synth_sample(seed, 64, 256, &SynthParams::default(), &LabelRecipe::default(), 16).unwrap();
    let (img, target) = (img.cast::<f64>(), target.cast::<f64>());
    let out = loss_and_grads(&arch, p.clone(), img.clone(), target.clone()).unwrap();

    let mut cache = Vec::new();
    let (base_loss, _) = run_from(&arch, &p, &img, &target, 0, &mut cache, None);
    assert!((base_loss - out.loss).abs() <= 1e-12 * base_loss);

    let mut report = GradReport { plain: 0, frozen: 0, worst: 0.0 };
    for layer in 0..arch.layers.len() {
        run_from(&arch, &p, &img, &target, 0, &mut cache, None);
        let (_, base_signs) = run_from(&arch, &p, &img, &target, layer, &mut cache.clone(), None);
        let analytic = &out.grads[layer];
        let blocks = [(false, analytic.weight.data()), (true, analytic.bias.as_ref().map_or(&[][..], |b| b.data()))];
        for (is_bias, grad) in blocks {
            for (k, &a) in grad.iter().enumerate() {
                let eval = |delta: f64, frozen: Option<&[bool]>| {
                    let mut q = p.clone();
                    let t = if is_bias { q.layers[layer].bias.as_mut().unwrap() } else { &mut q.layers[layer].weight };
                    t.data_mut()[k] += delta;
                    run_from(&arch, &q, &img, &target, layer, &mut cache.clone(), frozen)
                };
                let (mut up, s_up) = eval(H, None);
                let (mut down, s_down) = eval(-H, None);
                // A step that moves some ReLU input across zero measures a mix
                // of two slopes. Repeat it on the current linear piece, with
                // the activation pattern held at its base value.
                if s_up != base_signs || s_down != base_signs {
                    up = eval(H, Some(&base_signs)).0;
                    down = eval(-H, Some(&base_signs)).0;
                    report.frozen += 1;
                } else {
                    report.plain += 1;
                }
                let n = (up - down) / (2.0 * H);
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
                assert!(rel < TOLERANCE, "seed {seed} layer {layer} bias {is_bias} #{k}: analytic {a:e} numeric {n:e}");
                report.worst = report.worst.max(rel);
            }
        }
    }
    report
}

