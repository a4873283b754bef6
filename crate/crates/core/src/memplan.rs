//! Peak-memory prediction for one training step.
//!
//! The planner replays the training step symbolically: it builds the same
//! node sequence the tape records (image, per-layer parameters, convolution,
//! skip additions, activation, then target and loss) using shapes only, and
//! runs the tape's release schedule over it. Every tensor the tape would
//! hold becomes a row with a birth and death step, so the timeline matches
//! the tape's own trace event for event. Adam's two moment buffers live for
//! the whole step on top of that, plus a per-worker kernel workspace.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::autodiff::Op;
use crate::error::{Error, Result};
use crate::model::{Activation, ArchSpec};
use crate::ops::ConvSpec;
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Forward values, including the image and target.
    Activation,
    Gradient,
    Parameter,
    Moment,
    Workspace,
}

impl RowKind {
    pub fn name(&self) -> &'static str {
        match self {
            RowKind::Activation => "activation",
            RowKind::Gradient => "gradient",
            RowKind::Parameter => "parameter",
            RowKind::Moment => "moment",
            RowKind::Workspace => "workspace",
        }
    }
}

/// One tensor in the timeline. `death` is the first step at which it is no
/// longer held; `None` means it outlives the step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TensorRow {
    pub name: String,
    pub kind: RowKind,
    pub dims: [u64; 4],
    pub bytes: u64,
    pub birth: usize,
    pub death: Option<usize>,
}

impl TensorRow {
    pub fn live_at(&self, step: usize) -> bool {
        self.birth <= step && self.death.is_none_or(|d| step < d)
    }
}

/// Tape bookkeeping after one event, in the same terms as
/// [`crate::autodiff::TraceEvent`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TimelineStep {
    pub label: String,
    pub live_bytes: u64,
    pub live_tensors: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    pub activations: u64,
    pub gradients: u64,
    pub parameters: u64,
    pub moments: u64,
    pub workspace: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.activations + self.gradients + self.parameters + self.moments + self.workspace
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MemoryEstimate {
    pub height: usize,
    pub width: usize,
    pub element_width: usize,
    pub workers: usize,
    pub rows: Vec<TensorRow>,
    /// What the tape itself holds after each event.
    pub tape_timeline: Vec<TimelineStep>,
    /// Timeline step at which the total is largest.
    pub peak_step: usize,
    pub peak_bytes: u64,
    /// What is live at the peak step, by kind.
    pub breakdown: Breakdown,
}

impl MemoryEstimate {
    /// Total bytes of all rows live at `step`.
    pub fn live_at(&self, step: usize) -> u64 {
        self.rows.iter().filter(|r| r.live_at(step)).map(|r| r.bytes).sum()
    }

    /// Parameters, their gradients and both Adam moments.
    pub fn parameter_state_bytes(&self) -> u64 {
        let params: u64 = self.rows.iter().filter(|r| r.kind == RowKind::Parameter).map(|r| r.bytes).sum();
        4 * params
    }

    /// Rows of the named tensor kind.
    pub fn rows_of(&self, kind: RowKind) -> impl Iterator<Item = &TensorRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// One line per tensor: `name,kind,dims,bytes,birth,death`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,kind,shape,bytes,birth,death\n");
        for r in &self.rows {
            let death = r.death.map_or_else(|| "end".to_string(), |d| d.to_string());
            let [b, c, h, w] = r.dims;
            let _ = writeln!(
                out,
                "{},{},{b}x{c}x{h}x{w},{},{},{death}",
                r.name,
                r.kind.name(),
                r.bytes,
                r.birth
            );
        }
        out
    }
}

/// Human-readable size with binary prefixes.
pub fn format_bytes(bytes: u64) -> String {
    const UNITS: [&str; 5] = ["B", "KiB", "MiB", "GiB", "TiB"];
    let mut v = bytes as f64;
    let mut unit = 0;
    while v >= 1024.0 && unit + 1 < UNITS.len() {
        v /= 1024.0;
        unit += 1;
    }
    if unit == 0 {
        format!("{bytes} B")
    } else {
        format!("{v:.2} {}", UNITS[unit])
    }
}

impl fmt::Display for MemoryEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "training step at {}x{}, {}-byte elements, {} worker(s)",
            self.height, self.width, self.element_width, self.workers
        )?;
        writeln!(f, "peak: {} bytes ({})", self.peak_bytes, format_bytes(self.peak_bytes))?;
        writeln!(f, "peak at step {}: {}", self.peak_step, self.tape_timeline[self.peak_step].label)?;
        let b = &self.breakdown;
        for (name, v) in [
            ("activations", b.activations),
            ("gradients", b.gradients),
            ("parameters", b.parameters),
            ("moments", b.moments),
            ("workspace", b.workspace),
        ] {
            writeln!(f, "  {name:<12} {v:>16} ({})", format_bytes(v))?;
        }
        writeln!(f, "largest tensors live at peak:")?;
        let mut live: Vec<&TensorRow> = self.rows.iter().filter(|r| r.live_at(self.peak_step)).collect();
        live.sort_by(|a, b| b.bytes.cmp(&a.bytes).then_with(|| a.name.cmp(&b.name)));
        for r in live.iter().take(8) {
            let [n, c, h, w] = r.dims;
            writeln!(f, "  {:<24} {:<10} {n}x{c}x{h}x{w} {}", r.name, r.kind.name(), format_bytes(r.bytes))?;
        }
        Ok(())
    }
}

fn dims_of(s: Shape) -> [u64; 4] {
    s.dims().map(|d| d as u64)
}

fn bytes_of(s: Shape, width: usize) -> u64 {
    dims_of(s).iter().product::<u64>() * width as u64
}

struct SymNode {
    op: Op,
    name: String,
    inputs: Vec<usize>,
    shape: Shape,
    requires_grad: bool,
}

/// Replays the tape over shapes, producing rows and the timeline.
struct Replay {
    width: usize,
    rows: Vec<TensorRow>,
    timeline: Vec<TimelineStep>,
    live_bytes: u64,
    live_tensors: usize,
}

impl Replay {
    fn hold(&mut self, name: String, kind: RowKind, shape: Shape) -> usize {
        let bytes = bytes_of(shape, self.width);
        self.live_bytes += bytes;
        self.live_tensors += 1;
        self.rows.push(TensorRow {
            name,
            kind,
            dims: dims_of(shape),
            bytes,
            birth: self.timeline.len(),
            death: None,
        });
        self.rows.len() - 1
    }

    /// Released tensors die at the next event.
    fn release(&mut self, row: usize) {
        self.live_bytes -= self.rows[row].bytes;
        self.live_tensors -= 1;
        self.rows[row].death = Some(self.timeline.len());
    }

    fn mark(&mut self, label: String) {
        self.timeline.push(TimelineStep {
            label,
            live_bytes: self.live_bytes,
            live_tensors: self.live_tensors,
        });
    }
}

fn training_graph(arch: &ArchSpec, height: usize, width: usize) -> Result<Vec<SymNode>> {
    let input = Shape::new(1, arch.input_channels, height, width)?;
    let shapes = arch.layer_shapes(input)?;
    let out = *shapes.last().expect("validated non-empty");
    if out.height != height || out.width != width {
        return Err(Error::InvalidArch(format!(
            "{height}x{width} comes back as {}x{}",
            out.height, out.width
        )));
    }
    let mut nodes = vec![SymNode {
        op: Op::Input,
        name: "input".into(),
        inputs: vec![],
        shape: input,
        requires_grad: false,
    }];
    let push = |nodes: &mut Vec<SymNode>, op: Op, name: String, inputs: Vec<usize>, shape: Shape| {
        let requires_grad = op == Op::Param || inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(SymNode {
            op,
            name,
            inputs,
            shape,
            requires_grad,
        });
        nodes.len() - 1
    };
    let mut x = 0;
    let mut outs = Vec::with_capacity(arch.layers.len());
    for (i, (layer, &shape)) in arch.layers.iter().zip(&shapes).enumerate() {
        let spec: ConvSpec = layer.conv;
        let w = push(&mut nodes, Op::Param, format!("layer{i}.weight"), vec![], spec.weight_shape());
        let mut conv_inputs = vec![x, w];
        if spec.has_bias {
            conv_inputs.push(push(&mut nodes, Op::Param, format!("layer{i}.bias"), vec![], spec.bias_shape()));
        }
        let op = if spec.transposed { Op::TConv(spec) } else { Op::Conv(spec) };
        let mut z = push(&mut nodes, op, format!("layer{i}.{}", op.name()), conv_inputs, shape);
        for &src in &layer.skip_from {
            z = push(&mut nodes, Op::Add, format!("layer{i}.skip{src}"), vec![z, outs[src]], shape);
        }
        let (act, name) = match layer.activation {
            Activation::Relu => (Op::Relu, "relu"),
            Activation::Sigmoid => (Op::Sigmoid, "sigmoid"),
        };
        x = push(&mut nodes, act, format!("layer{i}.{name}"), vec![z], shape);
        outs.push(x);
    }
    let target = push(&mut nodes, Op::Input, "target".into(), vec![], Shape::new(1, 1, height, width)?);
    push(&mut nodes, Op::Bce, "loss".into(), vec![x, target], Shape::SCALAR);
    Ok(nodes)
}

/// Shapes of the gradients a node's backward step allocates, in the order
/// the tape allocates them.
fn fresh_grads(nodes: &[SymNode], i: usize) -> Vec<(usize, Shape)> {
    let node = &nodes[i];
    let needs = |pos: usize| nodes[node.inputs[pos]].requires_grad;
    let mut out = Vec::new();
    match node.op {
        Op::Input | Op::Param => {}
        Op::Conv(spec) | Op::TConv(spec) => {
            if needs(0) {
                out.push((node.inputs[0], nodes[node.inputs[0]].shape));
            }
            if needs(1) {
                out.push((node.inputs[1], spec.weight_shape()));
            }
            if node.inputs.len() == 3 && needs(2) {
                out.push((node.inputs[2], spec.bias_shape()));
            }
        }
        Op::Relu | Op::Sigmoid | Op::Bce => {
            if needs(0) {
                out.push((node.inputs[0], nodes[node.inputs[0]].shape));
            }
        }
        Op::Add => {
            for pos in 0..2 {
                if needs(pos) {
                    out.push((node.inputs[pos], node.shape));
                }
            }
        }
    }
    out
}

/// Largest per-worker temporary of any kernel: one `f64` accumulator row of
/// the widest output a convolution kernel writes, forward or backward.
fn workspace_row_bytes(nodes: &[SymNode]) -> u64 {
    nodes
        .iter()
        .filter(|n| matches!(n.op, Op::Conv(_) | Op::TConv(_)))
        .map(|n| n.shape.width.max(nodes[n.inputs[0]].shape.width) as u64 * 8)
        .max()
        .unwrap_or(0)
}

/// Predicts the peak memory of one training step on a `height x width`
/// single image with `element_width`-byte elements, with `workers` kernel
/// threads.
pub fn estimate_training_peak(
    arch: &ArchSpec,
    height: usize,
    width: usize,
    element_width: usize,
    workers: usize,
) -> Result<MemoryEstimate> {
    let nodes = training_graph(arch, height, width)?;
    let n = nodes.len();
    let loss = n - 1;
    let mut rp = Replay {
        width: element_width,
        rows: Vec::new(),
        timeline: Vec::new(),
        live_bytes: 0,
        live_tensors: 0,
    };

    let mut value_row = Vec::with_capacity(n);
    for (id, node) in nodes.iter().enumerate() {
        let kind = if node.op == Op::Param { RowKind::Parameter } else { RowKind::Activation };
        value_row.push(Some(rp.hold(node.name.clone(), kind, node.shape)));
        rp.mark(format!("fwd {id} {}", node.op));
    }

    let mut active = vec![false; n];
    active[loss] = nodes[loss].requires_grad;
    for i in (0..n).rev() {
        if active[i] {
            for &j in &nodes[i].inputs {
                active[j] |= nodes[j].requires_grad;
            }
        }
    }
    let mut last_use: Vec<Option<usize>> = vec![None; n];
    for (u, node) in nodes.iter().enumerate() {
        if !active[u] || node.op == Op::Param {
            continue;
        }
        let needs: Vec<bool> = node.inputs.iter().map(|&j| nodes[j].requires_grad).collect();
        let mut readers: Vec<usize> = node.op.saved_inputs(&needs).into_iter().map(|p| node.inputs[p]).collect();
        if node.op.saves_output(&needs) {
            readers.push(u);
        }
        for j in readers {
            if nodes[j].op != Op::Param {
                last_use[j] = Some(last_use[j].map_or(u, |v: usize| v.min(u)));
            }
        }
    }
    for id in 0..n {
        if last_use[id].is_none() && nodes[id].op != Op::Param {
            if let Some(r) = value_row[id].take() {
                rp.release(r);
            }
        }
    }
    let mut grad_row: BTreeMap<usize, usize> = BTreeMap::new();
    if active[loss] {
        let r = rp.hold("grad loss".into(), RowKind::Gradient, Shape::SCALAR);
        grad_row.insert(loss, r);
    }
    rp.mark("bwd begin".into());

    for i in (0..n).rev() {
        if !active[i] {
            continue;
        }
        let g = grad_row.remove(&i).expect("active node receives a gradient");
        let fresh: Vec<(usize, usize)> = fresh_grads(&nodes, i)
            .into_iter()
            .map(|(j, shape)| (j, rp.hold(format!("grad {}", nodes[j].name), RowKind::Gradient, shape)))
            .collect();
        rp.mark(format!("bwd {i} {} grads", nodes[i].op));
        for (j, r) in fresh {
            if grad_row.contains_key(&j) {
                rp.release(r);
            } else {
                grad_row.insert(j, r);
            }
        }
        if nodes[i].op != Op::Param {
            rp.release(g);
        }
        for id in 0..n {
            if last_use[id] == Some(i) {
                if let Some(r) = value_row[id].take() {
                    rp.release(r);
                }
            }
        }
        rp.mark(format!("bwd {i} {} settle", nodes[i].op));
    }

    let Replay {
        mut rows,
        timeline,
        ..
    } = rp;
    let end = timeline.len();
    let (peak_step, _) = timeline
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.live_bytes.cmp(&b.1.live_bytes).then(b.0.cmp(&a.0)))
        .expect("non-empty timeline");

    for (id, node) in nodes.iter().enumerate() {
        if node.op == Op::Param {
            for m in ["m", "v"] {
                rows.push(TensorRow {
                    name: format!("adam.{m} {}", node.name),
                    kind: RowKind::Moment,
                    dims: dims_of(node.shape),
                    bytes: bytes_of(node.shape, element_width),
                    birth: 0,
                    death: None,
                });
            }
            debug_assert!(value_row[id].is_some());
        }
    }
    let workers = workers.max(1);
    rows.push(TensorRow {
        name: "kernel rows".into(),
        kind: RowKind::Workspace,
        dims: [workers as u64, 1, 1, workspace_row_bytes(&nodes) / 8],
        bytes: workers as u64 * workspace_row_bytes(&nodes),
        birth: peak_step,
        death: Some((peak_step + 1).min(end)),
    });

    let mut breakdown = Breakdown::default();
    for r in rows.iter().filter(|r| r.live_at(peak_step)) {
        let slot = match r.kind {
            RowKind::Activation => &mut breakdown.activations,
            RowKind::Gradient => &mut breakdown.gradients,
            RowKind::Parameter => &mut breakdown.parameters,
            RowKind::Moment => &mut breakdown.moments,
            RowKind::Workspace => &mut breakdown.workspace,
        };
        *slot += r.bytes;
    }
    Ok(MemoryEstimate {
        height,
        width,
        element_width,
        workers,
        rows,
        tape_timeline: timeline,
        peak_step,
        peak_bytes: breakdown.total(),
        breakdown,
    })
}

/// Valid image sizes `(height, width)` with the given aspect ratio, as a
/// sequence indexed by `k`. Valid sides of a stride-`m` network repeat with
/// period `m`, so the valid scale factors `q` (height `= ah * q`) do too.
struct Lattice {
    ah: usize,
    aw: usize,
    base: usize,
    period: usize,
    residues: Vec<usize>,
}

impl Lattice {
    fn new(arch: &ArchSpec, aspect: (usize, usize)) -> Result<Self> {
        let (ah, aw) = aspect;
        if ah == 0 || aw == 0 {
            return Err(Error::config("aspect", "both sides must be positive"));
        }
        let g = gcd(ah, aw);
        let (ah, aw) = (ah / g, aw / g);
        let period = arch.downsampling().max(arch.upsampling()).max(1);
        let ok = |q: usize| arch.round_trips(ah * q, aw * q);
        // Find the first valid q, then the residues of one full period.
        let limit = 64 * period + 1024;
        let first = (1..limit)
            .find(|&q| ok(q))
            .ok_or_else(|| Error::InvalidArch(format!("no valid size with aspect {ah}:{aw}")))?;
        let residues: Vec<usize> = (0..period).filter(|&r| ok(first + r)).collect();
        for r in 0..period {
            if ok(first + period + r) != residues.contains(&r) {
                return Err(Error::InvalidArch(format!(
                    "valid sizes are not periodic with period {period}"
                )));
            }
        }
        Ok(Lattice {
            ah,
            aw,
            base: first,
            period,
            residues,
        })
    }

    fn dims(&self, k: usize) -> (usize, usize) {
        let per = self.residues.len();
        let q = self.base + (k / per) * self.period + self.residues[k % per];
        (self.ah * q, self.aw * q)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Largest valid `(height, width)` with aspect `height:width == aspect`
/// whose estimated peak fits in `budget` bytes.
pub fn max_trainable_dims(
    arch: &ArchSpec,
    budget: u64,
    aspect: (usize, usize),
    element_width: usize,
    workers: usize,
) -> Result<(usize, usize)> {
    let lattice = Lattice::new(arch, aspect)?;
    let peak = |k: usize| -> Result<u64> {
        let (h, w) = lattice.dims(k);
        Ok(estimate_training_peak(arch, h, w, element_width, workers)?.peak_bytes)
    };
    let smallest = peak(0)?;
    if smallest > budget {
        return Err(Error::BudgetTooSmall {
            budget,
            minimum: smallest,
        });
    }
    // Gallop to a size over budget, then bisect. The estimate grows with
    // pixel count, so it is monotone along the lattice.
    let mut lo = 0usize;
    let mut hi = 1usize;
    while peak(hi)? <= budget {
        lo = hi;
        hi = hi.checked_mul(2).ok_or_else(|| Error::config("budget", "too large to search"))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if peak(mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lattice.dims(lo))
}
