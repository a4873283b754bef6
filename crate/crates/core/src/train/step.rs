use crate::autodiff::{Tape, TraceEvent};
use crate::error::Result;
use crate::model::{forward, forward_on_tape, ArchSpec, LayerParams, ModelParams};
use crate::ops::bce_forward;
use crate::tensor::{Element, Tensor};

pub struct StepOutput<T: Element> {
    pub loss: f64,
    /// The parameters, handed back by the tape.
    pub params: ModelParams<T>,
    pub grads: Vec<LayerParams<T>>,
    pub trace: Vec<TraceEvent>,
}

/// Forward, BCE and backward for one image. The parameters move onto the
/// tape for the step and come back in the output.
pub fn loss_and_grads<T: Element>(
    arch: &ArchSpec,
    params: ModelParams<T>,
    image: Tensor<T>,
    target: Tensor<T>,
) -> Result<StepOutput<T>> {
    let seed = params.seed;
    let mut tape = Tape::new();
    let f = forward_on_tape(&mut tape, arch, params, image)?;
    let t = tape.input(target);
    let loss_node = tape.bce(f.output, t)?;
    let loss = tape.value(loss_node).expect("loss just computed").data()[0].to_f64();
    let mut out = tape.backward(loss_node)?;
    let layers = f.gather(&mut out.params)?;
    let grads = f.gather(&mut out.grads)?;
    Ok(StepOutput {
        loss,
        params: ModelParams { layers, seed },
        grads,
        trace: out.trace,
    })
}

/// BCE of the model on one sample, without building a tape.
pub fn sample_loss<T: Element>(arch: &ArchSpec, params: &ModelParams<T>, image: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    bce_forward(&forward(arch, params, image)?, target)
}
