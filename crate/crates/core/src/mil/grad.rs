//! Bag losses and their analytic gradients with respect to the flat
//! parameter buffer of a [`MilModel`].

use alloc::vec;
use alloc::vec::Vec;

use super::{clam_selection, softmax, Method, MilModel};
use crate::bag::{Bag, TumorPercentage};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// `bag_mse + lambda * instance` for CLAM, `bag_mse` otherwise.
    pub total: f64,
    pub bag_mse: f64,
    /// CLAM pseudo-label loss; zero for other methods.
    pub instance: f64,
}

/// Pseudo-label class size actually used for a bag of `n`: the configured
/// `k` capped at `n / 2`. Zero disables the instance loss.
pub fn effective_k(model: &MilModel, n: usize) -> usize {
    model.clam_k.min(n / 2)
}

struct Activations {
    logits: Vec<f64>,
    probs: Vec<f64>,
    /// `n * hidden` tanh activations, empty without attention.
    hidden: Vec<f64>,
    attention: Option<Vec<f64>>,
    estimate: f64,
}

fn activations(model: &MilModel, bag: &Bag) -> Result<Activations> {
    if bag.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: bag.dim(),
        });
    }
    let n = bag.len();
    let h = model.hidden();
    let logits: Vec<f64> = bag
        .instances()
        .iter()
        .map(|i| model.logit(&i.features))
        .collect();
    let probs: Vec<f64> = logits.iter().map(|&z| math::sigmoid(z)).collect();
    let (hidden, attention, estimate) = match model.method {
        Method::MeanPool | Method::Weseg => (Vec::new(), None, math::mean(&probs)),
        Method::Abmil | Method::Clam => {
            let mut hidden = vec![0.0; n * h];
            let scores: Vec<f64> = bag
                .instances()
                .iter()
                .zip(hidden.chunks_mut(h.max(1)))
                .map(|(inst, t)| model.attention_score(&inst.features, t))
                .collect();
            let a = softmax(&scores);
            let est = a.iter().zip(&probs).map(|(a, p)| a * p).sum();
            (hidden, Some(a), est)
        }
    };
    Ok(Activations {
        logits,
        probs,
        hidden,
        attention,
        estimate,
    })
}

fn instance_part(model: &MilModel, act: &Activations) -> Result<(f64, Vec<(usize, f64)>)> {
    if model.method != Method::Clam {
        return Ok((0.0, Vec::new()));
    }
    let a = act.attention.as_ref().expect("clam has attention");
    let k = effective_k(model, a.len());
    if k == 0 {
        return Ok((0.0, Vec::new()));
    }
    let (top, bottom) = clam_selection(a, k)?;
    let labelled: Vec<(usize, f64)> = top
        .iter()
        .map(|&i| (i, 1.0))
        .chain(bottom.iter().map(|&i| (i, 0.0)))
        .collect();
    let loss = labelled
        .iter()
        .map(|&(i, y)| math::bce_with_logit(act.logits[i], y))
        .sum::<f64>()
        / (2 * k) as f64;
    Ok((loss, labelled))
}

/// Training loss of one bag against a model-space target.
pub fn bag_loss(model: &MilModel, bag: &Bag, target: TumorPercentage) -> Result<LossParts> {
    let act = activations(model, bag)?;
    let diff = act.estimate - target.value();
    let (instance, _) = instance_part(model, &act)?;
    let bag_mse = diff * diff;
    let total = if model.method == Method::Clam {
        bag_mse + model.clam_lambda * instance
    } else {
        bag_mse
    };
    Ok(LossParts {
        total,
        bag_mse,
        instance,
    })
}

/// Like [`bag_loss`], and writes `d total / d params` into `grad`
/// (overwriting it).
pub fn bag_loss_grad(
    model: &MilModel,
    bag: &Bag,
    target: TumorPercentage,
    grad: &mut [f64],
) -> Result<LossParts> {
    if model.method == Method::Weseg {
        return Err(Error::InvalidParameter(
            "weseg heads are trained on proxy labels, not the bag loss".into(),
        ));
    }
    if grad.len() != model.params().len() {
        return Err(Error::LengthMismatch {
            left: grad.len(),
            right: model.params().len(),
        });
    }
    let act = activations(model, bag)?;
    let n = bag.len();
    let (d, h) = (model.dim(), model.hidden());
    let diff = act.estimate - target.value();
    let g = 2.0 * diff;

    let mut dz = vec![0.0; n];
    let mut ds = vec![0.0; n];
    match &act.attention {
        None => {
            for i in 0..n {
                dz[i] = g / n as f64 * act.probs[i] * (1.0 - act.probs[i]);
            }
        }
        Some(a) => {
            for i in 0..n {
                let p = act.probs[i];
                dz[i] = g * a[i] * p * (1.0 - p);
                ds[i] = g * a[i] * (p - act.estimate);
            }
        }
    }
    let (instance, labelled) = instance_part(model, &act)?;
    if !labelled.is_empty() {
        let scale = model.clam_lambda / labelled.len() as f64;
        for &(i, y) in &labelled {
            dz[i] += scale * (act.probs[i] - y);
        }
    }

    grad.iter_mut().for_each(|v| *v = 0.0);
    let (gw, rest) = grad.split_at_mut(d);
    for (inst, &dzi) in bag.instances().iter().zip(&dz) {
        for (gj, xj) in gw.iter_mut().zip(&inst.features) {
            *gj += dzi * xj;
        }
        rest[0] += dzi;
    }
    if act.attention.is_some() {
        let (v, c, u) = model.att_offsets();
        let params = model.params();
        for (i, inst) in bag.instances().iter().enumerate() {
            if ds[i] == 0.0 {
                continue;
            }
            let t = &act.hidden[i * h..(i + 1) * h];
            for j in 0..h {
                grad[u + j] += ds[i] * t[j];
                let dpre = ds[i] * params[u + j] * (1.0 - t[j] * t[j]);
                grad[c + j] += dpre;
                let row = &mut grad[v + j * d..v + (j + 1) * d];
                for (gv, xk) in row.iter_mut().zip(&inst.features) {
                    *gv += dpre * xk;
                }
            }
        }
    }
    let bag_mse = diff * diff;
    let total = if model.method == Method::Clam {
        bag_mse + model.clam_lambda * instance
    } else {
        bag_mse
    };
    Ok(LossParts {
        total,
        bag_mse,
        instance,
    })
}
