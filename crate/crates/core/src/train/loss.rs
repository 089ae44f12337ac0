//! Mixed supervised loss, sharpening, entity counts and the paraphrase
//! consistency loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{classify, forward_lower, forward_upper, Bound, EncoderInput};
use crate::error::{Error, Result};

/// One sentence ready for the encoder: ids, soft targets (zero rows are
/// excluded from the loss) and a non-special position mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: EncoderInput,
    pub targets: Tensor,
    pub real_mask: Vec<f64>,
}

/// One-hot rows; ids outside `0..num_tags` (the ignore marker) give zero rows.
pub fn one_hot_targets(labels: &[usize], num_tags: usize) -> Tensor {
    let mut v = vec![0.0; labels.len() * num_tags];
    for (i, &l) in labels.iter().enumerate() {
        if l < num_tags {
            v[i * num_tags + l] = 1.0;
        }
    }
    Tensor::new(vec![labels.len(), num_tags], v).expect("finite")
}

/// `λ·y + (1-λ)·y'`, row by row.
pub fn mixed_labels(y: &Tensor, y_p: &Tensor, lambda: f64) -> Result<Tensor> {
    if y.shape() != y_p.shape() {
        return Err(Error::shape("mixed_labels", y.shape(), y_p.shape()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::domain("mixed_labels", format!("ratio {lambda} outside [0, 1]")));
    }
    let v = y
        .values()
        .iter()
        .zip(y_p.values())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Tensor::new(y.shape().to_vec(), v)
}

/// Mixed targets for an anchor/partner pair. A position excluded in the
/// anchor stays excluded; a position excluded only in the partner keeps
/// the anchor's row.
pub fn pair_targets(y: &Tensor, y_p: &Tensor, lambda: f64) -> Result<Tensor> {
    let (n, c) = y
        .dims2()
        .ok_or_else(|| Error::shape("pair_targets", y.shape(), y_p.shape()))?;
    if y.shape() != y_p.shape() {
        return Err(Error::shape("pair_targets", y.shape(), y_p.shape()));
    }
    let mut partner = y_p.clone();
    for i in 0..n {
        let a = y.row(i);
        if a.iter().all(|&v| v == 0.0) {
            partner.values_mut()[i * c..(i + 1) * c].fill(0.0);
        } else if y_p.row(i).iter().all(|&v| v == 0.0) {
            partner.values_mut()[i * c..(i + 1) * c].copy_from_slice(a);
        }
    }
    mixed_labels(y, &partner, lambda)
}

/// `Σ_i Σ_c ỹ log(ỹ/p)` with `p = softmax(logits)` and `0·log 0 = 0`.
pub fn kl_loss(tape: &mut Tape, logits: Var, target: &Tensor) -> Result<Var> {
    let shape = tape.shape(logits)?;
    if shape != target.shape() {
        return Err(Error::shape("kl_loss", shape, target.shape()));
    }
    let entropy: f64 = target
        .values()
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| t * t.ln())
        .sum();
    let log_p = tape.log_softmax_rows(logits)?;
    let t = tape.constant(target.clone());
    let cross = tape.mul(t, log_p)?;
    let cross = tape.sum(cross)?;
    let h = tape.constant(Tensor::scalar(entropy)?);
    tape.sub(h, cross)
}

fn batch_mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut total = *terms.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    tape.scale(total, 1.0 / terms.len() as f64)
}

fn inputs(batch: &[&Example]) -> Vec<EncoderInput> {
    batch.iter().map(|e| e.input.clone()).collect()
}

/// Plain per-token KL against the examples' own targets, averaged over the batch.
pub fn supervised_loss(tape: &mut Tape, bound: &Bound, batch: &[&Example]) -> Result<Var> {
    let layers = bound.dims().config.layers;
    let h = forward_lower(tape, bound, &inputs(batch), layers)?;
    let preds = classify(tape, bound, &h)?;
    let terms = preds
        .logits
        .iter()
        .zip(batch)
        .map(|(&z, e)| kl_loss(tape, z, &e.targets))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(tape, &terms)
}

/// Interpolates hidden states of anchors and partners at `layer`, finishes
/// the forward pass on the mixture and scores it against mixed targets.
pub fn lada_loss(
    tape: &mut Tape,
    bound: &Bound,
    anchors: &[&Example],
    partners: &[&Example],
    lambdas: &[f64],
    layer: usize,
) -> Result<Var> {
    if anchors.len() != partners.len() || anchors.len() != lambdas.len() {
        return Err(Error::Data(format!(
            "{} anchors, {} partners, {} ratios",
            anchors.len(),
            partners.len(),
            lambdas.len()
        )));
    }
    for (a, p) in anchors.iter().zip(partners) {
        if a.input.ids.len() != p.input.ids.len() {
            return Err(Error::Data(format!(
                "pair lengths differ: {} and {}",
                a.input.ids.len(),
                p.input.ids.len()
            )));
        }
    }
    let h = forward_lower(tape, bound, &inputs(anchors), layer)?;
    let h_p = forward_lower(tape, bound, &inputs(partners), layer)?;
    let mixed = h.interpolate(tape, &h_p, lambdas)?;
    let top = forward_upper(tape, bound, mixed, layer)?;
    let preds = classify(tape, bound, &top)?;
    let mut terms = Vec::with_capacity(anchors.len());
    for (((&z, a), p), &lambda) in preds.logits.iter().zip(anchors).zip(partners).zip(lambdas) {
        let target = pair_targets(&a.targets, &p.targets, lambda)?;
        terms.push(kl_loss(tape, z, &target)?);
    }
    batch_mean(tape, &terms)
}

/// Row-wise `p^(1/T) / ‖p^(1/T)‖₁`.
pub fn sharpen(tape: &mut Tape, probs: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain("sharpen", format!("temperature {temperature} must be positive")));
    }
    let p = tape.pow(probs, 1.0 / temperature)?;
    tape.l1_normalize_rows(p)
}

/// Which coordinates of the summed prediction are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountSpace {
    /// Every tag, including `O` and the special tag.
    AllTags,
    /// `B-t` and `I-t` columns only.
    #[default]
    EntityTags,
    /// `B-t` per entity type: expected number of mentions.
    EntityTypes,
}

/// `mask · probs`, restricted to `space`; a `1 × C'` row.
pub fn entity_count(tape: &mut Tape, probs: Var, mask: &[f64], space: CountSpace) -> Result<Var> {
    let shape = tape.shape(probs)?.to_vec();
    if shape.len() != 2 || shape[0] != mask.len() {
        return Err(Error::shape("entity_count", &shape, &[mask.len()]));
    }
    let c = shape[1];
    let m = tape.constant(Tensor::new(vec![1, mask.len()], mask.to_vec())?);
    let counts = tape.matmul(m, probs)?;
    match space {
        CountSpace::AllTags => Ok(counts),
        CountSpace::EntityTags | CountSpace::EntityTypes if c < 4 => {
            Err(Error::Config(format!("{c} tags leave no entity columns")))
        }
        CountSpace::EntityTags => tape.slice(counts, 1, 2, c - 2),
        CountSpace::EntityTypes => {
            let types = (c - 2) / 2;
            let mut proj = vec![0.0; c * types];
            for t in 0..types {
                proj[(2 + 2 * t) * types + t] = 1.0;
            }
            let p = tape.constant(Tensor::new(vec![c, types], proj)?);
            tape.matmul(counts, p)
        }
    }
}

/// Unlabeled sentence with its paraphrases.
#[derive(Debug, Clone, Copy)]
pub struct ParaphraseGroup<'a> {
    pub anchor: &'a Example,
    pub paraphrases: &'a [Example],
}

/// Mean over the batch of the mean over paraphrases of
/// `‖stopgrad(count(sharpen(p_anchor))) - count(p_para)‖²`.
/// `anchor_bound` and `para_bound` may be the same binding.
pub fn consistency_loss(
    tape: &mut Tape,
    anchor_bound: &Bound,
    para_bound: &Bound,
    groups: &[ParaphraseGroup<'_>],
    temperature: f64,
    space: CountSpace,
) -> Result<Var> {
    if let Some(g) = groups.iter().find(|g| g.paraphrases.is_empty()) {
        return Err(Error::Data(format!(
            "unlabeled sentence of length {} has no paraphrases",
            g.anchor.input.ids.len()
        )));
    }
    let layers = anchor_bound.dims().config.layers;
    let anchors: Vec<&Example> = groups.iter().map(|g| g.anchor).collect();
    let h = forward_lower(tape, anchor_bound, &inputs(&anchors), layers)?;
    let anchor_probs = classify(tape, anchor_bound, &h)?.probs;
    let paras: Vec<&Example> = groups.iter().flat_map(|g| g.paraphrases.iter()).collect();
    let h_p = forward_lower(tape, para_bound, &inputs(&paras), layers)?;
    let para_probs = classify(tape, para_bound, &h_p)?.probs;

    let mut terms = Vec::with_capacity(groups.len());
    let mut next = 0;
    for (g, &p) in groups.iter().zip(&anchor_probs) {
        let sharp = sharpen(tape, p, temperature)?;
        let target = entity_count(tape, sharp, &g.anchor.real_mask, space)?;
        let target = tape.stop_gradient(target)?;
        let mut dists = Vec::with_capacity(g.paraphrases.len());
        for para in g.paraphrases {
            let count = entity_count(tape, para_probs[next], &para.real_mask, space)?;
            dists.push(tape.squared_distance(target, count)?);
            next += 1;
        }
        terms.push(batch_mean(tape, &dists)?);
    }
    batch_mean(tape, &terms)
}
