//! Training entry points: masked-language-model pretraining, supervised
//! fine-tuning of a temporary classification head, and the
//! finite-difference gradient oracle that keeps both honest.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

use super::backprop::{cls_loss_and_grad, mlm_loss_and_grad, HeadParams};
use super::head::HeadSpec;
use super::tokenizer::{CLS, MASK, PAD, SEP};
use super::{EncoderModel, Params};

/// Sentences per MLM pretraining step (internal; the contract exposes only
/// step count, rate and learning rate).
const MLM_BATCH: usize = 8;
/// Sentences in the fixed held-out monitoring batch.
const MLM_HOLDOUT: usize = 8;

/// Fine-tuning settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FineTuneConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub head: HeadSpec,
    pub seed: u64,
}

impl FineTuneConfig {
    /// Conventional defaults around a given head: batch 8, lr 0.05,
    /// 5 epochs, seed 0.
    pub fn new(head: HeadSpec) -> FineTuneConfig {
        FineTuneConfig {
            batch_size: 8,
            learning_rate: 0.05,
            epochs: 5,
            head,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be ≥ 1".into()));
        }
        self.head.validate()
    }
}

/// Positions eligible for masking: anything but CLS/SEP/PAD/MASK.
fn eligible_positions(tokens: &[u32]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &id)| id != CLS && id != SEP && id != PAD && id != MASK)
        .map(|(i, _)| i)
        .collect()
}

/// Mask each eligible position with probability `rate` (at least one when
/// any position is eligible); returns the masked ids and (position,
/// original-id) targets.
fn mask_sentence(
    tokens: &[u32],
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<(usize, u32)>) {
    let eligible = eligible_positions(tokens);
    let mut masked = tokens.to_vec();
    let mut targets = Vec::new();
    for &pos in &eligible {
        if rng.gen_range(0.0..1.0) < rate {
            targets.push((pos, tokens[pos]));
            masked[pos] = MASK;
        }
    }
    if targets.is_empty() && !eligible.is_empty() {
        let pos = eligible[rng.gen_range(0..eligible.len())];
        targets.push((pos, tokens[pos]));
        masked[pos] = MASK;
    }
    (masked, targets)
}

/// Loss trace of a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainTrace {
    /// Mean masked-token loss of each training step's batch.
    pub step_losses: Vec<f64>,
    /// Mean loss on the fixed held-out batch, recorded every step.
    pub holdout_losses: Vec<f64>,
}

/// Masked-language-model pretraining with plain SGD. Deterministic under
/// `seed`; `steps = 0` returns the model unchanged.
pub fn pretrain_mlm(
    model: &EncoderModel,
    corpus: &Corpus,
    mask_rate: f64,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<EncoderModel> {
    pretrain_mlm_traced(model, corpus, mask_rate, steps, lr, seed).map(|(m, _)| m)
}

/// [`pretrain_mlm`] that also returns the loss trace.
pub fn pretrain_mlm_traced(
    model: &EncoderModel,
    corpus: &Corpus,
    mask_rate: f64,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(EncoderModel, PretrainTrace)> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mask_rate must lie in (0, 1), got {mask_rate}"
        )));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    if corpus.sentences().is_empty() {
        return Err(Error::EmptyCorpus("pretrain_mlm"));
    }

    let tokenized: Vec<Vec<u32>> = corpus
        .sentences()
        .iter()
        .map(|s| model.tokenize(&s.text))
        .collect();
    if tokenized.iter().all(|t| eligible_positions(t).is_empty()) {
        return Err(Error::InvalidParameter(
            "corpus has no maskable tokens".into(),
        ));
    }

    let mut trained = model.clone();
    let mut trace = PretrainTrace {
        step_losses: Vec::with_capacity(steps),
        holdout_losses: Vec::with_capacity(steps),
    };
    if steps == 0 {
        return Ok((trained, trace));
    }

    // Fixed held-out monitor: first sentences, fixed mask pattern.
    let mut holdout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mlm/holdout"));
    let holdout: Vec<(Vec<u32>, Vec<(usize, u32)>)> = tokenized
        .iter()
        .take(MLM_HOLDOUT.min(tokenized.len()))
        .map(|t| mask_sentence(t, mask_rate, &mut holdout_rng))
        .filter(|(_, targets)| !targets.is_empty())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mlm/steps"));
    for step in 0..steps {
        let mut grads = Params::zeros(&trained.config);
        let mut batch = Vec::with_capacity(MLM_BATCH);
        for _ in 0..MLM_BATCH {
            let idx = rng.gen_range(0..tokenized.len());
            let (masked, targets) = mask_sentence(&tokenized[idx], mask_rate, &mut rng);
            if !targets.is_empty() {
                batch.push((masked, targets));
            }
        }
        if batch.is_empty() {
            trace.step_losses.push(f64::NAN);
            continue;
        }
        let total: usize = batch.iter().map(|(_, t)| t.len()).sum();
        let scale = 1.0 / total as f64;
        let mut loss_sum = 0.0;
        for (masked, targets) in &batch {
            loss_sum += mlm_loss_and_grad(&trained, masked, targets, scale, Some(&mut grads))?;
        }
        let step_loss = loss_sum * scale;
        if !step_loss.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("masked-token loss became {step_loss}"),
            });
        }
        trained.params.apply_gradients(&grads, lr);
        trace.step_losses.push(step_loss);

        let mut holdout_loss = 0.0;
        let holdout_total: usize = holdout.iter().map(|(_, t)| t.len()).sum();
        for (masked, targets) in &holdout {
            holdout_loss += mlm_loss_and_grad(&trained, masked, targets, 1.0, None)?;
        }
        trace
            .holdout_losses
            .push(holdout_loss / holdout_total.max(1) as f64);
    }
    Ok((trained, trace))
}

/// Per-epoch record of a fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneTrace {
    pub epoch_losses: Vec<f64>,
    /// Training accuracy of the temporary head after each epoch,
    /// measured with dropout off.
    pub epoch_accuracies: Vec<f64>,
}

/// Supervised fine-tuning: a temporary head (per `cfg.head`) is trained
/// jointly with the encoder on unfair-binary labels, then discarded — only
/// the updated encoder is returned.
pub fn finetune_base(
    model: &EncoderModel,
    train: &Corpus,
    cfg: &FineTuneConfig,
) -> Result<EncoderModel> {
    finetune_base_traced(model, train, cfg).map(|(m, _)| m)
}

/// [`finetune_base`] that also returns the per-epoch trace.
pub fn finetune_base_traced(
    model: &EncoderModel,
    train: &Corpus,
    cfg: &FineTuneConfig,
) -> Result<(EncoderModel, FinetuneTrace)> {
    cfg.validate()?;
    if train.sentences().is_empty() {
        return Err(Error::EmptyCorpus("finetune_base"));
    }
    let labels: Vec<u8> = train.sentences().iter().map(|s| s.unfair_binary).collect();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleClass { label: labels[0] });
    }
    let tokenized: Vec<Vec<u32>> = train
        .sentences()
        .iter()
        .map(|s| model.tokenize(&s.text))
        .collect();

    let mut trained = model.clone();
    let mut head = HeadParams::init(
        &cfg.head,
        trained.config.hidden_dim,
        derive_seed(cfg.seed, "finetune/head-init"),
    )?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "finetune/order"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "finetune/dropout"));

    let mut trace = FinetuneTrace {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        epoch_accuracies: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut enc_grads = Params::zeros(&trained.config);
            let mut head_grads = head.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (loss, _) = cls_loss_and_grad(
                    &trained,
                    &head,
                    &tokenized[i],
                    labels[i],
                    scale,
                    Some(&mut dropout_rng),
                    Some((&mut enc_grads, &mut head_grads)),
                )?;
                batch_loss += loss;
            }
            let batch_loss = batch_loss * scale;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    step: epoch,
                    reason: format!("classification loss became {batch_loss}"),
                });
            }
            trained.params.apply_gradients(&enc_grads, cfg.learning_rate);
            head.apply_gradients(&head_grads, cfg.learning_rate);
            epoch_loss += batch_loss * chunk.len() as f64;
        }
        trace.epoch_losses.push(epoch_loss / tokenized.len() as f64);

        let mut correct = 0usize;
        for (tokens, &label) in tokenized.iter().zip(&labels) {
            let (_, ok) = cls_loss_and_grad(&trained, &head, tokens, label, 1.0, None, None)?;
            correct += usize::from(ok);
        }
        trace
            .epoch_accuracies
            .push(correct as f64 / tokenized.len() as f64);
    }
    // The head is dropped here; only the encoder leaves this function.
    Ok((trained, trace))
}

/// Deterministic masking for the gradient oracle: every third eligible
/// position, so the check exercises the masked-token path too.
fn deterministic_masks(tokens: &[u32]) -> (Vec<u32>, Vec<(usize, u32)>) {
    let eligible = eligible_positions(tokens);
    let mut masked = tokens.to_vec();
    let mut targets = Vec::new();
    for (n, &pos) in eligible.iter().enumerate() {
        if n % 3 == 0 {
            targets.push((pos, tokens[pos]));
            masked[pos] = MASK;
        }
    }
    (masked, targets)
}

fn full_loss(
    model: &EncoderModel,
    head: &HeadParams,
    batch: &[(Vec<u32>, u8)],
    masked: &[(Vec<u32>, Vec<(usize, u32)>)],
    mlm_total: usize,
) -> Result<f64> {
    let cls_scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (tokens, label) in batch {
        let (l, _) = cls_loss_and_grad(model, head, tokens, *label, cls_scale, None, None)?;
        loss += l * cls_scale;
    }
    if mlm_total > 0 {
        let mlm_scale = 1.0 / mlm_total as f64;
        for (tokens, targets) in masked {
            loss += mlm_loss_and_grad(model, tokens, targets, 1.0, None)? * mlm_scale;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient-check loss".into(),
            row: 0,
        });
    }
    Ok(loss)
}

/// Compare analytic gradients of the combined classification + masked-token
/// loss against central finite differences on a deterministic coordinate
/// sample (the largest-gradient coordinate of every tensor plus random
/// extras, ≥ 100 total). Returns the maximum relative error. A fresh head
/// is initialized from `head` with a fixed internal seed.
pub fn gradient_check(
    model: &EncoderModel,
    head: &HeadSpec,
    batch: &[(Vec<u32>, u8)],
    epsilon: f64,
) -> Result<f64> {
    let params = HeadParams::init(head, model.config.hidden_dim, 0xC0FFEE)?;
    gradient_check_with_head(model, &params, batch, epsilon)
}

/// [`gradient_check`] against an existing instantiated head.
pub fn gradient_check_with_head(
    model: &EncoderModel,
    head: &HeadParams,
    batch: &[(Vec<u32>, u8)],
    epsilon: f64,
) -> Result<f64> {
    gradient_check_detailed(model, head, batch, epsilon, None)
}

/// Full-control variant: `fault` names one tensor whose analytic gradient
/// is sign-flipped before comparison — a self-test hook proving the checker
/// detects wrong gradients.
pub fn gradient_check_detailed(
    model: &EncoderModel,
    head: &HeadParams,
    batch: &[(Vec<u32>, u8)],
    epsilon: f64,
    fault: Option<&str>,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter(
            "gradient check needs a non-empty batch".into(),
        ));
    }
    for (tokens, _) in batch {
        model.validate_tokens(tokens)?;
    }

    let masked: Vec<(Vec<u32>, Vec<(usize, u32)>)> = batch
        .iter()
        .map(|(tokens, _)| deterministic_masks(tokens))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let mlm_total: usize = masked.iter().map(|(_, t)| t.len()).sum();

    // Analytic gradients of the full loss.
    let mut enc_grads = Params::zeros(&model.config);
    let mut head_grads = head.zeros_like();
    let cls_scale = 1.0 / batch.len() as f64;
    for (tokens, label) in batch {
        cls_loss_and_grad(
            model,
            head,
            tokens,
            *label,
            cls_scale,
            None,
            Some((&mut enc_grads, &mut head_grads)),
        )?;
    }
    if mlm_total > 0 {
        let mlm_scale = 1.0 / mlm_total as f64;
        for (tokens, targets) in &masked {
            mlm_loss_and_grad(model, tokens, targets, mlm_scale, Some(&mut enc_grads))?;
        }
    }

    // Flatten: (tensor name, analytic gradient values).
    let mut analytic: Vec<(String, Vec<f64>)> = enc_grads
        .tensors()
        .into_iter()
        .chain(head_grads.tensors())
        .map(|(n, v)| (n, v.to_vec()))
        .collect();
    if let Some(name) = fault {
        let hit = analytic.iter_mut().find(|(n, _)| n == name);
        match hit {
            Some((_, values)) => values.iter_mut().for_each(|v| *v = -*v),
            None => {
                return Err(Error::InvalidParameter(format!(
                    "no tensor named `{name}` to corrupt"
                )))
            }
        }
    }

    // Coordinate sample: per-tensor max |gradient| plus random extras.
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (ti, (_, values)) in analytic.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let max_at = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        coords.push((ti, max_at));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_C0DE);
    while coords.len() < 100.max(analytic.len()) {
        let ti = rng.gen_range(0..analytic.len());
        if analytic[ti].1.is_empty() {
            continue;
        }
        coords.push((ti, rng.gen_range(0..analytic[ti].1.len())));
    }
    coords.sort_unstable();
    coords.dedup();

    // Central differences on a scratch copy of all parameters.
    let mut probe_model = model.clone();
    let mut probe_head = head.clone();
    let mut max_rel = 0.0f64;
    for (ti, ci) in coords {
        let name = analytic[ti].0.clone();
        let a = analytic[ti].1[ci];
        let original = read_param(&mut probe_model, &mut probe_head, &name, ci);
        write_param(&mut probe_model, &mut probe_head, &name, ci, original + epsilon);
        let plus = full_loss(&probe_model, &probe_head, batch, &masked, mlm_total)?;
        write_param(&mut probe_model, &mut probe_head, &name, ci, original - epsilon);
        let minus = full_loss(&probe_model, &probe_head, batch, &masked, mlm_total)?;
        write_param(&mut probe_model, &mut probe_head, &name, ci, original);
        let fd = (plus - minus) / (2.0 * epsilon);
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

fn read_param(model: &mut EncoderModel, head: &mut HeadParams, name: &str, coord: usize) -> f64 {
    if name.starts_with("head.") {
        let tensors = head.tensors_mut();
        let (_, values) = tensors.into_iter().find(|(n, _)| n == name).expect("tensor exists");
        values[coord]
    } else {
        let tensors = model.params.tensors_mut();
        let (_, values) = tensors.into_iter().find(|(n, _)| n == name).expect("tensor exists");
        values[coord]
    }
}

fn write_param(
    model: &mut EncoderModel,
    head: &mut HeadParams,
    name: &str,
    coord: usize,
    value: f64,
) {
    if name.starts_with("head.") {
        let tensors = head.tensors_mut();
        let (_, values) = tensors.into_iter().find(|(n, _)| n == name).expect("tensor exists");
        values[coord] = value;
    } else {
        let tensors = model.params.tensors_mut();
        let (_, values) = tensors.into_iter().find(|(n, _)| n == name).expect("tensor exists");
        values[coord] = value;
    }
}
