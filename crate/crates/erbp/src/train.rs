//! Optimisers, training loops, validation-based model selection, and grid
//! search over epochs × hidden width × λ.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::layers::{
    initialise_cell, initialise_dense, Activation, BoundCell, BoundDense, CellKind, DenseLayer,
    InitKind, InitScheme, RecurrentCell,
};
use crate::patterns::{one_hot, LabelledDataset};
use crate::prior::{
    build_default_matrix, erbp_penalty, total_loss, DefaultMatrix, ErbpConfig,
    WidthPolicy,
};
use crate::rbp::DrBank;
use crate::seqdata::WindowedDataset;
use crate::stats::mean_std;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimiserKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimiserSpec {
    pub kind: OptimiserKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimiserSpec {
    pub fn adam(learning_rate: f64) -> Self {
        OptimiserSpec {
            kind: OptimiserKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimiserSpec {
            kind: OptimiserKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Which deviation penalty, if any, ties the first layer to the default matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErbpPreset {
    None,
    /// Laplacian prior (absolute deviations).
    L1,
    /// Gaussian prior (squared deviations).
    L2,
}

impl ErbpPreset {
    fn config(&self, lambda: f64) -> Option<ErbpConfig> {
        match self {
            ErbpPreset::None => None,
            ErbpPreset::L1 => Some(ErbpConfig::l1(lambda)),
            ErbpPreset::L2 => Some(ErbpConfig::l2(lambda)),
        }
    }
}

/// Fixed-weight DR comparison units, fused early or mid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbpMode {
    None,
    Early,
    Mid,
}

/// Everything a single run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Model label carried through to reports (e.g. "standard", "erbp_l2").
    pub label: String,
    pub epochs: usize,
    /// Requested hidden width; may be widened by the default matrix under the
    /// expand policy.
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub lambda: f64,
    pub erbp: ErbpPreset,
    pub rbp: RbpMode,
    pub init: InitKind,
    pub width_policy: WidthPolicy,
    pub batch_size: usize,
    pub seed: u64,
    /// Context window length for sequence tasks.
    pub context: Option<usize>,
    pub optimiser: OptimiserSpec,
    /// Explicit width for the first hidden layer only. Used to build a
    /// standard comparison model whose topology matches an expanded ERBP
    /// model (wide first cell, `hidden`-wide layers above it).
    pub first_hidden: Option<usize>,
}

impl TrainConfig {
    pub fn new(label: &str) -> Self {
        TrainConfig {
            label: label.to_string(),
            epochs: 20,
            hidden: 20,
            depth: 1,
            lambda: 0.0,
            erbp: ErbpPreset::None,
            rbp: RbpMode::None,
            init: InitKind::RandomUniform,
            width_policy: WidthPolicy::Expand,
            batch_size: 1,
            seed: 0,
            context: None,
            optimiser: OptimiserSpec::adam(0.001),
            first_hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimiser.validate()?;
        if self.epochs == 0 || self.depth == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, depth, hidden width, and batch size must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "regularisation strength must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.erbp != ErbpPreset::None && self.rbp != RbpMode::None {
            return Err(Error::Config(
                "a model uses either the deviation penalty or DR fusion, not both".into(),
            ));
        }
        if self.init == InitKind::Erbp && self.rbp != RbpMode::None {
            return Err(Error::Config(
                "relational initialisation is incompatible with DR fusion".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub lambda: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub depth: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Raw penalty value (λ excluded) at each epoch end; empty without a prior.
    pub penalty_per_epoch: Vec<f64>,
    /// 1-based epoch whose weights were selected by validation loss.
    pub selected_epoch: usize,
    pub metric_name: String,
    pub metric_value: f64,
    /// Classifier-only accuracies (percent) at the selected epoch.
    pub val_accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    /// Mean test NLL per contiguous test segment (sequence tasks only);
    /// feeds the paired per-segment significance tests.
    pub test_segment_nll: Vec<f64>,
    /// Set when a non-finite loss aborted the run at this 1-based epoch.
    pub failed_at_epoch: Option<usize>,
    pub wall_ms: u64,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.failed_at_epoch.is_some()
    }

    /// Higher-is-better score used by grid aggregation: validation accuracy
    /// for classifiers, negated validation loss otherwise.
    pub fn selection_score(&self) -> f64 {
        self.val_accuracy
            .unwrap_or_else(|| -self.val_loss[self.selected_epoch - 1])
    }
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// A trainable network: feed-forward classifier or stacked recurrent LM. Both
/// map one flat input vector to logits over a fixed set of classes/symbols.
#[derive(Debug, Clone)]
pub enum Network {
    Mlp {
        layers: Vec<DenseLayer>,
        bank: Option<DrBank>,
        rbp: RbpMode,
        prior: Option<(DefaultMatrix, ErbpConfig)>,
    },
    Recurrent {
        cells: Vec<RecurrentCell>,
        out: DenseLayer,
        prior: Option<(DefaultMatrix, ErbpConfig)>,
    },
}

enum Bound {
    Mlp(Vec<BoundDense>),
    Recurrent(Vec<BoundCell>, BoundDense),
}

impl Network {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Network::Mlp { layers, .. } => {
                layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
            }
            // `w_rec` is excluded: each cell is stepped exactly once from a
            // zero state, so its gradient is identically zero.
            Network::Recurrent { cells, out, .. } => cells
                .iter()
                .flat_map(|c| [&c.w_in, &c.b])
                .chain([&out.w, &out.b])
                .collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Network::Mlp { layers, .. } => layers
                .iter_mut()
                .flat_map(|l| [&mut l.w, &mut l.b])
                .collect(),
            Network::Recurrent { cells, out, .. } => cells
                .iter_mut()
                .flat_map(|c| [&mut c.w_in, &mut c.b])
                .chain([&mut out.w, &mut out.b])
                .collect(),
        }
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        match self {
            Network::Mlp { layers, .. } => {
                Bound::Mlp(layers.iter().map(|l| l.bind(tape)).collect())
            }
            Network::Recurrent { cells, out, .. } => Bound::Recurrent(
                cells.iter().map(|c| c.bind_static_recurrence(tape)).collect(),
                out.bind(tape),
            ),
        }
    }

    fn param_nodes(bound: &Bound) -> Vec<NodeId> {
        match bound {
            Bound::Mlp(layers) => layers.iter().flat_map(|l| [l.w, l.b]).collect(),
            Bound::Recurrent(cells, out) => cells
                .iter()
                .flat_map(|c| [c.w_in, c.b])
                .chain([out.w, out.b])
                .collect(),
        }
    }

    fn logits(&self, bound: &Bound, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match (self, bound) {
            (Network::Mlp { bank, rbp, .. }, Bound::Mlp(layers)) => {
                let bank_out = match (bank, rbp) {
                    (Some(bank), RbpMode::Early | RbpMode::Mid) => {
                        Some(bank.forward(tape, x)?)
                    }
                    _ => None,
                };
                let first_in = match (bank_out, rbp) {
                    (Some(b), RbpMode::Early) => tape.concat(&[x, b])?,
                    _ => x,
                };
                let mut h = layers[0].forward(tape, first_in)?;
                if let (Some(b), RbpMode::Mid) = (bank_out, rbp) {
                    h = tape.concat(&[h, b])?;
                }
                for layer in &layers[1..] {
                    h = layer.forward(tape, h)?;
                }
                Ok(h)
            }
            (Network::Recurrent { .. }, Bound::Recurrent(cells, out)) => {
                let mut h = x;
                for cell in cells {
                    let (next, _) = cell.step_from_zero(tape, h)?;
                    h = next;
                }
                out.forward(tape, h)
            }
            _ => unreachable!("bound built from this network"),
        }
    }

    /// Raw deviation penalty node for this pass, if a prior is configured.
    fn penalty(&self, bound: &Bound, tape: &mut Tape) -> Result<Option<NodeId>> {
        match (self, bound) {
            (Network::Mlp { prior: Some((d, cfg)), .. }, Bound::Mlp(layers)) => {
                let p = erbp_penalty(tape, layers[0].w, Some(layers[0].b), d, cfg)?;
                Ok(Some(p))
            }
            (Network::Recurrent { prior: Some((d, cfg)), cells, .. }, Bound::Recurrent(bound_cells, _)) => {
                // The prior attaches to the candidate block of the first
                // cell's input weights; that block is a contiguous row range.
                let cell = &cells[0];
                let (start, len) = cell.candidate_rows();
                let cols = cell.input;
                let mut p = tape.deviation_penalty(
                    bound_cells[0].w_in,
                    Some(&d.matrix),
                    start * cols,
                    len * cols,
                    cfg.wl1,
                    cfg.wl2,
                )?;
                if cfg.include_bias_in_penalty {
                    let bias_term =
                        tape.deviation_penalty(bound_cells[0].b, None, start, len, cfg.wl1, cfg.wl2)?;
                    p = tape.add(p, bias_term)?;
                }
                Ok(Some(p))
            }
            _ => Ok(None),
        }
    }

    fn lambda_of(&self) -> f64 {
        match self {
            Network::Mlp { prior, .. } | Network::Recurrent { prior, .. } => {
                prior.as_ref().map_or(0.0, |(_, c)| c.lambda)
            }
        }
    }
}

fn init_scheme(kind: InitKind, d: Option<&DefaultMatrix>) -> InitScheme {
    match kind {
        InitKind::RandomUniform => InitScheme::RandomUniform,
        InitKind::Zero => InitScheme::Zero,
        InitKind::Xavier => InitScheme::Xavier,
        InitKind::Erbp => InitScheme::Erbp(d.expect("validated: erbp init has a matrix").clone()),
    }
}

/// Builds and initialises the feed-forward classifier for `cfg`.
pub fn build_classifier(
    cfg: &TrainConfig,
    vocab: usize,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let tokens = 3;
    let input = tokens * vocab;
    let needs_matrix = cfg.erbp != ErbpPreset::None || cfg.init == InitKind::Erbp;
    let d = if needs_matrix {
        Some(build_default_matrix(tokens, vocab, cfg.hidden, cfg.width_policy)?)
    } else {
        None
    };
    let first_hidden = cfg
        .first_hidden
        .unwrap_or_else(|| d.as_ref().map_or(cfg.hidden, |d| d.rows));
    let bank = match cfg.rbp {
        RbpMode::None => None,
        _ => Some(DrBank::new(tokens, vocab)?),
    };
    let first_in = match (&bank, cfg.rbp) {
        (Some(b), RbpMode::Early) => input + b.output_width(),
        _ => input,
    };

    let mut layers = Vec::with_capacity(cfg.depth + 1);
    layers.push(DenseLayer::new(first_in, first_hidden, Activation::Relu));
    let mut prev = first_hidden;
    if let (Some(b), RbpMode::Mid) = (&bank, cfg.rbp) {
        prev += b.output_width();
    }
    for _ in 1..cfg.depth {
        layers.push(DenseLayer::new(prev, cfg.hidden, Activation::Relu));
        prev = cfg.hidden;
    }
    layers.push(DenseLayer::new(prev, classes, Activation::None));

    let first_scheme = init_scheme(cfg.init, d.as_ref());
    for (i, layer) in layers.iter_mut().enumerate() {
        let scheme = if i == 0 {
            first_scheme.clone()
        } else {
            match cfg.init {
                InitKind::Zero => InitScheme::Zero,
                _ => InitScheme::RandomUniform,
            }
        };
        initialise_dense(layer, &scheme, rng)?;
    }

    let prior = cfg.erbp.config(cfg.lambda).map(|c| {
        (d.clone().expect("matrix built when a preset is active"), c)
    });
    Ok(Network::Mlp {
        layers,
        bank,
        rbp: cfg.rbp,
        prior,
    })
}

/// Builds and initialises the stacked recurrent language model for `cfg`.
pub fn build_lm(
    cfg: &TrainConfig,
    context: usize,
    symbol_width: usize,
    vocab: usize,
    cell_kind: CellKind,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let input = context * symbol_width;
    let needs_matrix = cfg.erbp != ErbpPreset::None || cfg.init == InitKind::Erbp;
    let d = if needs_matrix {
        Some(build_default_matrix(
            context,
            symbol_width,
            cfg.hidden,
            cfg.width_policy,
        )?)
    } else {
        None
    };
    let first_hidden = cfg
        .first_hidden
        .unwrap_or_else(|| d.as_ref().map_or(cfg.hidden, |d| d.rows));

    let mut cells = Vec::with_capacity(cfg.depth);
    cells.push(RecurrentCell::new(cell_kind, input, first_hidden));
    let mut prev = first_hidden;
    for _ in 1..cfg.depth {
        cells.push(RecurrentCell::new(cell_kind, prev, cfg.hidden));
        prev = cfg.hidden;
    }
    let mut out = DenseLayer::new(prev, vocab, Activation::None);

    let first_scheme = init_scheme(cfg.init, d.as_ref());
    for (i, cell) in cells.iter_mut().enumerate() {
        let scheme = if i == 0 {
            first_scheme.clone()
        } else {
            match cfg.init {
                InitKind::Zero => InitScheme::Zero,
                _ => InitScheme::RandomUniform,
            }
        };
        initialise_cell(cell, &scheme, rng)?;
    }
    let out_scheme = match cfg.init {
        InitKind::Zero => InitScheme::Zero,
        _ => InitScheme::RandomUniform,
    };
    initialise_dense(&mut out, &out_scheme, rng)?;

    let prior = cfg.erbp.config(cfg.lambda).map(|c| {
        (d.clone().expect("matrix built when a preset is active"), c)
    });
    Ok(Network::Recurrent { cells, out, prior })
}

// ---------------------------------------------------------------------------
// Optimiser state
// ---------------------------------------------------------------------------

struct OptimiserState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimiserState {
    fn new(sizes: &[usize]) -> Self {
        OptimiserState {
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}

/// One optimiser update over all parameters with the given mean gradients.
fn apply_step(
    spec: &OptimiserSpec,
    state: &mut OptimiserState,
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
) {
    match spec.kind {
        OptimiserKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                let pd = p.data_mut();
                for (w, gi) in pd.iter_mut().zip(g) {
                    *w -= spec.learning_rate * gi;
                }
            }
        }
        OptimiserKind::Adam => {
            state.t += 1;
            let t = state.t as i32;
            let bc1 = 1.0 - spec.beta1.powi(t);
            let bc2 = 1.0 - spec.beta2.powi(t);
            for ((p, g), (m, v)) in params
                .iter_mut()
                .zip(grads)
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                let pd = p.data_mut();
                for (((w, &gi), mi), vi) in
                    pd.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                {
                    *mi = spec.beta1 * *mi + (1.0 - spec.beta1) * gi;
                    *vi = spec.beta2 * *vi + (1.0 - spec.beta2) * gi * gi;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= spec.learning_rate * m_hat / (v_hat.sqrt() + spec.epsilon);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Core loop
// ---------------------------------------------------------------------------

/// Forward-only evaluation of a sample set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mean_nll: f64,
    /// Fraction of samples whose argmax logit matches the target.
    pub accuracy: f64,
    pub nll_per_sample: Vec<f64>,
}

/// Mean cross-entropy and accuracy over a sample set.
pub fn evaluate(network: &Network, samples: &[(Tensor, usize)]) -> Result<Evaluation> {
    let mut nlls = Vec::with_capacity(samples.len());
    let mut correct = 0usize;
    for (x, target) in samples {
        let mut tape = Tape::new();
        let bound = network.bind(&mut tape);
        let xi = tape.leaf(x.clone());
        let logits = network.logits(&bound, &mut tape, xi)?;
        let values = tape.value(logits).data();
        let probs = Tape::softmax_values(values);
        nlls.push(-probs[*target].max(f64::MIN_POSITIVE).ln());
        let argmax = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("non-empty logits");
        if argmax == *target {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        mean_nll: nlls.iter().sum::<f64>() / n,
        accuracy: correct as f64 / n,
        nll_per_sample: nlls,
    })
}

struct CoreOutcome {
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
    penalty_per_epoch: Vec<f64>,
    selected_epoch: usize,
    test_nll: f64,
    test_nlls: Vec<f64>,
    test_accuracy: f64,
    train_accuracy: f64,
    val_accuracy: f64,
    failed_at_epoch: Option<usize>,
}

fn snapshot(network: &Network) -> Vec<Tensor> {
    network.params().into_iter().cloned().collect()
}

fn restore(network: &mut Network, saved: &[Tensor]) {
    for (p, s) in network.params_mut().into_iter().zip(saved) {
        p.data_mut().copy_from_slice(s.data());
    }
}

fn train_core(
    network: &mut Network,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    train: &[(Tensor, usize)],
    val: &[(Tensor, usize)],
    test: &[(Tensor, usize)],
) -> Result<CoreOutcome> {
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Contract("all dataset splits must be non-empty".into()));
    }
    let lambda = network.lambda_of();
    let sizes: Vec<usize> = network.params().iter().map(|t| t.len()).collect();
    let mut opt = OptimiserState::new(&sizes);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);
    let mut penalty_per_epoch = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = Vec::new();
            for &idx in batch {
                let (x, target) = &train[idx];
                let mut tape = Tape::new();
                let bound = network.bind(&mut tape);
                let xi = tape.leaf(x.clone());
                let logits = network.logits(&bound, &mut tape, xi)?;
                let ce = tape.softmax_cross_entropy(logits, *target)?;
                let loss = match network.penalty(&bound, &mut tape)? {
                    Some(p) => total_loss(&mut tape, ce, p, lambda)?,
                    None => ce,
                };
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    // Divergence aborts the run, never the experiment.
                    return Ok(failed_outcome(train_loss, val_loss, penalty_per_epoch, epoch));
                }
                epoch_loss += value;
                tape.backward(loss)?;
                if grads.is_empty() {
                    // First (and, at batch size 1, only) sample of the batch:
                    // move the buffers straight off the tape.
                    grads = Network::param_nodes(&bound)
                        .into_iter()
                        .map(|node| tape.take_grad(node))
                        .collect();
                } else {
                    for (acc, node) in grads.iter_mut().zip(Network::param_nodes(&bound)) {
                        for (a, g) in acc.iter_mut().zip(tape.grad(node)) {
                            *a += g;
                        }
                    }
                }
            }
            if batch.len() > 1 {
                let scale = 1.0 / batch.len() as f64;
                for g in grads.iter_mut() {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
            }
            let mut params = network.params_mut();
            apply_step(&cfg.optimiser, &mut opt, &mut params, &grads);
        }
        train_loss.push(epoch_loss / train.len() as f64);

        let v_nll = evaluate(network, val)?.mean_nll;
        if !v_nll.is_finite() {
            return Ok(failed_outcome(train_loss, val_loss, penalty_per_epoch, epoch));
        }
        val_loss.push(v_nll);
        if lambda > 0.0 || matches!(network, Network::Mlp { prior: Some(_), .. } | Network::Recurrent { prior: Some(_), .. }) {
            let mut tape = Tape::new();
            let bound = network.bind(&mut tape);
            if let Some(p) = network.penalty(&bound, &mut tape)? {
                penalty_per_epoch.push(tape.value(p).data()[0]);
            }
        }
        match &best {
            Some((best_nll, _, _)) if *best_nll <= v_nll => {}
            _ => best = Some((v_nll, epoch, snapshot(network))),
        }
    }

    let (_, selected_epoch, weights) = best.expect("at least one epoch ran");
    restore(network, &weights);
    let test_eval = evaluate(network, test)?;
    let train_eval = evaluate(network, train)?;
    let val_eval = evaluate(network, val)?;
    Ok(CoreOutcome {
        train_loss,
        val_loss,
        penalty_per_epoch,
        selected_epoch,
        test_nll: test_eval.mean_nll,
        test_nlls: test_eval.nll_per_sample,
        test_accuracy: test_eval.accuracy,
        train_accuracy: train_eval.accuracy,
        val_accuracy: val_eval.accuracy,
        failed_at_epoch: None,
    })
}

fn failed_outcome(
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
    penalty_per_epoch: Vec<f64>,
    epoch: usize,
) -> CoreOutcome {
    CoreOutcome {
        train_loss,
        val_loss,
        penalty_per_epoch,
        selected_epoch: 0,
        test_nll: f64::NAN,
        test_nlls: Vec::new(),
        test_accuracy: f64::NAN,
        train_accuracy: f64::NAN,
        val_accuracy: f64::NAN,
        failed_at_epoch: Some(epoch),
    }
}

/// Means of `segments` contiguous chunks (last chunk absorbs the remainder).
fn segment_means(nlls: &[f64], segments: usize) -> Vec<f64> {
    if nlls.is_empty() {
        return Vec::new();
    }
    let segments = segments.min(nlls.len());
    let base = nlls.len() / segments;
    let mut out = Vec::with_capacity(segments);
    for i in 0..segments {
        let start = i * base;
        let end = if i == segments - 1 { nlls.len() } else { start + base };
        let chunk = &nlls[start..end];
        out.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    out
}

fn result_from(cfg: &TrainConfig, core: CoreOutcome, metric: (&str, f64), classifier: bool, wall_ms: u64) -> RunResult {
    let test_segment_nll = if classifier {
        Vec::new()
    } else {
        segment_means(&core.test_nlls, 10)
    };
    RunResult {
        label: cfg.label.clone(),
        seed: cfg.seed,
        lambda: cfg.lambda,
        epochs: cfg.epochs,
        hidden: cfg.hidden,
        depth: cfg.depth,
        train_loss: core.train_loss,
        val_loss: core.val_loss,
        penalty_per_epoch: core.penalty_per_epoch,
        selected_epoch: core.selected_epoch,
        metric_name: metric.0.to_string(),
        metric_value: metric.1,
        val_accuracy: if classifier && core.failed_at_epoch.is_none() {
            Some(core.val_accuracy * 100.0)
        } else {
            None
        },
        train_accuracy: if classifier && core.failed_at_epoch.is_none() {
            Some(core.train_accuracy * 100.0)
        } else {
            None
        },
        test_segment_nll,
        failed_at_epoch: core.failed_at_epoch,
        wall_ms,
    }
}

/// Trains a triple classifier and reports validation-selected test accuracy
/// in percent.
pub fn train_classifier(cfg: &TrainConfig, data: &LabelledDataset) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut network = build_classifier(cfg, data.vocabulary, data.classes, &mut rng)?;
    let encode = |rows: &[(crate::patterns::Triple, usize)]| -> Result<Vec<(Tensor, usize)>> {
        rows.iter()
            .map(|&(t, l)| Ok((one_hot(t, data.vocabulary)?, l)))
            .collect()
    };
    let train = encode(&data.train)?;
    let val = encode(&data.validation)?;
    let test = encode(&data.test)?;
    let core = train_core(&mut network, cfg, &mut rng, &train, &val, &test)?;
    let metric = ("accuracy", core.test_accuracy * 100.0);
    let wall_ms = start.elapsed().as_millis() as u64;
    Ok(result_from(cfg, core, metric, true, wall_ms))
}

/// Test-set figure reported by a language-model run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmMetric {
    Perplexity,
    CrossEntropy,
}

/// Trains a next-symbol model over pre-windowed splits and reports the
/// validation-selected test perplexity or mean cross-entropy.
pub fn train_lm(
    cfg: &TrainConfig,
    splits: (&WindowedDataset, &WindowedDataset, &WindowedDataset),
    vocab: usize,
    cell: CellKind,
    metric: LmMetric,
) -> Result<RunResult> {
    cfg.validate()?;
    let (train, val, test) = splits;
    let context = cfg.context.unwrap_or(train.context);
    if context != train.context {
        return Err(Error::Contract(format!(
            "config context {context} does not match windowed data ({})",
            train.context
        )));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut network = build_lm(cfg, context, train.symbol_width, vocab, cell, &mut rng)?;
    let core = train_core(
        &mut network,
        cfg,
        &mut rng,
        &train.samples,
        &val.samples,
        &test.samples,
    )?;
    let value = match metric {
        LmMetric::Perplexity => crate::seqdata::perplexity(core.test_nll),
        LmMetric::CrossEntropy => core.test_nll,
    };
    let name = match metric {
        LmMetric::Perplexity => "perplexity",
        LmMetric::CrossEntropy => "cross_entropy",
    };
    let wall_ms = start.elapsed().as_millis() as u64;
    Ok(result_from(cfg, core, (name, value), false, wall_ms))
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub epochs: Vec<usize>,
    pub hidden: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Grid {
    /// Every (epochs, hidden, λ, seed) job in deterministic order.
    pub fn plan(&self, seeds: &[u64]) -> Vec<(usize, usize, f64, u64)> {
        let mut jobs = Vec::with_capacity(self.epochs.len() * self.hidden.len() * self.lambdas.len() * seeds.len());
        for &e in &self.epochs {
            for &h in &self.hidden {
                for &l in &self.lambdas {
                    for &s in seeds {
                        jobs.push((e, h, l, s));
                    }
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub epochs: usize,
    pub hidden: usize,
    pub lambda: f64,
    /// Mean and sample std of the selection score over completed seeds.
    pub mean_score: f64,
    pub std_score: f64,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<ConfigSummary>,
    pub best: Option<ConfigSummary>,
}

/// Runs every grid cell for every seed (in parallel), aggregates per-config
/// scores, and picks the best configuration (ties broken toward smaller λ,
/// then fewer epochs).
pub fn grid_search<F>(grid: &Grid, seeds: &[u64], run: F) -> Result<GridOutcome>
where
    F: Fn(usize, usize, f64, u64) -> Result<RunResult> + Sync,
{
    let jobs = grid.plan(seeds);
    if jobs.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(e, h, l, s)| run(e, h, l, s))
        .collect::<Result<Vec<_>>>()?;

    let mut summaries = Vec::new();
    for &e in &grid.epochs {
        for &h in &grid.hidden {
            for &l in &grid.lambdas {
                let cell: Vec<&RunResult> = runs
                    .iter()
                    .filter(|r| r.epochs == e && r.hidden == h && r.lambda == l)
                    .collect();
                let scores: Vec<f64> = cell
                    .iter()
                    .filter(|r| !r.failed())
                    .map(|r| r.selection_score())
                    .collect();
                let failed = cell.len() - scores.len();
                if scores.is_empty() {
                    summaries.push(ConfigSummary {
                        epochs: e,
                        hidden: h,
                        lambda: l,
                        mean_score: f64::NEG_INFINITY,
                        std_score: f64::NAN,
                        completed: 0,
                        failed,
                    });
                    continue;
                }
                let ms = mean_std(&scores)?;
                summaries.push(ConfigSummary {
                    epochs: e,
                    hidden: h,
                    lambda: l,
                    mean_score: ms.mean,
                    std_score: ms.std,
                    completed: scores.len(),
                    failed,
                });
            }
        }
    }
    let best = summaries
        .iter()
        .filter(|s| s.completed > 0)
        .max_by(|a, b| {
            a.mean_score
                .partial_cmp(&b.mean_score)
                .expect("finite scores")
                // Ties favour smaller λ, then fewer epochs.
                .then(b.lambda.partial_cmp(&a.lambda).expect("finite lambda"))
                .then(b.epochs.cmp(&a.epochs))
        })
        .cloned();
    Ok(GridOutcome {
        runs,
        summaries,
        best,
    })
}
