//! Convolutional-recurrent flow classifier over 20×6 packet matrices.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::flows::{ClassIndex, Dataset, FlowError, FlowRecord, FEATURES, MAX_PACKETS};
use crate::math;
use crate::neural::{
    softmax, softmax_cross_entropy, Adam, AdamConfig, Layer, LayerSpec, Mode, NnError, Sequential,
    Tensor,
};
use crate::seed::{derive_seed, rng_from_seed};

/// Per-sample input shape: one channel, packets × features.
pub const INPUT_SHAPE: [usize; 3] = [1, MAX_PACKETS, FEATURES];
pub const PORT_SCALE: f64 = 65535.0;
pub const WINDOW_SCALE: f64 = 65535.0;
pub const PAYLOAD_SCALE: f64 = 1500.0;
const PREDICT_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("model expects {expected} classes, dataset has {got}")]
    ClassCount { expected: usize, got: usize },
    #[error("label {0:?} is not in the model's class index")]
    UnknownLabel(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

pub type Result<T> = core::result::Result<T, ClassifierError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrnnConfig {
    pub conv1_filters: usize,
    pub conv1_kernel: [usize; 2],
    pub conv2_filters: usize,
    pub conv2_kernel: [usize; 2],
    pub lstm_hidden: usize,
    pub fc1_units: usize,
    pub fc1_dropout: f64,
    pub fc2_units: usize,
    pub fc2_dropout: f64,
    pub n_classes: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CrnnConfig {
    fn default() -> Self {
        CrnnConfig {
            conv1_filters: 32,
            conv1_kernel: [4, 2],
            conv2_filters: 64,
            conv2_kernel: [4, 2],
            lstm_hidden: 100,
            fc1_units: 100,
            fc1_dropout: 0.2,
            fc2_units: 108,
            fc2_dropout: 0.4,
            n_classes: 19,
            batch_size: 128,
            epochs: 20,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl CrnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(ClassifierError::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        for (name, r) in [
            ("fc1_dropout", self.fc1_dropout),
            ("fc2_dropout", self.fc2_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(ClassifierError::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {r}"
                )));
            }
        }
        if self.batch_size < 2 {
            return Err(ClassifierError::InvalidConfig(
                "batch_size must be at least 2".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// The layer chain, ending in softmax.
    pub fn specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv2d(
                self.conv1_filters,
                self.conv1_kernel[0],
                self.conv1_kernel[1],
            ),
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            LayerSpec::conv2d(
                self.conv2_filters,
                self.conv2_kernel[0],
                self.conv2_kernel[1],
            ),
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            LayerSpec::ToSequence,
            LayerSpec::Lstm {
                hidden: self.lstm_hidden,
                return_sequences: false,
            },
            LayerSpec::Dense {
                units: self.fc1_units,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout {
                rate: self.fc1_dropout,
            },
            LayerSpec::Dense {
                units: self.fc2_units,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout {
                rate: self.fc2_dropout,
            },
            LayerSpec::Dense {
                units: self.n_classes,
            },
            LayerSpec::Softmax,
        ]
    }
}

/// Feature scaling learned from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// 99th percentile of `ln(1 + inter_arrival)` over non-leading packets.
    pub inter_arrival_scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            inter_arrival_scale: 1.0,
        }
    }
}

/// Nearest-rank percentile of an unsorted slice; `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = libm::ceil(q * v.len() as f64) as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

impl Normalizer {
    pub fn fit(train: &Dataset) -> Self {
        let logs: Vec<f64> = train
            .flows
            .iter()
            .flat_map(|f| {
                f.packets
                    .iter()
                    .skip(1)
                    .map(|p| math::ln_1p(p.inter_arrival))
            })
            .collect();
        let scale = percentile(&logs, 0.99).filter(|&s| s > 0.0).unwrap_or(1.0);
        Normalizer {
            inter_arrival_scale: scale,
        }
    }

    /// Row-major 20×6 input for one flow; padding rows stay zero.
    pub fn encode_into(&self, flow: &FlowRecord, out: &mut [f64]) {
        out.fill(0.0);
        for (t, p) in flow.packets.iter().take(MAX_PACKETS).enumerate() {
            let row = &mut out[t * FEATURES..(t + 1) * FEATURES];
            row[0] = f64::from(p.direction);
            row[1] = f64::from(p.tcp_window) / WINDOW_SCALE;
            row[2] = f64::from(p.src_port) / PORT_SCALE;
            row[3] = f64::from(p.dst_port) / PORT_SCALE;
            row[4] = math::ln_1p(p.inter_arrival) / self.inter_arrival_scale;
            row[5] = f64::from(p.payload_len) / PAYLOAD_SCALE;
        }
    }

    pub fn encode(&self, flows: &[&FlowRecord]) -> Result<Tensor> {
        let width = MAX_PACKETS * FEATURES;
        let mut data = vec![0.0; flows.len() * width];
        for (f, chunk) in flows.iter().zip(data.chunks_mut(width)) {
            self.encode_into(f, chunk);
        }
        Ok(Tensor::from_vec(
            &[flows.len(), 1, MAX_PACKETS, FEATURES],
            data,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct CrnnModel {
    pub config: CrnnConfig,
    pub net: Sequential,
    pub classes: ClassIndex,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

/// Everything needed to restore a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrnnCheckpoint {
    pub version: u32,
    pub arch: Vec<LayerSpec>,
    pub config: CrnnConfig,
    pub params: BTreeMap<String, Vec<f64>>,
    pub rng_seed: u64,
    pub class_index: ClassIndex,
    pub normalization: Normalizer,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn build_crnn(config: &CrnnConfig) -> Result<CrnnModel> {
    config.validate()?;
    let mut rng = rng_from_seed(derive_seed(config.seed, "crnn-init"));
    let net = Sequential::build(&INPUT_SHAPE, &config.specs(), &mut rng)?;
    Ok(CrnnModel {
        config: config.clone(),
        net,
        classes: ClassIndex::default(),
        normalizer: Normalizer::default(),
    })
}

fn labels_in(classes: &ClassIndex, ds: &Dataset) -> Result<Vec<usize>> {
    ds.flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let l = f.label.as_deref().ok_or(FlowError::Unlabeled(i))?;
            classes
                .id(l)
                .ok_or_else(|| ClassifierError::UnknownLabel(l.into()))
        })
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Split `order` into batches of `size`, folding a trailing single sample
/// into the previous batch (batch norm needs two samples).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = (start + size).min(order.len());
        if order.len() - end == 1 {
            end = order.len();
        }
        out.push(&order[start..end]);
        start = end;
    }
    out
}

impl CrnnModel {
    /// Instantiate the classes and normalization of `train`, then train.
    pub fn train(&mut self, train: &Dataset, valid: &Dataset) -> Result<Vec<EpochStats>> {
        train_crnn(self, train, valid, &mut |_| {})
    }

    /// Probabilities for each flow, evaluated in chunks.
    pub fn predict(&mut self, flows: &[&FlowRecord]) -> Result<Vec<(usize, Vec<f64>)>> {
        let mut out = Vec::with_capacity(flows.len());
        for chunk in flows.chunks(PREDICT_BATCH) {
            let x = self.normalizer.encode(chunk)?;
            let probs = softmax(&self.net.forward(&x, Mode::Eval)?);
            for row in probs.data().chunks(self.config.n_classes) {
                out.push((argmax(row), row.to_vec()));
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy and accuracy over `ds` in eval mode.
    pub fn evaluate(&mut self, ds: &Dataset) -> Result<(f64, f64)> {
        let labels = labels_in(&self.classes, ds)?;
        let flows: Vec<&FlowRecord> = ds.flows.iter().collect();
        let (mut loss, mut correct) = (0.0, 0usize);
        for (chunk, lab) in flows
            .chunks(PREDICT_BATCH)
            .zip(labels.chunks(PREDICT_BATCH))
        {
            let logits = self
                .net
                .forward(&self.normalizer.encode(chunk)?, Mode::Eval)?;
            let (l, _) = softmax_cross_entropy(&logits, lab)?;
            loss += l * lab.len() as f64;
            for (row, &y) in logits.data().chunks(self.config.n_classes).zip(lab) {
                correct += usize::from(argmax(row) == y);
            }
        }
        let n = labels.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }

    pub fn to_checkpoint(&self) -> CrnnCheckpoint {
        CrnnCheckpoint {
            version: CHECKPOINT_VERSION,
            arch: self.net.specs().to_vec(),
            config: self.config.clone(),
            params: self.net.state(),
            rng_seed: self.config.seed,
            class_index: self.classes.clone(),
            normalization: self.normalizer,
        }
    }

    pub fn from_checkpoint(ck: &CrnnCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(ClassifierError::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let mut model = build_crnn(&ck.config)?;
        if model.net.specs() != &ck.arch[..] {
            return Err(ClassifierError::InvalidConfig(
                "checkpoint architecture does not match its config".into(),
            ));
        }
        if ck.class_index.len() != ck.config.n_classes {
            return Err(ClassifierError::ClassCount {
                expected: ck.config.n_classes,
                got: ck.class_index.len(),
            });
        }
        model.net.load_state(&ck.params)?;
        model.classes = ck.class_index.clone();
        model.normalizer = ck.normalization;
        Ok(model)
    }

    /// Zero the output layer so every class gets probability 1/n.
    pub fn zero_output_layer(&mut self) {
        if let Some(Layer::Dense(d)) = self.net.layers_mut().last_mut() {
            d.weight.value.fill(0.0);
            d.bias.value.fill(0.0);
        }
    }
}

/// Minibatch cross-entropy training with Adam. `on_epoch` sees each epoch's
/// statistics as they are produced.
pub fn train_crnn(
    model: &mut CrnnModel,
    train: &Dataset,
    valid: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if train.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if train.classes.len() != model.config.n_classes {
        return Err(ClassifierError::ClassCount {
            expected: model.config.n_classes,
            got: train.classes.len(),
        });
    }
    model.classes = train.classes.clone();
    model.normalizer = Normalizer::fit(train);
    let labels = labels_in(&model.classes, train)?;
    // validate the monitor set up front
    labels_in(&model.classes, valid)?;

    let width = MAX_PACKETS * FEATURES;
    let mut inputs = vec![0.0; train.len() * width];
    for (f, chunk) in train.flows.iter().zip(inputs.chunks_mut(width)) {
        model.normalizer.encode_into(f, chunk);
    }

    let cfg = model.config.clone();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "crnn-shuffle"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let mut x = Vec::with_capacity(batch.len() * width);
            let mut y = Vec::with_capacity(batch.len());
            for &i in batch {
                x.extend_from_slice(&inputs[i * width..(i + 1) * width]);
                y.push(labels[i]);
            }
            let x = Tensor::from_vec(&[batch.len(), 1, MAX_PACKETS, FEATURES], x)?;
            model.net.zero_grad();
            let logits = model.net.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss { epoch, batch: bi });
            }
            for (row, &t) in logits.data().chunks(cfg.n_classes).zip(&y) {
                correct += usize::from(argmax(row) == t);
            }
            loss_sum += loss * batch.len() as f64;
            model.net.backward(&grad)?;
            adam.step(model.net.params_mut()).map_err(|e| match e {
                NnError::NonFiniteGradient(_) => {
                    ClassifierError::NonFiniteLoss { epoch, batch: bi }
                }
                other => other.into(),
            })?;
        }
        let (valid_loss, valid_accuracy) = if valid.is_empty() {
            (None, None)
        } else {
            let (l, a) = model.evaluate(valid)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            valid_loss,
            valid_accuracy,
        };
        on_epoch(&stats);
        trace.push(stats);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{FiveTuple, PacketFeatures, Transport};
    use crate::neural::{gradient_check, jitter, GradCheck};
    use crate::seed::rng_from_seed;
    use core::net::{IpAddr, Ipv4Addr};
    use rand::Rng;

    fn small(n: usize) -> CrnnConfig {
        CrnnConfig {
            conv1_filters: 3,
            conv2_filters: 4,
            lstm_hidden: 5,
            fc1_units: 6,
            fc2_units: 7,
            n_classes: n,
            batch_size: 16,
            epochs: 1,
            ..CrnnConfig::default()
        }
    }

    /// Flows whose class decides the direction pattern and payload range.
    pub(crate) fn separable(per_class: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut flows = Vec::new();
        for i in 0..per_class * 3 {
            let c = i % 3;
            let n = rng.random_range(4..=20);
            let packets = (0..n)
                .map(|t| PacketFeatures {
                    direction: match c {
                        0 => 1,
                        1 => (t % 2 == 0) as u8,
                        _ => (t < 2) as u8,
                    },
                    tcp_window: 8192,
                    src_port: 50000,
                    dst_port: 443,
                    inter_arrival: if t == 0 {
                        0.0
                    } else {
                        rng.random_range(0.0..0.1)
                    },
                    payload_len: rng.random_range(200 * c as u32..200 * c as u32 + 150),
                })
                .collect();
            let ip = IpAddr::V4(Ipv4Addr::new(10, 0, 0, c as u8));
            flows.push(FlowRecord {
                key: FiveTuple {
                    src_addr: ip,
                    dst_addr: ip,
                    src_port: 50000,
                    dst_port: 443,
                    transport: Transport::Tcp,
                },
                label: Some(["a", "b", "c"][c].into()),
                packets,
                synthetic: false,
            });
        }
        Dataset::from_flows(flows)
    }

    #[test]
    fn default_chain_matches_expected_shapes() {
        let m = build_crnn(&CrnnConfig::default()).unwrap();
        let s = m.net.shapes();
        assert_eq!(s[0], vec![32, 17, 5]);
        assert_eq!(s[3], vec![64, 14, 4]);
        assert_eq!(s[6], vec![14, 256]);
        assert_eq!(s[7], vec![100]);
        assert_eq!(s[8], vec![100]);
        assert_eq!(s[11], vec![108]);
        assert_eq!(m.net.output_shape(), &[19]);
        let m = build_crnn(&CrnnConfig {
            n_classes: 2,
            ..CrnnConfig::default()
        })
        .unwrap();
        assert_eq!(m.net.output_shape(), &[2]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            CrnnConfig {
                n_classes: 1,
                ..CrnnConfig::default()
            },
            CrnnConfig {
                fc2_dropout: 1.0,
                ..CrnnConfig::default()
            },
        ] {
            assert!(matches!(
                build_crnn(&cfg),
                Err(ClassifierError::InvalidConfig(_))
            ));
        }
        let bad = CrnnConfig {
            conv1_kernel: [30, 2],
            ..CrnnConfig::default()
        };
        let msg = format!("{}", build_crnn(&bad).unwrap_err());
        assert!(msg.contains("layer 0"), "{msg}");
    }

    #[test]
    fn same_seed_same_initial_weights() {
        let a = build_crnn(&small(3)).unwrap().net.state();
        let b = build_crnn(&small(3)).unwrap().net.state();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_output_layer_gives_uniform_probabilities() {
        let ds = separable(4, 1);
        let mut m = build_crnn(&small(3)).unwrap();
        m.zero_output_layer();
        let flows: Vec<_> = ds.flows.iter().collect();
        for (_, p) in m.predict(&flows).unwrap() {
            assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn prediction_is_batch_invariant_and_normalized() {
        let ds = separable(10, 2);
        let mut m = build_crnn(&small(3)).unwrap();
        m.train(&ds, &Dataset::default()).unwrap();
        let flows: Vec<_> = ds.flows.iter().collect();
        let batched = m.predict(&flows).unwrap();
        let again = m.predict(&flows).unwrap();
        assert_eq!(batched, again);
        for (f, b) in flows.iter().zip(&batched) {
            let single = m.predict(&[*f]).unwrap();
            assert_eq!(&single[0], b);
            assert!((b.1.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reduced_network_passes_full_gradient_check() {
        let ds = separable(2, 3);
        let mut m = build_crnn(&CrnnConfig {
            fc1_dropout: 0.0,
            fc2_dropout: 0.0,
            ..small(3)
        })
        .unwrap();
        m.normalizer = Normalizer::fit(&ds);
        jitter(&mut m.net, 0.1, 7);
        let flows: Vec<_> = ds.flows.iter().take(4).collect();
        let x = m.normalizer.encode(&flows).unwrap();
        let labels = labels_in(
            &ds.classes,
            &ds.with_flows(flows.iter().map(|f| (*f).clone()).collect()),
        )
        .unwrap();
        let report = gradient_check(&mut m.net, &x, &labels, &GradCheck::default()).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn overfits_a_small_dataset() {
        let ds = separable(22, 4).with_flows(separable(22, 4).flows.into_iter().take(64).collect());
        let mut m = build_crnn(&CrnnConfig {
            conv1_filters: 8,
            conv2_filters: 16,
            lstm_hidden: 16,
            fc1_units: 16,
            fc2_units: 16,
            epochs: 40,
            lr: 5e-3,
            ..small(3)
        })
        .unwrap();
        let trace = m.train(&ds, &ds).unwrap();
        assert_eq!(trace.len(), 40);
        let (_, acc) = m.evaluate(&ds).unwrap();
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable(8, 5);
        let mut a = build_crnn(&small(3)).unwrap();
        let mut b = build_crnn(&small(3)).unwrap();
        let ta = a.train(&ds, &ds).unwrap();
        let tb = b.train(&ds, &ds).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.net.state(), b.net.state());
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = separable(6, 6);
        let mut m = build_crnn(&small(3)).unwrap();
        m.train(&ds, &Dataset::default()).unwrap();
        let mut back = CrnnModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        let flows: Vec<_> = ds.flows.iter().collect();
        assert_eq!(m.predict(&flows).unwrap(), back.predict(&flows).unwrap());
    }

    #[test]
    fn batching_folds_a_lone_tail() {
        let order: Vec<usize> = (0..9).collect();
        let sizes: Vec<usize> = batches(&order, 4).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 5]);
        let sizes: Vec<usize> = batches(&order, 3).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3]);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99), Some(99.0));
        assert_eq!(percentile(&[5.0], 0.99), Some(5.0));
        assert_eq!(percentile(&[], 0.5), None);
    }
}
