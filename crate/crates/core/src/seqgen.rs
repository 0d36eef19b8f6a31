//! Character-level LSTM generators for per-packet sequential features.
//!
//! A corpus holds one symbol sequence per flow (packet directions, or TCP
//! window values mapped onto a capped vocabulary), each terminated by END.
//! Training is teacher-forced next-symbol prediction. Generation draws the
//! first symbol from the corpus' empirical first-symbol distribution, then
//! feeds each sampled symbol back until END or 19 further steps.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::flows::{Dataset, Transport, MAX_PACKETS};
use crate::math;
use crate::neural::linalg::matmul_acc;
use crate::neural::{
    softmax_cross_entropy, Adam, AdamConfig, Layer, LayerSpec, LstmState, Mode, NnError,
    Sequential, Tensor,
};
use crate::seed::rng_from_seed;

/// Most symbols a generated sequence can hold (END excluded).
pub const MAX_SEQUENCE: usize = MAX_PACKETS;
/// Steps generated after the first symbol.
pub const MAX_GENERATED_STEPS: usize = MAX_PACKETS - 1;
pub const DEFAULT_WINDOW_VOCAB_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeqError {
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class {0:?} has no flows")]
    EmptyClass(String),
    #[error("class {0:?} has no TCP packets; skip window generation for it")]
    NoTcpPackets(String),
    #[error("vocabulary cap must be at least 2, got {0}")]
    VocabCapTooSmall(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sequence {index} has length {len}, allowed 1..={MAX_SEQUENCE}")]
    BadLength { index: usize, len: usize },
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symbol {
    Value(u32),
    End,
}

/// Sorted value symbols followed by exactly one END.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Symbol>", into = "Vec<Symbol>")]
pub struct Vocabulary {
    values: Vec<u32>,
}

impl TryFrom<Vec<Symbol>> for Vocabulary {
    type Error = String;

    fn try_from(symbols: Vec<Symbol>) -> Result<Self, String> {
        match symbols.split_last() {
            Some((Symbol::End, rest)) => {
                let mut values = Vec::with_capacity(rest.len());
                for s in rest {
                    match s {
                        Symbol::Value(v) if values.last().is_none_or(|l| l < v) => {
                            values.push(*v)
                        }
                        _ => return Err(
                            "vocabulary values must be strictly increasing with one trailing END"
                                .into(),
                        ),
                    }
                }
                if values.is_empty() {
                    return Err("vocabulary needs at least one value".into());
                }
                Ok(Vocabulary { values })
            }
            _ => Err("vocabulary must end with END".into()),
        }
    }
}

impl From<Vocabulary> for Vec<Symbol> {
    fn from(v: Vocabulary) -> Self {
        v.symbols()
    }
}

impl Vocabulary {
    /// `{0, 1, END}`
    pub fn directions() -> Self {
        Vocabulary { values: vec![0, 1] }
    }

    pub fn from_values(mut values: Vec<u32>) -> Self {
        values.sort_unstable();
        values.dedup();
        assert!(!values.is_empty(), "vocabulary needs at least one value");
        Vocabulary { values }
    }

    pub fn len(&self) -> usize {
        self.values.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn end_index(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        let mut s: Vec<Symbol> = self.values.iter().map(|&v| Symbol::Value(v)).collect();
        s.push(Symbol::End);
        s
    }

    pub fn symbol(&self, index: usize) -> Option<Symbol> {
        match index.cmp(&self.values.len()) {
            core::cmp::Ordering::Less => Some(Symbol::Value(self.values[index])),
            core::cmp::Ordering::Equal => Some(Symbol::End),
            core::cmp::Ordering::Greater => None,
        }
    }

    pub fn index_of(&self, value: u32) -> Option<usize> {
        self.values.binary_search(&value).ok()
    }

    /// Index of the retained value closest to `value`; ties go to the smaller.
    pub fn nearest_index(&self, value: u32) -> usize {
        match self.values.binary_search(&value) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.values.len() => i - 1,
            Err(i) => {
                let below = value - self.values[i - 1];
                let above = self.values[i] - value;
                if below <= above {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceCorpus {
    pub vocab: Vocabulary,
    /// Symbol indices, each sequence ending in END.
    pub sequences: Vec<Vec<usize>>,
    /// Empirical distribution of the first symbol (END has mass 0).
    pub first_symbol_distribution: Vec<f64>,
}

impl SequenceCorpus {
    /// Build from raw value sequences, mapping each value to its nearest
    /// vocabulary entry and appending END.
    pub fn from_value_sequences(
        vocab: Vocabulary,
        sequences: &[Vec<u32>],
    ) -> Result<Self, SeqError> {
        if sequences.is_empty() {
            return Err(SeqError::EmptyCorpus);
        }
        let end = vocab.end_index();
        let mut first = vec![0.0; vocab.len()];
        let mut out = Vec::with_capacity(sequences.len());
        for (index, s) in sequences.iter().enumerate() {
            if s.is_empty() || s.len() > MAX_SEQUENCE {
                return Err(SeqError::BadLength {
                    index,
                    len: s.len(),
                });
            }
            let mut mapped: Vec<usize> = s.iter().map(|&v| vocab.nearest_index(v)).collect();
            first[mapped[0]] += 1.0;
            mapped.push(end);
            out.push(mapped);
        }
        let n = sequences.len() as f64;
        first.iter_mut().for_each(|p| *p /= n);
        Ok(SequenceCorpus {
            vocab,
            sequences: out,
            first_symbol_distribution: first,
        })
    }

    /// Teacher-forcing pair for one sequence: inputs drop END, targets are
    /// the sequence shifted left by one (ending in END).
    pub fn teacher_forcing(sequence: &[usize]) -> (&[usize], &[usize]) {
        (&sequence[..sequence.len() - 1], &sequence[1..])
    }

    /// Histogram of sequence lengths (END excluded), index = length.
    pub fn length_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; MAX_SEQUENCE + 1];
        for s in &self.sequences {
            h[s.len() - 1] += 1;
        }
        h
    }
}

fn class_flows<'a>(
    dataset: &'a Dataset,
    class: &'a str,
) -> Result<Vec<&'a crate::flows::FlowRecord>, SeqError> {
    if dataset.classes.id(class).is_none() {
        return Err(SeqError::UnknownClass(class.into()));
    }
    let flows: Vec<_> = dataset.flows_of(class).collect();
    if flows.is_empty() {
        return Err(SeqError::EmptyClass(class.into()));
    }
    Ok(flows)
}

/// One direction sequence per flow of `class`.
pub fn build_direction_corpus(dataset: &Dataset, class: &str) -> Result<SequenceCorpus, SeqError> {
    let seqs: Vec<Vec<u32>> = class_flows(dataset, class)?
        .iter()
        .map(|f| f.packets.iter().map(|p| u32::from(p.direction)).collect())
        .collect();
    SequenceCorpus::from_value_sequences(Vocabulary::directions(), &seqs)
}

/// One TCP-window sequence per TCP flow of `class`, over the `vocab_cap` most
/// frequent window values (ties favor the smaller value).
pub fn build_window_corpus(
    dataset: &Dataset,
    class: &str,
    vocab_cap: usize,
) -> Result<SequenceCorpus, SeqError> {
    if vocab_cap < 2 {
        return Err(SeqError::VocabCapTooSmall(vocab_cap));
    }
    let tcp: Vec<_> = class_flows(dataset, class)?
        .into_iter()
        .filter(|f| f.key.transport == Transport::Tcp)
        .collect();
    if tcp.is_empty() {
        return Err(SeqError::NoTcpPackets(class.into()));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for f in &tcp {
        for p in &f.packets {
            *counts.entry(p.tcp_window).or_default() += 1;
        }
    }
    let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(vocab_cap);
    let vocab = Vocabulary::from_values(ranked.into_iter().map(|(v, _)| v).collect());
    let seqs: Vec<Vec<u32>> = tcp
        .iter()
        .map(|f| f.packets.iter().map(|p| p.tcp_window).collect())
        .collect();
    SequenceCorpus::from_value_sequences(vocab, &seqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorHyper {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for GeneratorHyper {
    fn default() -> Self {
        GeneratorHyper {
            hidden: 64,
            epochs: 30,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
            temperature: 1.0,
        }
    }
}

/// LSTM over one-hot symbols with a per-step projection to vocabulary logits.
#[derive(Debug, Clone)]
pub struct LstmGenerator {
    pub vocab: Vocabulary,
    pub net: Sequential,
    pub first_symbol_distribution: Vec<f64>,
    pub trained: bool,
}

fn one_hot(symbols: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; symbols.len() * width];
    for (t, &s) in symbols.iter().enumerate() {
        data[t * width + s] = 1.0;
    }
    Tensor::from_vec(&[1, symbols.len(), width], data).expect("one-hot shape")
}

/// Draw an index from unnormalized non-negative weights.
fn sample_categorical<R: RngCore + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding fallthrough: last index with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

impl LstmGenerator {
    pub fn new(
        vocab: Vocabulary,
        first_symbol_distribution: Vec<f64>,
        hidden: usize,
        seed: u64,
    ) -> Result<Self, SeqError> {
        let v = vocab.len();
        let specs = [
            LayerSpec::Lstm {
                hidden,
                return_sequences: true,
            },
            LayerSpec::Dense { units: v },
            LayerSpec::Softmax,
        ];
        // input length is nominal; the LSTM accepts any sequence length
        let net = Sequential::build(&[MAX_SEQUENCE, v], &specs, &mut rng_from_seed(seed))?;
        Ok(LstmGenerator {
            vocab,
            net,
            first_symbol_distribution,
            trained: false,
        })
    }

    fn parts(&self) -> (&crate::neural::LstmCell, &crate::neural::Dense) {
        match self.net.layers() {
            [Layer::Lstm(l), Layer::Dense(d)] => (&l.cell, d),
            _ => unreachable!("generator network is LSTM → Dense"),
        }
    }

    /// Next-symbol probabilities after feeding `symbol` into `state`.
    pub fn step(
        &self,
        symbol: usize,
        state: &LstmState,
        temperature: f64,
    ) -> Result<(Vec<f64>, LstmState), SeqError> {
        let (cell, dense) = self.parts();
        let mut x = vec![0.0; self.vocab.len()];
        x[symbol] = 1.0;
        let next = cell.step(&x, state)?;
        let mut logits = dense.bias.value.data().to_vec();
        matmul_acc(
            &next.hidden,
            dense.weight.value.data(),
            &mut logits,
            1,
            cell.hidden,
            self.vocab.len(),
        );
        if temperature != 1.0 {
            logits.iter_mut().for_each(|z| *z /= temperature);
        }
        math::softmax_in_place(&mut logits);
        Ok((logits, next))
    }

    /// Sample a sequence of symbol indices (END stripped), 1 to 20 long.
    pub fn generate<R: RngCore + ?Sized>(
        &self,
        first_dist: &[f64],
        rng: &mut R,
        max_steps: usize,
        temperature: f64,
    ) -> Result<Vec<usize>, SeqError> {
        let end = self.vocab.end_index();
        let mut weights = first_dist.to_vec();
        weights[end] = 0.0;
        let mut out = vec![sample_categorical(&weights, rng)];
        let mut state = LstmState::zeros(self.parts().0.hidden);
        for _ in 0..max_steps.min(MAX_GENERATED_STEPS) {
            let (probs, next) = self.step(*out.last().unwrap(), &state, temperature)?;
            state = next;
            let s = sample_categorical(&probs, rng);
            if s == end {
                break;
            }
            out.push(s);
        }
        Ok(out)
    }

    /// Values of a generated sequence.
    pub fn generate_values<R: RngCore + ?Sized>(
        &self,
        rng: &mut R,
        temperature: f64,
    ) -> Result<Vec<u32>, SeqError> {
        let first = self.first_symbol_distribution.clone();
        let idx = self.generate(&first, rng, MAX_GENERATED_STEPS, temperature)?;
        Ok(idx.into_iter().map(|i| self.vocab.values()[i]).collect())
    }
}

/// Serializable snapshot of a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub vocab: Vocabulary,
    pub hidden: usize,
    pub first_symbol_distribution: Vec<f64>,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl LstmGenerator {
    pub fn hidden(&self) -> usize {
        self.parts().0.hidden
    }

    pub fn to_state(&self) -> GeneratorState {
        GeneratorState {
            vocab: self.vocab.clone(),
            hidden: self.hidden(),
            first_symbol_distribution: self.first_symbol_distribution.clone(),
            params: self.net.state(),
        }
    }

    pub fn from_state(state: &GeneratorState) -> Result<Self, SeqError> {
        let mut gen = LstmGenerator::new(
            state.vocab.clone(),
            state.first_symbol_distribution.clone(),
            state.hidden,
            0,
        )?;
        gen.net.load_state(&state.params)?;
        gen.trained = true;
        Ok(gen)
    }
}

/// Teacher-forced training; returns the generator and the mean per-token
/// cross-entropy of every epoch.
pub fn train_generator(
    corpus: &SequenceCorpus,
    hyper: &GeneratorHyper,
) -> Result<(LstmGenerator, Vec<f64>), SeqError> {
    if corpus.sequences.is_empty() {
        return Err(SeqError::EmptyCorpus);
    }
    let mut gen = LstmGenerator::new(
        corpus.vocab.clone(),
        corpus.first_symbol_distribution.clone(),
        hyper.hidden,
        hyper.seed,
    )?;
    let v = corpus.vocab.len();
    let mut adam = Adam::new(AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    });
    let mut rng = rng_from_seed(crate::seed::derive_seed(hyper.seed, "generator-shuffle"));
    let mut order: Vec<usize> = (0..corpus.sequences.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(hyper.batch_size.max(1)) {
            gen.net.zero_grad();
            let tokens: usize = batch.iter().map(|&i| corpus.sequences[i].len() - 1).sum();
            for &i in batch {
                let (inputs, targets) = SequenceCorpus::teacher_forcing(&corpus.sequences[i]);
                let x = one_hot(inputs, v);
                let logits = gen.net.forward(&x, Mode::Train)?;
                let (loss, grad) = softmax_cross_entropy(&logits, targets)?;
                let weight = targets.len() as f64 / tokens as f64;
                let scaled = Tensor::from_vec(
                    grad.shape(),
                    grad.data().iter().map(|g| g * weight).collect(),
                )?;
                gen.net.backward(&scaled)?;
                epoch_loss += loss * targets.len() as f64;
            }
            epoch_tokens += tokens;
            adam.step(gen.net.params_mut())
                .map_err(|_| SeqError::Diverged(epoch))?;
        }
        let mean = epoch_loss / epoch_tokens as f64;
        if !mean.is_finite() {
            return Err(SeqError::Diverged(epoch));
        }
        trace.push(mean);
    }
    gen.trained = true;
    Ok((gen, trace))
}
