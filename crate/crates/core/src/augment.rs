//! Synthetic flow generation and the random-oversampling baseline.
//!
//! A [`ClassSynthesizer`] pairs a direction generator, an optional TCP-window
//! generator and one KDE per numerical feature, all fitted on one class of
//! the training split. Balancing targets come from a [`BalancePlan`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::net::{IpAddr, Ipv4Addr};
use core::str::FromStr;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::{bandwidth_floor, Bandwidth, KdeError, KdeModel};
use crate::flows::{Dataset, FiveTuple, FlowRecord, PacketFeatures, Transport};
use crate::math;
use crate::seed::derive_seed;
use crate::seqgen::{
    build_direction_corpus, build_window_corpus, train_generator, GeneratorHyper, GeneratorState,
    LstmGenerator, SeqError, DEFAULT_WINDOW_VOCAB_CAP,
};

/// Source address given to every synthetic flow (benchmarking range).
pub const PLACEHOLDER_SRC: Ipv4Addr = Ipv4Addr::new(198, 18, 0, 1);
pub const PLACEHOLDER_DST: Ipv4Addr = Ipv4Addr::new(198, 19, 0, 1);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("class {class:?} has {count} training flows, need at least {needed}")]
    TooFewFlows {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class {class:?}: target {target} is below the current count {current}")]
    TargetBelowCurrent {
        class: String,
        target: usize,
        current: usize,
    },
    #[error("no synthesizer for class {0:?}")]
    MissingSynthesizer(String),
    #[error("balance plan needs at least one class")]
    EmptyClassList,
    #[error("bad balance strategy {0:?}; expected \"median\" or \"fixed:N\"")]
    BadStrategy(String),
    #[error(transparent)]
    Sequence(#[from] SeqError),
    #[error(transparent)]
    Density(#[from] KdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub min_flows: usize,
    pub window_vocab_cap: usize,
    pub generator: GeneratorHyper,
    pub bandwidth: Bandwidth,
    /// Root seed for generator training; each class and feature derives its own.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_flows: 50,
            window_vocab_cap: DEFAULT_WINDOW_VOCAB_CAP,
            generator: GeneratorHyper::default(),
            bandwidth: Bandwidth::Silverman,
            seed: 0,
        }
    }
}

/// Numerical features modeled by KDE, in [`ClassSynthesizer::kdes`] order.
pub const NUMERIC_FEATURES: [&str; 4] = ["src_port", "dst_port", "inter_arrival", "payload_len"];

#[derive(Debug, Clone)]
pub struct ClassSynthesizer {
    pub class: String,
    pub direction: LstmGenerator,
    pub window: Option<LstmGenerator>,
    pub kdes: [KdeModel; 4],
    /// Share of the class's training flows carried over TCP.
    pub tcp_fraction: f64,
    pub temperature: f64,
}

/// Serializable form of a [`ClassSynthesizer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizerState {
    pub class: String,
    pub direction: GeneratorState,
    pub window: Option<GeneratorState>,
    pub kdes: [KdeModel; 4],
    pub tcp_fraction: f64,
    pub temperature: f64,
}

impl ClassSynthesizer {
    pub fn to_state(&self) -> SynthesizerState {
        SynthesizerState {
            class: self.class.clone(),
            direction: self.direction.to_state(),
            window: self.window.as_ref().map(LstmGenerator::to_state),
            kdes: self.kdes.clone(),
            tcp_fraction: self.tcp_fraction,
            temperature: self.temperature,
        }
    }

    pub fn from_state(state: &SynthesizerState) -> Result<Self, AugmentError> {
        Ok(ClassSynthesizer {
            class: state.class.clone(),
            direction: LstmGenerator::from_state(&state.direction)?,
            window: state
                .window
                .as_ref()
                .map(LstmGenerator::from_state)
                .transpose()?,
            kdes: state.kdes.clone(),
            tcp_fraction: state.tcp_fraction,
            temperature: state.temperature,
        })
    }
}

fn fit_feature(values: Vec<f64>, bandwidth: Bandwidth) -> Result<KdeModel, KdeError> {
    match (values.len(), bandwidth) {
        (0, _) => KdeModel::fit(vec![0.0], Bandwidth::Fixed(bandwidth_floor(&[0.0]))),
        (1, Bandwidth::Silverman) => {
            let h = bandwidth_floor(&values);
            KdeModel::fit(values, Bandwidth::Fixed(h))
        }
        _ => KdeModel::fit(values, bandwidth),
    }
}

/// Train the generators and fit the KDEs for `class` on `train`. Returns
/// warnings for components that had to be degraded.
pub fn build_synthesizer(
    train: &Dataset,
    class: &str,
    config: &SynthConfig,
) -> Result<(ClassSynthesizer, Vec<String>), AugmentError> {
    if train.classes.id(class).is_none() {
        return Err(AugmentError::UnknownClass(class.into()));
    }
    let flows: Vec<&FlowRecord> = train.flows_of(class).filter(|f| !f.synthetic).collect();
    if flows.len() < config.min_flows.max(1) {
        return Err(AugmentError::TooFewFlows {
            class: class.into(),
            count: flows.len(),
            needed: config.min_flows.max(1),
        });
    }
    let mut warnings = Vec::new();

    let hyper = |feature: &str| GeneratorHyper {
        seed: derive_seed(config.seed, &format!("{class}/{feature}")),
        ..config.generator
    };
    let directions = build_direction_corpus(train, class)?;
    let (direction, _) = train_generator(&directions, &hyper("direction"))?;

    let window = match build_window_corpus(train, class, config.window_vocab_cap)
        .and_then(|c| train_generator(&c, &hyper("window")))
    {
        Ok((g, _)) => Some(g),
        Err(e) => {
            warnings.push(format!(
                "class {class}: no window generator ({e}); windows set to 0"
            ));
            None
        }
    };

    let mut columns: [Vec<f64>; 4] = Default::default();
    for f in &flows {
        for (i, p) in f.packets.iter().enumerate() {
            columns[0].push(f64::from(p.src_port));
            columns[1].push(f64::from(p.dst_port));
            if i > 0 {
                columns[2].push(p.inter_arrival);
            }
            columns[3].push(f64::from(p.payload_len));
        }
    }
    if columns[2].is_empty() {
        warnings.push(format!(
            "class {class}: only single-packet flows; inter-arrival KDE is degenerate at 0"
        ));
    }
    let [a, b, c, d] = columns;
    let bw = config.bandwidth;
    let kdes = [
        fit_feature(a, bw)?,
        fit_feature(b, bw)?,
        fit_feature(c, bw)?,
        fit_feature(d, bw)?,
    ];
    let tcp = flows
        .iter()
        .filter(|f| f.key.transport == Transport::Tcp)
        .count();
    Ok((
        ClassSynthesizer {
            class: class.into(),
            direction,
            window,
            kdes,
            tcp_fraction: tcp as f64 / flows.len() as f64,
            temperature: config.generator.temperature,
        },
        warnings,
    ))
}

fn to_port(x: f64) -> u16 {
    math::round(x).clamp(0.0, 65535.0) as u16
}

/// Match `windows` to `len` by truncating or repeating its last value.
pub fn align_windows(mut windows: Vec<u32>, len: usize) -> Vec<u32> {
    let last = windows.last().copied().unwrap_or(0);
    windows.resize(len, last);
    windows
}

/// Compose one synthetic flow.
pub fn synthesize_flow<R: RngCore + ?Sized>(
    s: &ClassSynthesizer,
    rng: &mut R,
) -> Result<FlowRecord, AugmentError> {
    let dirs = s.direction.generate_values(rng, s.temperature)?;
    let len = dirs.len();
    let transport = if rng.random::<f64>() < s.tcp_fraction {
        Transport::Tcp
    } else {
        Transport::Udp
    };
    let windows = match (&s.window, transport) {
        (Some(g), Transport::Tcp) => align_windows(g.generate_values(rng, s.temperature)?, len),
        _ => vec![0; len],
    };
    let mut packets = Vec::with_capacity(len);
    for (i, (&d, &w)) in dirs.iter().zip(&windows).enumerate() {
        let src_port = to_port(s.kdes[0].sample_one(rng));
        let dst_port = to_port(s.kdes[1].sample_one(rng));
        let iat = s.kdes[2].sample_one(rng);
        let payload = s.kdes[3].sample_one(rng);
        packets.push(PacketFeatures {
            direction: if i == 0 { 1 } else { d.min(1) as u8 },
            tcp_window: w,
            src_port,
            dst_port,
            inter_arrival: if i == 0 { 0.0 } else { iat.max(0.0) },
            payload_len: math::round(payload).clamp(0.0, u32::MAX as f64) as u32,
        });
    }
    Ok(FlowRecord {
        key: FiveTuple {
            src_addr: IpAddr::V4(PLACEHOLDER_SRC),
            dst_addr: IpAddr::V4(PLACEHOLDER_DST),
            src_port: packets[0].src_port,
            dst_port: packets[0].dst_port,
            transport,
        },
        label: Some(s.class.clone()),
        packets,
        synthetic: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceStrategy {
    /// Raise each class to the median class count.
    Median,
    /// Raise each class to at least `N` flows.
    Fixed(usize),
}

impl FromStr for BalanceStrategy {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t == "median" {
            return Ok(BalanceStrategy::Median);
        }
        t.strip_prefix("fixed:")
            .and_then(|n| n.trim().parse().ok())
            .map(BalanceStrategy::Fixed)
            .ok_or_else(|| AugmentError::BadStrategy(s.into()))
    }
}

impl fmt::Display for BalanceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalanceStrategy::Median => f.write_str("median"),
            BalanceStrategy::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

impl Serialize for BalanceStrategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BalanceStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Target flow count per class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BalancePlan {
    pub targets: BTreeMap<String, usize>,
}

impl BalancePlan {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Flows to add per class, checked against `dataset`.
    pub fn deficits(&self, dataset: &Dataset) -> Result<Vec<(String, usize)>, AugmentError> {
        let counts = dataset.class_counts();
        self.targets
            .iter()
            .map(|(class, &target)| {
                let id = dataset
                    .classes
                    .id(class)
                    .ok_or_else(|| AugmentError::UnknownClass(class.clone()))?;
                let current = counts[id];
                if target < current {
                    return Err(AugmentError::TargetBelowCurrent {
                        class: class.clone(),
                        target,
                        current,
                    });
                }
                Ok((class.clone(), target - current))
            })
            .collect()
    }
}

/// Median of `counts`: the element at index `n / 2` after sorting.
pub fn median_count(counts: &[usize]) -> usize {
    let mut c = counts.to_vec();
    c.sort_unstable();
    c.get(c.len() / 2).copied().unwrap_or(0)
}

pub fn default_balance_plan<S: AsRef<str>>(
    train: &Dataset,
    classes: &[S],
    strategy: BalanceStrategy,
) -> Result<BalancePlan, AugmentError> {
    if classes.is_empty() {
        return Err(AugmentError::EmptyClassList);
    }
    let counts = train.class_counts();
    let median = median_count(&counts);
    let mut targets = BTreeMap::new();
    for c in classes {
        let c = c.as_ref();
        let id = train
            .classes
            .id(c)
            .ok_or_else(|| AugmentError::UnknownClass(c.into()))?;
        let level = match strategy {
            BalanceStrategy::Median => median,
            BalanceStrategy::Fixed(n) => n,
        };
        targets.insert(c.to_string(), counts[id].max(level));
    }
    Ok(BalancePlan { targets })
}

/// `train` plus synthetic flows up to each planned target.
pub fn augment_dataset<R: RngCore + ?Sized>(
    train: &Dataset,
    plan: &BalancePlan,
    synthesizers: &[ClassSynthesizer],
    rng: &mut R,
) -> Result<Dataset, AugmentError> {
    let deficits = plan.deficits(train)?;
    let mut flows = train.flows.clone();
    for (class, need) in deficits {
        let s = synthesizers
            .iter()
            .find(|s| s.class == class)
            .ok_or_else(|| AugmentError::MissingSynthesizer(class.clone()))?;
        for _ in 0..need {
            flows.push(synthesize_flow(s, rng)?);
        }
    }
    Ok(train.with_flows(flows))
}

/// `train` plus uniformly drawn duplicates up to each planned target.
pub fn oversample_dataset<R: RngCore + ?Sized>(
    train: &Dataset,
    plan: &BalancePlan,
    rng: &mut R,
) -> Result<Dataset, AugmentError> {
    let deficits = plan.deficits(train)?;
    let mut flows = train.flows.clone();
    for (class, need) in deficits {
        let pool: Vec<&FlowRecord> = train.flows_of(&class).collect();
        if need > 0 && pool.is_empty() {
            return Err(AugmentError::TooFewFlows {
                class,
                count: 0,
                needed: 1,
            });
        }
        for _ in 0..need {
            flows.push(pool[rng.random_range(0..pool.len())].clone());
        }
    }
    Ok(train.with_flows(flows))
}
