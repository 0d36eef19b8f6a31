//! Labeled flow records, flow assembly from packet rows, class statistics and
//! stratified splitting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::net::IpAddr;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::rng_from_seed;

/// Packets kept per flow.
pub const MAX_PACKETS: usize = 20;
/// Per-packet features: direction, TCP window, source port, destination port,
/// inter-arrival time, payload length (matrix row order).
pub const FEATURES: usize = 6;
/// Default idle gap (seconds) after which a 5-tuple starts a new flow.
pub const DEFAULT_IDLE_TIMEOUT: f64 = 60.0;

/// Flow counts of the 19-class, 904 490-flow campus trace the classifier
/// architecture was designed around. Useful for statistics and plan checks.
pub const REFERENCE_CLASS_COUNTS: [(&str, usize); 19] = [
    ("HTTP", 58774),
    ("DNS", 126960),
    ("NTP", 4633),
    ("BitTorrent", 6146),
    ("HTTP_Download", 16326),
    ("SSL_No_Cert", 10603),
    ("Steam", 4460),
    ("RDP", 1425),
    ("SSL", 341846),
    ("SSH", 9746),
    ("Facebook", 2772),
    ("Twitter", 2198),
    ("Google", 96072),
    ("WindowsUpdate", 2343),
    ("Telegram", 186256),
    ("Instagram", 6683),
    ("Microsoft", 18196),
    ("PlayStore", 5304),
    ("YouTube", 3747),
];

/// The low-population classes singled out for augmentation and oversampling
/// on the reference trace.
pub const REFERENCE_MINORITY_CLASSES: [&str; 7] = [
    "NTP",
    "Facebook",
    "Twitter",
    "WindowsUpdate",
    "Instagram",
    "PlayStore",
    "YouTube",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("flow {0} has no label")]
    Unlabeled(usize),
    #[error("class {class:?} has {count} flow(s); at least 2 are needed to split")]
    ClassTooSmall { class: String, count: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("flow invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        }
    }
}

impl core::str::FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tcp" | "TCP" => Ok(Transport::Tcp),
            "udp" | "UDP" => Ok(Transport::Udp),
            other => Err(format!("unknown transport {other:?} (expected tcp or udp)")),
        }
    }
}

/// Flow identity, oriented from the initiator (first packet's sender).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
}

impl FiveTuple {
    /// Direction-free key: the two endpoints in sorted order plus transport.
    pub fn bidirectional_key(&self) -> ((IpAddr, u16), (IpAddr, u16), Transport) {
        let a = (self.src_addr, self.src_port);
        let b = (self.dst_addr, self.dst_port);
        if a <= b {
            (a, b, self.transport)
        } else {
            (b, a, self.transport)
        }
    }
}

/// The six per-packet features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketFeatures {
    /// 1 = source→destination, 0 = destination→source.
    pub direction: u8,
    pub tcp_window: u32,
    pub src_port: u16,
    pub dst_port: u16,
    /// Seconds since the previous packet of the flow; 0 for the first.
    pub inter_arrival: f64,
    pub payload_len: u32,
}

impl PacketFeatures {
    pub fn to_array(&self) -> [f64; FEATURES] {
        [
            f64::from(self.direction),
            f64::from(self.tcp_window),
            f64::from(self.src_port),
            f64::from(self.dst_port),
            self.inter_arrival,
            f64::from(self.payload_len),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FiveTuple,
    pub label: Option<String>,
    /// The real packets, 1 to [`MAX_PACKETS`] of them. Padding is implicit.
    pub packets: Vec<PacketFeatures>,
    /// Set on flows produced by augmentation.
    #[serde(default)]
    pub synthetic: bool,
}

impl FlowRecord {
    pub fn n_real_packets(&self) -> usize {
        self.packets.len()
    }

    /// 6×20 feature matrix; columns past `n_real_packets` are zero.
    pub fn matrix(&self) -> [[f64; MAX_PACKETS]; FEATURES] {
        let mut m = [[0.0; MAX_PACKETS]; FEATURES];
        for (col, p) in self.packets.iter().take(MAX_PACKETS).enumerate() {
            for (row, v) in p.to_array().into_iter().enumerate() {
                m[row][col] = v;
            }
        }
        m
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let n = self.packets.len();
        if n == 0 || n > MAX_PACKETS {
            return Err(FlowError::Invariant(format!(
                "{n} packets (allowed 1..={MAX_PACKETS})"
            )));
        }
        if self.packets[0].direction != 1 {
            return Err(FlowError::Invariant(
                "first packet must travel source→destination".into(),
            ));
        }
        if self.packets[0].inter_arrival != 0.0 {
            return Err(FlowError::Invariant(
                "first packet inter-arrival must be 0".into(),
            ));
        }
        for (i, p) in self.packets.iter().enumerate() {
            if p.direction > 1 {
                return Err(FlowError::Invariant(format!(
                    "packet {i}: direction {}",
                    p.direction
                )));
            }
            if !p.inter_arrival.is_finite() || p.inter_arrival < 0.0 {
                return Err(FlowError::Invariant(format!(
                    "packet {i}: inter-arrival {}",
                    p.inter_arrival
                )));
            }
            if self.key.transport == Transport::Udp && p.tcp_window != 0 {
                return Err(FlowError::Invariant(format!(
                    "packet {i}: UDP packet with TCP window"
                )));
            }
        }
        Ok(())
    }
}

/// Ordered class name ↔ contiguous id mapping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ClassIndex {
    names: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl From<Vec<String>> for ClassIndex {
    fn from(names: Vec<String>) -> Self {
        ClassIndex::new(names)
    }
}

impl From<ClassIndex> for Vec<String> {
    fn from(c: ClassIndex) -> Self {
        c.names
    }
}

impl ClassIndex {
    /// Duplicate names keep their first position.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let mut idx = ClassIndex::default();
        for n in names {
            idx.insert(n.into());
        }
        idx
    }

    fn insert(&mut self, name: String) -> usize {
        if let Some(&id) = self.ids.get(&name) {
            return id;
        }
        let id = self.names.len();
        self.ids.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub flows: Vec<FlowRecord>,
    pub classes: ClassIndex,
}

impl Dataset {
    /// Checks that every label is in `classes`.
    pub fn new(flows: Vec<FlowRecord>, classes: ClassIndex) -> Result<Self, FlowError> {
        for f in &flows {
            if let Some(l) = &f.label {
                if classes.id(l).is_none() {
                    return Err(FlowError::UnknownClass(l.clone()));
                }
            }
        }
        Ok(Dataset { flows, classes })
    }

    /// Class index built from the sorted set of labels present.
    pub fn from_flows(flows: Vec<FlowRecord>) -> Self {
        let mut labels: Vec<&String> = flows.iter().filter_map(|f| f.label.as_ref()).collect();
        labels.sort();
        labels.dedup();
        let classes = ClassIndex::new(labels.into_iter().cloned());
        Dataset { flows, classes }
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn label_id(&self, flow: &FlowRecord) -> Option<usize> {
        flow.label.as_deref().and_then(|l| self.classes.id(l))
    }

    /// Class ids aligned with `flows`; errors on unlabeled flows.
    pub fn label_ids(&self) -> Result<Vec<usize>, FlowError> {
        self.flows
            .iter()
            .enumerate()
            .map(|(i, f)| self.label_id(f).ok_or(FlowError::Unlabeled(i)))
            .collect()
    }

    pub fn flows_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a FlowRecord> + 'a {
        self.flows
            .iter()
            .filter(move |f| f.label.as_deref() == Some(class))
    }

    /// Flow count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.classes.len()];
        for f in &self.flows {
            if let Some(id) = self.label_id(f) {
                counts[id] += 1;
            }
        }
        counts
    }

    /// A copy restricted to `flows`, sharing this class index.
    pub fn with_flows(&self, flows: Vec<FlowRecord>) -> Dataset {
        Dataset {
            flows,
            classes: self.classes.clone(),
        }
    }
}

/// One parsed packet row, ready for flow assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRow {
    pub ts: f64,
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub transport: Transport,
    pub tcp_window: u32,
    pub payload_len: u32,
    pub label: Option<String>,
}

impl PacketRow {
    fn five_tuple(&self) -> FiveTuple {
        FiveTuple {
            src_addr: self.src_addr,
            dst_addr: self.dst_addr,
            src_port: self.src_port,
            dst_port: self.dst_port,
            transport: self.transport,
        }
    }
}

type EndpointKey = ((IpAddr, u16), (IpAddr, u16), Transport);

/// Groups packet rows into flows keyed by the bidirectional 5-tuple.
///
/// Rows may arrive in any order. Within a key, packets are ordered by
/// timestamp (ties keep arrival order), a gap longer than the idle timeout
/// starts a new flow, and each flow keeps only its first [`MAX_PACKETS`]
/// packets. The first packet of a flow fixes its orientation and label.
#[derive(Debug, Clone)]
pub struct FlowAssembler {
    idle_timeout: f64,
    rows: BTreeMap<EndpointKey, Vec<PacketRow>>,
    seen: usize,
}

impl Default for FlowAssembler {
    fn default() -> Self {
        FlowAssembler::new(DEFAULT_IDLE_TIMEOUT)
    }
}

impl FlowAssembler {
    pub fn new(idle_timeout: f64) -> Self {
        FlowAssembler {
            idle_timeout,
            rows: BTreeMap::new(),
            seen: 0,
        }
    }

    pub fn push(&mut self, row: PacketRow) -> Result<(), FlowError> {
        let index = self.seen;
        self.seen += 1;
        if !row.ts.is_finite() {
            return Err(FlowError::InvalidRow {
                row: index,
                reason: format!("timestamp {} is not finite", row.ts),
            });
        }
        let key = row.five_tuple().bidirectional_key();
        self.rows.entry(key).or_default().push(row);
        Ok(())
    }

    pub fn rows_seen(&self) -> usize {
        self.seen
    }

    pub fn finish(self) -> Dataset {
        let mut flows: Vec<(f64, FiveTuple, FlowRecord)> = Vec::new();
        for (_, mut rows) in self.rows {
            // stable: equal timestamps keep arrival order
            rows.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            let mut current: Option<(f64, f64, FlowRecord)> = None; // (start, last ts, flow)
            for row in rows {
                let continues =
                    matches!(&current, Some((_, last, _)) if row.ts - *last <= self.idle_timeout);
                if !continues {
                    if let Some((start, _, flow)) = current.take() {
                        flows.push((start, flow.key, flow));
                    }
                    let key = row.five_tuple();
                    let first = PacketFeatures {
                        direction: 1,
                        tcp_window: if key.transport == Transport::Tcp {
                            row.tcp_window
                        } else {
                            0
                        },
                        src_port: row.src_port,
                        dst_port: row.dst_port,
                        inter_arrival: 0.0,
                        payload_len: row.payload_len,
                    };
                    current = Some((
                        row.ts,
                        row.ts,
                        FlowRecord {
                            key,
                            label: row.label.clone().filter(|l| !l.is_empty()),
                            packets: alloc::vec![first],
                            synthetic: false,
                        },
                    ));
                    continue;
                }
                let (_, last, flow) = current.as_mut().expect("continuing flow exists");
                let gap = row.ts - *last;
                *last = row.ts;
                if flow.packets.len() >= MAX_PACKETS {
                    continue;
                }
                let forward =
                    row.src_addr == flow.key.src_addr && row.src_port == flow.key.src_port;
                flow.packets.push(PacketFeatures {
                    direction: u8::from(forward),
                    tcp_window: if flow.key.transport == Transport::Tcp {
                        row.tcp_window
                    } else {
                        0
                    },
                    src_port: row.src_port,
                    dst_port: row.dst_port,
                    inter_arrival: gap,
                    payload_len: row.payload_len,
                });
            }
            if let Some((start, _, flow)) = current {
                flows.push((start, flow.key, flow));
            }
        }
        flows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Dataset::from_flows(flows.into_iter().map(|(_, _, f)| f).collect())
    }
}

/// Convenience wrapper: assemble `rows` with the given idle timeout.
pub fn ingest_packets<I>(rows: I, idle_timeout: f64) -> Result<Dataset, FlowError>
where
    I: IntoIterator<Item = PacketRow>,
{
    let mut asm = FlowAssembler::new(idle_timeout);
    for row in rows {
        asm.push(row)?;
    }
    Ok(asm.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub name: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub classes: Vec<ClassShare>,
    pub total: usize,
}

impl ClassStats {
    pub fn from_counts<'a, I>(counts: I) -> Result<Self, FlowError>
    where
        I: IntoIterator<Item = (&'a str, usize)>,
    {
        let pairs: Vec<(&str, usize)> = counts.into_iter().collect();
        let total: usize = pairs.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(FlowError::EmptyDataset);
        }
        let classes = pairs
            .into_iter()
            .map(|(name, count)| ClassShare {
                name: name.into(),
                count,
                percent: 100.0 * count as f64 / total as f64,
            })
            .collect();
        Ok(ClassStats { classes, total })
    }

    pub fn share(&self, class: &str) -> Option<f64> {
        self.classes
            .iter()
            .find(|c| c.name == class)
            .map(|c| c.percent)
    }

    /// Combined share of the `k` most populated classes.
    pub fn top_share(&self, k: usize) -> f64 {
        let mut counts: Vec<usize> = self.classes.iter().map(|c| c.count).collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let top: usize = counts.iter().take(k).sum();
        100.0 * top as f64 / self.total as f64
    }
}

/// Per-class flow counts and percentages. Unlabeled flows are not counted.
pub fn class_stats(dataset: &Dataset) -> Result<ClassStats, FlowError> {
    if dataset.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let counts = dataset.class_counts();
    ClassStats::from_counts(
        dataset
            .classes
            .names()
            .iter()
            .map(String::as_str)
            .zip(counts),
    )
}

/// Stratified split: each class contributes `floor(fraction · n_c)` flows to
/// train and the rest to test. Both halves keep the input order and the full
/// class index.
pub fn split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), FlowError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FlowError::InvalidFraction(train_fraction));
    }
    let labels = dataset.label_ids()?;
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); dataset.classes.len()];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut in_train = alloc::vec![false; dataset.len()];
    for (c, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(FlowError::ClassTooSmall {
                class: dataset.classes.name(c).unwrap_or_default().into(),
                count: idx.len(),
            });
        }
        let n_train = crate::math::floor(train_fraction * idx.len() as f64) as usize;
        idx.shuffle(&mut rng);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (flow, t) in dataset.flows.iter().zip(in_train) {
        if t {
            train.push(flow.clone());
        } else {
            test.push(flow.clone());
        }
    }
    Ok((dataset.with_flows(train), dataset.with_flows(test)))
}
