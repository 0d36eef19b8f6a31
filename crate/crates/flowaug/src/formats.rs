//! On-disk formats: packet CSV, versioned flow dataset JSON, model
//! checkpoints, augmentation bundles and evaluation reports.

use std::fs;
use std::io::{BufReader, Read, Write};
use std::net::IpAddr;
use std::path::Path;

use flowaug_core::augment::{SynthConfig, SynthesizerState};
use flowaug_core::classifier::CrnnCheckpoint;
use flowaug_core::eval::EvalReport;
use flowaug_core::flows::{FlowAssembler, PacketRow};
use flowaug_core::{ClassIndex, Dataset, FiveTuple, FlowRecord, PacketFeatures, Transport};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const PACKET_CSV_HEADER: [&str; 9] = [
    "ts",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "proto",
    "tcp_window",
    "payload_len",
    "label",
];

#[derive(Debug, Deserialize)]
struct CsvRow {
    ts: f64,
    src_ip: IpAddr,
    dst_ip: IpAddr,
    src_port: u16,
    dst_port: u16,
    proto: String,
    tcp_window: u32,
    payload_len: u32,
    #[serde(default)]
    label: Option<String>,
}

fn parse_proto(s: &str) -> Option<Transport> {
    match s.trim().to_ascii_lowercase().as_str() {
        "tcp" | "6" => Some(Transport::Tcp),
        "udp" | "17" => Some(Transport::Udp),
        _ => None,
    }
}

/// Parse packet rows from CSV text; `path` is only used in messages.
pub fn parse_packet_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<PacketRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_err = |reason: String| Error::Parse {
        path: path.into(),
        line: 1,
        reason,
    };
    let headers = rdr
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    if headers.iter().ne(PACKET_CSV_HEADER.iter().copied()) {
        return Err(header_err(format!(
            "expected header {:?}, found {:?}",
            PACKET_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<CsvRow>() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            reason: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            },
        })?;
        let line = rows.len() as u64 + 2;
        let transport = parse_proto(&rec.proto).ok_or_else(|| Error::Parse {
            path: path.into(),
            line,
            reason: format!("unknown protocol {:?}", rec.proto),
        })?;
        if !rec.ts.is_finite() || rec.ts < 0.0 {
            return Err(Error::Parse {
                path: path.into(),
                line,
                reason: format!("timestamp {} must be finite and non-negative", rec.ts),
            });
        }
        rows.push(PacketRow {
            ts: rec.ts,
            src_addr: rec.src_ip,
            dst_addr: rec.dst_ip,
            src_port: rec.src_port,
            dst_port: rec.dst_port,
            transport,
            tcp_window: rec.tcp_window,
            payload_len: rec.payload_len,
            label: rec.label.filter(|l| !l.is_empty()),
        });
    }
    Ok(rows)
}

pub fn read_packet_csv(path: &Path, idle_timeout: f64) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_packet_csv(BufReader::new(file), path)?;
    let mut asm = FlowAssembler::new(idle_timeout);
    for row in rows {
        asm.push(row)?;
    }
    Ok(asm.finish())
}

pub fn write_packet_csv(path: &Path, rows: &[PacketRow]) -> Result<()> {
    let mut out =
        String::from("ts,src_ip,dst_ip,src_port,dst_port,proto,tcp_window,payload_len,label\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.ts,
            r.src_addr,
            r.dst_addr,
            r.src_port,
            r.dst_port,
            r.transport.as_str(),
            r.tcp_window,
            r.payload_len,
            r.label.as_deref().unwrap_or("")
        ));
    }
    write_bytes(path, out.as_bytes())
}

/// `[direction, tcp_window, src_port, dst_port, inter_arrival, payload_len]`
type PacketArray = (u8, u32, u16, u16, f64, u32);

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowEntry {
    key: FiveTuple,
    label: Option<String>,
    n_real_packets: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    synthetic: bool,
    packets: Vec<PacketArray>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowFile {
    version: u32,
    classes: ClassIndex,
    flows: Vec<FlowEntry>,
}

fn entry(f: &FlowRecord) -> FlowEntry {
    FlowEntry {
        key: f.key,
        label: f.label.clone(),
        n_real_packets: f.n_real_packets(),
        synthetic: f.synthetic,
        packets: f
            .packets
            .iter()
            .map(|p| {
                (
                    p.direction,
                    p.tcp_window,
                    p.src_port,
                    p.dst_port,
                    p.inter_arrival,
                    p.payload_len,
                )
            })
            .collect(),
    }
}

/// Flow dataset JSON text; identical datasets give identical bytes.
pub fn dataset_json(ds: &Dataset) -> String {
    let file = FlowFile {
        version: FORMAT_VERSION,
        classes: ds.classes.clone(),
        flows: ds.flows.iter().map(entry).collect(),
    };
    to_json(&file)
}

/// JSON for a list of flows without the dataset wrapper.
pub fn flows_json(flows: &[FlowRecord]) -> String {
    to_json(&flows.iter().map(entry).collect::<Vec<_>>())
}

pub fn parse_dataset_json(text: &str, path: &Path) -> Result<Dataset> {
    let file: FlowFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line() as u64,
        reason: e.to_string(),
    })?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("unsupported flow dataset version {}", file.version),
        });
    }
    let mut flows = Vec::with_capacity(file.flows.len());
    for (i, e) in file.flows.into_iter().enumerate() {
        let bad = |reason: String| Error::Format {
            path: path.into(),
            reason: format!("flow {i}: {reason}"),
        };
        if e.n_real_packets != e.packets.len() {
            return Err(bad(format!(
                "n_real_packets is {} but {} packets are listed",
                e.n_real_packets,
                e.packets.len()
            )));
        }
        let record = FlowRecord {
            key: e.key,
            label: e.label,
            packets: e
                .packets
                .into_iter()
                .map(
                    |(direction, tcp_window, src_port, dst_port, inter_arrival, payload_len)| {
                        PacketFeatures {
                            direction,
                            tcp_window,
                            src_port,
                            dst_port,
                            inter_arrival,
                            payload_len,
                        }
                    },
                )
                .collect(),
            synthetic: e.synthetic,
        };
        record.validate().map_err(|err| bad(err.to_string()))?;
        flows.push(record);
    }
    Dataset::new(flows, file.classes).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset_json(&read_text(path)?, path)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_bytes(path, dataset_json(ds).as_bytes())
}

/// Hex SHA-256 of the dataset's JSON form.
pub fn dataset_hash(ds: &Dataset) -> String {
    let digest = Sha256::digest(dataset_json(ds).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read a flow dataset or a packet CSV, chosen by extension.
pub fn read_flows_or_packets(path: &Path, idle_timeout: f64) -> Result<Dataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_packet_csv(path, idle_timeout),
        _ => read_dataset(path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationBundle {
    pub version: u32,
    pub config: SynthConfig,
    pub seed: u64,
    pub synthesizers: Vec<SynthesizerState>,
}

/// Evaluation report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: EvalReport,
    pub test_set_sha256: String,
    pub train_flows: usize,
}

pub fn read_checkpoint(path: &Path) -> Result<CrnnCheckpoint> {
    read_json(path)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory JSON serialization");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line() as u64,
        reason: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json(value).as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
