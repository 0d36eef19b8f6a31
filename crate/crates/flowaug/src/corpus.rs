//! Seeded synthetic imbalanced packet corpora.
//!
//! Each class has its own direction grammar (a two-state Markov chain over
//! packet directions with a class-specific length range), TCP window
//! alphabet, server ports and per-packet inter-arrival and payload
//! distributions. Majority classes get many flows, minority classes few.

use std::net::{IpAddr, Ipv4Addr};

use flowaug_core::flows::{ingest_packets, PacketRow, DEFAULT_IDLE_TIMEOUT};
use flowaug_core::seed::named_rng;
use flowaug_core::{Dataset, Transport};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub majority_flows: usize,
    pub minority_flows: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            majority_flows: 600,
            minority_flows: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub name: &'static str,
    pub minority: bool,
    pub tcp_fraction: f64,
    /// Inclusive range of packets per flow.
    pub length: (usize, usize),
    /// P(next packet forward | current forward).
    pub stay_forward: f64,
    /// P(next packet forward | current backward).
    pub turn_forward: f64,
    pub windows: &'static [(u32, f64)],
    pub server_ports: &'static [(u16, f64)],
    /// Median inter-arrival (seconds) and log-space spread.
    pub iat_median: f64,
    pub iat_sigma: f64,
    pub payload_mean: f64,
    pub payload_std: f64,
}

/// Three majority and four minority classes. Each minority class resembles
/// one majority class closely enough that imbalance costs it recall.
pub fn reference_profiles() -> Vec<ClassProfile> {
    vec![
        ClassProfile {
            name: "Web",
            minority: false,
            tcp_fraction: 1.0,
            length: (6, 20),
            stay_forward: 0.5,
            turn_forward: 0.5,
            windows: &[(65535, 0.5), (29200, 0.3), (64240, 0.2)],
            server_ports: &[(443, 0.8), (80, 0.2)],
            iat_median: 0.05,
            iat_sigma: 1.0,
            payload_mean: 700.0,
            payload_std: 400.0,
        },
        ClassProfile {
            name: "Streaming",
            minority: false,
            tcp_fraction: 0.6,
            length: (12, 20),
            stay_forward: 0.3,
            turn_forward: 0.2,
            windows: &[(65535, 0.7), (32768, 0.3)],
            server_ports: &[(443, 1.0)],
            iat_median: 0.01,
            iat_sigma: 0.8,
            payload_mean: 1200.0,
            payload_std: 250.0,
        },
        ClassProfile {
            name: "Download",
            minority: false,
            tcp_fraction: 1.0,
            length: (8, 20),
            stay_forward: 0.4,
            turn_forward: 0.3,
            windows: &[(64240, 0.6), (29200, 0.4)],
            server_ports: &[(80, 0.6), (443, 0.4)],
            iat_median: 0.02,
            iat_sigma: 1.0,
            payload_mean: 1000.0,
            payload_std: 400.0,
        },
        ClassProfile {
            name: "Chat",
            minority: true,
            tcp_fraction: 1.0,
            length: (4, 14),
            stay_forward: 0.6,
            turn_forward: 0.6,
            windows: &[(65535, 0.4), (29200, 0.6)],
            server_ports: &[(443, 1.0)],
            iat_median: 0.12,
            iat_sigma: 1.0,
            payload_mean: 450.0,
            payload_std: 350.0,
        },
        ClassProfile {
            name: "Voip",
            minority: true,
            tcp_fraction: 0.0,
            length: (10, 20),
            stay_forward: 0.5,
            turn_forward: 0.5,
            windows: &[],
            server_ports: &[(443, 0.5), (3478, 0.5)],
            iat_median: 0.02,
            iat_sigma: 0.5,
            payload_mean: 900.0,
            payload_std: 300.0,
        },
        ClassProfile {
            name: "Update",
            minority: true,
            tcp_fraction: 1.0,
            length: (8, 20),
            stay_forward: 0.35,
            turn_forward: 0.25,
            windows: &[(64240, 0.5), (65535, 0.5)],
            server_ports: &[(443, 0.7), (80, 0.3)],
            iat_median: 0.03,
            iat_sigma: 1.0,
            payload_mean: 1150.0,
            payload_std: 350.0,
        },
        ClassProfile {
            name: "Game",
            minority: true,
            tcp_fraction: 0.5,
            length: (5, 20),
            stay_forward: 0.65,
            turn_forward: 0.45,
            windows: &[(65535, 0.5), (29200, 0.5)],
            server_ports: &[(443, 0.6), (27015, 0.4)],
            iat_median: 0.05,
            iat_sigma: 0.7,
            payload_mean: 550.0,
            payload_std: 300.0,
        },
    ]
}

pub fn minority_classes(profiles: &[ClassProfile]) -> Vec<String> {
    profiles
        .iter()
        .filter(|p| p.minority)
        .map(|p| p.name.to_string())
        .collect()
}

fn weighted<T: Copy, R: Rng + ?Sized>(items: &[(T, f64)], rng: &mut R) -> T {
    let idx = WeightedIndex::new(items.iter().map(|i| i.1)).expect("positive weights");
    items[idx.sample(rng)].0
}

/// Packet rows for every flow of every profile, ordered by timestamp.
pub fn generate_rows(profiles: &[ClassProfile], cfg: &CorpusConfig) -> Result<Vec<PacketRow>> {
    let mut rows = Vec::new();
    let mut flow_no: u32 = 0;
    for (ci, p) in profiles.iter().enumerate() {
        if p.tcp_fraction > 0.0 && p.windows.is_empty() {
            return Err(Error::Config(format!(
                "class {} has TCP flows but no windows",
                p.name
            )));
        }
        let mut rng = named_rng(cfg.seed, &format!("corpus/{}", p.name));
        let iat = LogNormal::new(p.iat_median.ln(), p.iat_sigma)
            .map_err(|e| Error::Config(e.to_string()))?;
        let payload =
            Normal::new(p.payload_mean, p.payload_std).map_err(|e| Error::Config(e.to_string()))?;
        let count = if p.minority {
            cfg.minority_flows
        } else {
            cfg.majority_flows
        };
        for _ in 0..count {
            flow_no += 1;
            let client = IpAddr::V4(Ipv4Addr::from(0x0a00_0000 | flow_no));
            let server = IpAddr::V4(Ipv4Addr::new(172, 16, ci as u8, 1));
            let client_port: u16 = rng.random_range(49152..=65535);
            let server_port = weighted(p.server_ports, &mut rng);
            let transport = if rng.random::<f64>() < p.tcp_fraction {
                Transport::Tcp
            } else {
                Transport::Udp
            };
            let len = rng.random_range(p.length.0..=p.length.1);
            // flows are spaced far beyond the idle timeout
            let mut ts = f64::from(flow_no) * 10.0 * DEFAULT_IDLE_TIMEOUT;
            let mut forward = true;
            for k in 0..len {
                if k > 0 {
                    let pf = if forward {
                        p.stay_forward
                    } else {
                        p.turn_forward
                    };
                    forward = rng.random::<f64>() < pf;
                    ts += iat.sample(&mut rng).min(DEFAULT_IDLE_TIMEOUT / 2.0);
                }
                let (src, dst, sp, dp) = if forward {
                    (client, server, client_port, server_port)
                } else {
                    (server, client, server_port, client_port)
                };
                let window = match transport {
                    Transport::Tcp => weighted(p.windows, &mut rng),
                    Transport::Udp => 0,
                };
                let size = payload.sample(&mut rng).round().clamp(0.0, 1500.0) as u32;
                rows.push(PacketRow {
                    ts,
                    src_addr: src,
                    dst_addr: dst,
                    src_port: sp,
                    dst_port: dp,
                    transport,
                    tcp_window: window,
                    payload_len: size,
                    label: Some(p.name.to_string()),
                });
            }
        }
    }
    rows.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(rows)
}

/// The corpus assembled into flows.
pub fn generate_dataset(profiles: &[ClassProfile], cfg: &CorpusConfig) -> Result<Dataset> {
    Ok(ingest_packets(
        generate_rows(profiles, cfg)?,
        DEFAULT_IDLE_TIMEOUT,
    )?)
}
