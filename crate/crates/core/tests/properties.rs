use std::net::{IpAddr, Ipv4Addr};

use flowaug_core::density::{Bandwidth, KdeModel};
use flowaug_core::eval::{confusion, f1_score, metrics, Variant};
use flowaug_core::flows::{ingest_packets, split, PacketRow, MAX_PACKETS};
use flowaug_core::neural::{softmax, Tensor};
use flowaug_core::seed::rng_from_seed;
use flowaug_core::seqgen::{LstmGenerator, Vocabulary};
use flowaug_core::{ClassIndex, Transport};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn host(i: u8) -> IpAddr {
    IpAddr::V4(Ipv4Addr::new(10, 0, 0, i))
}

/// Rows for a handful of conversations with distinct timestamps.
fn rows_strategy() -> impl Strategy<Value = Vec<PacketRow>> {
    prop::collection::vec((0u8..4, any::<bool>(), 1u32..500, 0u32..1500), 1..120).prop_map(|spec| {
        let mut ts = 0.0;
        spec.into_iter()
            .map(|(conv, forward, gap_ms, payload)| {
                ts += f64::from(gap_ms) * 0.37;
                let (a, b, pa, pb) = (host(conv), host(100 + conv), 40000 + u16::from(conv), 443);
                let (src, dst, sp, dp) = if forward {
                    (a, b, pa, pb)
                } else {
                    (b, a, pb, pa)
                };
                PacketRow {
                    ts,
                    src_addr: src,
                    dst_addr: dst,
                    src_port: sp,
                    dst_port: dp,
                    transport: if conv % 2 == 0 {
                        Transport::Tcp
                    } else {
                        Transport::Udp
                    },
                    tcp_window: 1000 + payload,
                    payload_len: payload,
                    label: Some(format!("app{}", conv % 3)),
                }
            })
            .collect()
    })
}

/// Independent grouper: per conversation, split sorted timestamps at gaps
/// over the timeout and report segment sizes capped at the packet limit.
fn reference_flow_sizes(rows: &[PacketRow], timeout: f64) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut convs: Vec<u8> = rows
        .iter()
        .map(|r| match r.src_addr {
            IpAddr::V4(a) => a.octets()[3] % 100,
            _ => unreachable!(),
        })
        .collect();
    convs.sort();
    convs.dedup();
    for c in convs {
        let mut ts: Vec<f64> = rows
            .iter()
            .filter(|r| matches!(r.src_addr, IpAddr::V4(a) if a.octets()[3] % 100 == c))
            .map(|r| r.ts)
            .collect();
        ts.sort_by(f64::total_cmp);
        let mut len = 1;
        for w in ts.windows(2) {
            if w[1] - w[0] > timeout {
                sizes.push(len.min(MAX_PACKETS));
                len = 1;
            } else {
                len += 1;
            }
        }
        sizes.push(len.min(MAX_PACKETS));
    }
    sizes.sort();
    sizes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assembly_ignores_row_arrival_order(rows in rows_strategy(), seed in any::<u64>()) {
        let a = ingest_packets(rows.clone(), 60.0).unwrap();
        let mut shuffled = rows;
        shuffled.shuffle(&mut rng_from_seed(seed));
        let b = ingest_packets(shuffled, 60.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn idle_timeout_grouping_matches_reference(rows in rows_strategy(), timeout in 1.0f64..100.0) {
        let ds = ingest_packets(rows.clone(), timeout).unwrap();
        let mut sizes: Vec<usize> = ds.flows.iter().map(|f| f.n_real_packets()).collect();
        sizes.sort();
        prop_assert_eq!(sizes, reference_flow_sizes(&rows, timeout));
        for f in &ds.flows {
            prop_assert!(f.validate().is_ok());
            prop_assert!(f.packets.iter().skip(1).all(|p| p.inter_arrival <= timeout));
        }
    }

    #[test]
    fn kde_integrates_to_one_and_ignores_sample_order(
        samples in prop::collection::vec(-50.0f64..50.0, 2..40),
        seed in any::<u64>(),
    ) {
        let kde = KdeModel::fit(samples.clone(), Bandwidth::Silverman).unwrap();
        let h = kde.bandwidth();
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * h;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * h;
        // Simpson's rule with a step well under the bandwidth
        let steps = (((hi - lo) / (h / 20.0)).ceil() as usize).max(2000) / 2 * 2;
        let dx = (hi - lo) / steps as f64;
        let mut total = kde.pdf(lo) + kde.pdf(hi);
        for i in 1..steps {
            total += kde.pdf(lo + i as f64 * dx) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        prop_assert!((total * dx / 3.0 - 1.0).abs() < 1e-6);

        let mut permuted = samples;
        permuted.shuffle(&mut rng_from_seed(seed));
        let other = KdeModel::fit(permuted, Bandwidth::Silverman).unwrap();
        prop_assert!((other.bandwidth() - h).abs() <= 1e-12 * h);
        for x in [lo, 0.0, hi] {
            prop_assert!((other.pdf(x) - kde.pdf(x)).abs() <= 1e-12 * kde.pdf(x).max(1e-300));
        }
    }

    #[test]
    fn split_is_deterministic_stratified_and_complete(
        counts in prop::collection::vec(2usize..40, 2..5),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut rows = Vec::new();
        let mut ts = 0.0;
        for (c, &n) in counts.iter().enumerate() {
            for k in 0..n {
                ts += 100.0;
                rows.push(PacketRow {
                    ts,
                    src_addr: host(c as u8),
                    dst_addr: host(200),
                    src_port: 1000 + k as u16,
                    dst_port: 80,
                    transport: Transport::Tcp,
                    tcp_window: 1,
                    payload_len: 1,
                    label: Some(format!("c{c}")),
                });
            }
        }
        let ds = ingest_packets(rows, 60.0).unwrap();
        let (tr, te) = split(&ds, fraction, seed).unwrap();
        let (tr2, te2) = split(&ds, fraction, seed).unwrap();
        prop_assert_eq!(&tr, &tr2);
        prop_assert_eq!(&te, &te2);
        for (c, &n) in counts.iter().enumerate() {
            prop_assert_eq!(tr.class_counts()[c], (fraction * n as f64).floor() as usize);
            prop_assert_eq!(tr.class_counts()[c] + te.class_counts()[c], n);
        }
        let mut all: Vec<_> = tr.flows.iter().chain(&te.flows).map(|f| f.key).collect();
        let mut orig: Vec<_> = ds.flows.iter().map(|f| f.key).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn generated_sequences_respect_length_and_alphabet(seed in any::<u64>(), hidden in 1usize..8) {
        let g = LstmGenerator::new(Vocabulary::directions(), vec![0.0, 1.0, 0.0], hidden, seed).unwrap();
        let mut rng = rng_from_seed(seed ^ 1);
        for _ in 0..20 {
            let s = g.generate_values(&mut rng, 1.0).unwrap();
            prop_assert!((1..=20).contains(&s.len()));
            prop_assert_eq!(s[0], 1);
            prop_assert!(s.iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn metric_identities(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..300)) {
        let classes = ClassIndex::new((0..5).map(|i| format!("k{i}")));
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion(&p, &t, &classes).unwrap();
        let r = metrics(&cm, Variant::Actual).unwrap();
        let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
        prop_assert_eq!(r.overall.accuracy, hits as f64 / p.len() as f64);
        // micro-averaged recall
        let tp: u64 = (0..5).map(|c| cm.tp(c)).sum();
        let fn_: u64 = (0..5).map(|c| cm.fn_(c)).sum();
        prop_assert_eq!(tp as f64 / (tp + fn_) as f64, r.overall.accuracy);
        for c in 0..5 {
            let (pr, re) = (r.per_class.precision[c], r.per_class.recall[c]);
            prop_assert_eq!(f1_score(pr, re), f1_score(re, pr));
            if pr > 0.0 && re > 0.0 {
                let hm = 2.0 / (1.0 / pr + 1.0 / re);
                prop_assert!((r.per_class.f1[c] - hm).abs() < 1e-15);
            }
            for m in [pr, re, r.per_class.f1[c]] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-700.0f64..700.0, 1..40)) {
        let n = v.len();
        let p = softmax(&Tensor::from_vec(&[1, n], v).unwrap());
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|x| x.is_finite() && *x >= 0.0));
    }
}

#[test]
fn synthesized_dataset_never_reads_the_test_split() {
    use flowaug_core::augment::{build_synthesizer, SynthConfig};
    use flowaug_core::seqgen::GeneratorHyper;
    let mut rows = Vec::new();
    for k in 0..40u16 {
        let ts = f64::from(k) * 1000.0;
        for j in 0..3u16 {
            rows.push(PacketRow {
                ts: ts + f64::from(j),
                src_addr: host(1),
                dst_addr: host(2),
                src_port: 2000 + k,
                dst_port: 53,
                transport: Transport::Udp,
                tcp_window: 0,
                payload_len: 60 + u32::from(k) * 10 + u32::from(j),
                label: Some("dns".into()),
            });
        }
    }
    let ds = ingest_packets(rows, 60.0).unwrap();
    let (train, test) = split(&ds, 0.5, 1).unwrap();
    let cfg = SynthConfig {
        min_flows: 5,
        generator: GeneratorHyper {
            hidden: 4,
            epochs: 1,
            ..GeneratorHyper::default()
        },
        ..SynthConfig::default()
    };
    let (s, _) = build_synthesizer(&train, "dns", &cfg).unwrap();
    let train_payloads: Vec<f64> = train
        .flows
        .iter()
        .flat_map(|f| f.packets.iter().map(|p| f64::from(p.payload_len)))
        .collect();
    let test_only: Vec<f64> = test
        .flows
        .iter()
        .flat_map(|f| f.packets.iter().map(|p| f64::from(p.payload_len)))
        .filter(|x| !train_payloads.contains(x))
        .collect();
    assert!(!test_only.is_empty());
    assert!(s.kdes[3]
        .samples()
        .iter()
        .all(|x| train_payloads.contains(x)));
    assert!(s.kdes[3].samples().iter().all(|x| !test_only.contains(x)));
}
