use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FlowRecord;
use crate::seed;

const CLASS_NAMES: [&str; 10] = [
    "benign",
    "scan",
    "flood",
    "bruteforce",
    "exfil",
    "c2",
    "dos",
    "worm",
    "spam",
    "probe",
];

const PORT_TABLE: [&[u16]; 10] = [
    &[443, 80, 53],
    &[],
    &[80],
    &[22],
    &[443],
    &[8443],
    &[53],
    &[445],
    &[25],
    &[],
];

/// Seed of host roles and host offsets. Fixed so that corpora differing only
/// in their sampling seed share one distribution.
const STRUCTURE_SEED: u64 = 0x5eed_1234;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPattern {
    /// Actors repeatedly contact their two preferred servers.
    ClientServer,
    /// One actor contacts many distinct hosts.
    FanOut,
    /// Many actors contact one victim.
    FanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub name: String,
    pub pattern: PairPattern,
    /// Protocol of most flows.
    pub protocol: u8,
    /// Share of flows using the other of TCP/UDP.
    pub protocol_noise: f64,
    /// Destination ports; empty means uniform over 1..=1023.
    pub dst_ports: Vec<u16>,
    pub log_bytes_mean: f64,
    pub log_bytes_sd: f64,
    /// Mean of ln(bytes_out / bytes_in).
    pub log_out_in_ratio: f64,
    pub bytes_per_packet: f64,
    pub log_duration_ms_mean: f64,
    pub tcp_flags: u8,
    /// Share of TCP flows whose flags come from the common pool instead.
    pub flag_noise: f64,
    /// Mean gap between flows of one episode.
    pub gap_ms: f64,
    /// Flows per episode (upper bound for client-server bursts).
    pub peers: usize,
    /// Relative frequency of episodes.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_ips: usize,
    pub n_classes: usize,
    pub n_flows: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Magnitude of the signature perturbation; 0 reproduces the base
    /// setting exactly.
    pub shift: f64,
    pub shift_seed: u64,
    /// Second octet of generated addresses.
    pub address_base: u8,
    /// Replaces the built-in signatures when set.
    pub signatures: Option<Vec<ClassSignature>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_ips: 200,
            n_classes: 5,
            n_flows: 20_000,
            duration_s: 300.0,
            seed: 0,
            shift: 0.0,
            shift_seed: 1,
            address_base: 0,
            signatures: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ips < 4 || self.n_classes == 0 || self.n_flows == 0 {
            return Err(Error::Config(
                "synthetic corpus needs n_ips >= 4, n_classes >= 1 and n_flows >= 1".into(),
            ));
        }
        if self.duration_s.is_nan() || self.duration_s <= 0.0 || self.shift.is_nan() || self.shift < 0.0 {
            return Err(Error::Config(
                "duration_s must be positive and shift non-negative".into(),
            ));
        }
        if let Some(s) = &self.signatures {
            if s.len() != self.n_classes {
                return Err(Error::Config(format!(
                    "{} signatures for {} classes",
                    s.len(),
                    self.n_classes
                )));
            }
        }
        Ok(())
    }
}

/// Flag combinations seen across all classes.
const COMMON_FLAGS: [u8; 5] = [0x1b, 0x02, 0x12, 0x18, 0x11];

/// Built-in signature of class `k`. Per-flow distributions overlap between
/// classes (volume means 0.4 apart in log space against a spread of 0.9,
/// noisy flags and protocols); the pair pattern and host roles carry most
/// of the class identity.
fn base_signature(k: usize) -> ClassSignature {
    let pattern = match k % 3 {
        0 => PairPattern::ClientServer,
        1 => PairPattern::FanOut,
        _ => PairPattern::FanIn,
    };
    let protocol = if k > 0 && k % 4 == 2 { 17 } else { 6 };
    let tcp_flags = match pattern {
        PairPattern::FanOut => 0x02,
        PairPattern::FanIn => 0x12,
        PairPattern::ClientServer => 0x1b,
    };
    ClassSignature {
        name: CLASS_NAMES
            .get(k)
            .map_or_else(|| format!("class{k}"), |s| s.to_string()),
        pattern,
        protocol,
        protocol_noise: 0.25,
        dst_ports: PORT_TABLE[k % PORT_TABLE.len()].to_vec(),
        log_bytes_mean: 5.5 + 0.4 * k as f64,
        log_bytes_sd: 0.9,
        log_out_in_ratio: (k as f64 * 0.37) % 1.0 - 0.5,
        bytes_per_packet: 500.0 + 60.0 * (k % 4) as f64,
        log_duration_ms_mean: 4.0 + 0.3 * ((2 * k) % 5) as f64,
        tcp_flags,
        flag_noise: 0.35,
        gap_ms: match pattern {
            PairPattern::ClientServer => 150.0,
            PairPattern::FanOut => 5.0,
            PairPattern::FanIn => 10.0,
        },
        peers: match pattern {
            PairPattern::ClientServer => 3,
            PairPattern::FanOut => 12,
            PairPattern::FanIn => 10,
        },
        weight: if k == 0 { 3.0 } else { 1.0 },
    }
}

/// Class signatures after applying the configured shift.
pub fn class_signatures(cfg: &SynthConfig) -> Vec<ClassSignature> {
    let base: Vec<ClassSignature> = match &cfg.signatures {
        Some(s) => s.clone(),
        None => (0..cfg.n_classes).map(base_signature).collect(),
    };
    if cfg.shift == 0.0 {
        return base;
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    base.into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            let mut rng = seed::rng(seed::derive_indexed(cfg.shift_seed, "class-shift", k as u64));
            let mut z = || n.sample(&mut rng) * cfg.shift;
            s.log_bytes_mean += 0.25 * z();
            s.log_out_in_ratio += 0.25 * z();
            s.log_duration_ms_mean += 0.25 * z();
            s.bytes_per_packet *= (0.2 * z()).exp();
            s.gap_ms *= (0.5 * z()).exp();
            s.peers = ((s.peers as f64 * (0.3 * z()).exp()).round() as usize).max(1);
            s.weight *= (0.5 * z()).exp();
            s
        })
        .collect()
}

struct Hosts {
    /// Per-class source hosts.
    actors: Vec<Vec<usize>>,
    /// Per-class server / victim hosts.
    targets: Vec<Vec<usize>>,
    /// Per-host shift of log volume.
    offset: Vec<f64>,
}

fn hosts(cfg: &SynthConfig) -> Hosts {
    // class 0 runs on every host, class k > 0 on hosts with h % n == k
    let mut actors = vec![Vec::new(); cfg.n_classes];
    for h in 0..cfg.n_ips {
        let k = h % cfg.n_classes;
        if k > 0 {
            actors[k].push(h);
        }
        actors[0].push(h);
    }
    let targets = (0..cfg.n_classes)
        .map(|k| {
            let mut rng = seed::rng(seed::derive_indexed(STRUCTURE_SEED, "targets", k as u64));
            let all: Vec<usize> = (0..cfg.n_ips).collect();
            all.choose_multiple(&mut rng, 3.min(cfg.n_ips)).copied().collect()
        })
        .collect();
    let n = Normal::new(0.0, 0.4).unwrap();
    let offset = (0..cfg.n_ips)
        .map(|h| {
            let base = n.sample(&mut seed::rng(seed::derive_indexed(STRUCTURE_SEED, "host", h as u64)));
            let shifted = n.sample(&mut seed::rng(seed::derive_indexed(
                cfg.shift_seed,
                "host-shift",
                h as u64,
            )));
            base + cfg.shift * shifted
        })
        .collect();
    Hosts {
        actors,
        targets,
        offset,
    }
}

fn address(base: u8, h: usize) -> String {
    format!("10.{base}.{}.{}", h / 250, h % 250 + 1)
}

/// Generate a labeled, time-sorted synthetic corpus.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<FlowRecord>> {
    cfg.validate()?;
    let sigs = class_signatures(cfg);
    let hosts = hosts(cfg);
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth"));
    let total_weight: f64 = sigs.iter().map(|s| s.weight).sum();
    let duration_ms = (cfg.duration_s * 1000.0) as i64;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut out: Vec<FlowRecord> = Vec::with_capacity(cfg.n_flows + 16);
    while out.len() < cfg.n_flows {
        let mut pick = rng.random::<f64>() * total_weight;
        let k = sigs
            .iter()
            .position(|s| {
                pick -= s.weight;
                pick < 0.0
            })
            .unwrap_or(sigs.len() - 1);
        let sig = &sigs[k];
        let actors = &hosts.actors[k];
        let actor = *actors.choose(&mut rng).unwrap();
        let pairs: Vec<(usize, usize)> = match sig.pattern {
            PairPattern::ClientServer => {
                let preferred = [
                    hosts.targets[k][actor % hosts.targets[k].len()],
                    hosts.targets[k][(actor / 2 + 1) % hosts.targets[k].len()],
                ];
                let server = *preferred.choose(&mut rng).unwrap();
                let server = if server == actor {
                    (server + 1) % cfg.n_ips
                } else {
                    server
                };
                let n = rng.random_range(1..=sig.peers.max(1));
                vec![(actor, server); n]
            }
            PairPattern::FanOut => {
                let others: Vec<usize> = (0..cfg.n_ips).filter(|&h| h != actor).collect();
                others
                    .choose_multiple(&mut rng, sig.peers.min(others.len()))
                    .map(|&d| (actor, d))
                    .collect()
            }
            PairPattern::FanIn => {
                let victim = *hosts.targets[k].choose(&mut rng).unwrap();
                let sources: Vec<usize> = actors.iter().copied().filter(|&h| h != victim).collect();
                sources
                    .choose_multiple(&mut rng, sig.peers.min(sources.len()))
                    .map(|&s| (s, victim))
                    .collect()
            }
        };
        let gap = Exp::new(1.0 / sig.gap_ms.max(1e-3)).unwrap();
        let mut t = rng.random_range(0..duration_ms) as f64;
        for (src, dst) in pairs {
            if out.len() >= cfg.n_flows {
                break;
            }
            let mu = sig.log_bytes_mean + hosts.offset[src];
            let bytes_in = LogNormal::new(mu, sig.log_bytes_sd)
                .unwrap()
                .sample(&mut rng)
                .round()
                .max(1.0);
            let ratio = (sig.log_out_in_ratio + 0.5 * unit.sample(&mut rng)).exp();
            let bytes_out = (bytes_in * ratio).round().max(1.0);
            let duration = LogNormal::new(sig.log_duration_ms_mean, 0.7).unwrap().sample(&mut rng);
            let protocol = if rng.random::<f64>() < sig.protocol_noise {
                match sig.protocol {
                    6 => 17,
                    17 => 6,
                    p => p,
                }
            } else {
                sig.protocol
            };
            let ports = crate::ingest::has_ports(protocol);
            let dst_port = if !ports {
                0
            } else if sig.dst_ports.is_empty() {
                rng.random_range(1..=1023)
            } else {
                *sig.dst_ports.choose(&mut rng).unwrap()
            };
            let src_port = if ports { rng.random_range(49152..=65535) } else { 0 };
            let mut flags = if rng.random::<f64>() < sig.flag_noise {
                *COMMON_FLAGS.choose(&mut rng).unwrap()
            } else {
                sig.tcp_flags
            };
            if rng.random::<f64>() < 0.1 {
                flags |= 0x04;
            }
            out.push(FlowRecord {
                src_ip: address(cfg.address_base, src),
                dst_ip: address(cfg.address_base, dst),
                src_port,
                dst_port,
                protocol,
                start_time: (t as i64).min(duration_ms - 1),
                duration_ms: duration.round() as u64,
                bytes_in: bytes_in as u64,
                bytes_out: bytes_out as u64,
                pkts_in: (bytes_in / sig.bytes_per_packet).ceil().max(1.0) as u64,
                pkts_out: (bytes_out / sig.bytes_per_packet).ceil().max(1.0) as u64,
                tcp_flags: if protocol == 6 { flags } else { 0 },
                label: Some(sig.name.clone()),
            });
            t += gap.sample(&mut rng);
        }
    }
    crate::ingest::sort_by_time(&mut out);
    Ok(out)
}
