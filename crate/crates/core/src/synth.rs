//! Deterministic labelled binetflow traces.
//!
//! A trace is cut into fixed segments (one minute by default). Each segment
//! carries ordinary client traffic at a rate drawn per segment, plus a pool
//! of "look-alike" flows that share the attack kind's per-flow profile
//! (protocol, ports, sizes, durations, source pool). In attack segments part
//! of that pool is emitted as tight bursts labelled Botnet; the rest, and the
//! whole pool in quiet segments, is spread uniformly over the segment and
//! labelled Normal. The look-alike count is drawn from the same range in both
//! cases, so a window as long as a segment sees the same mix either way and
//! only short windows resolve the bursts.
//!
//! Profiles per kind:
//!
//! * `DdosLike`: bots flood one victim with single-packet ICMP (sport
//!   `0x0008`, high hex dport) and UDP (high ports) flows of 1066 bytes,
//!   durations uniform below `duration_scale`, bursts a fraction of a
//!   millisecond wide.
//! * `SpamLike`: bots open SMTP sessions to many distinct destinations with
//!   larger transfers and exponential durations; one HTTP C&C check-in per
//!   attack segment.
//! * `IrcLike`: a few bots talk to one IRC server on 6667 (C&C) and sweep
//!   many destinations with UDP.
//!
//! Background flows are spread over the whole trace independently of the
//! segments. Every random draw comes from a ChaCha8 stream derived from the
//! spec seed and the segment index, so identical specs give identical bytes.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::seed;
use crate::error::{Error, Result};
use crate::ingest::BINETFLOW_HEADER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    DdosLike,
    SpamLike,
    IrcLike,
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<AttackKind> {
        match s.to_ascii_lowercase().as_str() {
            "ddos" | "ddos_like" | "ddoslike" => Ok(AttackKind::DdosLike),
            "spam" | "spam_like" | "spamlike" => Ok(AttackKind::SpamLike),
            "irc" | "irc_like" | "irclike" => Ok(AttackKind::IrcLike),
            other => Err(Error::Config(format!("unknown attack kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub kind: AttackKind,
    pub trace_seconds: f64,
    pub segment_seconds: f64,
    pub n_background_flows: usize,
    /// Client flows per second, drawn uniformly per segment.
    pub normal_rate: (f64, f64),
    /// Probability that a segment hosts attack bursts.
    pub attack_segment_fraction: f64,
    pub bursts_per_segment: u32,
    pub burst_size: (u32, u32),
    /// Width in seconds of the interval a burst's flows start in.
    pub burst_span: f64,
    /// Upper bound (DDoS) or mean (other kinds) of attack-profile durations.
    pub duration_scale: f64,
    /// Look-alike flows per segment, attack and decoy together.
    pub lookalikes_per_segment: (u32, u32),
    pub n_bots: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::ddos(0)
    }
}

impl SynthSpec {
    pub fn ddos(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            kind: AttackKind::DdosLike,
            trace_seconds: 3600.0,
            segment_seconds: 60.0,
            n_background_flows: 2000,
            normal_rate: (0.5, 3.0),
            attack_segment_fraction: 0.4,
            bursts_per_segment: 4,
            burst_size: (8, 14),
            burst_span: 0.0005,
            duration_scale: 0.002,
            lookalikes_per_segment: (100, 250),
            n_bots: 10,
        }
    }

    pub fn spam(seed: u64) -> SynthSpec {
        SynthSpec {
            kind: AttackKind::SpamLike,
            bursts_per_segment: 4,
            burst_size: (10, 30),
            burst_span: 5.0,
            duration_scale: 1.0,
            lookalikes_per_segment: (120, 200),
            n_bots: 5,
            ..SynthSpec::ddos(seed)
        }
    }

    pub fn irc(seed: u64) -> SynthSpec {
        SynthSpec {
            kind: AttackKind::IrcLike,
            bursts_per_segment: 4,
            burst_size: (5, 15),
            burst_span: 2.0,
            duration_scale: 0.5,
            lookalikes_per_segment: (60, 100),
            n_bots: 3,
            ..SynthSpec::ddos(seed)
        }
    }

    pub fn for_kind(kind: AttackKind, seed: u64) -> SynthSpec {
        match kind {
            AttackKind::DdosLike => SynthSpec::ddos(seed),
            AttackKind::SpamLike => SynthSpec::spam(seed),
            AttackKind::IrcLike => SynthSpec::irc(seed),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.trace_seconds.is_finite()
            && self.trace_seconds > 0.0
            && self.segment_seconds.is_finite()
            && self.segment_seconds > 0.0
            && self.normal_rate.0 >= 0.0
            && self.normal_rate.0 <= self.normal_rate.1
            && (0.0..=1.0).contains(&self.attack_segment_fraction)
            && self.burst_size.0 <= self.burst_size.1
            && self.burst_span >= 0.0
            && self.burst_span < self.segment_seconds
            && self.duration_scale > 0.0
            && self.lookalikes_per_segment.0 <= self.lookalikes_per_segment.1
            && self.n_bots > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent synthetic spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    /// Complete binetflow file, header included.
    pub text: String,
    pub n_flows: usize,
    pub n_attack_flows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Client,
    Attack,
    Decoy,
    Background,
}

struct Flow {
    start_us: i64,
    duration: f64,
    proto: &'static str,
    src: String,
    sport: String,
    dir: &'static str,
    dst: String,
    dport: String,
    state: &'static str,
    pkts: u64,
    bytes: u64,
    src_bytes: u64,
    label: String,
}

fn base_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2011, 8, 10)
        .and_then(|d| d.and_hms_micro_opt(9, 46, 53, 47_277))
        .expect("valid constant date")
}

fn exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

fn internal_host(rng: &mut ChaCha8Rng) -> String {
    format!("147.32.84.{}", rng.gen_range(1..=254))
}

fn external_host(rng: &mut ChaCha8Rng) -> String {
    let first = match rng.gen_range(0..3) {
        0 => rng.gen_range(1..=126),
        1 => rng.gen_range(128..=191),
        _ => rng.gen_range(192..=223),
    };
    format!(
        "{first}.{}.{}.{}",
        rng.gen_range(0..=255),
        rng.gen_range(0..=255),
        rng.gen_range(1..=254)
    )
}

fn high_port(rng: &mut ChaCha8Rng) -> u16 {
    rng.gen_range(1024..=u16::MAX)
}

struct Hosts {
    bots: Vec<String>,
    victim: String,
    cc_server: String,
}

struct Generator<'s> {
    spec: &'s SynthSpec,
    hosts: Hosts,
}

impl Generator<'_> {
    fn label(&self, role: Role, proto: &str, cc: bool) -> String {
        let proto = proto.to_ascii_uppercase();
        match role {
            Role::Attack if cc => format!("flow=From-Botnet-V42-{proto}-CC1"),
            Role::Attack => format!("flow=From-Botnet-V42-{proto}-Attempt"),
            Role::Decoy => format!("flow=From-Normal-V42-{proto}"),
            Role::Client => format!("flow=Normal-V42-{proto}"),
            Role::Background => format!("flow=Background-{proto}-Established"),
        }
    }

    fn client_flow(&self, rng: &mut ChaCha8Rng, start: f64, role: Role) -> Flow {
        let roll: f64 = rng.gen();
        let (src, dst) = match role {
            Role::Background => (external_host(rng), external_host(rng)),
            _ => (internal_host(rng), external_host(rng)),
        };
        let mut flow = if roll < 0.7 {
            let pkts = rng.gen_range(3..=40);
            let bytes = pkts * rng.gen_range(60..=1400);
            Flow {
                start_us: 0,
                duration: exp(rng, if role == Role::Background { 0.5 } else { 0.05 }),
                proto: "tcp",
                src,
                sport: high_port(rng).to_string(),
                dir: "->",
                dst,
                dport: [80u16, 443, 443, 22, 993, 8080].choose(rng).copied().unwrap_or(80).to_string(),
                state: ["FSPA_FSPA", "SRPA_SPA", "S_RA", "SPA_SPA"].choose(rng).copied().unwrap_or("S_RA"),
                pkts,
                bytes,
                src_bytes: bytes * rng.gen_range(20..=50) / 100,
                label: String::new(),
            }
        } else if roll < 0.95 {
            let bytes = rng.gen_range(150..=600);
            Flow {
                start_us: 0,
                duration: exp(rng, 0.005),
                proto: "udp",
                src,
                sport: high_port(rng).to_string(),
                dir: "<->",
                dst,
                dport: [53u16, 53, 123].choose(rng).copied().unwrap_or(53).to_string(),
                state: "CON",
                pkts: 2,
                bytes,
                src_bytes: bytes / 3,
                label: String::new(),
            }
        } else {
            Flow {
                start_us: 0,
                duration: exp(rng, 0.002),
                proto: "icmp",
                src,
                sport: "0x0008".into(),
                dir: "<->",
                dst,
                dport: format!("0x{:04x}", rng.gen_range(0..=u16::MAX)),
                state: "ECO",
                pkts: 2,
                bytes: 196,
                src_bytes: 98,
                label: String::new(),
            }
        };
        flow.start_us = micros(start);
        flow.label = self.label(role, flow.proto, false);
        flow
    }

    /// A flow in the kind's attack profile, labelled per `role`.
    fn lookalike(&self, rng: &mut ChaCha8Rng, start: f64, role: Role) -> Flow {
        let spec = self.spec;
        let bot = self.hosts.bots.choose(rng).cloned().unwrap_or_default();
        let (flow, cc) = match spec.kind {
            AttackKind::DdosLike => {
                let duration = rng.gen_range(0.0..spec.duration_scale);
                if rng.gen_bool(0.7) {
                    let f = Flow {
                        start_us: 0,
                        duration,
                        proto: "icmp",
                        src: bot,
                        sport: "0x0008".into(),
                        dir: "->",
                        dst: self.hosts.victim.clone(),
                        dport: format!("0x{:04x}", high_port(rng)),
                        state: "ECO",
                        pkts: 1,
                        bytes: 1066,
                        src_bytes: 1066,
                        label: String::new(),
                    };
                    (f, false)
                } else {
                    let f = Flow {
                        start_us: 0,
                        duration,
                        proto: "udp",
                        src: bot,
                        sport: high_port(rng).to_string(),
                        dir: "->",
                        dst: self.hosts.victim.clone(),
                        dport: high_port(rng).to_string(),
                        state: "INT",
                        pkts: 1,
                        bytes: 1066,
                        src_bytes: 1066,
                        label: String::new(),
                    };
                    (f, false)
                }
            }
            AttackKind::SpamLike => {
                let pkts = rng.gen_range(10..=60);
                let bytes = rng.gen_range(5_000..=60_000);
                let f = Flow {
                    start_us: 0,
                    duration: exp(rng, spec.duration_scale),
                    proto: "tcp",
                    src: bot,
                    sport: high_port(rng).to_string(),
                    dir: "->",
                    dst: external_host(rng),
                    dport: "25".into(),
                    state: "FSPA_FSPA",
                    pkts,
                    bytes,
                    src_bytes: bytes * 9 / 10,
                    label: String::new(),
                };
                (f, false)
            }
            AttackKind::IrcLike => {
                if rng.gen_bool(0.3) {
                    let f = Flow {
                        start_us: 0,
                        duration: exp(rng, spec.duration_scale * 4.0),
                        proto: "tcp",
                        src: bot,
                        sport: high_port(rng).to_string(),
                        dir: "->",
                        dst: self.hosts.cc_server.clone(),
                        dport: "6667".into(),
                        state: "SPA_SPA",
                        pkts: rng.gen_range(4..=20),
                        bytes: rng.gen_range(300..=3000),
                        src_bytes: rng.gen_range(100..=300),
                        label: String::new(),
                    };
                    (f, true)
                } else {
                    let f = Flow {
                        start_us: 0,
                        duration: exp(rng, spec.duration_scale / 10.0),
                        proto: "udp",
                        src: bot,
                        sport: high_port(rng).to_string(),
                        dir: "->",
                        dst: external_host(rng),
                        dport: high_port(rng).to_string(),
                        state: "INT",
                        pkts: 1,
                        bytes: rng.gen_range(60..=120),
                        src_bytes: 60,
                        label: String::new(),
                    };
                    (f, false)
                }
            }
        };
        let mut flow = flow;
        flow.start_us = micros(start);
        flow.label = self.label(role, flow.proto, cc);
        flow
    }

    fn cc_checkin(&self, rng: &mut ChaCha8Rng, start: f64) -> Flow {
        let bot = self.hosts.bots.choose(rng).cloned().unwrap_or_default();
        Flow {
            start_us: micros(start),
            duration: exp(rng, 0.5),
            proto: "tcp",
            src: bot,
            sport: high_port(rng).to_string(),
            dir: "->",
            dst: self.hosts.cc_server.clone(),
            dport: "80".into(),
            state: "FSPA_FSPA",
            pkts: rng.gen_range(6..=12),
            bytes: rng.gen_range(800..=2000),
            src_bytes: rng.gen_range(300..=600),
            label: "flow=From-Botnet-V42-TCP-CC6-HTTP".into(),
        }
    }

    fn segment(&self, index: u64, start: f64, end: f64, flows: &mut Vec<Flow>) {
        let spec = self.spec;
        let mut rng = seed::rng(seed::derive(spec.seed, &[0x5E6, index]));
        let len = end - start;

        let rate = rng.gen_range(spec.normal_rate.0..=spec.normal_rate.1);
        let n_clients = if rate * len > 0.0 {
            Poisson::new(rate * len).map_or(0, |p| p.sample(&mut rng) as u64)
        } else {
            0
        };
        for _ in 0..n_clients {
            let t = rng.gen_range(start..end);
            flows.push(self.client_flow(&mut rng, t, Role::Client));
        }

        let pool = rng.gen_range(spec.lookalikes_per_segment.0..=spec.lookalikes_per_segment.1);
        let attacking = spec.bursts_per_segment > 0
            && spec.burst_size.1 > 0
            && rng.gen_bool(spec.attack_segment_fraction);
        let mut emitted = 0u32;
        if attacking {
            let span = spec.burst_span.min(len);
            for _ in 0..spec.bursts_per_segment {
                let size = rng.gen_range(spec.burst_size.0..=spec.burst_size.1);
                let t0 = rng.gen_range(start..=(end - span).max(start));
                for _ in 0..size {
                    let t = if span > 0.0 { t0 + rng.gen_range(0.0..span) } else { t0 };
                    flows.push(self.lookalike(&mut rng, t, Role::Attack));
                }
                emitted += size;
            }
            if spec.kind == AttackKind::SpamLike {
                let t = rng.gen_range(start..end);
                flows.push(self.cc_checkin(&mut rng, t));
            }
        }
        for _ in emitted..pool {
            let t = rng.gen_range(start..end);
            flows.push(self.lookalike(&mut rng, t, Role::Decoy));
        }
    }
}

fn micros(t: f64) -> i64 {
    (t * 1e6).round() as i64
}

/// Generates a complete binetflow trace for `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticTrace> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, &[0x5E7]));
    let hosts = Hosts {
        bots: (0..spec.n_bots).map(|i| format!("147.32.84.{}", 160 + i % 90)).collect(),
        victim: external_host(&mut rng),
        cc_server: external_host(&mut rng),
    };
    let generator = Generator { spec, hosts };

    let mut flows = Vec::new();
    let n_segments = (spec.trace_seconds / spec.segment_seconds).ceil() as u64;
    for i in 0..n_segments {
        let start = i as f64 * spec.segment_seconds;
        let end = ((i + 1) as f64 * spec.segment_seconds).min(spec.trace_seconds);
        generator.segment(i, start, end, &mut flows);
    }
    for _ in 0..spec.n_background_flows {
        let t = rng.gen_range(0.0..spec.trace_seconds);
        flows.push(generator.client_flow(&mut rng, t, Role::Background));
    }
    flows.sort_by_key(|f| f.start_us);

    let epoch = base_epoch();
    let mut text = String::with_capacity(flows.len() * 120);
    text.push_str(BINETFLOW_HEADER);
    text.push('\n');
    let mut n_attack_flows = 0;
    for f in &flows {
        if f.label.contains("Botnet") {
            n_attack_flows += 1;
        }
        let start = epoch + TimeDelta::microseconds(f.start_us);
        let _ = writeln!(
            text,
            "{},{:.6},{},{},{},{},{},{},{},0,0,{},{},{},{}",
            start.format("%Y/%m/%d %H:%M:%S%.6f"),
            f.duration,
            f.proto,
            f.src,
            f.sport,
            f.dir,
            f.dst,
            f.dport,
            f.state,
            f.pkts,
            f.bytes,
            f.src_bytes,
            f.label
        );
    }
    Ok(SyntheticTrace {
        text,
        n_flows: flows.len(),
        n_attack_flows,
    })
}

pub fn write_synthetic<W: Write>(mut out: W, spec: &SynthSpec) -> Result<SyntheticTrace> {
    let trace = generate_synthetic(spec)?;
    out.write_all(trace.text.as_bytes())?;
    Ok(trace)
}
