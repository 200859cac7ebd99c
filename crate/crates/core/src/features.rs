//! The 45 per-window features.
//!
//! Features 1–19 are counts and a mean over the window's flows; features
//! 20–45 are Shannon entropies (bits, over distinct raw values) and
//! population standard deviations. Every computation is independent of the
//! order of flows within the window: counts are accumulated in hash maps and
//! the resulting frequencies, as well as any summed values, are sorted before
//! floating point reduction.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::{Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FlowRecord, Proto, Tag};
use crate::window::WindowAggregate;

pub const N_FEATURES: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Extracted,
    Analyzed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Connection,
    Ip,
    Port,
    Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureDescriptor {
    /// 1-based position in the feature vector.
    pub id: usize,
    pub name: &'static str,
    pub category: FeatureCategory,
    pub group: FeatureGroup,
}

const fn fd(id: usize, name: &'static str, category: FeatureCategory, group: FeatureGroup) -> FeatureDescriptor {
    FeatureDescriptor { id, name, category, group }
}

use FeatureCategory::{Analyzed, Extracted};
use FeatureGroup::{Connection, Ip, Port, Protocol};

pub const FEATURE_SCHEMA: [FeatureDescriptor; N_FEATURES] = [
    fd(1, "N_conn", Extracted, Connection),
    fd(2, "N_normal_flow", Extracted, Connection),
    fd(3, "N_back_flow", Extracted, Connection),
    fd(4, "W_duration", Extracted, Connection),
    fd(5, "N_s_a_p_address", Extracted, Ip),
    fd(6, "N_s_b_p_add", Extracted, Ip),
    fd(7, "N_s_c_p_add", Extracted, Ip),
    fd(8, "N_s_na_p_add", Extracted, Ip),
    fd(9, "N_d_a_p_add", Extracted, Ip),
    fd(10, "N_d_b_p_add", Extracted, Ip),
    fd(11, "N_d_c_p_add", Extracted, Ip),
    fd(12, "N_d_na_p_add", Extracted, Ip),
    fd(13, "N_sports>1024", Extracted, Port),
    fd(14, "N_sports<1024", Extracted, Port),
    fd(15, "N_dports>1024", Extracted, Port),
    fd(16, "N_dports<1024", Extracted, Port),
    fd(17, "N_icmp", Extracted, Protocol),
    fd(18, "N_tcp", Extracted, Protocol),
    fd(19, "N_udp", Extracted, Protocol),
    fd(20, "S_packets", Analyzed, Connection),
    fd(21, "S_srcbytes", Analyzed, Connection),
    fd(22, "S_bytes", Analyzed, Connection),
    fd(23, "S_state", Analyzed, Connection),
    fd(24, "S_time", Analyzed, Connection),
    fd(25, "sigma_time", Analyzed, Connection),
    fd(26, "sigma_packets", Analyzed, Connection),
    fd(27, "sigma_bytes", Analyzed, Connection),
    fd(28, "sigma_srcbytes", Analyzed, Connection),
    fd(29, "S_srcip", Analyzed, Ip),
    fd(30, "S_dstip", Analyzed, Ip),
    fd(31, "S_src_a_ip", Analyzed, Ip),
    fd(32, "S_src_b_ip", Analyzed, Ip),
    fd(33, "S_src_c_ip", Analyzed, Ip),
    fd(34, "S_src_na_ip", Analyzed, Ip),
    fd(35, "S_dst_a_ip", Analyzed, Ip),
    fd(36, "S_dst_b_ip", Analyzed, Ip),
    fd(37, "S_dst_c_ip", Analyzed, Ip),
    fd(38, "S_dst_na_ip", Analyzed, Ip),
    fd(39, "S_src_to_dst", Analyzed, Ip),
    fd(40, "S_srcport", Analyzed, Port),
    fd(41, "S_dstport", Analyzed, Port),
    fd(42, "S_sports>1024", Analyzed, Port),
    fd(43, "S_sports<1024", Analyzed, Port),
    fd(44, "S_dports>1024", Analyzed, Port),
    fd(45, "S_dports<1024", Analyzed, Port),
];

pub fn feature_name(id: usize) -> Option<&'static str> {
    FEATURE_SCHEMA.get(id.wrapping_sub(1)).map(|d| d.name)
}

/// Shannon entropy in bits of the distribution given by `counts`.
pub fn shannon_entropy(counts: &[u64]) -> Result<f64> {
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    if sorted.is_empty() {
        return Err(Error::Undefined("entropy of an all-zero distribution"));
    }
    sorted.sort_unstable();
    let total = sorted.iter().sum::<u64>() as f64;
    let h: f64 = sorted
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum();
    // -0.0 for a single category
    Ok(0.0 - h)
}

/// Population standard deviation. The result does not depend on the order of
/// `values`.
pub fn population_stddev(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined("standard deviation of an empty sequence"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IpClass {
    A,
    B,
    C,
    NA,
}

impl IpClass {
    fn slot(self) -> usize {
        match self {
            IpClass::A => 0,
            IpClass::B => 1,
            IpClass::C => 2,
            IpClass::NA => 3,
        }
    }
}

/// Classful IPv4 bucket; 0.x, 127.x, class D/E, IPv6 and garbage are `NA`.
pub fn ip_class(addr: &str) -> IpClass {
    match addr.trim().parse::<Ipv4Addr>() {
        Ok(ip) => match ip.octets()[0] {
            1..=126 => IpClass::A,
            128..=191 => IpClass::B,
            192..=223 => IpClass::C,
            _ => IpClass::NA,
        },
        Err(_) => IpClass::NA,
    }
}

/// Entropy over the distinct values of `items`; 0 for an empty population.
fn entropy_of<K: Eq + Hash>(items: impl IntoIterator<Item = K>) -> f64 {
    let mut counts: HashMap<K, u64> = HashMap::new();
    for k in items {
        *counts.entry(k).or_default() += 1;
    }
    let counts: Vec<u64> = counts.into_values().collect();
    shannon_entropy(&counts).unwrap_or(0.0)
}

fn duration_key(d: f64) -> u64 {
    // collapse -0.0 onto 0.0
    (d + 0.0).to_bits()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub scenario_id: u32,
    pub window_index: u64,
    pub x: Vec<f64>,
    pub y: u8,
}

/// Computes the 45 features of one window.
pub fn extract_features(window: &WindowAggregate<'_>) -> Result<FeatureVector> {
    let flows: &[&FlowRecord] = &window.flows;
    if flows.is_empty() {
        return Err(Error::Contract(format!("window {} has no member flows", window.index)));
    }
    let mut x = vec![0.0; N_FEATURES];
    let n = flows.len();
    let count = |pred: &dyn Fn(&FlowRecord) -> bool| flows.iter().filter(|f| pred(f)).count() as f64;

    // connection information
    x[0] = n as f64;
    x[1] = count(&|f| f.tag == Tag::Normal);
    x[2] = count(&|f| f.tag == Tag::Background);
    let mut durations: Vec<f64> = flows.iter().map(|f| f.duration).collect();
    durations.sort_by(f64::total_cmp);
    x[3] = durations.iter().sum::<f64>() / n as f64;

    // ip classes
    let src_class: Vec<IpClass> = flows.iter().map(|f| ip_class(&f.src_addr)).collect();
    let dst_class: Vec<IpClass> = flows.iter().map(|f| ip_class(&f.dst_addr)).collect();
    for c in &src_class {
        x[4 + c.slot()] += 1.0;
    }
    for c in &dst_class {
        x[8 + c.slot()] += 1.0;
    }

    // ports: >= 1024 in the "high" slot, 0..=1023 in the "low" slot
    for f in flows {
        match f.src_port {
            Some(p) if p >= 1024 => x[12] += 1.0,
            Some(_) => x[13] += 1.0,
            None => {}
        }
        match f.dst_port {
            Some(p) if p >= 1024 => x[14] += 1.0,
            Some(_) => x[15] += 1.0,
            None => {}
        }
    }

    // protocols
    x[16] = count(&|f| f.proto == Proto::Icmp);
    x[17] = count(&|f| f.proto == Proto::Tcp);
    x[18] = count(&|f| f.proto == Proto::Udp);

    // connection entropies and spreads
    x[19] = entropy_of(flows.iter().map(|f| f.tot_pkts));
    x[20] = entropy_of(flows.iter().map(|f| f.src_bytes));
    x[21] = entropy_of(flows.iter().map(|f| f.tot_bytes));
    x[22] = entropy_of(flows.iter().map(|f| f.state.as_str()));
    x[23] = entropy_of(flows.iter().map(|f| duration_key(f.duration)));
    let as_f64 = |get: fn(&FlowRecord) -> u64| flows.iter().map(|f| get(f) as f64).collect::<Vec<_>>();
    x[24] = population_stddev(&durations)?;
    x[25] = population_stddev(&as_f64(|f| f.tot_pkts))?;
    x[26] = population_stddev(&as_f64(|f| f.tot_bytes))?;
    x[27] = population_stddev(&as_f64(|f| f.src_bytes))?;

    // address entropies, overall and per class
    x[28] = entropy_of(flows.iter().map(|f| f.src_addr.as_str()));
    x[29] = entropy_of(flows.iter().map(|f| f.dst_addr.as_str()));
    for class in [IpClass::A, IpClass::B, IpClass::C, IpClass::NA] {
        x[30 + class.slot()] = entropy_of(
            flows
                .iter()
                .zip(&src_class)
                .filter(|(_, c)| **c == class)
                .map(|(f, _)| f.src_addr.as_str()),
        );
        x[34 + class.slot()] = entropy_of(
            flows
                .iter()
                .zip(&dst_class)
                .filter(|(_, c)| **c == class)
                .map(|(f, _)| f.dst_addr.as_str()),
        );
    }
    x[38] = entropy_of(
        flows
            .iter()
            .map(|f| (f.src_addr.as_str(), f.dst_addr.as_str(), duration_key(f.duration), f.tot_bytes)),
    );

    // port entropies; flows without a port are left out
    x[39] = entropy_of(flows.iter().filter_map(|f| f.src_port));
    x[40] = entropy_of(flows.iter().filter_map(|f| f.dst_port));
    x[41] = entropy_of(flows.iter().filter_map(|f| f.src_port.filter(|&p| p >= 1024)));
    x[42] = entropy_of(flows.iter().filter_map(|f| f.src_port.filter(|&p| p < 1024)));
    x[43] = entropy_of(flows.iter().filter_map(|f| f.dst_port.filter(|&p| p >= 1024)));
    x[44] = entropy_of(flows.iter().filter_map(|f| f.dst_port.filter(|&p| p < 1024)));

    Ok(FeatureVector {
        scenario_id: window.scenario_id,
        window_index: window.index,
        x,
        y: window.label,
    })
}

/// Extracts every window in parallel; output keeps the input order.
pub fn extract_all(windows: &[WindowAggregate<'_>]) -> Result<Vec<FeatureVector>> {
    use rayon::prelude::*;
    windows.par_iter().map(extract_features).collect()
}

pub fn feature_csv_header() -> Vec<&'static str> {
    let mut header = Vec::with_capacity(N_FEATURES + 2);
    header.push("window_index");
    header.extend(FEATURE_SCHEMA.iter().map(|d| d.name));
    header.push("label");
    header
}

/// Writes the feature table. Values use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_feature_csv<W: Write>(out: W, vectors: &[FeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_csv_header())?;
    let mut row: Vec<String> = Vec::with_capacity(N_FEATURES + 2);
    for v in vectors {
        row.clear();
        row.push(v.window_index.to_string());
        row.extend(v.x.iter().map(|x| x.to_string()));
        row.push(v.y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature table written by [`write_feature_csv`]. Scenario ids are
/// not part of the file and come back as 0.
pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let expected = feature_csv_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a.trim() != *b) {
        return Err(Error::Format(format!(
            "feature CSV header does not match the {}-column layout",
            expected.len()
        )));
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Format(format!("feature CSV row {}: bad {what}", line + 2));
        let window_index = record[0].trim().parse().map_err(|_| bad("window_index"))?;
        let x = (1..=N_FEATURES)
            .map(|i| record[i].trim().parse::<f64>().map_err(|_| bad(FEATURE_SCHEMA[i - 1].name)))
            .collect::<Result<Vec<f64>>>()?;
        let y = match record[N_FEATURES + 1].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("label")),
        };
        out.push(FeatureVector {
            scenario_id: 0,
            window_index,
            x,
            y,
        });
    }
    Ok(out)
}
