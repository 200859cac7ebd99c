//! Reading CTU-13 style bidirectional netflow (`.binetflow`) files.
//!
//! Each kept line becomes a [`FlowRecord`] whose start time is expressed in
//! seconds relative to the earliest timestamp in the file. Malformed lines are
//! counted in [`ParseStats`] and skipped; a file where more than half of the
//! lines are malformed is rejected as the wrong kind of input.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINETFLOW_HEADER: &str =
    "StartTime,Dur,Proto,SrcAddr,Sport,Dir,DstAddr,Dport,State,sTos,dTos,TotPkts,TotBytes,SrcBytes,Label";

const TIMESTAMP_FORMAT: &str = "%Y/%m/%d %H:%M:%S%.f";
const TIMESTAMP_OUT_FORMAT: &str = "%Y/%m/%d %H:%M:%S%.6f";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Proto {
    Tcp,
    Udp,
    Icmp,
    Other,
}

impl Proto {
    pub fn parse(raw: &str) -> Proto {
        match raw.trim().to_ascii_lowercase().as_str() {
            "tcp" => Proto::Tcp,
            "udp" => Proto::Udp,
            "icmp" => Proto::Icmp,
            _ => Proto::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
            Proto::Icmp => "icmp",
            Proto::Other => "other",
        }
    }
}

/// Four-way label taxonomy of the capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    Normal,
    Background,
    Botnet,
    CandC,
}

impl Tag {
    pub fn is_attack(self) -> bool {
        matches!(self, Tag::Botnet | Tag::CandC)
    }

    /// A label string that [`classify_label`] maps back to this tag.
    pub fn canonical_label(self) -> &'static str {
        match self {
            Tag::Normal => "flow=Normal",
            Tag::Background => "flow=Background",
            Tag::Botnet => "flow=From-Botnet",
            Tag::CandC => "flow=From-Botnet-CC",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::Normal => "Normal",
            Tag::Background => "Background",
            Tag::Botnet => "Botnet",
            Tag::CandC => "CandC",
        };
        f.write_str(s)
    }
}

/// Maps a free-text CTU-13 label to a [`Tag`].
///
/// Matching is case-insensitive. A botnet label carrying a `CC` token (`CC`,
/// `CC6`, ...) is command and control; any other botnet label is `Botnet`;
/// then `Normal`; everything else, including the empty string, is
/// `Background`.
pub fn classify_label(raw_label: &str) -> Tag {
    let lower = raw_label.to_ascii_lowercase();
    if lower.contains("botnet") {
        let has_cc_token = lower
            .split(|c: char| !c.is_ascii_alphanumeric())
            .any(|token| {
                token
                    .strip_prefix("cc")
                    .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
            });
        if has_cc_token {
            Tag::CandC
        } else {
            Tag::Botnet
        }
    } else if lower.contains("normal") {
        Tag::Normal
    } else {
        Tag::Background
    }
}

/// Hex (`0x0303`) or decimal port; anything else, or out of range, is absent.
pub fn parse_port(raw: &str) -> Option<u16> {
    let raw = raw.trim();
    let value = match raw.strip_prefix("0x").or_else(|| raw.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16).ok()?,
        None => raw.parse::<u32>().ok()?,
    };
    u16::try_from(value).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    /// Seconds since the earliest flow of the same file.
    pub start_time: f64,
    pub duration: f64,
    pub proto: Proto,
    pub src_addr: String,
    pub src_port: Option<u16>,
    pub direction: String,
    pub dst_addr: String,
    pub dst_port: Option<u16>,
    pub state: String,
    pub stos: Option<u32>,
    pub tot_pkts: u64,
    pub tot_bytes: u64,
    pub src_bytes: u64,
    pub tag: Tag,
    pub scenario_id: u32,
}

impl FlowRecord {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }

    /// Renders the record as a binetflow line, with absolute timestamps
    /// rebuilt from `epoch`.
    pub fn to_binetflow_line(&self, epoch: NaiveDateTime) -> String {
        let micros = (self.start_time * 1e6).round() as i64;
        let start = epoch + TimeDelta::microseconds(micros);
        let port = |p: Option<u16>| p.map(|p| p.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},,{},{},{},{}",
            start.format(TIMESTAMP_OUT_FORMAT),
            self.duration,
            self.proto.as_str(),
            self.src_addr,
            port(self.src_port),
            self.direction,
            self.dst_addr,
            port(self.dst_port),
            self.state,
            self.stos.map(|t| t.to_string()).unwrap_or_default(),
            self.tot_pkts,
            self.tot_bytes,
            self.src_bytes,
            self.tag.canonical_label(),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    /// Non-blank data lines seen after the header.
    pub total: usize,
    pub kept: usize,
    pub skipped: usize,
    /// Earliest start timestamp among kept lines; all start times are relative
    /// to it.
    pub epoch: Option<NaiveDateTime>,
}

#[derive(Debug, Clone)]
pub struct ParsedFlows {
    pub records: Vec<FlowRecord>,
    pub stats: ParseStats,
}

struct Columns {
    count: usize,
    start: usize,
    dur: usize,
    proto: usize,
    src_addr: usize,
    sport: usize,
    dir: usize,
    dst_addr: usize,
    dport: usize,
    state: usize,
    stos: usize,
    tot_pkts: usize,
    tot_bytes: usize,
    src_bytes: usize,
    label: usize,
}

impl Columns {
    fn from_header(header: &str) -> Result<Columns> {
        let names: Vec<String> = header
            .split(',')
            .map(|n| n.trim().to_ascii_lowercase())
            .collect();
        if names.first().map(String::as_str) != Some("starttime") {
            return Err(Error::Format(format!(
                "expected a binetflow header starting with StartTime, found {:?}",
                header.chars().take(60).collect::<String>()
            )));
        }
        let find = |name: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Format(format!("header is missing column {name}")))
        };
        Ok(Columns {
            count: names.len(),
            start: 0,
            dur: find("dur")?,
            proto: find("proto")?,
            src_addr: find("srcaddr")?,
            sport: find("sport")?,
            dir: find("dir")?,
            dst_addr: find("dstaddr")?,
            dport: find("dport")?,
            state: find("state")?,
            stos: find("stos")?,
            tot_pkts: find("totpkts")?,
            tot_bytes: find("totbytes")?,
            src_bytes: find("srcbytes")?,
            label: find("label")?,
        })
    }
}

/// A record whose start time is still an absolute timestamp in microseconds.
struct RawRecord {
    start_micros: i64,
    record: FlowRecord,
}

fn parse_line(line: &str, cols: &Columns, scenario_id: u32) -> Option<RawRecord> {
    let fields: Vec<&str> = line.splitn(cols.count, ',').collect();
    if fields.len() != cols.count {
        return None;
    }
    let start = NaiveDateTime::parse_from_str(fields[cols.start].trim(), TIMESTAMP_FORMAT).ok()?;
    let duration: f64 = fields[cols.dur].trim().parse().ok()?;
    if !duration.is_finite() || duration < 0.0 {
        return None;
    }
    let tot_pkts: u64 = fields[cols.tot_pkts].trim().parse().ok()?;
    let tot_bytes: u64 = fields[cols.tot_bytes].trim().parse().ok()?;
    let src_bytes: u64 = fields[cols.src_bytes].trim().parse().ok()?;
    if src_bytes > tot_bytes || (tot_bytes > 0 && tot_pkts == 0) {
        return None;
    }
    let record = FlowRecord {
        start_time: 0.0,
        duration,
        proto: Proto::parse(fields[cols.proto]),
        src_addr: fields[cols.src_addr].trim().to_string(),
        src_port: parse_port(fields[cols.sport]),
        direction: fields[cols.dir].trim().to_string(),
        dst_addr: fields[cols.dst_addr].trim().to_string(),
        dst_port: parse_port(fields[cols.dport]),
        state: fields[cols.state].trim().to_string(),
        stos: fields[cols.stos].trim().parse().ok(),
        tot_pkts,
        tot_bytes,
        src_bytes,
        tag: classify_label(fields[cols.label]),
        scenario_id,
    };
    Some(RawRecord {
        start_micros: start.and_utc().timestamp_micros(),
        record,
    })
}

/// Parses a binetflow stream. See the module docs for the error contract.
pub fn parse_binetflow<R: BufRead>(source: R, scenario_id: u32) -> Result<ParsedFlows> {
    let mut lines = source.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                let line = line.trim_start_matches('\u{feff}').trim();
                if !line.is_empty() {
                    break line.to_string();
                }
            }
            None => return Err(Error::Format("missing binetflow header".into())),
        }
    };
    let cols = Columns::from_header(&header)?;

    let mut stats = ParseStats::default();
    let mut raw = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        stats.total += 1;
        match parse_line(line, &cols, scenario_id) {
            Some(r) => raw.push(r),
            None => stats.skipped += 1,
        }
    }
    stats.kept = raw.len();
    if stats.total > 0 && stats.skipped * 2 > stats.total {
        return Err(Error::CorruptInput {
            total: stats.total,
            skipped: stats.skipped,
        });
    }

    let epoch_micros = raw.iter().map(|r| r.start_micros).min();
    stats.epoch = epoch_micros.and_then(|m| chrono::DateTime::from_timestamp_micros(m).map(|d| d.naive_utc()));
    let records = raw
        .into_iter()
        .map(|r| {
            let mut record = r.record;
            record.start_time = (r.start_micros - epoch_micros.unwrap_or(0)) as f64 / 1e6;
            record
        })
        .collect();
    Ok(ParsedFlows { records, stats })
}

pub fn parse_binetflow_file(path: impl AsRef<Path>, scenario_id: u32) -> Result<ParsedFlows> {
    let file = File::open(path.as_ref())?;
    parse_binetflow(BufReader::new(file), scenario_id)
}

/// Writes records back out in binetflow layout.
pub fn write_binetflow<W: Write>(mut out: W, records: &[FlowRecord], epoch: NaiveDateTime) -> Result<()> {
    writeln!(out, "{BINETFLOW_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_binetflow_line(epoch))?;
    }
    Ok(())
}

pub const NORMALIZED_HEADER: [&str; 15] = [
    "scenario_id",
    "start_time",
    "duration",
    "proto",
    "src_addr",
    "src_port",
    "direction",
    "dst_addr",
    "dst_port",
    "state",
    "stos",
    "tot_pkts",
    "tot_bytes",
    "src_bytes",
    "tag",
];

/// Debug dump of parsed records, start times in relative seconds.
pub fn write_normalized_csv<W: Write>(out: W, records: &[FlowRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NORMALIZED_HEADER)?;
    let opt = |v: Option<u16>| v.map(|p| p.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.scenario_id.to_string(),
            r.start_time.to_string(),
            r.duration.to_string(),
            r.proto.as_str().to_string(),
            r.src_addr.clone(),
            opt(r.src_port),
            r.direction.clone(),
            r.dst_addr.clone(),
            opt(r.dst_port),
            r.state.clone(),
            r.stos.map(|t| t.to_string()).unwrap_or_default(),
            r.tot_pkts.to_string(),
            r.tot_bytes.to_string(),
            r.src_bytes.to_string(),
            r.tag.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "2011/08/10 09:46:53.047277,1.026539,tcp,94.44.127.113,1577,->,147.32.84.59,6881,S_RA,0,0,4,276,156,flow=Background-TCP-Established";

    fn parse_text(text: &str) -> Result<ParsedFlows> {
        parse_binetflow(text.as_bytes(), 1)
    }

    fn with_header(lines: &[&str]) -> String {
        let mut s = String::from(BINETFLOW_HEADER);
        for l in lines {
            s.push('\n');
            s.push_str(l);
        }
        s
    }

    #[test]
    fn parses_sample_line_field_by_field() {
        let parsed = parse_text(&with_header(&[SAMPLE])).unwrap();
        assert_eq!(parsed.stats.kept, 1);
        let r = &parsed.records[0];
        assert_eq!(r.start_time, 0.0);
        assert_eq!(r.duration, 1.026539);
        assert_eq!(r.proto, Proto::Tcp);
        assert_eq!(r.src_addr, "94.44.127.113");
        assert_eq!(r.src_port, Some(1577));
        assert_eq!(r.direction, "->");
        assert_eq!(r.dst_addr, "147.32.84.59");
        assert_eq!(r.dst_port, Some(6881));
        assert_eq!(r.state, "S_RA");
        assert_eq!(r.stos, Some(0));
        assert_eq!(r.tot_pkts, 4);
        assert_eq!(r.tot_bytes, 276);
        assert_eq!(r.src_bytes, 156);
        assert_eq!(r.tag, Tag::Background);
        let epoch = parsed.stats.epoch.unwrap();
        assert_eq!(epoch.format("%Y/%m/%d %H:%M:%S%.6f").to_string(), "2011/08/10 09:46:53.047277");
    }

    #[test]
    fn icmp_without_ports_is_kept() {
        let line = "2011/08/10 09:46:54.000000,0.000000,icmp,147.32.84.165,,->,147.32.80.9,,ECO,0,,1,98,98,flow=From-Botnet-V42-ICMP";
        let parsed = parse_text(&with_header(&[line])).unwrap();
        let r = &parsed.records[0];
        assert_eq!(r.src_port, None);
        assert_eq!(r.dst_port, None);
        assert_eq!(r.stos, Some(0));
        assert_eq!(r.tag, Tag::Botnet);
    }

    #[test]
    fn hex_ports() {
        assert_eq!(parse_port("0x0303"), Some(0x0303));
        assert_eq!(parse_port("80"), Some(80));
        assert_eq!(parse_port(""), None);
        assert_eq!(parse_port("http"), None);
        assert_eq!(parse_port("70000"), None);
    }

    #[test]
    fn non_numeric_bytes_skips_line() {
        let bad = SAMPLE.replace(",276,", ",lots,");
        let text = with_header(&[SAMPLE, SAMPLE, &bad]);
        let parsed = parse_text(&text).unwrap();
        assert_eq!(parsed.stats.total, 3);
        assert_eq!(parsed.stats.kept, 2);
        assert_eq!(parsed.stats.skipped, 1);
    }

    #[test]
    fn src_bytes_above_total_is_malformed() {
        let bad = SAMPLE.replace(",276,156,", ",276,300,");
        let parsed = parse_text(&with_header(&[SAMPLE, SAMPLE, &bad])).unwrap();
        assert_eq!(parsed.stats.skipped, 1);
    }

    #[test]
    fn mostly_garbage_is_corrupt() {
        let text = with_header(&[SAMPLE, "garbage", "more,garbage"]);
        match parse_text(&text) {
            Err(Error::CorruptInput { total, skipped }) => {
                assert_eq!((total, skipped), (3, 2));
            }
            other => panic!("expected corrupt input, got {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_text(""), Err(Error::Format(_))));
        assert!(matches!(parse_text("ts,a,b\n1,2,3"), Err(Error::Format(_))));
        assert!(matches!(
            parse_text("StartTime,Dur,Proto\n2011/08/10 09:46:53.0,1,tcp"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn start_times_are_relative_to_earliest() {
        let later = SAMPLE.replace("09:46:53.047277", "09:46:55.547277");
        let earlier = SAMPLE.replace("09:46:53.047277", "09:46:52.047277");
        let parsed = parse_text(&with_header(&[SAMPLE, &later, &earlier])).unwrap();
        let starts: Vec<f64> = parsed.records.iter().map(|r| r.start_time).collect();
        assert_eq!(starts, vec![1.0, 3.5, 0.0]);
    }

    #[test]
    fn label_classification() {
        assert_eq!(classify_label("flow=From-Botnet-V42-UDP-DNS"), Tag::Botnet);
        assert_eq!(classify_label("flow=To-Normal-V42-UDP"), Tag::Normal);
        assert_eq!(classify_label(""), Tag::Background);
        assert_eq!(classify_label("flow=From-Botnet-V42-TCP-CC6-Plain-HTTP-Encrypted-Data"), Tag::CandC);
        assert_eq!(classify_label("FLOW=FROM-BOTNET-V51-CC"), Tag::CandC);
        // "cc" inside a longer word is not a token
        assert_eq!(classify_label("flow=From-Botnet-V42-TCP-Accept"), Tag::Botnet);
        assert_eq!(classify_label("flow=Background-UDP-Established"), Tag::Background);
        for tag in [Tag::Normal, Tag::Background, Tag::Botnet, Tag::CandC] {
            assert_eq!(classify_label(tag.canonical_label()), tag);
        }
    }
}
