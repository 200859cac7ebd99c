//! Tumbling time windows over flow records.
//!
//! Windows are half-open intervals `[i·size, (i+1)·size)` on each scenario's
//! own time axis. A flow belongs to every window its interval
//! `[start, start + duration]` reaches into with positive overlap, so a flow
//! contributes to the window it was initiated in and to every later window in
//! which it is still active. A zero-duration flow belongs only to the window
//! containing its start.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FlowRecord, Tag};

pub const DEFAULT_WINDOW_SIZES: [f64; 5] = [0.01, 1.0, 10.0, 30.0, 60.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    /// Background flows are dropped before window membership is computed.
    Exclude,
    /// Background flows are kept and count as non-attack traffic.
    AsNonAttack,
}

impl std::str::FromStr for BackgroundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "exclude" => Ok(BackgroundMode::Exclude),
            "as_non_attack" | "include" | "non_attack" => Ok(BackgroundMode::AsNonAttack),
            other => Err(Error::Config(format!("unknown background mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    size: f64,
    pub background_mode: BackgroundMode,
}

impl WindowSpec {
    pub fn new(size: f64, background_mode: BackgroundMode) -> Result<WindowSpec> {
        if !(size.is_finite() && size > 0.0) {
            return Err(Error::Config(format!("window size must be positive, got {size}")));
        }
        Ok(WindowSpec { size, background_mode })
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    fn index_of(&self, t: f64) -> u64 {
        (t / self.size).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowAggregate<'a> {
    /// Scenario whose time axis the window lives on. Windows never mix
    /// scenarios.
    pub scenario_id: u32,
    pub index: u64,
    pub start: f64,
    pub end: f64,
    pub flows: Vec<&'a FlowRecord>,
    /// 1 iff at least one member flow is tagged Botnet or C&C.
    pub label: u8,
}

/// Indices of every window the flow is active in.
pub fn windows_for_flow(flow: &FlowRecord, spec: &WindowSpec) -> RangeInclusive<u64> {
    let first = spec.index_of(flow.start_time);
    if flow.duration <= 0.0 {
        return first..=first;
    }
    // Largest i with i·size < end, i.e. ceil(end/size) - 1.
    let q = flow.end_time() / spec.size;
    let last = (q.ceil() as u64).saturating_sub(1).max(first);
    first..=last
}

/// Window label: 1 iff any member is an attack flow.
pub fn window_label<'f, I>(flows: I) -> u8
where
    I: IntoIterator<Item = &'f FlowRecord>,
{
    u8::from(flows.into_iter().any(|f| f.tag.is_attack()))
}

/// Groups flows into labelled windows, ordered by scenario id then index.
/// Windows without member flows are not emitted.
pub fn build_windows<'a>(flows: &'a [FlowRecord], spec: &WindowSpec) -> Result<Vec<WindowAggregate<'a>>> {
    if flows.is_empty() {
        return Err(Error::EmptyInput("no flows to window"));
    }
    let mut members: BTreeMap<(u32, u64), Vec<&'a FlowRecord>> = BTreeMap::new();
    let kept = flows.iter().filter(|f| match spec.background_mode {
        BackgroundMode::Exclude => f.tag != Tag::Background,
        BackgroundMode::AsNonAttack => true,
    });
    for flow in kept {
        for index in windows_for_flow(flow, spec) {
            members.entry((flow.scenario_id, index)).or_default().push(flow);
        }
    }
    Ok(members
        .into_iter()
        .map(|((scenario_id, index), flows)| WindowAggregate {
            scenario_id,
            index,
            start: index as f64 * spec.size,
            end: (index + 1) as f64 * spec.size,
            label: window_label(flows.iter().copied()),
            flows,
        })
        .collect())
}
