use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scenario::NodeId;

/// MUL: from an upper layer. MSL: within the same layer. Messages from lower
/// layers are never sent, so there is no variant for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    #[serde(rename = "MUL")]
    Upper,
    #[serde(rename = "MSL")]
    SameLayer,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Upper => "MUL",
            MessageKind::SameLayer => "MSL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRecord {
    /// 1-based global iteration (time slot).
    pub iteration: u32,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub sender_layer: u32,
    pub receiver_layer: u32,
    pub kind: MessageKind,
}

/// Every directed message sent during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficLog {
    records: Vec<TrafficRecord>,
    iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationTraffic {
    pub iteration: u32,
    pub directed_messages: usize,
    /// Distinct undirected node pairs carrying at least one message.
    pub links_active: usize,
}

impl TrafficLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, record: TrafficRecord) {
        debug_assert!(record.sender_layer <= record.receiver_layer);
        self.iterations = self.iterations.max(record.iteration);
        self.records.push(record);
    }

    /// Marks `iteration` as executed even if it carried no messages.
    pub(crate) fn touch_iteration(&mut self, iteration: u32) {
        self.iterations = self.iterations.max(iteration);
    }

    pub fn records(&self) -> &[TrafficRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of executed iterations (time slots).
    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn per_iteration(&self) -> Vec<IterationTraffic> {
        let mut out: Vec<IterationTraffic> = (1..=self.iterations)
            .map(|iteration| IterationTraffic { iteration, directed_messages: 0, links_active: 0 })
            .collect();
        let mut links: Vec<BTreeSet<(NodeId, NodeId)>> = vec![BTreeSet::new(); self.iterations as usize];
        for r in &self.records {
            let slot = (r.iteration - 1) as usize;
            out[slot].directed_messages += 1;
            let pair = if r.sender < r.receiver { (r.sender, r.receiver) } else { (r.receiver, r.sender) };
            links[slot].insert(pair);
        }
        for (o, l) in out.iter_mut().zip(links) {
            o.links_active = l.len();
        }
        out
    }

    /// `iteration,directed_messages,links_active`
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,directed_messages,links_active")?;
        for it in self.per_iteration() {
            writeln!(out, "{},{},{}", it.iteration, it.directed_messages, it.links_active)?;
        }
        Ok(())
    }

    pub fn write_records_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,sender,receiver,sender_layer,receiver_layer,kind")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                r.sender,
                r.receiver,
                r.sender_layer,
                r.receiver_layer,
                r.kind.as_str()
            )?;
        }
        Ok(())
    }
}
