//! Auction-style benchmark events and their text format.

use crate::stream_log::Record;
use crate::windowed::Timestamp;
use crate::workloads::WorkloadError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Bid,
    Other,
}

/// One input event. Within a partition's log, timestamps are non-decreasing
/// (partition-ordered streams); the generator guarantees this and handlers
/// treat a violation as a hard error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NexmarkEvent {
    pub kind: EventKind,
    pub ts: Timestamp,
    pub auction_id: u64,
    pub price: u64,
    pub category: u32,
    pub bid_id: u64,
}

impl NexmarkEvent {
    pub fn is_bid(&self) -> bool {
        self.kind == EventKind::Bid
    }

    /// Text form: `kind,ts,auctionId,price,category,bidId`.
    pub fn to_line(&self) -> String {
        let kind = match self.kind {
            EventKind::Bid => "bid",
            EventKind::Other => "other",
        };
        format!(
            "{kind},{},{},{},{},{}",
            self.ts.value(),
            self.auction_id,
            self.price,
            self.category,
            self.bid_id
        )
    }

    pub fn from_line(line: &str) -> Result<Self, WorkloadError> {
        let bad = || WorkloadError::ParseEvent(line.to_string());
        let mut fields = line.split(',');
        let kind = match fields.next().ok_or_else(bad)? {
            "bid" => EventKind::Bid,
            "other" => EventKind::Other,
            _ => return Err(bad()),
        };
        let next_u64 = |fields: &mut std::str::Split<'_, char>| -> Result<u64, WorkloadError> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(bad)
        };
        let ts = Timestamp(next_u64(&mut fields)?);
        let auction_id = next_u64(&mut fields)?;
        let price = next_u64(&mut fields)?;
        let category = next_u64(&mut fields)? as u32;
        let bid_id = next_u64(&mut fields)?;
        if fields.next().is_some() {
            return Err(bad());
        }
        Ok(NexmarkEvent {
            kind,
            ts,
            auction_id,
            price,
            category,
            bid_id,
        })
    }

    pub fn to_record(&self) -> Record {
        Record::untagged(self.to_line().into_bytes())
    }

    pub fn from_record(record: &Record) -> Result<Self, WorkloadError> {
        Self::from_line(&record.payload_str())
    }
}
