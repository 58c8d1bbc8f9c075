//! Control-plane trace records and the handshake-order validator.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::message::{CorrelationId, Endpoint, Envelope};
use crate::engine::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    /// Receiving endpoint.
    pub node: Endpoint,
    pub src: Endpoint,
    pub kind: &'static str,
    pub corr: CorrelationId,
}

impl TraceRecord {
    pub fn delivered(time: SimTime, env: &Envelope) -> Self {
        TraceRecord { time, node: env.dst, src: env.src, kind: env.msg.kind(), corr: env.corr }
    }

    /// The `detail` column of the event-trace CSV.
    pub fn detail(&self) -> String {
        alloc::format!("corr={} src={}", self.corr, self.src)
    }
}

/// Anything that wants to see delivered control messages.
pub trait TraceSink {
    fn record(&mut self, rec: TraceRecord);
}

#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _rec: TraceRecord) {}
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, rec: TraceRecord) {
        self.push(rec);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub corr: CorrelationId,
    /// Index into the validated slice of the first offending record.
    pub index: usize,
    pub time: SimTime,
    pub kind: &'static str,
    pub expected: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub transactions: usize,
    pub violations: Vec<Violation>,
    /// Attach, bootstrap or detach transactions that never finished.
    pub incomplete: Vec<CorrelationId>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

const BOOTSTRAP: &[&str] = &["InterlayerDiscovery", "RouteActivationRequest", "RouteActivationResponse", "InterlayerUpdate"];
const ATTACH: &[&str] = &[
    "UeAttachRequest",
    "AttachRequestToMmeA",
    "AttachHandshake",
    "CreateSessionRequest",
    "CreateSessionUpdate",
    "CreateSessionResponse",
    "BearerCreated",
    "UeNotify",
];
const DETACH: &[&str] = &["DetachRequest", "DetachAccept"];
const SYNC: &[&str] = &["ContextSync", "ContextSyncAck"];

/// Steps in `ATTACH` that may repeat back to back (challenge and response).
fn repeatable(kind: &str) -> bool {
    kind == "AttachHandshake"
}

/// Checks every correlation id against its expected message sequence:
/// bootstrap 1→2→2→3, attach 4→5→6(+)→7→8→9→10→11, detach request→accept,
/// sync→ack. The first message decides which sequence applies. Context syncs
/// may legitimately stay unanswered (deferral), so they never count as
/// incomplete.
pub fn validate_handshake_trace(trace: &[TraceRecord]) -> ValidationReport {
    struct Progress {
        seq: &'static [&'static str],
        at: usize,
        broken: bool,
    }
    let mut txs: BTreeMap<CorrelationId, Progress> = BTreeMap::new();
    let mut report = ValidationReport::default();

    for (index, rec) in trace.iter().enumerate() {
        let p = txs.entry(rec.corr).or_insert_with(|| {
            let seq = [BOOTSTRAP, ATTACH, DETACH, SYNC].into_iter().find(|s| s[0] == rec.kind).unwrap_or(&[]);
            Progress { seq, at: 0, broken: false }
        });
        if p.broken {
            continue;
        }
        let ok = if p.at < p.seq.len() && p.seq[p.at] == rec.kind {
            p.at += 1;
            true
        } else {
            p.at > 0 && p.at <= p.seq.len() && p.seq[p.at - 1] == rec.kind && repeatable(rec.kind)
        };
        if !ok {
            p.broken = true;
            let expected = match p.seq.get(p.at) {
                Some(k) => k,
                None if p.seq.is_empty() => "start of a known transaction",
                None => "end of transaction",
            };
            report.violations.push(Violation { corr: rec.corr, index, time: rec.time, kind: rec.kind, expected });
        }
    }
    report.transactions = txs.len();
    report.incomplete = txs
        .iter()
        .filter(|(_, p)| !p.broken && p.at < p.seq.len() && p.seq != SYNC)
        .map(|(&c, _)| c)
        .collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fme::message::Unit;

    fn rec(corr: u64, kind: &'static str, t: u64) -> TraceRecord {
        TraceRecord { time: SimTime(t), node: Endpoint::Henb(1, Unit::MmeA), src: Endpoint::Ue(1), kind, corr }
    }

    fn nominal_attach(corr: u64) -> Vec<TraceRecord> {
        let mut v: Vec<TraceRecord> = ATTACH.iter().enumerate().map(|(i, &k)| rec(corr, k, i as u64)).collect();
        v.insert(3, rec(corr, "AttachHandshake", 2));
        v
    }

    #[test]
    fn nominal_attach_ok() {
        let r = validate_handshake_trace(&nominal_attach(5));
        assert!(r.is_ok());
        assert!(r.incomplete.is_empty());
        assert_eq!(r.transactions, 1);
    }

    #[test]
    fn ten_before_nine_flagged_at_ten() {
        let mut t = nominal_attach(5);
        let nine = t.iter().position(|r| r.kind == "CreateSessionResponse").unwrap();
        t.swap(nine, nine + 1);
        let r = validate_handshake_trace(&t);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, "BearerCreated");
        assert_eq!(r.violations[0].expected, "CreateSessionResponse");
        assert_eq!(r.violations[0].index, nine);
    }

    #[test]
    fn interleaved_transactions_ok() {
        let a = nominal_attach(1);
        let b = nominal_attach(2);
        let mut t = Vec::new();
        for (x, y) in a.into_iter().zip(b) {
            t.push(x);
            t.push(y);
        }
        t.extend(BOOTSTRAP.iter().map(|&k| rec(3, k, 100)));
        t.push(rec(4, "DetachRequest", 200));
        t.push(rec(4, "DetachAccept", 201));
        t.push(rec(9, "ContextSync", 300));
        assert!(validate_handshake_trace(&t).is_ok());
        assert!(validate_handshake_trace(&t).incomplete.is_empty());
    }

    #[test]
    fn unknown_start_and_trailing_messages() {
        let t = [rec(1, "CreateSessionRequest", 0)];
        assert_eq!(validate_handshake_trace(&t).violations.len(), 1);
        let mut t = nominal_attach(2);
        t.push(rec(2, "UeNotify", 99));
        let r = validate_handshake_trace(&t);
        assert_eq!(r.violations[0].expected, "end of transaction");
    }

    #[test]
    fn incomplete_attach_reported() {
        let t = &nominal_attach(1)[..4];
        let r = validate_handshake_trace(t);
        assert!(r.is_ok());
        assert_eq!(r.incomplete, [1]);
    }
}
