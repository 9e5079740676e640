//! Per-machine run statistics, rendered as CSV. Columns are fixed:
//! counts first, then rates derived from the machine's wall time.

use serde::{Deserialize, Serialize};

use super::MachineExport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub machine: u32,
    pub wall_ms: u64,
    pub updates: u64,
    pub modifications: u64,
    pub publications: u64,
    pub envelopes_sent: u64,
    pub envelopes_received: u64,
    pub push_bytes: u64,
    pub syncs_run: u64,
    pub sweeps: u32,
    pub max_in_flight: u32,
}

impl MetricsRow {
    pub(super) fn from_export(export: &MachineExport) -> Self {
        MetricsRow {
            machine: export.machine,
            wall_ms: export.wall_ms,
            updates: export.updates,
            modifications: export.modifications,
            publications: export.publications,
            envelopes_sent: export.counters.sent,
            envelopes_received: export.counters.received,
            push_bytes: export.push_bytes,
            syncs_run: export.syncs_run,
            sweeps: export.sweeps,
            max_in_flight: export.max_in_flight,
        }
    }

    /// Count per second of wall time; sub-millisecond runs round up to
    /// one millisecond so short tests report finite rates.
    fn per_second(&self, count: u64) -> f64 {
        count as f64 * 1000.0 / self.wall_ms.max(1) as f64
    }
}

pub fn render_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "machine,wall_ms,updates,modifications,publications,envelopes_sent,\
         envelopes_received,bytes_pushed,syncs_run,sweeps,max_in_flight,\
         updates_per_s,envelopes_per_s,bytes_pushed_per_s\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.1},{:.1},{:.1}\n",
            r.machine,
            r.wall_ms,
            r.updates,
            r.modifications,
            r.publications,
            r.envelopes_sent,
            r.envelopes_received,
            r.push_bytes,
            r.syncs_run,
            r.sweeps,
            r.max_in_flight,
            r.per_second(r.updates),
            r.per_second(r.envelopes_sent),
            r.per_second(r.push_bytes),
        ));
    }
    out
}
