//! Score report rendering and time-weighted aggregation.

use super::DerBreakdown;

/// Pool per-file components; the aggregate DER is the time-weighted mean.
pub fn aggregate_der(breakdowns: &[DerBreakdown]) -> DerBreakdown {
    let mut total = DerBreakdown::default();
    for b in breakdowns {
        total.missed_s += b.missed_s;
        total.false_alarm_s += b.false_alarm_s;
        total.confusion_s += b.confusion_s;
        total.scored_speech_s += b.scored_speech_s;
    }
    total
}

/// Per-file rows `file<TAB>der<TAB>miss<TAB>fa<TAB>conf` plus an aggregate
/// line. Rates are percentages of scored speech.
pub fn render_score_report(rows: &[(String, DerBreakdown)]) -> String {
    let mut out = String::new();
    for (file, b) in rows {
        out.push_str(&format!(
            "{file}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            100.0 * b.der(),
            100.0 * b.missed_s / b.scored_speech_s,
            100.0 * b.false_alarm_s / b.scored_speech_s,
            100.0 * b.confusion_s / b.scored_speech_s,
        ));
    }
    let total = aggregate_der(&rows.iter().map(|(_, b)| *b).collect::<Vec<_>>());
    if total.scored_speech_s > 0.0 {
        out.push_str(&format!(
            "TOTAL\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            100.0 * total.der(),
            100.0 * total.missed_s / total.scored_speech_s,
            100.0 * total.false_alarm_s / total.scored_speech_s,
            100.0 * total.confusion_s / total.scored_speech_s,
        ));
    }
    out
}
