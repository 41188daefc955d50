//! Diarization error rate over second-level segment lists.
//!
//! Conventions, pinned by the hand fixtures below: the timeline runs from 0
//! to the last segment end on either side; collars of `±collar_s` are excised
//! around every reference speaker-activity transition strictly inside the
//! timeline (a segment edge at 0 or at the timeline end is not a boundary);
//! components are accounted per elementary interval after optimal speaker
//! mapping, and the denominator is reference speaker-time inside the scored
//! regions (overlapped speech counts once per active speaker).

use std::collections::BTreeSet;

use super::super::data::SegmentList;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DerBreakdown {
    pub missed_s: f64,
    pub false_alarm_s: f64,
    pub confusion_s: f64,
    pub scored_speech_s: f64,
}

impl DerBreakdown {
    pub fn error_s(&self) -> f64 {
        self.missed_s + self.false_alarm_s + self.confusion_s
    }

    pub fn der(&self) -> f64 {
        self.error_s() / self.scored_speech_s
    }
}

/// Score `hypothesis` against `reference`. `collar_s` is the tolerance on
/// each side of a reference boundary; `skip_overlap` additionally excludes
/// regions where two or more reference speakers are active.
pub fn der(
    reference: &SegmentList,
    hypothesis: &SegmentList,
    collar_s: f64,
    skip_overlap: bool,
) -> Result<DerBreakdown> {
    if collar_s < 0.0 {
        return Err(Error::invalid(format!("collar must be >= 0, got {collar_s}")));
    }
    let timeline_end = reference.end_time().max(hypothesis.end_time());
    let ref_timelines = speaker_timelines(reference);
    let hyp_timelines = speaker_timelines(hypothesis);

    let mut cuts: Vec<(f64, f64)> = Vec::new();
    if collar_s > 0.0 {
        for &b in &reference_boundaries(&ref_timelines, timeline_end) {
            cuts.push(((b - collar_s).max(0.0), (b + collar_s).min(timeline_end)));
        }
    }
    if skip_overlap {
        cuts.extend(overlap_regions(&ref_timelines));
    }
    let scored = subtract_intervals(&[(0.0, timeline_end)], &merge_intervals(cuts));

    let mapping = best_mapping(reference, hypothesis);
    let hyp_mapped = rename_speakers(&hyp_timelines, &mapping);
    let breakdown = accumulate_components(&ref_timelines, &hyp_mapped, &scored);
    if breakdown.scored_speech_s <= 0.0 {
        return Err(Error::UndefinedDer);
    }
    Ok(breakdown)
}

/// Speaker bijection (hypothesis id -> reference id pairs) minimizing total
/// error time over the full timeline, found by exhaustive search over
/// injections of the smaller side. Ties break to the lexicographically
/// smallest mapping. Intended for <= 8 speakers per side.
pub fn best_mapping(reference: &SegmentList, hypothesis: &SegmentList) -> Vec<(String, String)> {
    let ref_timelines = speaker_timelines(reference);
    let hyp_timelines = speaker_timelines(hypothesis);
    if ref_timelines.is_empty() || hyp_timelines.is_empty() {
        return Vec::new();
    }
    assert!(
        ref_timelines.len() <= 8 && hyp_timelines.len() <= 8,
        "best_mapping is exhaustive and limited to 8 speakers per side"
    );
    let timeline_end = reference.end_time().max(hypothesis.end_time());
    let full = [(0.0, timeline_end)];

    let n_hyp = hyp_timelines.len();
    let n_ref = ref_timelines.len();
    let mut best: Option<(f64, Vec<(String, String)>)> = None;

    // Enumerate injective assignments of the smaller side into the larger.
    let (from_hyp, small, large) = if n_hyp <= n_ref {
        (true, n_hyp, n_ref)
    } else {
        (false, n_ref, n_hyp)
    };
    let mut chosen = vec![usize::MAX; small];
    let mut used = vec![false; large];
    enumerate_injections(0, small, large, &mut chosen, &mut used, &mut |assignment| {
        let mapping: Vec<(String, String)> = assignment
            .iter()
            .enumerate()
            .map(|(s, &l)| {
                if from_hyp {
                    (hyp_timelines[s].0.clone(), ref_timelines[l].0.clone())
                } else {
                    (hyp_timelines[l].0.clone(), ref_timelines[s].0.clone())
                }
            })
            .collect();
        let mut mapping = mapping;
        mapping.sort();
        let mapped = rename_speakers(&hyp_timelines, &mapping);
        let cost = accumulate_components(&ref_timelines, &mapped, &full).error_s();
        let better = match &best {
            None => true,
            Some((best_cost, best_mapping)) => {
                cost < best_cost - 1e-12
                    || ((cost - best_cost).abs() <= 1e-12 && mapping < *best_mapping)
            }
        };
        if better {
            best = Some((cost, mapping));
        }
    });
    best.map(|(_, m)| m).unwrap_or_default()
}

fn enumerate_injections(
    slot: usize,
    small: usize,
    large: usize,
    chosen: &mut Vec<usize>,
    used: &mut Vec<bool>,
    visit: &mut impl FnMut(&[usize]),
) {
    if slot == small {
        visit(chosen);
        return;
    }
    for candidate in 0..large {
        if !used[candidate] {
            used[candidate] = true;
            chosen[slot] = candidate;
            enumerate_injections(slot + 1, small, large, chosen, used, visit);
            used[candidate] = false;
        }
    }
}

type SpeakerTimeline = (String, Vec<(f64, f64)>);

fn speaker_timelines(list: &SegmentList) -> Vec<SpeakerTimeline> {
    list.speakers()
        .into_iter()
        .map(|s| {
            let intervals = list.speaker_intervals(&s);
            (s, intervals)
        })
        .collect()
}

/// Activity-transition instants of any reference speaker, strictly inside
/// (0, timeline_end).
fn reference_boundaries(timelines: &[SpeakerTimeline], timeline_end: f64) -> Vec<f64> {
    let mut points: BTreeSet<u64> = BTreeSet::new();
    for (_, intervals) in timelines {
        for &(start, end) in intervals {
            for b in [start, end] {
                if b > 1e-12 && b < timeline_end - 1e-12 {
                    points.insert(b.to_bits());
                }
            }
        }
    }
    points.into_iter().map(f64::from_bits).collect()
}

fn overlap_regions(timelines: &[SpeakerTimeline]) -> Vec<(f64, f64)> {
    // Sweep over activity edges, recording stretches with >= 2 active.
    let mut events: Vec<(f64, i32)> = Vec::new();
    for (_, intervals) in timelines {
        for &(start, end) in intervals {
            events.push((start, 1));
            events.push((end, -1));
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
    let mut active = 0;
    let mut regions = Vec::new();
    let mut overlap_start = None;
    for (time, delta) in events {
        active += delta;
        match (overlap_start, active >= 2) {
            (None, true) => overlap_start = Some(time),
            (Some(start), false) => {
                if time > start {
                    regions.push((start, time));
                }
                overlap_start = None;
            }
            _ => {}
        }
    }
    merge_intervals(regions)
}

fn rename_speakers(
    timelines: &[SpeakerTimeline],
    mapping: &[(String, String)],
) -> Vec<SpeakerTimeline> {
    timelines
        .iter()
        .map(|(name, intervals)| {
            let renamed = mapping
                .iter()
                .find(|(hyp, _)| hyp == name)
                .map(|(_, r)| r.clone())
                // Unmapped hypothesis speakers keep a name that can never
                // collide with a reference id.
                .unwrap_or_else(|| format!("\u{1}unmapped:{name}"));
            (renamed, intervals.clone())
        })
        .collect()
}

/// Component times over the piecewise-constant partition restricted to the
/// scored regions.
fn accumulate_components(
    reference: &[SpeakerTimeline],
    hypothesis: &[SpeakerTimeline],
    scored: &[(f64, f64)],
) -> DerBreakdown {
    let mut edges: BTreeSet<u64> = BTreeSet::new();
    for (_, intervals) in reference.iter().chain(hypothesis) {
        for &(start, end) in intervals {
            edges.insert(start.to_bits());
            edges.insert(end.to_bits());
        }
    }
    for &(start, end) in scored {
        edges.insert(start.to_bits());
        edges.insert(end.to_bits());
    }
    let points: Vec<f64> = edges.into_iter().map(f64::from_bits).collect();

    let mut out = DerBreakdown::default();
    for pair in points.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        let mid = 0.5 * (start + end);
        if !point_covered(scored, mid) {
            continue;
        }
        let duration = end - start;
        let ref_active: Vec<&str> = active_at(reference, mid);
        let hyp_active: Vec<&str> = active_at(hypothesis, mid);
        let n_ref = ref_active.len();
        let n_hyp = hyp_active.len();
        let n_correct = ref_active.iter().filter(|r| hyp_active.contains(r)).count();
        out.missed_s += n_ref.saturating_sub(n_hyp) as f64 * duration;
        out.false_alarm_s += n_hyp.saturating_sub(n_ref) as f64 * duration;
        out.confusion_s += (n_ref.min(n_hyp) - n_correct) as f64 * duration;
        out.scored_speech_s += n_ref as f64 * duration;
    }
    out
}

fn active_at(timelines: &[SpeakerTimeline], time: f64) -> Vec<&str> {
    timelines
        .iter()
        .filter(|(_, intervals)| point_covered(intervals, time))
        .map(|(name, _)| name.as_str())
        .collect()
}

fn point_covered(intervals: &[(f64, f64)], x: f64) -> bool {
    intervals.iter().any(|&(s, e)| x >= s && x < e)
}

fn merge_intervals(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.retain(|&(s, e)| e > s);
    intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (start, end) in intervals {
        match merged.last_mut() {
            Some((_, last_end)) if start <= *last_end => *last_end = last_end.max(end),
            _ => merged.push((start, end)),
        }
    }
    merged
}

fn subtract_intervals(base: &[(f64, f64)], cuts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(start, end) in base {
        let mut cursor = start;
        for &(cut_start, cut_end) in cuts {
            if cut_end <= cursor || cut_start >= end {
                continue;
            }
            if cut_start > cursor {
                out.push((cursor, cut_start));
            }
            cursor = cursor.max(cut_end);
        }
        if cursor < end {
            out.push((cursor, end));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Segment;

    fn seg(speaker: &str, onset: f64, dur: f64) -> Segment {
        Segment { speaker: speaker.into(), onset_s: onset, duration_s: dur }
    }

    fn list(segs: Vec<Segment>) -> SegmentList {
        SegmentList::new(segs).unwrap()
    }

    #[test]
    fn identical_hypothesis_scores_zero() {
        let reference = list(vec![seg("a", 0.0, 10.0), seg("b", 10.0, 10.0)]);
        for collar in [0.0, 0.25, 1.0] {
            let result = der(&reference, &reference, collar, false).unwrap();
            assert_eq!(result.error_s(), 0.0, "collar {collar}");
            assert_eq!(result.der(), 0.0);
        }
    }

    #[test]
    fn half_confused_fixture_collar_zero() {
        let reference = list(vec![seg("a", 0.0, 10.0), seg("b", 10.0, 10.0)]);
        let hypothesis = list(vec![seg("a", 0.0, 20.0)]);
        let result = der(&reference, &hypothesis, 0.0, false).unwrap();
        assert!((result.confusion_s - 10.0).abs() < 1e-9, "{result:?}");
        assert!((result.scored_speech_s - 20.0).abs() < 1e-9);
        assert!((result.der() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn half_confused_fixture_collar_quarter_second() {
        let reference = list(vec![seg("a", 0.0, 10.0), seg("b", 10.0, 10.0)]);
        let hypothesis = list(vec![seg("a", 0.0, 20.0)]);
        let result = der(&reference, &hypothesis, 0.25, false).unwrap();
        assert!((result.confusion_s - 9.75).abs() < 1e-9, "{result:?}");
        assert!((result.scored_speech_s - 19.5).abs() < 1e-9, "{result:?}");
        assert!((result.der() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn swapped_ids_map_back_to_zero_der() {
        let reference = list(vec![seg("a", 0.0, 5.0), seg("b", 5.0, 5.0)]);
        let hypothesis = list(vec![seg("b", 0.0, 5.0), seg("a", 5.0, 5.0)]);
        let mapping = best_mapping(&reference, &hypothesis);
        assert_eq!(
            mapping,
            vec![("a".to_string(), "b".to_string()), ("b".to_string(), "a".to_string())]
        );
        let result = der(&reference, &hypothesis, 0.0, false).unwrap();
        assert_eq!(result.error_s(), 0.0);
    }

    #[test]
    fn identity_mapping_for_identical_lists() {
        let reference = list(vec![seg("x", 0.0, 2.0), seg("y", 2.0, 2.0)]);
        let mapping = best_mapping(&reference, &reference);
        assert_eq!(
            mapping,
            vec![("x".to_string(), "x".to_string()), ("y".to_string(), "y".to_string())]
        );
    }

    #[test]
    fn exhaustive_two_speaker_mapping_matches_overlap_maximization() {
        use crate::rng::Rng;
        let mut rng = Rng::from_seed(61);
        for _ in 0..40 {
            // Random alternating two-speaker instances on both sides.
            let mut make = |names: [&str; 2]| {
                let mut segs = Vec::new();
                let mut t = 0.0;
                for k in 0..6 {
                    let dur = rng.range(0.5, 2.0);
                    segs.push(seg(names[k % 2], t, dur));
                    t += dur + rng.range(0.0, 0.3);
                }
                list(segs)
            };
            let reference = make(["a", "b"]);
            let hypothesis = make(["p", "q"]);

            let mapping = best_mapping(&reference, &hypothesis);

            // Oracle: pick the injection maximizing total matched time.
            let overlap = |x: &SegmentList, xs: &str, y: &SegmentList, ys: &str| -> f64 {
                let xi = x.speaker_intervals(xs);
                let yi = y.speaker_intervals(ys);
                let mut total = 0.0;
                for &(s1, e1) in &xi {
                    for &(s2, e2) in &yi {
                        total += (e1.min(e2) - s1.max(s2)).max(0.0);
                    }
                }
                total
            };
            let straight = overlap(&hypothesis, "p", &reference, "a")
                + overlap(&hypothesis, "q", &reference, "b");
            let swapped = overlap(&hypothesis, "p", &reference, "b")
                + overlap(&hypothesis, "q", &reference, "a");
            let expect_straight = straight >= swapped;
            let got_straight = mapping.contains(&("p".to_string(), "a".to_string()));
            if (straight - swapped).abs() > 1e-9 {
                assert_eq!(got_straight, expect_straight, "{mapping:?}");
            }
        }
    }

    #[test]
    fn empty_reference_has_undefined_der() {
        let hypothesis = list(vec![seg("a", 0.0, 1.0)]);
        assert!(matches!(
            der(&SegmentList::empty(), &hypothesis, 0.0, false),
            Err(Error::UndefinedDer)
        ));
    }

    #[test]
    fn empty_hypothesis_is_all_missed() {
        let reference = list(vec![seg("a", 0.0, 4.0)]);
        let result = der(&reference, &SegmentList::empty(), 0.0, false).unwrap();
        assert!((result.missed_s - 4.0).abs() < 1e-9);
        assert!((result.der() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skip_overlap_excludes_overlapped_reference_speech() {
        // a: [0,4), b: [2,6): overlap [2,4). Hypothesis only a over [0,4).
        let reference = list(vec![seg("a", 0.0, 4.0), seg("b", 2.0, 4.0)]);
        let hypothesis = list(vec![seg("a", 0.0, 4.0)]);
        let with_overlap = der(&reference, &hypothesis, 0.0, false).unwrap();
        let skipped = der(&reference, &hypothesis, 0.0, true).unwrap();
        // Scored speech: 8s with overlap counted per speaker; excluding the
        // overlap region leaves [0,2) of a and [4,6) of b.
        assert!((with_overlap.scored_speech_s - 8.0).abs() < 1e-9);
        assert!((skipped.scored_speech_s - 4.0).abs() < 1e-9);
        // b in [4,6) is missed in both cases.
        assert!((skipped.missed_s - 2.0).abs() < 1e-9);
    }

    #[test]
    fn growing_collar_never_grows_scored_speech() {
        let reference = list(vec![seg("a", 0.0, 3.0), seg("b", 3.0, 3.0), seg("a", 6.0, 3.0)]);
        let hypothesis = list(vec![seg("a", 0.0, 9.0)]);
        let mut last = f64::INFINITY;
        for collar in [0.0, 0.1, 0.25, 0.5, 1.0] {
            let result = der(&reference, &hypothesis, collar, false).unwrap();
            assert!(result.scored_speech_s <= last + 1e-12);
            last = result.scored_speech_s;
        }
    }

    #[test]
    fn der_is_invariant_under_hypothesis_relabeling() {
        use crate::rng::Rng;
        let mut rng = Rng::from_seed(71);
        for _ in 0..20 {
            let mut segs_ref = Vec::new();
            let mut segs_hyp_a = Vec::new();
            let mut segs_hyp_b = Vec::new();
            let mut t = 0.0;
            for k in 0..5 {
                let dur = rng.range(0.4, 1.5);
                segs_ref.push(seg(["a", "b"][k % 2], t, dur));
                let hyp_dur = dur * rng.range(0.5, 1.0);
                segs_hyp_a.push(seg(["x", "y"][k % 2], t, hyp_dur));
                segs_hyp_b.push(seg(["y", "x"][k % 2], t, hyp_dur));
                t += dur;
            }
            let reference = list(segs_ref);
            let hyp = list(segs_hyp_a);
            let hyp_swapped = list(segs_hyp_b);
            let a = der(&reference, &hyp, 0.25, false).unwrap();
            let b = der(&reference, &hyp_swapped, 0.25, false).unwrap();
            assert!((a.der() - b.der()).abs() < 1e-12);
        }
    }
}
