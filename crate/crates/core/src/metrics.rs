//! Location- and distance-aware detection scores.
//!
//! Within a frame, a prediction and a reference of the same class form a
//! matched pair. The pair is a true positive when the angle between them is
//! at most 20 degrees and the relative distance error is at most 1;
//! otherwise it counts as one false positive and one false negative.
//! Unmatched predictions are false positives and unmatched references false
//! negatives. The F-score is macro-averaged over classes; DOA and relative
//! distance errors are averaged over every matched pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::codec::{CodecError, Event, FrameEvents};
use crate::geom::{angular_distance_deg, sph_to_cart};

pub const ANGLE_THRESHOLD_DEG: f64 = 20.0;
pub const REL_DISTANCE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub angle_deg: f64,
    pub rel_distance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            angle_deg: ANGLE_THRESHOLD_DEG,
            rel_distance: REL_DISTANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub class_id: usize,
    pub angle_deg: f64,
    pub rel_distance: f64,
    pub is_tp: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub pairs: Vec<MatchedPair>,
    /// Classes predicted without a reference.
    pub unmatched_pred: Vec<usize>,
    /// Reference classes without a prediction.
    pub unmatched_ref: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn f_score(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / denom as f64
    }
}

fn pair(p: &Event, g: &Event, thr: Thresholds) -> MatchedPair {
    let angle = angular_distance_deg(sph_to_cart(p.direction), sph_to_cart(g.direction))
        .expect("unit direction vectors");
    let rel = (p.distance - g.distance).abs() / g.distance;
    MatchedPair {
        class_id: g.class_id,
        angle_deg: angle,
        rel_distance: rel,
        is_tp: angle <= thr.angle_deg && rel <= thr.rel_distance,
    }
}

/// Class-wise one-to-one matching within one frame.
pub fn match_frame(preds: &FrameEvents, refs: &FrameEvents, thr: Thresholds) -> FrameMatch {
    let mut m = FrameMatch::default();
    for g in &refs.entries {
        match preds.by_class(g.class_id) {
            Some(p) => m.pairs.push(pair(p, g, thr)),
            None => m.unmatched_ref.push(g.class_id),
        }
    }
    for p in &preds.entries {
        if refs.by_class(p.class_id).is_none() {
            m.unmatched_pred.push(p.class_id);
        }
    }
    m
}

/// Running totals; partial accumulators merge associatively in their
/// counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Accumulator {
    pub counts: BTreeMap<usize, ClassCounts>,
    pub angle_sum: f64,
    pub rel_distance_sum: f64,
    pub n_pairs: u64,
    pub n_frames: u64,
}

impl Accumulator {
    pub fn add(&mut self, m: &FrameMatch) {
        self.n_frames += 1;
        for p in &m.pairs {
            let c = self.counts.entry(p.class_id).or_default();
            if p.is_tp {
                c.tp += 1;
            } else {
                c.fp += 1;
                c.fn_ += 1;
            }
            self.angle_sum += p.angle_deg;
            self.rel_distance_sum += p.rel_distance;
            self.n_pairs += 1;
        }
        for &k in &m.unmatched_pred {
            self.counts.entry(k).or_default().fp += 1;
        }
        for &k in &m.unmatched_ref {
            self.counts.entry(k).or_default().fn_ += 1;
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        for (k, c) in &other.counts {
            let e = self.counts.entry(*k).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
        }
        self.angle_sum += other.angle_sum;
        self.rel_distance_sum += other.rel_distance_sum;
        self.n_pairs += other.n_pairs;
        self.n_frames += other.n_frames;
    }

    pub fn finish(&self) -> Result<SeldScores, MetricsError> {
        if self.n_frames == 0 {
            return Err(MetricsError::EmptyEval);
        }
        let scored: Vec<f64> = self
            .counts
            .values()
            .filter(|c| !c.is_empty())
            .map(ClassCounts::f_score)
            .collect();
        let f = if scored.is_empty() {
            1.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        let n = self.n_pairs as f64;
        Ok(SeldScores {
            f_20_1: f,
            doae: (self.n_pairs > 0).then(|| self.angle_sum / n),
            rde: (self.n_pairs > 0).then(|| self.rel_distance_sum / n),
            per_class: self.counts.clone(),
            n_pairs: self.n_pairs,
            n_frames: self.n_frames,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeldScores {
    pub f_20_1: f64,
    /// Mean angular error in degrees; `None` when nothing was matched.
    pub doae: Option<f64>,
    /// Mean relative distance error; `None` when nothing was matched.
    pub rde: Option<f64>,
    pub per_class: BTreeMap<usize, ClassCounts>,
    pub n_pairs: u64,
    pub n_frames: u64,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "none".to_string(),
    }
}

impl SeldScores {
    /// One-line summary, e.g. `F20/1=1.000 DOAE=0.00 RDE=0.000`.
    pub fn summary(&self) -> String {
        format!(
            "F20/1={:.3} DOAE={} RDE={}",
            self.f_20_1,
            opt(self.doae, 2),
            opt(self.rde, 3)
        )
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "f_20_1={}\ndoae={}\nrde={}\nn_pairs={}\nn_frames={}\n",
            self.f_20_1,
            self.doae.map_or("none".into(), |v| v.to_string()),
            self.rde.map_or("none".into(), |v| v.to_string()),
            self.n_pairs,
            self.n_frames
        );
        for (k, c) in &self.per_class {
            let _ = writeln!(s, "class.{k}.tp={}\nclass.{k}.fp={}\nclass.{k}.fn={}", c.tp, c.fp, c.fn_);
        }
        s
    }

    /// Per-class table followed by a macro row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,tp,fp,fn,f_score\n");
        let mut total = ClassCounts::default();
        for (k, c) in &self.per_class {
            let _ = writeln!(s, "{k},{},{},{},{}", c.tp, c.fp, c.fn_, c.f_score());
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
        }
        let _ = writeln!(s, "macro,{},{},{},{}", total.tp, total.fp, total.fn_, self.f_20_1);
        s
    }

    pub fn write_reports(&self, kv_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(kv_path, self.to_kv())?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }
}

/// Scores aligned `(prediction, reference)` frame pairs.
pub fn aggregate(frames: &[(FrameEvents, FrameEvents)], thr: Thresholds) -> Result<SeldScores, MetricsError> {
    let mut acc = Accumulator::default();
    for (p, g) in frames {
        acc.add(&match_frame(p, g, thr));
    }
    acc.finish()
}

/// Scores sparse prediction and reference sequences over the union of their
/// frame indices.
pub fn evaluate(preds: &[FrameEvents], refs: &[FrameEvents], thr: Thresholds) -> Result<SeldScores, MetricsError> {
    let index: BTreeSet<usize> = preds.iter().chain(refs).map(|f| f.frame_index).collect();
    let collect = |src: &[FrameEvents]| {
        let mut m: BTreeMap<usize, FrameEvents> = BTreeMap::new();
        for f in src {
            m.entry(f.frame_index)
                .or_insert_with(|| FrameEvents::new(f.frame_index))
                .entries
                .extend(f.entries.iter().copied());
        }
        m
    };
    let (p, g) = (collect(preds), collect(refs));
    let frames: Vec<(FrameEvents, FrameEvents)> = index
        .into_iter()
        .map(|i| {
            (
                p.get(&i).cloned().unwrap_or_else(|| FrameEvents::new(i)),
                g.get(&i).cloned().unwrap_or_else(|| FrameEvents::new(i)),
            )
        })
        .collect();
    aggregate(&frames, thr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Direction;
    use proptest::prelude::*;

    fn ev(class_id: usize, az: f64, el: f64, d: f64) -> Event {
        Event {
            class_id,
            direction: Direction::new(az, el).unwrap(),
            distance: d,
        }
    }

    fn frame(i: usize, e: Vec<Event>) -> FrameEvents {
        FrameEvents { frame_index: i, entries: e }
    }

    #[test]
    fn match_examples() {
        let thr = Thresholds::default();
        let g = frame(0, vec![ev(0, 10.0, 0.0, 2.0)]);
        let m = match_frame(&g, &g, thr);
        assert!(m.pairs[0].is_tp);

        let p = frame(0, vec![ev(0, 35.0, 0.0, 2.0)]);
        let m = match_frame(&p, &g, thr);
        assert!(!m.pairs[0].is_tp);
        assert!((m.pairs[0].angle_deg - 25.0).abs() < 1e-12);
        let s = aggregate(&[(p, g.clone())], thr).unwrap();
        assert_eq!(s.per_class[&0], ClassCounts { tp: 0, fp: 1, fn_: 1 });
        assert!((s.doae.unwrap() - 25.0).abs() < 1e-12);

        let p = frame(0, vec![ev(0, 10.0, 0.0, 3.0)]);
        let m = match_frame(&p, &g, thr);
        assert!(m.pairs[0].is_tp);
        assert_eq!(m.pairs[0].rel_distance, 0.5);
    }

    #[test]
    fn thresholds_are_inclusive() {
        let thr = Thresholds::default();
        let g = frame(0, vec![ev(0, 0.0, 0.0, 1.0)]);
        assert!(match_frame(&frame(0, vec![ev(0, 0.0, 0.0, 2.0)]), &g, thr).pairs[0].is_tp);
        assert!(!match_frame(&frame(0, vec![ev(0, 0.0, 0.0, 2.0 + 1e-9)]), &g, thr).pairs[0].is_tp);
        let g = frame(0, vec![ev(0, 20.0, 0.0, 1.0)]);
        let p = frame(0, vec![ev(0, 0.0, 0.0, 1.0)]);
        let m = match_frame(&p, &g, thr);
        assert!(m.pairs[0].angle_deg <= 20.0 + 1e-12);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let refs = vec![frame(0, vec![ev(0, 1.0, 2.0, 3.0), ev(2, -50.0, 10.0, 1.0)]), frame(3, vec![ev(1, 90.0, 0.0, 4.0)])];
        let s = evaluate(&refs, &refs, Thresholds::default()).unwrap();
        assert_eq!((s.f_20_1, s.doae, s.rde), (1.0, Some(0.0), Some(0.0)));
        assert_eq!(s.summary(), "F20/1=1.000 DOAE=0.00 RDE=0.000");

        let s = evaluate(&[], &refs, Thresholds::default()).unwrap();
        assert_eq!(s.f_20_1, 0.0);
        assert_eq!((s.doae, s.rde), (None, None));
        assert_eq!(s.summary(), "F20/1=0.000 DOAE=none RDE=none");

        assert!(matches!(evaluate(&[], &[], Thresholds::default()), Err(MetricsError::EmptyEval)));
        let quiet = [(frame(0, vec![]), frame(0, vec![]))];
        assert_eq!(aggregate(&quiet, Thresholds::default()).unwrap().f_20_1, 1.0);
    }

    /// Three frames, two classes, evaluated by hand:
    /// frame 0: class 0 matched at 10 deg, rel 0.25 (TP); class 1 missed (FN)
    /// frame 1: class 0 matched at 30 deg, rel 0 (FP+FN); class 1 spurious (FP)
    /// frame 2: class 1 matched at 0 deg, rel 1.5 (FP+FN)
    /// class 0: TP 1, FP 1, FN 1 -> F = 2/4
    /// class 1: TP 0, FP 2, FN 2 -> F = 0
    #[test]
    fn handcrafted_set() {
        let frames = vec![
            (frame(0, vec![ev(0, 10.0, 0.0, 2.5)]), frame(0, vec![ev(0, 0.0, 0.0, 2.0), ev(1, 40.0, 0.0, 1.0)])),
            (frame(1, vec![ev(0, 30.0, 0.0, 1.0), ev(1, 0.0, 0.0, 1.0)]), frame(1, vec![ev(0, 0.0, 0.0, 1.0)])),
            (frame(2, vec![ev(1, 0.0, 50.0, 5.0)]), frame(2, vec![ev(1, 0.0, 50.0, 2.0)])),
        ];
        let s = aggregate(&frames, Thresholds::default()).unwrap();
        assert_eq!(s.per_class[&0], ClassCounts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(s.per_class[&1], ClassCounts { tp: 0, fp: 2, fn_: 2 });
        assert!((s.f_20_1 - 0.25).abs() < 1e-15);
        assert_eq!(s.n_pairs, 3);
        assert!((s.doae.unwrap() - 40.0 / 3.0).abs() < 1e-9);
        assert!((s.rde.unwrap() - 1.75 / 3.0).abs() < 1e-12);
        let csv = s.to_csv();
        assert!(csv.starts_with("class,tp,fp,fn,f_score\n0,1,1,1,0.5\n1,0,2,2,0\n"));
        assert!(csv.ends_with("macro,1,3,3,0.25\n"));
        assert!(s.to_kv().contains("class.1.fp=2\n"));
    }

    fn random_frames(seed: u64) -> Vec<(FrameEvents, FrameEvents)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..rng.random_range(1..12))
            .map(|i| {
                let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                    let mut e = Vec::new();
                    for c in 0..3 {
                        if rng.random_bool(0.5) {
                            e.push(ev(c, rng.random_range(-179.0..180.0), rng.random_range(-60.0..60.0), rng.random_range(0.5..5.0)));
                        }
                    }
                    frame(i, e)
                };
                let g = mk(&mut rng);
                let p = mk(&mut rng);
                (p, g)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn invariant_under_frame_reordering(seed in 0u64..1000, rot in 0usize..12) {
            let frames = random_frames(seed);
            let a = aggregate(&frames, Thresholds::default()).unwrap();
            let mut shuffled = frames.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let b = aggregate(&shuffled, Thresholds::default()).unwrap();
            prop_assert_eq!(a.f_20_1, b.f_20_1);
            prop_assert_eq!(&a.per_class, &b.per_class);
            prop_assert!((a.doae.unwrap_or(0.0) - b.doae.unwrap_or(0.0)).abs() < 1e-9);
        }

        #[test]
        fn invariant_under_class_relabeling(seed in 0u64..1000) {
            let frames = random_frames(seed);
            let perm = [2usize, 0, 1];
            let relabel = |f: &FrameEvents| frame(f.frame_index, f.entries.iter().map(|e| Event { class_id: perm[e.class_id], ..*e }).collect());
            let mapped: Vec<_> = frames.iter().map(|(p, g)| (relabel(p), relabel(g))).collect();
            let a = aggregate(&frames, Thresholds::default()).unwrap();
            let b = aggregate(&mapped, Thresholds::default()).unwrap();
            prop_assert!((a.f_20_1 - b.f_20_1).abs() < 1e-15);
            prop_assert_eq!(a.n_pairs, b.n_pairs);
        }

        #[test]
        fn fixing_a_pair_never_lowers_f(seed in 0u64..1000) {
            let mut frames = random_frames(seed);
            let before = aggregate(&frames, Thresholds::default()).unwrap().f_20_1;
            let thr = Thresholds::default();
            'outer: for (p, g) in frames.iter_mut() {
                for pe in p.entries.iter_mut() {
                    if let Some(ge) = g.by_class(pe.class_id) {
                        let m = pair(pe, ge, thr);
                        if !m.is_tp {
                            *pe = *ge;
                            break 'outer;
                        }
                    }
                }
            }
            let after = aggregate(&frames, thr).unwrap().f_20_1;
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn merged_partials_match_single_pass(seed in 0u64..1000, split in 0usize..12) {
            let frames = random_frames(seed);
            let k = split % (frames.len() + 1);
            let thr = Thresholds::default();
            let mut a = Accumulator::default();
            let mut b = Accumulator::default();
            for (p, g) in &frames[..k] { a.add(&match_frame(p, g, thr)); }
            for (p, g) in &frames[k..] { b.add(&match_frame(p, g, thr)); }
            a.merge(&b);
            let whole = aggregate(&frames, thr).unwrap();
            let merged = a.finish().unwrap();
            prop_assert_eq!(whole.per_class, merged.per_class);
            prop_assert_eq!(whole.f_20_1, merged.f_20_1);
        }
    }

    #[test]
    fn report_files() {
        let refs = vec![frame(0, vec![ev(0, 1.0, 2.0, 3.0)])];
        let s = evaluate(&refs, &refs, Thresholds::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_reports(dir.path().join("s.txt"), dir.path().join("s.csv")).unwrap();
        let kv = std::fs::read_to_string(dir.path().join("s.txt")).unwrap();
        assert!(kv.starts_with("f_20_1=1\ndoae=0\nrde=0\n"));
    }
}
