//! Reward-model analysis (balanced wrong-domain test set, classification
//! metrics, score histograms, Jensen–Shannon divergence) and aggregation of
//! multi-seed learning curves.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogenv::{states_to_matrix, DialogState, ExpertCorpus};
use crate::error::{ensure, Error, Result};
use crate::ontology::{AssignmentMatrix, DialogAction, Level};
use crate::shaping::{combine, Combination, RewardEstimator};

/// Expert pairs and, for the same states, actions from a different domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTestSet {
    pub states: Vec<DialogState>,
    pub positives: Vec<DialogAction>,
    pub negatives: Vec<DialogAction>,
}

impl ClassifierTestSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One negative per selected expert pair, drawn uniformly from the valid
/// actions whose domain differs from the expert's.
pub fn build_testset(
    corpus: &ExpertCorpus,
    indices: &[usize],
    m: &AssignmentMatrix,
    seed: u64,
) -> Result<ClassifierTestSet> {
    let domains = m.level_size(Level::Domain);
    ensure!(
        domains >= 2,
        Configuration,
        "a wrong-domain test set needs at least two domains, the ontology has {domains}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ClassifierTestSet {
        states: Vec::with_capacity(indices.len()),
        positives: Vec::with_capacity(indices.len()),
        negatives: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        let (state, action) = &corpus.pairs[i];
        let domain = m.triple(*action)?.domain;
        let others: Vec<usize> = (0..m.action_dim())
            .filter(|&a| m.rows()[a].domain != domain)
            .collect();
        let neg = *others.choose(&mut rng).expect("another domain has actions");
        out.states.push(state.clone());
        out.positives.push(*action);
        out.negatives.push(DialogAction(neg));
    }
    Ok(out)
}

/// Which score of the reward model is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreVariant {
    Combined(Combination),
    /// Gated reward of one level.
    Level(Level),
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 5] = [
        ScoreVariant::Level(Level::Domain),
        ScoreVariant::Level(Level::Act),
        ScoreVariant::Level(Level::Slot),
        ScoreVariant::Combined(Combination::SeqAvg),
        ScoreVariant::Combined(Combination::SeqPrd),
    ];

    pub fn name(self) -> String {
        match self {
            ScoreVariant::Combined(c) => c.name().to_string(),
            ScoreVariant::Level(l) => format!("r_{}", l.short()),
        }
    }

    pub fn from_gated(self, r: [f64; 3]) -> f64 {
        match self {
            ScoreVariant::Combined(c) => combine(c, r),
            ScoreVariant::Level(l) => r[l.index()],
        }
    }
}

/// Level scores for every positive and negative pair of the test set.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSetScores {
    pub positives: Vec<[f64; 3]>,
    pub negatives: Vec<[f64; 3]>,
}

pub fn score_testset(est: &RewardEstimator, ts: &ClassifierTestSet) -> Result<TestSetScores> {
    let dim = ts.states.first().map(|s| s.len()).unwrap_or(0);
    let x = states_to_matrix(&ts.states, dim);
    Ok(TestSetScores {
        positives: est.score_levels_batch(&x, &ts.positives)?,
        negatives: est.score_levels_batch(&x, &ts.negatives)?,
    })
}

impl TestSetScores {
    /// `(positive, negative)` scores of one variant.
    pub fn variant(&self, est: &RewardEstimator, variant: ScoreVariant) -> (Vec<f64>, Vec<f64>) {
        let f = |y: &[f64; 3]| variant.from_gated(est.gated(*y));
        (
            self.positives.iter().map(f).collect(),
            self.negatives.iter().map(f).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True negatives over true positives.
    pub bias_ratio: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores at or above `threshold` count as positive predictions.
pub fn metrics_from_scores(
    positives: &[f64],
    negatives: &[f64],
    threshold: f64,
) -> ClassificationMetrics {
    let tp = positives.iter().filter(|&&s| s >= threshold).count();
    let fp = negatives.iter().filter(|&&s| s >= threshold).count();
    let c = Confusion {
        tp,
        fn_: positives.len() - tp,
        fp,
        tn: negatives.len() - fp,
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassificationMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        bias_ratio: if c.tp == 0 {
            f64::INFINITY
        } else {
            c.tn as f64 / c.tp as f64
        },
        confusion: c,
    }
}

pub fn classification_metrics(
    est: &RewardEstimator,
    ts: &ClassifierTestSet,
    variant: ScoreVariant,
    threshold: f64,
) -> Result<ClassificationMetrics> {
    ensure!(
        threshold > 0.0 && threshold < 1.0,
        ContractViolation,
        "threshold must lie in (0, 1), got {threshold}"
    );
    let scores = score_testset(est, ts)?;
    let (p, n) = scores.variant(est, variant);
    Ok(metrics_from_scores(&p, &n, threshold))
}

/// Equal-width histogram over `[0, 1]`; the top bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ScoreHistogram {
    pub fn new(scores: &[f64], n_bins: usize) -> Result<Self> {
        ensure!(
            n_bins >= 2,
            ContractViolation,
            "a histogram needs at least two bins"
        );
        let edges = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
        let mut counts = vec![0; n_bins];
        for &s in scores {
            let b = ((s.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Share of the mass with scores in `[lo, hi]` bins (by bin edges).
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let t = self.total().max(1) as f64;
        let inside: usize = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| self.edges[*i] >= lo - 1e-12 && self.edges[*i + 1] <= hi + 1e-12)
            .map(|(_, &c)| c)
            .sum();
        inside as f64 / t
    }
}

pub fn score_histograms(
    positives: &[f64],
    negatives: &[f64],
    n_bins: usize,
) -> Result<(ScoreHistogram, ScoreHistogram)> {
    Ok((
        ScoreHistogram::new(positives, n_bins)?,
        ScoreHistogram::new(negatives, n_bins)?,
    ))
}

pub const JSD_EPS: f64 = 1e-10;

/// Jensen–Shannon divergence in nats between two histograms on the same
/// edges, after adding `1e-10` to every bin and renormalizing.
pub fn js_divergence(p: &ScoreHistogram, q: &ScoreHistogram) -> Result<f64> {
    ensure!(
        p.edges == q.edges,
        ContractViolation,
        "histograms have different bin edges"
    );
    Ok(jsd_from_probs(&p.normalized(), &q.normalized()))
}

/// JSD of two probability vectors with the same `1e-10` smoothing.
pub fn jsd_from_probs(p: &[f64], q: &[f64]) -> f64 {
    let z_p: f64 = p.iter().map(|v| v + JSD_EPS).sum();
    let z_q: f64 = q.iter().map(|v| v + JSD_EPS).sum();
    let mut d = 0.0;
    for (a, b) in p.iter().zip(q) {
        let a = (a + JSD_EPS) / z_p;
        let b = (b + JSD_EPS) / z_q;
        let m = 0.5 * (a + b);
        d += 0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln();
    }
    d.max(0.0)
}

/// Two overlaid histograms as a standalone SVG document.
pub fn histogram_svg(title: &str, real: &ScoreHistogram, fake: &ScoreHistogram) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let n = real.counts.len();
    let (pr, pf) = (real.normalized(), fake.normalized());
    let top = pr.iter().chain(&pf).cloned().fold(1e-9, f64::max);
    let bw = (w - 2.0 * pad) / n as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    for (series, color) in [(&pr, "#1f77b4"), (&pf, "#d62728")] {
        for (i, &v) in series.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let bh = v / top * (h - 2.0 * pad);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.55"/>"#,
                pad + i as f64 * bw,
                h - pad - bh,
                bw,
                bh
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = h - pad,
        x2 = w - pad
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"#,
            pad + t * (w - 2.0 * pad),
            h - pad + 15.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="#1f77b4">real</text>"##,
        w - pad - 60.0,
        pad
    );
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="#d62728">fake</text>"##,
        w - pad - 60.0,
        pad + 14.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Mean success-rate curves (with a ±1 std band) as a standalone SVG.
pub fn curves_svg(title: &str, series: &[(String, &AggregateCurve)]) -> String {
    const COLORS: [&str; 6] = [
        "#7f7f7f", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    ];
    let (w, h, pad) = (640.0, 360.0, 44.0);
    let max_frames = series
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|p| p.frames))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |f: usize| pad + f as f64 / max_frames * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    for (k, (name, curve)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if curve.points.is_empty() {
            continue;
        }
        let upper: Vec<String> = curve
            .points
            .iter()
            .map(|p| {
                format!(
                    "{:.1},{:.1}",
                    x(p.frames),
                    y(p.success_mean + p.success_std)
                )
            })
            .collect();
        let lower: Vec<String> = curve
            .points
            .iter()
            .rev()
            .map(|p| {
                format!(
                    "{:.1},{:.1}",
                    x(p.frames),
                    y(p.success_mean - p.success_std)
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.12" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.frames), y(p.success_mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            pad + 8.0,
            pad + 14.0 * k as f64,
            xml_escape(name)
        );
    }
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{t}</text>"#,
            pad - 4.0,
            y(t) + 4.0
        );
        let frames = (t * max_frames).round() as usize;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{frames}</text>"#,
            x(frames),
            h - pad + 15.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One evaluation checkpoint of a training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub frames: usize,
    pub success_rate: f64,
    pub reward_score: f64,
    pub avg_turn: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frames,success_rate,reward_score,avg_turn,seed\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                p.frames, p.success_rate, p.reward_score, p.avg_turn, self.seed
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("frames,success_rate,reward_score,avg_turn,seed") {
            return Err("missing learning-curve header".into());
        }
        let mut curve = LearningCurve::default();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("row {}: expected 5 fields", n + 1));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|e| format!("row {}: {e}", n + 1))
            };
            curve.points.push(CurvePoint {
                frames: f[0].parse().map_err(|e| format!("row {}: {e}", n + 1))?,
                success_rate: num(1)?,
                reward_score: num(2)?,
                avg_turn: num(3)?,
            });
            curve.seed = f[4].parse().map_err(|e| format!("row {}: {e}", n + 1))?;
        }
        Ok(curve)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|m| Error::format(path, m))
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// First checkpoint frame whose success rate reaches `target`.
    pub fn frames_to(&self, target: f64) -> Option<usize> {
        self.points
            .iter()
            .find(|p| p.success_rate >= target)
            .map(|p| p.frames)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub frames: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub turn_mean: f64,
    pub turn_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateCurve {
    pub runs: usize,
    pub points: Vec<AggregatePoint>,
}

impl AggregateCurve {
    pub fn final_point(&self) -> Option<&AggregatePoint> {
        self.points.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "frames,success_mean,success_std,reward_mean,reward_std,turn_mean,turn_std,runs\n",
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                p.frames,
                p.success_mean,
                p.success_std,
                p.reward_mean,
                p.reward_std,
                p.turn_mean,
                p.turn_std,
                self.runs
            );
        }
        out
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-checkpoint mean and std across runs sharing one evaluation grid.
pub fn aggregate_runs(curves: &[LearningCurve]) -> Result<AggregateCurve> {
    ensure!(
        !curves.is_empty(),
        ContractViolation,
        "no learning curves to aggregate"
    );
    let grid: Vec<usize> = curves[0].points.iter().map(|p| p.frames).collect();
    for c in curves {
        let g: Vec<usize> = c.points.iter().map(|p| p.frames).collect();
        ensure!(
            g == grid,
            ContractViolation,
            "learning curves use different checkpoint grids"
        );
    }
    let points = grid
        .iter()
        .enumerate()
        .map(|(i, &frames)| {
            let col = |f: fn(&CurvePoint) -> f64| -> Vec<f64> {
                curves.iter().map(|c| f(&c.points[i])).collect()
            };
            let (success_mean, success_std) = mean_std(&col(|p| p.success_rate));
            let (reward_mean, reward_std) = mean_std(&col(|p| p.reward_score));
            let (turn_mean, turn_std) = mean_std(&col(|p| p.avg_turn));
            AggregatePoint {
                frames,
                success_mean,
                success_std,
                reward_mean,
                reward_std,
                turn_mean,
                turn_std,
            }
        })
        .collect();
    Ok(AggregateCurve {
        runs: curves.len(),
        points,
    })
}

/// One row of the reward-model table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantReport {
    pub variant: String,
    pub metrics: ClassificationMetrics,
    pub jsd: f64,
    /// Share of positive scores in the top tenth of `[0, 1]`.
    pub real_top_decile: f64,
    /// Share of negative scores in the bottom tenth.
    pub fake_bottom_decile: f64,
    pub real_hist: ScoreHistogram,
    pub fake_hist: ScoreHistogram,
}

pub fn evaluate_variants(
    est: &RewardEstimator,
    ts: &ClassifierTestSet,
    variants: &[ScoreVariant],
    threshold: f64,
    n_bins: usize,
) -> Result<Vec<VariantReport>> {
    let scores = score_testset(est, ts)?;
    variants
        .iter()
        .map(|&v| {
            let (p, n) = scores.variant(est, v);
            let (real_hist, fake_hist) = score_histograms(&p, &n, n_bins)?;
            Ok(VariantReport {
                variant: v.name(),
                metrics: metrics_from_scores(&p, &n, threshold),
                jsd: js_divergence(&real_hist, &fake_hist)?,
                real_top_decile: real_hist.mass_between(0.9, 1.0),
                fake_bottom_decile: fake_hist.mass_between(0.0, 0.1),
                real_hist,
                fake_hist,
            })
        })
        .collect()
}

pub fn metrics_csv(rows: &[VariantReport]) -> String {
    let mut out = String::from("variant,accuracy,precision,recall,f1,bias_ratio,jsd,tp,fp,tn,fn\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            r.variant,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.bias_ratio,
            r.jsd,
            m.confusion.tp,
            m.confusion.fp,
            m.confusion.tn,
            m.confusion.fn_
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(counts: Vec<usize>) -> ScoreHistogram {
        let n = counts.len();
        ScoreHistogram {
            edges: (0..=n).map(|i| i as f64 / n as f64).collect(),
            counts,
        }
    }

    #[test]
    fn jsd_reference_values() {
        assert!(
            js_divergence(&hist(vec![3, 5]), &hist(vec![3, 5]))
                .unwrap()
                .abs()
                < 1e-12
        );
        let d = js_divergence(&hist(vec![4, 0]), &hist(vec![0, 4])).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-8);
        // value from an independent evaluation of the smoothed formula
        let d = js_divergence(&hist(vec![2, 0]), &hist(vec![1, 1])).unwrap();
        assert!((d - 0.215_761_553_192_473_7).abs() < 1e-9, "{d}");
        assert!((jsd_from_probs(&[1.0, 0.0], &[0.5, 0.5]) - d).abs() < 1e-12);
    }

    #[test]
    fn mismatched_edges_rejected() {
        let err = js_divergence(&hist(vec![1, 1]), &hist(vec![1, 1, 1])).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn metrics_edge_cases() {
        let m = metrics_from_scores(&[0.9, 0.8], &[0.1, 0.2], 0.5);
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(m.bias_ratio, 1.0);
        let m = metrics_from_scores(&[0.5; 4], &[0.5; 4], 0.5);
        assert_eq!((m.recall, m.accuracy), (1.0, 0.5));
        assert_eq!(m.confusion.total(), 8);
    }

    #[test]
    fn histogram_basics() {
        let h = ScoreHistogram::new(&[1.0, 1.0, 1.0], 10).unwrap();
        assert_eq!(h.counts[9], 3);
        assert_eq!(h.mass_between(0.9, 1.0), 1.0);
        let h = ScoreHistogram::new(&[0.0, 0.05, 0.5, 0.99], 100).unwrap();
        assert_eq!(h.total(), 4);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        assert!(ScoreHistogram::new(&[], 1).is_err());
    }

    #[test]
    fn aggregation() {
        let c = |v: f64| LearningCurve {
            seed: 0,
            points: vec![CurvePoint {
                frames: 1000,
                success_rate: v,
                reward_score: 10.0 * v,
                avg_turn: 5.0,
            }],
        };
        let one = aggregate_runs(&[c(0.8)]).unwrap();
        assert_eq!(one.points[0].success_mean, 0.8);
        assert_eq!(one.points[0].success_std, 0.0);
        let two = aggregate_runs(&[c(0.8), c(0.9)]).unwrap();
        assert!((two.points[0].success_mean - 0.85).abs() < 1e-12);
        assert!((two.points[0].success_std - 0.05).abs() < 1e-12);
        let mut other = c(0.5);
        other.points[0].frames = 2000;
        assert!(aggregate_runs(&[c(0.8), other]).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = LearningCurve {
            seed: 7,
            points: vec![CurvePoint {
                frames: 1000,
                success_rate: 0.25,
                reward_score: -12.5,
                avg_turn: 9.75,
            }],
        };
        assert_eq!(LearningCurve::from_csv(&curve.to_csv()).unwrap(), curve);
    }
}
