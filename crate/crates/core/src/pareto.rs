//! Dominance, Pareto fronts and post-transfer cleanup.
//!
//! A point dominates another when its latency is no higher, its accuracy no
//! lower, and at least one of the two is strictly better.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::search_space::Genotype;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatencySource {
    Predicted,
    Measured,
}

impl LatencySource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Predicted => "predicted",
            Self::Measured => "measured",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredArch {
    pub genotype: Genotype,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub latency_source: LatencySource,
}

impl ScoredArch {
    pub fn new(genotype: Genotype, accuracy: f64, latency_ms: f64, latency_source: LatencySource) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::InvalidConfig(format!("accuracy {accuracy} outside [0, 1]")));
        }
        if !(latency_ms > 0.0 && latency_ms.is_finite()) {
            return Err(Error::InvalidConfig(format!("latency {latency_ms} must be positive")));
        }
        Ok(Self {
            genotype,
            accuracy,
            latency_ms,
            latency_source,
        })
    }
}

pub fn dominates(a: &ScoredArch, b: &ScoredArch) -> bool {
    a.latency_ms <= b.latency_ms
        && a.accuracy >= b.accuracy
        && (a.latency_ms < b.latency_ms || a.accuracy > b.accuracy)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    pub members: Vec<ScoredArch>,
}

impl ParetoSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn genotypes(&self) -> Vec<Genotype> {
        self.members.iter().map(|m| m.genotype.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["genotype_json", "accuracy", "latency_ms", "latency_source"])?;
        for m in &self.members {
            wtr.write_record([
                m.genotype.to_json(),
                m.accuracy.to_string(),
                m.latency_ms.to_string(),
                m.latency_source.as_str().to_string(),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        self.write_csv(f)
    }

    /// Reads a front CSV. Members are taken as written, without re-filtering.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut members = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            let field = |k: usize| rec.get(k).unwrap_or_default().trim();
            let parse_err = |msg: String| Error::Parse { row, msg };
            let genotype = Genotype::from_json(field(0)).map_err(|e| parse_err(e.to_string()))?;
            let accuracy: f64 = field(1).parse().map_err(|e| parse_err(format!("accuracy: {e}")))?;
            let latency: f64 = field(2).parse().map_err(|e| parse_err(format!("latency: {e}")))?;
            let source = match field(3) {
                "predicted" => LatencySource::Predicted,
                "measured" => LatencySource::Measured,
                other => return Err(parse_err(format!("unknown latency source {other:?}"))),
            };
            members.push(ScoredArch::new(genotype, accuracy, latency, source).map_err(|e| parse_err(e.to_string()))?);
        }
        Ok(Self { members })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path).map_err(io_err(path))?)
    }

    /// Accuracy-vs-latency scatter; `background` points are drawn faintly
    /// behind the front.
    pub fn to_svg(&self, background: &[ScoredArch]) -> String {
        let all: Vec<&ScoredArch> = background.iter().chain(&self.members).collect();
        let (w, h, pad) = (640.0, 480.0, 50.0);
        let (mut lmin, mut lmax, mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &all {
            lmin = lmin.min(p.latency_ms);
            lmax = lmax.max(p.latency_ms);
            amin = amin.min(p.accuracy);
            amax = amax.max(p.accuracy);
        }
        if all.is_empty() {
            (lmin, lmax, amin, amax) = (0.0, 1.0, 0.0, 1.0);
        }
        let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
        let px = |l: f64| pad + (l - lmin) / span(lmin, lmax) * (w - 2.0 * pad);
        let py = |a: f64| h - pad - (a - amin) / span(amin, amax) * (h - 2.0 * pad);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y}" stroke="black"/>"#,
            y = h - pad,
            x2 = w - pad
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">latency (ms) {lmin:.3} to {lmax:.3}</text>"#,
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">accuracy {amin:.4} to {amax:.4}</text>"#,
            h / 2.0,
            h / 2.0
        );
        for p in background {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#bbbbbb"/>"##,
                px(p.latency_ms),
                py(p.accuracy)
            );
        }
        let mut front: Vec<&ScoredArch> = self.members.iter().collect();
        front.sort_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms));
        if front.len() > 1 {
            let pts: Vec<String> = front
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.latency_ms), py(p.accuracy)))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#d62728"/>"##,
                pts.join(" ")
            );
        }
        for p in front {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#d62728"><title>{}</title></circle>"##,
                px(p.latency_ms),
                py(p.accuracy),
                p.genotype
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn sort_points(points: &mut [ScoredArch]) {
    points.sort_by(|a, b| {
        a.latency_ms
            .total_cmp(&b.latency_ms)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| a.genotype.cmp(&b.genotype))
    });
}

/// Keeps points for which `keep(best_before, point)` holds, where
/// `best_before` is the highest accuracy among strictly faster points.
fn sweep(points: &[ScoredArch], keep: impl Fn(f64, &ScoredArch, f64) -> bool) -> Vec<ScoredArch> {
    let mut sorted = points.to_vec();
    sort_points(&mut sorted);
    let mut out = Vec::new();
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let lat = sorted[i].latency_ms;
        let mut j = i;
        while j < sorted.len() && sorted[j].latency_ms == lat {
            j += 1;
        }
        let group_best = sorted[i].accuracy;
        for p in &sorted[i..j] {
            if keep(best_before, p, group_best) {
                out.push(p.clone());
            }
        }
        best_before = best_before.max(group_best);
        i = j;
    }
    out
}

/// Exactly the non-dominated subset; points tied on (accuracy, latency)
/// are all kept. Output is sorted by latency, then accuracy descending.
pub fn pareto_front(points: &[ScoredArch]) -> Result<ParetoSet> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let members = sweep(points, |best_before, p, group_best| {
        p.accuracy == group_best && p.accuracy > best_before
    });
    Ok(ParetoSet { members })
}

/// Drops every point for which a strictly faster point has accuracy at
/// least `epsilon_acc` below or better, then takes the strict front.
/// Only measured latencies are accepted.
pub fn remove_non_pareto(candidates: &[ScoredArch], epsilon_acc: f64) -> Result<ParetoSet> {
    if candidates.iter().any(|c| c.latency_source != LatencySource::Measured) {
        return Err(Error::PredictedLatencyRejected);
    }
    if !(epsilon_acc >= 0.0) {
        return Err(Error::InvalidConfig("epsilon_acc must be nonnegative".into()));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    // Absorbs rounding in decimal inputs such as 0.700 - 0.001.
    let slack = if epsilon_acc > 0.0 { 1e-12 } else { 0.0 };
    let kept = sweep(candidates, |best_before, p, _| p.accuracy - best_before > epsilon_acc + slack);
    pareto_front(&kept)
}

/// Area dominated by `points` inside the box bounded by latency
/// `ref_latency` and accuracy 0.
pub fn hypervolume(points: &[ScoredArch], ref_latency: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.latency_ms < ref_latency)
        .map(|p| (p.latency_ms, p.accuracy.max(0.0)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut best = 0.0f64;
    for (i, &(lat, acc)) in pts.iter().enumerate() {
        best = best.max(acc);
        let next = pts.get(i + 1).map_or(ref_latency, |p| p.0);
        area += (next - lat) * best;
    }
    area
}
