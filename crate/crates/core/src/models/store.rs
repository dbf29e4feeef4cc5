//! Versioned flat-text serialization of trained models, so runs are
//! resumable and auditable without binary tooling.
//!
//! One file holds a [`ModelBundle`]: a named combination (for example
//! `LR+RUS+KM2`), its optional cluster assignment, and one fitted member per
//! cluster. Floats are written with Rust's shortest round-trip formatting.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{FittedInner, LogisticModel, ModelError, ModelKind, NaiveModel, TrainedModel, ZipModel};
use crate::cluster::ClusterModel;
use crate::domain::{CellRecord, SegmentId};
use crate::models::Standardizer;
use crate::Scalar;

const MAGIC: &str = "roadrisk-model v1";

/// A deployable predictor: one trained member per cluster (a single member
/// when clustering is off).
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub name: String,
    pub kind: ModelKind,
    pub cluster: Option<ClusterModel<Scalar>>,
    pub members: Vec<TrainedModel>,
}

impl ModelBundle {
    /// The member responsible for a segment; segments missing from the
    /// cluster assignment fall back to member 0.
    pub fn member_for(&self, segment: &SegmentId) -> &TrainedModel {
        match &self.cluster {
            Some(c) => &self.members[c.cluster_of(segment).unwrap_or(0)],
            None => &self.members[0],
        }
    }

    pub fn predict_proba(&self, record: &CellRecord) -> Result<Scalar, ModelError> {
        super::predict_proba(self.member_for(&record.segment_id), record)
    }

    pub fn classify(&self, record: &CellRecord) -> Result<u8, ModelError> {
        super::classify(self.member_for(&record.segment_id), record)
    }
}

fn write_floats<W: Write>(w: &mut W, key: &str, vals: &[Scalar]) -> std::io::Result<()> {
    write!(w, "{key}:")?;
    for v in vals {
        write!(w, " {v}")?;
    }
    writeln!(w)
}

pub fn write_bundle<W: Write>(bundle: &ModelBundle, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "name: {}", bundle.name)?;
    writeln!(w, "kind: {}", bundle.kind.label())?;
    let names = &bundle.members[0].feature_names;
    writeln!(w, "features: {}", names.join(","))?;
    match &bundle.cluster {
        None => writeln!(w, "clusters: 0")?,
        Some(c) => {
            writeln!(w, "clusters: {}", c.k)?;
            write_floats(w, "centroids", &c.centroids)?;
            writeln!(w, "sse: {}", c.sse)?;
            for (id, cl) in &c.assignment {
                writeln!(w, "segment: {id} {cl}")?;
            }
        }
    }
    for (i, m) in bundle.members.iter().enumerate() {
        writeln!(w, "member: {i}")?;
        writeln!(w, "threshold: {}", m.threshold)?;
        write_floats(w, "mean", &m.standardizer.mean)?;
        write_floats(w, "std", &m.standardizer.std)?;
        match &m.inner {
            FittedInner::Logistic(lm) => {
                let mut coef = vec![lm.intercept];
                coef.extend_from_slice(&lm.weights);
                write_floats(w, "coef", &coef)?;
            }
            FittedInner::Zip(zm) => {
                writeln!(w, "pi: {}", zm.pi)?;
                write_floats(w, "coef", &zm.coef)?;
            }
            FittedInner::Naive(nm) => {
                writeln!(w, "fallback: {}", nm.fallback)?;
                for ((seg, idx, weekend), (pos, total)) in &nm.buckets {
                    writeln!(w, "bucket: {seg} {idx} {} {pos} {total}", u8::from(*weekend))?;
                }
            }
        }
    }
    writeln!(w, "end")
}

struct LineReader<R> {
    inner: R,
    line_no: usize,
    peeked: Option<String>,
}

impl<R: BufRead> LineReader<R> {
    fn next_line(&mut self) -> Result<Option<String>, ModelError> {
        if let Some(l) = self.peeked.take() {
            return Ok(Some(l));
        }
        let mut buf = String::new();
        let n = self.inner.read_line(&mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        Ok(Some(buf.trim_end().to_owned()))
    }

    fn push_back(&mut self, line: String) {
        self.peeked = Some(line);
    }

    fn expect_kv(&mut self, key: &str) -> Result<String, ModelError> {
        let line = self
            .next_line()?
            .ok_or_else(|| ModelError::Format(format!("unexpected end of file, wanted '{key}'")))?;
        parse_kv(&line, key).ok_or_else(|| {
            ModelError::Format(format!("line {}: expected '{key}: ...', got '{line}'", self.line_no))
        })
    }
}

fn parse_kv(line: &str, key: &str) -> Option<String> {
    let rest = line.strip_prefix(key)?.strip_prefix(':')?;
    Some(rest.trim().to_owned())
}

fn parse_floats(s: &str) -> Result<Vec<Scalar>, ModelError> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<Scalar>()
                .map_err(|_| ModelError::Format(format!("bad float '{t}'")))
        })
        .collect()
}

pub fn read_bundle<R: BufRead>(r: R) -> Result<ModelBundle, ModelError> {
    let mut lr = LineReader {
        inner: r,
        line_no: 0,
        peeked: None,
    };
    let magic = lr
        .next_line()?
        .ok_or_else(|| ModelError::Format("empty model file".into()))?;
    if magic != MAGIC {
        return Err(ModelError::Format(format!(
            "unsupported model format header '{magic}'"
        )));
    }
    let name = lr.expect_kv("name")?;
    let kind = match lr.expect_kv("kind")?.as_str() {
        "Naive" => ModelKind::Naive,
        "LR" => ModelKind::Logistic,
        "ZIP" => ModelKind::Zip,
        other => return Err(ModelError::UnknownKind(other.to_owned())),
    };
    let features_line = lr.expect_kv("features")?;
    let feature_names: Vec<String> = if features_line.is_empty() {
        Vec::new()
    } else {
        features_line.split(',').map(str::to_owned).collect()
    };
    let k: usize = lr
        .expect_kv("clusters")?
        .parse()
        .map_err(|_| ModelError::Format("bad cluster count".into()))?;
    let cluster = if k == 0 {
        None
    } else {
        let centroids = parse_floats(&lr.expect_kv("centroids")?)?;
        let sse: Scalar = lr
            .expect_kv("sse")?
            .parse()
            .map_err(|_| ModelError::Format("bad sse".into()))?;
        let mut assignment = BTreeMap::new();
        while let Some(line) = lr.next_line()? {
            let Some(rest) = parse_kv(&line, "segment") else {
                lr.push_back(line);
                break;
            };
            let (id, cl) = rest
                .rsplit_once(' ')
                .ok_or_else(|| ModelError::Format(format!("bad segment line '{rest}'")))?;
            let cl: usize = cl
                .parse()
                .map_err(|_| ModelError::Format("bad cluster index".into()))?;
            assignment.insert(SegmentId(id.to_owned()), cl);
        }
        Some(ClusterModel {
            k,
            centroids,
            assignment,
            sse,
        })
    };

    let n_members = k.max(1);
    let mut members = Vec::with_capacity(n_members);
    for i in 0..n_members {
        let idx: usize = lr
            .expect_kv("member")?
            .parse()
            .map_err(|_| ModelError::Format("bad member index".into()))?;
        if idx != i {
            return Err(ModelError::Format(format!(
                "member sections out of order: expected {i}, got {idx}"
            )));
        }
        let threshold: Scalar = lr
            .expect_kv("threshold")?
            .parse()
            .map_err(|_| ModelError::Format("bad threshold".into()))?;
        let mean = parse_floats(&lr.expect_kv("mean")?)?;
        let std = parse_floats(&lr.expect_kv("std")?)?;
        let inner = match kind {
            ModelKind::Logistic => {
                let coef = parse_floats(&lr.expect_kv("coef")?)?;
                if coef.len() != feature_names.len() + 1 {
                    return Err(ModelError::Format("coefficient length mismatch".into()));
                }
                FittedInner::Logistic(LogisticModel {
                    intercept: coef[0],
                    weights: coef[1..].to_vec(),
                })
            }
            ModelKind::Zip => {
                let pi: Scalar = lr
                    .expect_kv("pi")?
                    .parse()
                    .map_err(|_| ModelError::Format("bad pi".into()))?;
                let coef = parse_floats(&lr.expect_kv("coef")?)?;
                if coef.len() != feature_names.len() + 1 {
                    return Err(ModelError::Format("coefficient length mismatch".into()));
                }
                FittedInner::Zip(ZipModel { pi, coef })
            }
            ModelKind::Naive => {
                let fallback: Scalar = lr
                    .expect_kv("fallback")?
                    .parse()
                    .map_err(|_| ModelError::Format("bad fallback".into()))?;
                let mut buckets = BTreeMap::new();
                while let Some(line) = lr.next_line()? {
                    let Some(rest) = parse_kv(&line, "bucket") else {
                        lr.push_back(line);
                        break;
                    };
                    let mut tail = rest.rsplitn(5, ' ');
                    let total: u32 = tail
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| ModelError::Format("bad bucket total".into()))?;
                    let pos: u32 = tail
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| ModelError::Format("bad bucket positives".into()))?;
                    let weekend: u8 = tail
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| ModelError::Format("bad bucket weekend flag".into()))?;
                    let idx: u8 = tail
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| ModelError::Format("bad bucket window".into()))?;
                    let seg = tail
                        .next()
                        .ok_or_else(|| ModelError::Format("bad bucket segment".into()))?;
                    buckets.insert((SegmentId(seg.to_owned()), idx, weekend != 0), (pos, total));
                }
                FittedInner::Naive(NaiveModel { buckets, fallback })
            }
        };
        members.push(TrainedModel {
            kind,
            feature_names: feature_names.clone(),
            standardizer: Standardizer { mean, std },
            threshold,
            inner,
        });
    }
    match lr.next_line()? {
        Some(line) if line == "end" => {}
        other => {
            return Err(ModelError::Format(format!(
                "expected trailing 'end', got {other:?}"
            )))
        }
    }
    Ok(ModelBundle {
        name,
        kind,
        cluster,
        members,
    })
}
