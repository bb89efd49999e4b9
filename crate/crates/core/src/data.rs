//! Loaders, synthetic generators and preprocessing.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{clip_dataset, DataPoint, Dataset};

/// Maps a two-valued label set onto {−1, +1}. Numeric labels order
/// numerically, anything else lexicographically; the larger value is +1.
struct LabelMap {
    negative: String,
    positive: String,
}

impl LabelMap {
    fn from_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = labels.collect();
        if set.len() > 2 {
            let shown: Vec<_> = set.iter().take(5).collect();
            return Err(Error::Schema(format!("expected a binary label column, found {} distinct values {shown:?}", set.len())));
        }
        let mut v: Vec<&str> = set.into_iter().collect();
        let numeric: Option<Vec<f64>> = v.iter().map(|s| s.parse::<f64>().ok()).collect();
        if let Some(nums) = numeric {
            if nums.len() == 2 && nums[0] > nums[1] {
                v.swap(0, 1);
            }
            // a single numeric label is placed by sign
            if nums.len() == 1 {
                let s = v[0].to_string();
                return Ok(if nums[0] > 0.0 {
                    Self { negative: String::new(), positive: s }
                } else {
                    Self { negative: s, positive: String::new() }
                });
            }
        }
        match v.as_slice() {
            [a, b] => Ok(Self { negative: a.to_string(), positive: b.to_string() }),
            [a] => Ok(Self { negative: String::new(), positive: a.to_string() }),
            _ => Err(Error::Schema("no labels found".into())),
        }
    }

    fn map(&self, s: &str) -> f64 {
        if s == self.positive {
            1.0
        } else {
            debug_assert_eq!(s, self.negative);
            -1.0
        }
    }
}

fn parse_num(field: &str, line: usize) -> Result<f64> {
    let t = field.trim();
    let v: f64 = t.parse().map_err(|_| Error::Parse { line, message: format!("not a number: {t:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("non-finite value {t:?}") });
    }
    Ok(v)
}

/// Reads a comma-separated file. `label_column` selects the label field
/// (`None` means the last one); every other field is a numeric feature.
/// Line numbers in errors count raw file lines from 1.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<usize>, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut rows: Vec<(usize, Vec<f64>, String)> = Vec::new();
    let mut width = None;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse { line, message: format!("expected {w} fields, found {}", rec.len()) });
            }
            _ => {}
        }
        let lc = label_column.unwrap_or(rec.len() - 1);
        if lc >= rec.len() {
            return Err(Error::argument(format!("label column {lc} out of range for {} fields", rec.len())));
        }
        let mut feats = Vec::with_capacity(rec.len() - 1);
        for (j, f) in rec.iter().enumerate() {
            if j != lc {
                feats.push(parse_num(f, line)?);
            }
        }
        rows.push((line, feats, rec[lc].to_string()));
    }
    build(rows)
}

fn build(rows: Vec<(usize, Vec<f64>, String)>) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::Schema("file contains no data rows".into()));
    }
    let map = LabelMap::from_labels(rows.iter().map(|r| r.2.as_str()))?;
    let points = rows.into_iter().map(|(_, f, l)| DataPoint::labeled(f, map.map(&l))).collect();
    Dataset::from_points(points)
}

/// Reads LIBSVM sparse text (`label idx:value ...`, 1-based, increasing
/// indices) into dense vectors of the largest index seen.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut rows: Vec<(usize, Vec<(usize, f64)>, String)> = Vec::new();
    let mut dim = 0;
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        let body = text.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let label = fields.next().unwrap_or_default().to_string();
        let mut entries = Vec::new();
        let mut last = 0;
        for f in fields {
            let (k, v) = f.split_once(':').ok_or_else(|| Error::Parse { line, message: format!("expected index:value, got {f:?}") })?;
            let k: usize = k.parse().map_err(|_| Error::Parse { line, message: format!("bad index {k:?}") })?;
            if k == 0 {
                return Err(Error::Parse { line, message: "indices are 1-based".into() });
            }
            if k <= last {
                return Err(Error::Parse { line, message: format!("index {k} does not increase after {last}") });
            }
            last = k;
            entries.push((k - 1, parse_num(v, line)?));
        }
        dim = dim.max(last);
        rows.push((line, entries, label));
    }
    if dim == 0 && rows.is_empty() {
        return Err(Error::Schema("file contains no data rows".into()));
    }
    let dense = rows
        .into_iter()
        .map(|(line, e, l)| {
            let mut x = vec![0.0; dim.max(1)];
            for (k, v) in e {
                x[k] = v;
            }
            (line, x, l)
        })
        .collect();
    build(dense)
}

/// Reads the UCI Abalone file (sex, 7 measurements, rings; no header).
/// Sex becomes two indicator columns (F, I; M is the reference level) and
/// the label is +1 when rings exceed the median, giving 9 features.
pub fn load_abalone(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path.as_ref())?;
    let mut feats = Vec::new();
    let mut rings = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 9 {
            return Err(Error::Parse { line, message: format!("expected 9 fields, found {}", rec.len()) });
        }
        let (f, i) = match &rec[0] {
            "M" => (0.0, 0.0),
            "F" => (1.0, 0.0),
            "I" => (0.0, 1.0),
            s => return Err(Error::Parse { line, message: format!("unknown sex code {s:?}") }),
        };
        let mut x = vec![f, i];
        for j in 1..8 {
            x.push(parse_num(&rec[j], line)?);
        }
        feats.push(x);
        rings.push(parse_num(&rec[8], line)?);
    }
    if rings.is_empty() {
        return Err(Error::Schema("file contains no data rows".into()));
    }
    let med = median(&rings);
    let points = feats
        .into_iter()
        .zip(rings)
        .map(|(x, r)| DataPoint::labeled(x, if r > med { 1.0 } else { -1.0 }))
        .collect();
    Dataset::from_points(points)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Writes labelled data as CSV with the label last and no header.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path.as_ref())?;
    for p in data.iter() {
        let y = p.label.ok_or_else(|| Error::argument("cannot write unlabelled data"))?;
        let mut rec: Vec<String> = p.features.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes labelled data in LIBSVM format, omitting zero entries.
pub fn write_libsvm(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for p in data.iter() {
        let y = p.label.ok_or_else(|| Error::argument("cannot write unlabelled data"))?;
        write!(w, "{}", if y > 0.0 { "+1" } else { "-1" })?;
        for (j, v) in p.features.iter().enumerate() {
            if *v != 0.0 {
                write!(w, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// n/2 points from N(+μ, I) labelled +1 followed by n/2 from N(−μ, I)
/// labelled −1, μ = (separation/2)/√d · 1, then clipped to the unit ball.
pub fn make_two_normals(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::config(format!("n must be positive and even, got {n}")));
    }
    if d == 0 {
        return Err(Error::config("dimension must be positive"));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::config(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = separation / 2.0 / (d as f64).sqrt();
    let points = (0..n)
        .map(|i| {
            let y = if i < n / 2 { 1.0 } else { -1.0 };
            let x = (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); y * mu + z }).collect::<Vec<f64>>();
            DataPoint::labeled(x, y)
        })
        .collect();
    clip_dataset(&Dataset::from_points(points)?, 1.0)
}

/// Per-column z-score parameters fitted on a training set, followed by
/// clipping to `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub radius: f64,
}

impl Standardizer {
    pub fn fit(data: &Dataset, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("clip radius must be positive, got {radius}")));
        }
        if data.is_empty() {
            return Err(Error::precondition("cannot standardise an empty dataset"));
        }
        let d = data.dim();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for p in data.iter() {
            for (m, x) in mean.iter_mut().zip(&p.features) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for p in data.iter() {
            for ((v, x), m) in var.iter_mut().zip(&p.features).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if *v > 0.0 {
                    v.sqrt()
                } else {
                    log::warn!("feature {j} has zero variance; leaving it centred");
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale, radius })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.mean.len() {
            return Err(Error::argument(format!("expected {} features, got {}", self.mean.len(), data.dim())));
        }
        let points: Vec<DataPoint> = data
            .iter()
            .map(|p| {
                let x = p.features.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect();
                DataPoint { features: x, label: p.label }
            })
            .collect();
        clip_dataset(&Dataset::from_parts_unchecked(points, data.dim(), f64::INFINITY), self.radius)
    }
}

/// Fits a [`Standardizer`] on `data` and applies it.
pub fn standardize_and_clip(data: &Dataset, radius: f64) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(data, radius)?;
    Ok((s.apply(data)?, s))
}

/// Uniform random split into ⌈fN⌉ training and N − ⌈fN⌉ test points.
pub fn train_test_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = data.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
    Ok((data.subset(&perm[..k]), data.subset(&perm[k..])))
}
