//! Keyed template protection for learning on encrypted features.
//!
//! Each client maps its feature vectors (templates) through a secret
//! orthogonal matrix `Q` derived from its key. Orthogonal maps preserve
//! Euclidean distances, so a server holding only protected templates can run
//! distance-based learning (here: nearest centroid) and reach exactly the
//! decisions it would reach on plain templates, without ever seeing a key.

use crate::error::{Error, Result};
use crate::keyschedule::{MasterKey, StepStream, TAG_TEMPLATE};
use crate::pixelcore::ImageBuffer;

/// Attempts before giving up on drawing a full-rank matrix.
const MAX_DRAWS: u64 = 8;

/// A plain feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub values: Vec<f64>,
    pub label: Option<u32>,
    pub client_id: u64,
}

/// A feature vector after keyed protection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedTemplate {
    pub values: Vec<f64>,
    pub label: Option<u32>,
    pub client_id: u64,
}

impl Template {
    pub fn new(values: Vec<f64>, label: Option<u32>, client_id: u64) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values, label, client_id })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl ProtectedTemplate {
    pub fn new(values: Vec<f64>, label: Option<u32>, client_id: u64) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values, label, client_id })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Dimension("template must have at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("template values must be finite".into()));
    }
    Ok(())
}

/// Mean BT.601 luma over a near-square grid of `d` cells, scaled to `[0, 1]`.
///
/// The grid is the most square factorization `rows × cols = d` that fits the
/// image, with the larger factor along the larger side. Cell boundaries are
/// `floor(k · W / cols)` and `floor(k · H / rows)`.
pub fn extract_template(sample: &ImageBuffer, d: usize) -> Result<Template> {
    let (w, h) = (sample.width(), sample.height());
    if d == 0 || d > w * h {
        return Err(Error::Dimension(format!("cannot extract {d} features from a {w}x{h} image")));
    }
    let mut pairs: Vec<(usize, usize)> =
        (1..=d).filter(|a| d.is_multiple_of(*a)).map(|a| (a.min(d / a), a.max(d / a))).collect();
    pairs.sort_by_key(|&(small, large)| (large - small, small));
    pairs.dedup();
    let (rows, cols) = pairs
        .into_iter()
        .map(|(small, large)| if w >= h { (small, large) } else { (large, small) })
        .find(|&(rows, cols)| rows <= h && cols <= w)
        .ok_or_else(|| Error::Dimension(format!("no grid of {d} cells fits a {w}x{h} image")))?;

    let luma = |x: usize, y: usize| -> f64 {
        if sample.channels() == 1 {
            sample.sample(x, y, 0) as f64
        } else {
            0.299 * sample.sample(x, y, 0) as f64
                + 0.587 * sample.sample(x, y, 1) as f64
                + 0.114 * sample.sample(x, y, 2) as f64
        }
    };
    let mut values = Vec::with_capacity(d);
    for r in 0..rows {
        let (y0, y1) = (r * h / rows, (r + 1) * h / rows);
        for c in 0..cols {
            let (x0, x1) = (c * w / cols, (c + 1) * w / cols);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += luma(x, y);
                }
            }
            values.push(sum / ((y1 - y0) * (x1 - x0)) as f64 / 255.0);
        }
    }
    Template::new(values, None, 0)
}

/// The keyed `d`×`d` orthogonal matrix of one client.
#[derive(Clone, PartialEq)]
pub struct KeyedTransform {
    d: usize,
    /// Row-major.
    q: Vec<f64>,
}

impl std::fmt::Debug for KeyedTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyedTransform {{ d: {}, .. }}", self.d)
    }
}

impl KeyedTransform {
    /// Standard normal entries from the template stream (Box–Muller on
    /// consecutive draws, filled row-major), orthonormalized column by column
    /// from left to right with modified Gram–Schmidt; columns are then signed
    /// so the diagonal is non-negative. A rank-deficient draw moves on to the
    /// next stream tag.
    pub fn new(key: MasterKey, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Dimension("template dimension must be at least 1".into()));
        }
        for attempt in 0..MAX_DRAWS {
            let mut stream = StepStream::for_step(key, TAG_TEMPLATE + attempt);
            let a = gaussian_fill(&mut stream, d * d);
            if let Some(q) = orthonormalize(a, d) {
                return Ok(Self { d, q });
            }
        }
        Err(Error::Key(format!("no full-rank {d}x{d} draw after {MAX_DRAWS} attempts")))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.q[row * self.d + col]
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::Dimension(format!("{}-dimensional vector for a {}-dimensional key", x.len(), self.d)));
        }
        Ok(self.q.chunks_exact(self.d).map(|row| dot(row, x)).collect())
    }

    pub fn protect(&self, t: &Template) -> Result<ProtectedTemplate> {
        ProtectedTemplate::new(self.apply(&t.values)?, t.label, t.client_id)
    }
}

/// Pairs of draws `u1, u2` in (0, 1] give `r·cos(2πu2)` and `r·sin(2πu2)`
/// with `r = sqrt(-2 ln u1)`.
fn gaussian_fill(stream: &mut StepStream, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let (u1, u2) = (stream.open_unit(), stream.open_unit());
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        out.push(r * t.cos());
        out.push(r * t.sin());
    }
    out.truncate(n);
    out
}

/// Modified Gram–Schmidt over the columns of row-major `a`.
fn orthonormalize(mut a: Vec<f64>, d: usize) -> Option<Vec<f64>> {
    for j in 0..d {
        let original: f64 = (0..d).map(|r| a[r * d + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..j {
            let proj: f64 = (0..d).map(|r| a[r * d + i] * a[r * d + j]).sum();
            for r in 0..d {
                a[r * d + j] -= proj * a[r * d + i];
            }
        }
        let norm: f64 = (0..d).map(|r| a[r * d + j].powi(2)).sum::<f64>().sqrt();
        if !(norm > 1e-10 * original) {
            return None;
        }
        // Division (not multiplication by 1/norm) keeps d = 1 exactly at [1].
        let signed = if a[j * d + j] < 0.0 { -norm } else { norm };
        for r in 0..d {
            a[r * d + j] /= signed;
        }
    }
    Some(a)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Client side: `f̂ = Q·f` for the client's key.
pub fn protect_template(t: &Template, key: MasterKey) -> Result<ProtectedTemplate> {
    KeyedTransform::new(key, t.dim())?.protect(t)
}

pub fn protect_templates(ts: &[Template], key: MasterKey) -> Result<Vec<ProtectedTemplate>> {
    let Some(first) = ts.first() else { return Ok(Vec::new()) };
    let q = KeyedTransform::new(key, first.dim())?;
    ts.iter().map(|t| q.protect(t)).collect()
}

/// Per-class mean vectors, ordered by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    classes: Vec<u32>,
    centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    fn fit<'a>(samples: impl IntoIterator<Item = (Option<u32>, &'a [f64])>) -> Result<Self> {
        let mut sums: std::collections::BTreeMap<u32, (Vec<f64>, usize)> = Default::default();
        let mut dim = None;
        for (label, values) in samples {
            let label = label.ok_or_else(|| Error::Invalid("enrollment templates need labels".into()))?;
            if *dim.get_or_insert(values.len()) != values.len() {
                return Err(Error::Dimension("enrollment templates differ in dimension".into()));
            }
            let entry = sums.entry(label).or_insert_with(|| (vec![0.0; values.len()], 0));
            entry.0.iter_mut().zip(values).for_each(|(s, v)| *s += v);
            entry.1 += 1;
        }
        if sums.len() < 2 {
            return Err(Error::Invalid(format!("enrollment needs at least 2 classes, got {}", sums.len())));
        }
        let (classes, centroids) = sums
            .into_iter()
            .map(|(label, (sum, count))| (label, sum.into_iter().map(|s| s / count as f64).collect()))
            .unzip();
        Ok(Self { classes, centroids })
    }

    fn nearest(&self, x: &[f64]) -> Result<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for (&class, c) in self.classes.iter().zip(&self.centroids) {
            if c.len() != x.len() {
                return Err(Error::Dimension(format!(
                    "{}-dimensional query for a {}-dimensional model",
                    x.len(),
                    c.len()
                )));
            }
            let dist = distance(c, x);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((class, dist));
            }
        }
        best.ok_or_else(|| Error::Invalid("model has no classes".into()))
    }

    pub fn new(classes: Vec<u32>, centroids: Vec<Vec<f64>>) -> Result<Self> {
        if classes.len() != centroids.len() {
            return Err(Error::Shape("one centroid per class is required".into()));
        }
        let mut order: Vec<usize> = (0..classes.len()).collect();
        order.sort_by_key(|&i| classes[i]);
        if order.windows(2).any(|w| classes[w[0]] == classes[w[1]]) {
            return Err(Error::Invalid("duplicate class id".into()));
        }
        if let Some(c) = centroids.iter().find(|c| c.len() != centroids[0].len() || c.is_empty()) {
            return Err(Error::Dimension(format!("inconsistent centroid dimension {}", c.len())));
        }
        Ok(Self {
            classes: order.iter().map(|&i| classes[i]).collect(),
            centroids: order.iter().map(|&i| centroids[i].clone()).collect(),
        })
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn dim(&self) -> Option<usize> {
        self.centroids.first().map(Vec::len)
    }
}

/// Server side: fits centroids on protected templates only.
pub fn enroll(templates: &[ProtectedTemplate]) -> Result<CentroidModel> {
    CentroidModel::fit(templates.iter().map(|t| (t.label, t.values.as_slice())))
}

/// Nearest centroid and its Euclidean distance; ties go to the lowest class id.
pub fn classify(query: &ProtectedTemplate, model: &CentroidModel) -> Result<(u32, f64)> {
    model.nearest(&query.values)
}

/// Plain-domain baseline of [`enroll`].
pub fn enroll_plain(templates: &[Template]) -> Result<CentroidModel> {
    CentroidModel::fit(templates.iter().map(|t| (t.label, t.values.as_slice())))
}

/// Plain-domain baseline of [`classify`].
pub fn classify_plain(query: &Template, model: &CentroidModel) -> Result<(u32, f64)> {
    model.nearest(&query.values)
}

/// Share of equal predictions.
pub fn agreement(a: &[u32], b: &[u32]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len().max(1) as f64
}

/// Gaussian clusters: class `k` (also its client id) is centred at
/// `separation · z_k` with `z_k` standard normal, and its points add unit
/// normal noise.
pub fn synthetic_clusters(seed: u64, classes: u32, per_class: usize, d: usize, separation: f64) -> Vec<Template> {
    let mut stream = StepStream::from_seed(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| gaussian_fill(&mut stream, d).into_iter().map(|v| v * separation).collect())
        .collect();
    let mut out = Vec::with_capacity(classes as usize * per_class);
    for (k, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            let noise = gaussian_fill(&mut stream, d);
            out.push(Template {
                values: centre.iter().zip(noise).map(|(c, z)| c + z).collect(),
                label: Some(k as u32),
                client_id: k as u64,
            });
        }
    }
    out
}

/// Two classes mirrored through the origin: centres `±offset · u` for a
/// random unit vector `u`, unit normal noise.
pub fn synthetic_symmetric_pair(seed: u64, per_class: usize, d: usize, offset: f64) -> Vec<Template> {
    let mut stream = StepStream::from_seed(seed);
    let dir = gaussian_fill(&mut stream, d);
    let norm = dot(&dir, &dir).sqrt();
    let mut out = Vec::with_capacity(2 * per_class);
    for (label, sign) in [(0u32, 1.0), (1, -1.0)] {
        for _ in 0..per_class {
            let noise = gaussian_fill(&mut stream, d);
            out.push(Template {
                values: dir.iter().zip(noise).map(|(u, z)| sign * offset * u / norm + z).collect(),
                label: Some(label),
                client_id: label as u64,
            });
        }
    }
    out
}

/// Agreement between plain-domain predictions and predictions for queries
/// protected under keys other than the model's. Query `i` gets its own key
/// derived from `query_seed`, so each query sees an independent mismatch.
pub fn cross_key_agreement(
    train: &[Template],
    queries: &[Template],
    model_key: MasterKey,
    query_seed: u64,
) -> Result<f64> {
    let plain_model = enroll_plain(train)?;
    let model = enroll(&protect_templates(train, model_key)?)?;
    let mut keys = StepStream::from_seed(query_seed);
    let mut plain = Vec::with_capacity(queries.len());
    let mut crossed = Vec::with_capacity(queries.len());
    for q in queries {
        let mut key = MasterKey::new(keys.next_u64());
        if key == model_key {
            key = MasterKey::new(keys.next_u64());
        }
        plain.push(classify_plain(q, &plain_model)?.0);
        crossed.push(classify(&protect_template(q, key)?, &model)?.0);
    }
    Ok(agreement(&plain, &crossed))
}

/// Record layout shared by plain and protected template files.
pub trait TemplateRecord: Sized {
    fn parts(&self) -> (u64, Option<u32>, &[f64]);
    fn from_parts(client_id: u64, label: Option<u32>, values: Vec<f64>) -> Result<Self>;
}

impl TemplateRecord for Template {
    fn parts(&self) -> (u64, Option<u32>, &[f64]) {
        (self.client_id, self.label, &self.values)
    }

    fn from_parts(client_id: u64, label: Option<u32>, values: Vec<f64>) -> Result<Self> {
        Template::new(values, label, client_id)
    }
}

impl TemplateRecord for ProtectedTemplate {
    fn parts(&self) -> (u64, Option<u32>, &[f64]) {
        (self.client_id, self.label, &self.values)
    }

    fn from_parts(client_id: u64, label: Option<u32>, values: Vec<f64>) -> Result<Self> {
        ProtectedTemplate::new(values, label, client_id)
    }
}

/// `client_id,label,v0,...` with values in 17-significant-digit scientific
/// notation; an empty label means unlabelled.
pub fn write_templates_csv<T: TemplateRecord>(records: &[T]) -> Result<String> {
    let d = records.first().map_or(0, |r| r.parts().2.len());
    let mut out = String::from("client_id,label");
    for i in 0..d {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for r in records {
        let (client, label, values) = r.parts();
        if values.len() != d {
            return Err(Error::Dimension("templates differ in dimension".into()));
        }
        out.push_str(&client.to_string());
        out.push(',');
        if let Some(label) = label {
            out.push_str(&label.to_string());
        }
        for v in values {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_templates_csv<T: TemplateRecord>(text: &str) -> Result<Vec<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Invalid("empty template file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 3 || columns[0] != "client_id" || columns[1] != "label" {
        return Err(Error::Invalid(format!("bad template header {header:?}")));
    }
    let d = columns.len() - 2;
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Invalid(format!("template row {}: {what}", i + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 2 {
                return Err(Error::Dimension(format!(
                    "template row {} has {} values, expected {d}",
                    i + 1,
                    fields.len().saturating_sub(2)
                )));
            }
            let client = fields[0].parse().map_err(|_| bad("bad client_id"))?;
            let label = match fields[1] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad label"))?),
            };
            let values = fields[2..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            T::from_parts(client, label, values)
        })
        .collect()
}

/// `label,c0,...` per class.
pub fn write_model_csv(model: &CentroidModel) -> String {
    let d = model.dim().unwrap_or(0);
    let mut out = String::from("label");
    for i in 0..d {
        out.push_str(&format!(",c{i}"));
    }
    out.push('\n');
    for (class, c) in model.classes.iter().zip(&model.centroids) {
        out.push_str(&class.to_string());
        for v in c {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_model_csv(text: &str) -> Result<CentroidModel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Invalid("empty model file".into()))?;
    if !header.starts_with("label") {
        return Err(Error::Invalid(format!("bad model header {header:?}")));
    }
    let mut classes = Vec::new();
    let mut centroids = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::Invalid(format!("model row {} is malformed", i + 1));
        let mut fields = line.split(',').map(str::trim);
        classes.push(fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
        centroids.push(fields.map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?);
    }
    CentroidModel::new(classes, centroids)
}
