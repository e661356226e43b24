//! The quenched environment: i.i.d. vertex weights `rho(x)` on a box.
//!
//! Every law is reduced to a finite table `(a_i, p_i)`. Continuous laws go
//! through Gauss-Legendre discretization with a user-chosen node count, so
//! the transfer-matrix computations downstream are exact for the law that is
//! actually simulated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{BoxSpec, Vertex};
use crate::rng::uniform_at;

const PROB_SUM_TOL: f64 = 1e-12;

/// Continuous weight laws available through quadrature discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum ContinuousLaw {
    Uniform { lo: f64, hi: f64 },
    /// Beta(alpha, beta) stretched to `[0, scale]`.
    Beta { alpha: f64, beta: f64, scale: f64 },
}

/// User-facing description of a weight law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistKind {
    Constant { c: f64 },
    /// `a` with probability `p`, `b` with probability `1 - p`.
    TwoPoint { a: f64, b: f64, p: f64 },
    Table { values: Vec<f64>, probs: Vec<f64> },
    Quadrature { law: ContinuousLaw, nodes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `E rho`
    pub mean: f64,
    /// `E rho^2`
    pub second: f64,
    /// `M`, the largest support value carrying positive mass.
    pub bound: f64,
}

/// A validated weight law resolved to its support table.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDistribution {
    kind: DistKind,
    values: Vec<f64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    moments: Moments,
}

impl WeightDistribution {
    pub fn new(kind: DistKind) -> Result<Self> {
        let (values, probs) = resolve_table(&kind)?;
        if values.is_empty() || values.len() != probs.len() {
            return invalid("support table needs matching, non-empty values and probabilities");
        }
        for (&a, &p) in values.iter().zip(&probs) {
            if !a.is_finite() || a < 0.0 {
                return invalid(format!("support value {a} must be finite and non-negative"));
            }
            if !p.is_finite() || p < 0.0 {
                return invalid(format!("probability {p} must be finite and non-negative"));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        if !values.iter().zip(&probs).any(|(&a, &p)| a > 0.0 && p > 0.0) {
            return invalid("the law needs P(rho > 0) > 0");
        }
        let mean = values.iter().zip(&probs).map(|(a, p)| a * p).sum();
        let second = values.iter().zip(&probs).map(|(a, p)| a * a * p).sum();
        let bound = values
            .iter()
            .zip(&probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&a, _)| a)
            .fold(0.0, f64::max);
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cdf.push(acc);
        }
        Ok(WeightDistribution { kind, values, probs, cdf, moments: Moments { mean, second, bound } })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(DistKind::Constant { c })
    }

    /// Site-percolation weights: 1 with probability `p`, else 0.
    pub fn site(p: f64) -> Result<Self> {
        Self::new(DistKind::TwoPoint { a: 1.0, b: 0.0, p })
    }

    pub fn table(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Self::new(DistKind::Table { values, probs })
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn moments(&self) -> Moments {
        self.moments
    }

    /// True when the law is a point mass.
    pub fn is_degenerate(&self) -> bool {
        self.probs.iter().filter(|&&p| p > 0.0).count() == 1
    }

    /// Inverse-CDF lookup for a uniform in [0, 1).
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c <= u);
        let k = k.min(self.values.len() - 1);
        // Skip zero-mass entries the search may land on at the top end.
        if self.probs[k] > 0.0 {
            self.values[k]
        } else {
            self.values[..=k]
                .iter()
                .zip(&self.probs)
                .rev()
                .find(|(_, &p)| p > 0.0)
                .map(|(&a, _)| a)
                .unwrap_or(self.values[k])
        }
    }

    /// Short identifier used in CSV outputs.
    pub fn id(&self) -> String {
        match &self.kind {
            DistKind::Constant { c } => format!("const({c})"),
            DistKind::TwoPoint { a, b, p } => format!("two-point({a}@{p};{b})"),
            DistKind::Table { values, .. } => format!("table{}", values.len()),
            DistKind::Quadrature { law, nodes } => match law {
                ContinuousLaw::Uniform { lo, hi } => format!("uniform({lo},{hi})q{nodes}"),
                ContinuousLaw::Beta { alpha, beta, scale } => {
                    format!("beta({alpha},{beta})x{scale}q{nodes}")
                }
            },
        }
    }
}

fn resolve_table(kind: &DistKind) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(match kind {
        DistKind::Constant { c } => (vec![*c], vec![1.0]),
        DistKind::TwoPoint { a, b, p } => {
            if !(0.0..=1.0).contains(p) {
                return invalid(format!("two-point probability {p} outside [0,1]"));
            }
            (vec![*a, *b], vec![*p, 1.0 - *p])
        }
        DistKind::Table { values, probs } => (values.clone(), probs.clone()),
        DistKind::Quadrature { law, nodes } => discretize(law, *nodes)?,
    })
}

fn discretize(law: &ContinuousLaw, nodes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes == 0 {
        return invalid("quadrature needs at least one node");
    }
    let (lo, hi, density): (f64, f64, Box<dyn Fn(f64) -> f64>) = match *law {
        ContinuousLaw::Uniform { lo, hi } => {
            if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                return invalid(format!("uniform law needs 0 <= lo < hi < inf, got [{lo},{hi}]"));
            }
            (lo, hi, Box::new(|_| 1.0))
        }
        ContinuousLaw::Beta { alpha, beta, scale } => {
            if !(alpha > 0.0 && beta > 0.0 && scale > 0.0 && scale.is_finite()) {
                return invalid("beta law needs alpha, beta, scale > 0");
            }
            (
                0.0,
                scale,
                Box::new(move |x: f64| {
                    let s = x / scale;
                    s.powf(alpha - 1.0) * (1.0 - s).powf(beta - 1.0)
                }),
            )
        }
    };
    let (xs, ws) = gauss_legendre(nodes);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let values: Vec<f64> = xs.iter().map(|&x| mid + half * x).collect();
    let raw: Vec<f64> = values.iter().zip(&ws).map(|(&v, &w)| w * density(v)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return invalid("quadrature weights degenerate for this law");
    }
    let mut probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // Put the rounding residue on the largest cell so the table sums to 1.
    let resid = 1.0 - probs.iter().sum::<f64>();
    let imax = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    probs[imax] += resid;
    Ok((values, probs))
}

/// Gauss-Legendre nodes and weights on [-1, 1], ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        xs[i] = -z;
        xs[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

/// Read access to vertex weights, shared by dense and lazily evaluated fields.
pub trait WeightSource: Sync {
    fn box_spec(&self) -> &BoxSpec;
    fn weight(&self, v: Vertex) -> f64;
}

/// A realization of the environment stored densely over the box.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    box_spec: BoxSpec,
    weights: Vec<f64>,
    seed: u64,
    dist: Option<DistKind>,
}

impl WeightField {
    /// Explicit weights, e.g. for hand-built fixtures.
    pub fn from_weights(box_spec: BoxSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != box_spec.n_vertices() {
            return invalid(format!(
                "{} weights for a box of {} vertices",
                weights.len(),
                box_spec.n_vertices()
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("weights must be finite and non-negative");
        }
        Ok(WeightField { box_spec, weights, seed: 0, dist: None })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dist(&self) -> Option<&DistKind> {
        self.dist.as_ref()
    }

    /// Flat binary dump: magic, d, L, seed, JSON descriptor, then the weights
    /// as little-endian f64 in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let desc = serde_json::to_vec(&self.dist)?;
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.box_spec.d() as u64).to_le_bytes())?;
        w.write_all(&(self.box_spec.side() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(desc.len() as u64).to_le_bytes())?;
        w.write_all(&desc)?;
        for x in &self.weights {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return invalid("not a weight-field file");
        }
        let d = read_u64(&mut r)? as usize;
        let side = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let desc_len = read_u64(&mut r)? as usize;
        if desc_len > 1 << 20 {
            return invalid("descriptor too long");
        }
        let mut desc = vec![0u8; desc_len];
        r.read_exact(&mut desc)?;
        let dist: Option<DistKind> = serde_json::from_slice(&desc)?;
        let box_spec = BoxSpec::new(d, side)?;
        box_spec.ensure_dense()?;
        let mut weights = Vec::with_capacity(box_spec.n_vertices());
        let mut buf = [0u8; 8];
        for _ in 0..box_spec.n_vertices() {
            r.read_exact(&mut buf)?;
            weights.push(f64::from_le_bytes(buf));
        }
        Ok(WeightField { box_spec, weights, seed, dist })
    }

    /// JSON sidecar describing the binary dump.
    pub fn sidecar(&self) -> FieldSidecar {
        let moments = self
            .dist
            .as_ref()
            .and_then(|k| WeightDistribution::new(k.clone()).ok())
            .map(|d| d.moments());
        FieldSidecar {
            d: self.box_spec.d(),
            side: self.box_spec.side(),
            seed: self.seed,
            n_vertices: self.box_spec.n_vertices(),
            dist: self.dist.clone(),
            moments,
        }
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let f = File::create(dir.join(format!("{stem}.bin")))?;
        let mut w = BufWriter::new(f);
        self.write_binary(&mut w)?;
        w.flush()?;
        let side = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(dir.join(format!("{stem}.json")), side + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }
}

const FIELD_MAGIC: &[u8; 8] = b"OCPWF\0\0\x01";

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldSidecar {
    pub d: usize,
    #[serde(rename = "L")]
    pub side: usize,
    pub seed: u64,
    pub n_vertices: usize,
    pub dist: Option<DistKind>,
    pub moments: Option<Moments>,
}

impl WeightSource for WeightField {
    fn box_spec(&self) -> &BoxSpec {
        &self.box_spec
    }

    #[inline]
    fn weight(&self, v: Vertex) -> f64 {
        self.weights[v]
    }
}

/// Draw `rho(x)` for every vertex of `box_spec`. Vertex `v` uses the `v`-th
/// output of a counter-based generator keyed by `seed`, which is what lets
/// [`LazyField`] reproduce the same field without materializing it.
pub fn sample_field(dist: &WeightDistribution, box_spec: &BoxSpec, seed: u64) -> Result<WeightField> {
    box_spec.ensure_dense()?;
    let weights = (0..box_spec.n_vertices())
        .map(|v| dist.quantile(uniform_at(seed, v as u64)))
        .collect();
    Ok(WeightField { box_spec: box_spec.clone(), weights, seed, dist: Some(dist.kind().clone()) })
}

/// The same field as [`sample_field`] evaluated on demand, for boxes too
/// large to store.
#[derive(Clone, Debug)]
pub struct LazyField<'a> {
    box_spec: BoxSpec,
    dist: &'a WeightDistribution,
    seed: u64,
    point: Option<f64>,
}

impl<'a> LazyField<'a> {
    pub fn new(dist: &'a WeightDistribution, box_spec: BoxSpec, seed: u64) -> Self {
        let point = if dist.is_degenerate() { Some(dist.quantile(0.0)) } else { None };
        LazyField { box_spec, dist, seed, point }
    }
}

impl WeightSource for LazyField<'_> {
    fn box_spec(&self) -> &BoxSpec {
        &self.box_spec
    }

    #[inline]
    fn weight(&self, v: Vertex) -> f64 {
        match self.point {
            Some(c) => c,
            None => self.dist.quantile(uniform_at(self.seed, v as u64)),
        }
    }
}

/// `(E rho, E rho^2, M)` from the support table.
pub fn moments(dist: &WeightDistribution) -> Moments {
    dist.moments()
}
