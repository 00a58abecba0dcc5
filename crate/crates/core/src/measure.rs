//! Finitely supported probability measures on Euclidean spaces, their
//! moments, seeded sampling, and the centering / rescaling pipeline used
//! before every functional evaluation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::numeric::{neumaier_sum, sq_dist};

/// Tolerance on the total mass of a measure.
pub const MASS_TOL: f64 = 1e-12;

/// A probability measure with finitely many atoms in `R^dim`.
///
/// Duplicate atoms are kept as separate entries; use
/// [`DiscreteMeasure::merge_duplicates`] for a canonical form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMeasure {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validating constructor.
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(GwError::param("dim", "must be positive"));
        }
        if atoms.is_empty() {
            return Err(GwError::Empty("measure has no atoms"));
        }
        if atoms.len() != weights.len() {
            return Err(GwError::InvalidMeasure(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for a in &atoms {
            if a.len() != dim {
                return Err(GwError::DimensionMismatch {
                    expected: dim,
                    found: a.len(),
                });
            }
            if a.iter().any(|c| !c.is_finite()) {
                return Err(GwError::InvalidMeasure("non-finite coordinate".into()));
            }
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(GwError::InvalidMeasure(format!(
                "weight {w} is negative or non-finite"
            )));
        }
        let total = neumaier_sum(weights.iter().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(GwError::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            dim,
            atoms,
            weights,
        })
    }

    /// Builds a measure from nonnegative weights of arbitrary positive total.
    pub fn normalized(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let total = neumaier_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(GwError::InvalidMeasure(format!("total mass {total}")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(dim, atoms, weights)
    }

    /// Empirical measure: uniform weight `1/n` on each given point.
    pub fn empirical(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points.first().ok_or(GwError::Empty("no sample points"))?;
        let dim = first.len();
        let n = points.len();
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    /// Dirac mass at the origin of `R^dim`.
    pub fn dirac_origin(dim: usize) -> Result<Self> {
        Self::new(dim, vec![vec![0.0; dim]], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i]
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|c| neumaier_sum(self.atoms.iter().zip(&self.weights).map(|(a, w)| w * a[c])))
            .collect()
    }

    /// Largest pairwise distance between atoms, by exhaustive scan.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.atoms.len() {
            for j in (i + 1)..self.atoms.len() {
                best = best.max(sq_dist(&self.atoms[i], &self.atoms[j]));
            }
        }
        best.sqrt()
    }

    /// Largest Euclidean norm of an atom.
    pub fn radius(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.iter().map(|c| c * c).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Applies `x -> scale * x + shift` to every atom.
    pub fn affine(&self, scale: f64, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(GwError::DimensionMismatch {
                expected: self.dim,
                found: shift.len(),
            });
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| a.iter().zip(shift).map(|(x, s)| scale * x + s).collect())
            .collect();
        Ok(Self {
            dim: self.dim,
            atoms,
            weights: self.weights.clone(),
        })
    }

    /// Pushes the measure forward under `x -> x + shift`.
    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        self.affine(1.0, shift)
    }

    /// Pushes the measure forward under `x -> factor * x`.
    pub fn dilate(&self, factor: f64) -> Self {
        self.affine(factor, &vec![0.0; self.dim])
            .expect("zero shift has the measure's dimension")
    }

    /// Merges atoms with bitwise-identical coordinates. Returns the merged
    /// measure and, for every original atom, the index of its merged atom.
    pub fn merge_duplicates(&self) -> (Self, Vec<usize>) {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut atoms = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut map = Vec::with_capacity(self.atoms.len());
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            // -0.0 and 0.0 are the same point
            let key: Vec<u64> = a.iter().map(|c| (c + 0.0).to_bits()).collect();
            let slot = *index.entry(key).or_insert_with(|| {
                atoms.push(a.clone());
                weights.push(0.0);
                atoms.len() - 1
            });
            weights[slot] += w;
            map.push(slot);
        }
        (
            Self {
                dim: self.dim,
                atoms,
                weights,
            },
            map,
        )
    }

    /// `sum_i w_i * x_i^alpha`.
    pub fn moment(&self, alpha: &[u32]) -> Result<f64> {
        if alpha.len() != self.dim {
            return Err(GwError::DimensionMismatch {
                expected: self.dim,
                found: alpha.len(),
            });
        }
        Ok(neumaier_sum(
            self.atoms
                .iter()
                .zip(&self.weights)
                .map(|(a, w)| w * monomial(a, alpha)),
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawMeasure =
            serde_json::from_str(text).map_err(|e| GwError::Parse(e.to_string()))?;
        Self::new(raw.dim, raw.atoms, raw.weights)
    }

    /// Parses CSV with one atom per row. A header row naming a `weight`
    /// column (or `w`) as the last field marks the final column as weights;
    /// `dim` does the same when the rows carry `dim + 1` fields. Otherwise
    /// every column is a coordinate and weights are uniform. Weights are
    /// rescaled to unit mass.
    pub fn from_csv(text: &str, dim: Option<usize>) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .peekable();
        let mut weight_column = false;
        if let Some(first) = lines.peek() {
            let fields: Vec<&str> = first.split(',').map(str::trim).collect();
            if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                let last = fields.last().map(|s| s.to_ascii_lowercase());
                weight_column = matches!(last.as_deref(), Some("weight" | "w" | "weights"));
                lines.next();
            }
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| {
                        GwError::Parse(format!("row {}: bad number `{}`", lineno + 1, f.trim()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(prev) = rows.first() {
                if prev.len() != row.len() {
                    return Err(GwError::DimensionMismatch {
                        expected: prev.len(),
                        found: row.len(),
                    });
                }
            }
            rows.push(row);
        }
        let width = rows.first().ok_or(GwError::Empty("csv has no rows"))?.len();
        if let Some(d) = dim {
            if width == d + 1 {
                weight_column = true;
            } else if width != d {
                return Err(GwError::DimensionMismatch {
                    expected: d,
                    found: width,
                });
            }
        }
        if weight_column {
            if width < 2 {
                return Err(GwError::Parse("weight column without coordinates".into()));
            }
            let weights = rows.iter().map(|r| r[width - 1]).collect();
            let atoms = rows.into_iter().map(|mut r| {
                r.truncate(width - 1);
                r
            });
            Self::normalized(width - 1, atoms.collect(), weights)
        } else {
            Self::empirical(rows)
        }
    }

    /// Loads a measure from a `.json` or `.csv` file (by extension; JSON otherwise).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| GwError::Io {
            path: path.display().to_string(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::from_csv(&text, None),
            _ => Self::from_json(&text),
        }
    }
}

/// `z^alpha = prod_j z_j^{alpha_j}`.
pub fn monomial(z: &[f64], alpha: &[u32]) -> f64 {
    z.iter()
        .zip(alpha)
        .filter(|(_, &a)| a > 0)
        .map(|(x, &a)| x.powi(a as i32))
        .product()
}

/// The map `x -> scale * x + shift` that undoes a normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub shift: Vec<f64>,
    pub scale: f64,
    pub original_radius: f64,
}

impl NormalizationRecord {
    /// Maps a normalized point back to original coordinates.
    pub fn restore(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.shift)
            .map(|(x, s)| self.scale * x + s)
            .collect()
    }

    /// Maps an original point to normalized coordinates.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .map(|(v, s)| (v - s) / self.scale)
            .collect()
    }
}

/// Subtracts the weighted mean. The record carries scale 1.
pub fn center(m: &DiscreteMeasure) -> (DiscreteMeasure, NormalizationRecord) {
    let mean = m.mean();
    let neg: Vec<f64> = mean.iter().map(|v| -v).collect();
    let centered = m.translate(&neg).expect("mean has the measure's dimension");
    let rec = NormalizationRecord {
        shift: mean,
        scale: 1.0,
        original_radius: m.diameter(),
    };
    (centered, rec)
}

/// Output of [`normalize_pair`].
#[derive(Debug, Clone)]
pub struct NormalizedPair {
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub mu_record: NormalizationRecord,
    pub nu_record: NormalizationRecord,
    /// Both supports are single points; the functional is zero.
    pub degenerate: bool,
}

impl NormalizedPair {
    /// The common radius `R = max(diam supp mu, diam supp nu)`.
    pub fn radius(&self) -> f64 {
        self.mu_record.original_radius
    }
}

/// Centers both measures and divides by `2R`, where `R` is the larger of the
/// two support diameters. When `R = 0` the centered measures are returned
/// with scale 1 and `degenerate` set.
pub fn normalize_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> NormalizedPair {
    let radius = mu.diameter().max(nu.diameter());
    let (degenerate, scale) = if radius > 0.0 {
        (false, 2.0 * radius)
    } else {
        (true, 1.0)
    };
    let norm = |m: &DiscreteMeasure| {
        let mean = m.mean();
        let shift: Vec<f64> = mean.iter().map(|v| -v / scale).collect();
        let out = m
            .affine(1.0 / scale, &shift)
            .expect("shift has the measure's dimension");
        let rec = NormalizationRecord {
            shift: mean,
            scale,
            original_radius: radius,
        };
        (out, rec)
    };
    let (mu_n, mu_rec) = norm(mu);
    let (nu_n, nu_rec) = norm(nu);
    NormalizedPair {
        mu: mu_n,
        nu: nu_n,
        mu_record: mu_rec,
        nu_record: nu_rec,
        degenerate,
    }
}

/// Sampling distributions used by the experiments.
///
/// Text form: `ball:D:RADIUS`, `cube:D:HALF_WIDTH`, `two-point:D:R:P`,
/// `point:D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    UniformBall {
        dim: usize,
        radius: f64,
    },
    UniformCube {
        dim: usize,
        half_width: f64,
    },
    /// `(1 - p) delta_0 + p delta_{R e_1}`.
    TwoPoint {
        dim: usize,
        r: f64,
        p: f64,
    },
    PointMass {
        dim: usize,
    },
}

impl DistributionSpec {
    pub fn dim(&self) -> usize {
        match *self {
            DistributionSpec::UniformBall { dim, .. }
            | DistributionSpec::UniformCube { dim, .. }
            | DistributionSpec::TwoPoint { dim, .. }
            | DistributionSpec::PointMass { dim } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(GwError::param("dim", "must be positive"));
        }
        match *self {
            DistributionSpec::UniformBall { radius, .. } if !(radius >= 0.0) => {
                Err(GwError::param("radius", format!("{radius}")))
            }
            DistributionSpec::UniformCube { half_width, .. } if !(half_width >= 0.0) => {
                Err(GwError::param("half_width", format!("{half_width}")))
            }
            DistributionSpec::TwoPoint { r, p, .. } if !(r >= 0.0 && (0.0..=1.0).contains(&p)) => {
                Err(GwError::param("two-point", format!("R={r}, p={p}")))
            }
            _ => Ok(()),
        }
    }

    /// Draws one point.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            DistributionSpec::UniformBall { dim, radius } => {
                let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rad = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
                if norm > 0.0 {
                    dir.iter_mut().for_each(|v| *v *= rad / norm);
                }
                dir
            }
            DistributionSpec::UniformCube { dim, half_width } => (0..dim)
                .map(|_| rng.gen_range(-1.0..1.0) * half_width)
                .collect(),
            DistributionSpec::TwoPoint { dim, r, p } => {
                let mut x = vec![0.0; dim];
                if rng.gen::<f64>() < p {
                    x[0] = r;
                }
                x
            }
            DistributionSpec::PointMass { dim } => vec![0.0; dim],
        }
    }

    /// Exact population moment `E[X^alpha]`.
    pub fn moment(&self, alpha: &[u32]) -> Result<f64> {
        if alpha.len() != self.dim() {
            return Err(GwError::DimensionMismatch {
                expected: self.dim(),
                found: alpha.len(),
            });
        }
        let order: u32 = alpha.iter().sum();
        if order == 0 {
            return Ok(1.0);
        }
        Ok(match *self {
            DistributionSpec::PointMass { .. } => 0.0,
            DistributionSpec::TwoPoint { r, p, .. } => {
                if alpha[1..].iter().any(|&a| a > 0) {
                    0.0
                } else {
                    p * r.powi(alpha[0] as i32)
                }
            }
            DistributionSpec::UniformCube { half_width, .. } => alpha
                .iter()
                .map(|&a| {
                    if a % 2 == 1 {
                        0.0
                    } else {
                        half_width.powi(a as i32) / (a as f64 + 1.0)
                    }
                })
                .product(),
            DistributionSpec::UniformBall { dim, radius } => {
                if alpha.iter().any(|a| a % 2 == 1) {
                    0.0
                } else {
                    // E|X|^{|a|} * E_sphere[theta^a], both exact for even a.
                    let d = dim as f64;
                    let radial = radius.powi(order as i32) * d / (d + order as f64);
                    let mut sphere = 1.0;
                    for &a in alpha {
                        // Gamma((a+1)/2) / Gamma(1/2) = (a-1)!! / 2^{a/2}
                        let mut t = 1.0;
                        let mut j = 1;
                        while j < a {
                            t *= j as f64 / 2.0;
                            j += 2;
                        }
                        sphere *= t;
                    }
                    // Gamma(d/2) / Gamma((d+|a|)/2)
                    for t in 0..(order / 2) {
                        sphere /= d / 2.0 + t as f64;
                    }
                    radial * sphere
                }
            }
        })
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::UniformBall { dim, radius } => write!(f, "ball:{dim}:{radius}"),
            DistributionSpec::UniformCube { dim, half_width } => {
                write!(f, "cube:{dim}:{half_width}")
            }
            DistributionSpec::TwoPoint { dim, r, p } => write!(f, "two-point:{dim}:{r}:{p}"),
            DistributionSpec::PointMass { dim } => write!(f, "point:{dim}"),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = GwError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || GwError::UnknownDistribution(s.to_string());
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())
        };
        let dim = parts
            .get(1)
            .ok_or_else(bad)?
            .parse::<usize>()
            .map_err(|_| bad())?;
        let spec = match (parts[0], parts.len()) {
            ("ball", 3) => DistributionSpec::UniformBall {
                dim,
                radius: num(2)?,
            },
            ("cube", 3) => DistributionSpec::UniformCube {
                dim,
                half_width: num(2)?,
            },
            ("two-point", 4) => DistributionSpec::TwoPoint {
                dim,
                r: num(2)?,
                p: num(3)?,
            },
            ("point", 2) => DistributionSpec::PointMass { dim },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Generator behind every stochastic output: ChaCha8 (rand_chacha 0.3),
/// seeded through `SeedableRng::seed_from_u64`.
pub type SampleRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed from a base seed and a path of labels
/// (SplitMix64 finalizer over each component).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// `n` i.i.d. draws from `dist` as an empirical measure. Deterministic in
/// `(dist, n, seed)`.
pub fn sample(dist: &DistributionSpec, n: usize, seed: u64) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(GwError::param("n", "must be at least 1"));
    }
    dist.validate()?;
    let mut rng = rng_from_seed(seed);
    let points = (0..n).map(|_| dist.draw(&mut rng)).collect();
    DiscreteMeasure::empirical(points)
}
