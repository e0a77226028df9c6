//! Context sequences chosen by an oblivious adversary: replayed from a file or
//! produced by deterministic seeded generators.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TradeError};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum ContextGenerator {
    /// Rows read from a file, emitted once each.
    Replay { rows: Vec<DVector<f64>> },
    /// `scale·e₁, scale·e₂, …, scale·e_d, scale·e₁, …`
    CyclicBasis { scale: f64 },
    /// Uniform on the sphere of the given radius.
    SphereIid { radius: f64 },
    /// `start` rotated by `t·rate` radians in each coordinate plane (0,1), (2,3), ….
    Drift { start: DVector<f64>, rate: f64 },
    /// Each round picks one of cyclic, sphere and drift (all at `radius`)
    /// uniformly at random.
    Mixed { radius: f64 },
}

/// Parses a replay file: one context per line, whitespace-separated decimals,
/// `#` lines and blank lines ignored. Rows with norm above `bound` are rejected.
pub fn parse_replay(text: &str, d: usize, bound: f64) -> Result<Vec<DVector<f64>>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| TradeError::Replay { line: line_no, msg: e.to_string() })?;
        if values.len() != d {
            return Err(TradeError::Replay {
                line: line_no,
                msg: format!("expected {d} fields, found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TradeError::Replay { line: line_no, msg: "non-finite value".into() });
        }
        let x = DVector::from_vec(values);
        let norm = x.norm();
        if norm > bound {
            return Err(TradeError::Replay {
                line: line_no,
                msg: format!("norm {norm} exceeds bound {bound}"),
            });
        }
        rows.push(x);
    }
    Ok(rows)
}

pub fn load_replay(path: &Path, d: usize, bound: f64) -> Result<Vec<DVector<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TradeError::Replay { line: 0, msg: format!("{}: {e}", path.display()) })?;
    parse_replay(&text, d, bound)
}

#[derive(Debug, Clone)]
pub struct ContextStream {
    generator: ContextGenerator,
    d: usize,
    bound: f64,
    t: usize,
    rng: ChaCha8Rng,
}

impl ContextStream {
    pub fn new(generator: ContextGenerator, d: usize, bound: f64, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(TradeError::InvalidArgument("dimension must be >= 1".into()));
        }
        let scale = match &generator {
            ContextGenerator::Replay { rows } => {
                for (i, x) in rows.iter().enumerate() {
                    if x.len() != d {
                        return Err(TradeError::Dimension { expected: d, got: x.len() });
                    }
                    if x.norm() > bound {
                        return Err(TradeError::Replay { line: i + 1, msg: "row exceeds bound".into() });
                    }
                }
                0.0
            }
            ContextGenerator::CyclicBasis { scale } => *scale,
            ContextGenerator::SphereIid { radius } | ContextGenerator::Mixed { radius } => *radius,
            ContextGenerator::Drift { start, .. } => {
                if start.len() != d {
                    return Err(TradeError::Dimension { expected: d, got: start.len() });
                }
                start.norm()
            }
        };
        if !(scale >= 0.0) || scale > bound {
            return Err(TradeError::ContextNorm { norm: scale, bound });
        }
        Ok(Self { generator, d, bound, t: 0, rng: rng::stream(seed, Stream::Context) })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Next context; errors once a replay is exhausted.
    pub fn next_context(&mut self) -> Result<DVector<f64>> {
        let t = self.t;
        let x = match &self.generator {
            ContextGenerator::Replay { rows } => {
                rows.get(t).cloned().ok_or(TradeError::Exhausted(rows.len()))?
            }
            ContextGenerator::CyclicBasis { scale } => basis(self.d, t % self.d, *scale),
            ContextGenerator::SphereIid { radius } => sphere(&mut self.rng, self.d, *radius),
            ContextGenerator::Drift { start, rate } => rotate(start, t as f64 * rate),
            ContextGenerator::Mixed { radius } => match self.rng.gen_range(0..3) {
                0 => basis(self.d, t % self.d, *radius),
                1 => sphere(&mut self.rng, self.d, *radius),
                _ => rotate(&basis(self.d, 0, *radius), t as f64 * 0.01),
            },
        };
        self.t += 1;
        Ok(x)
    }
}

fn basis(d: usize, i: usize, scale: f64) -> DVector<f64> {
    let mut x = DVector::zeros(d);
    x[i] = scale;
    x
}

fn sphere(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    loop {
        let g = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = g.norm();
        if n > 1e-12 {
            // renormalize after scaling so rounding cannot push past the radius
            let x = g * (radius / n);
            let m = x.norm();
            return if m > radius { x * (radius / m) } else { x };
        }
    }
}

fn rotate(start: &DVector<f64>, angle: f64) -> DVector<f64> {
    let (sin, cos) = angle.sin_cos();
    let mut x = start.clone();
    let d = x.len();
    let mut i = 0;
    while i + 1 < d {
        let (a, b) = (start[i], start[i + 1]);
        x[i] = cos * a - sin * b;
        x[i + 1] = sin * a + cos * b;
        i += 2;
    }
    if d % 2 == 1 {
        x[d - 1] = start[d - 1] * cos;
    }
    x
}
