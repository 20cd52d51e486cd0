//! Principal directions by deflation: each direction maximizes the
//! uncentered second moment `J(a) = (1/t) Σ_j (aᵀz_j)²` over the unit sphere
//! by projected gradient ascent, then is removed from every `z_j`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Payload};
use crate::error::{ReachError, Result};
use crate::model::dot;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeflationOptions {
    /// Gradient step, relative to the current objective: the update is
    /// `a ← normalize(a + step_size · ∇J / (2J))`. Large steps approach
    /// plain power iteration.
    pub step_size: f64,
    pub max_iters: usize,
    /// Relative improvement of `J` below which a direction may stop.
    pub tol: f64,
    /// Change of the unit direction below which a direction may stop.
    pub direction_tol: f64,
}

impl Default for DeflationOptions {
    fn default() -> Self {
        DeflationOptions {
            step_size: 1e6,
            max_iters: 10_000,
            tol: 1e-10,
            direction_tol: 1e-10,
        }
    }
}

/// Orthonormal directions `a_0 … a_{N−1}` stored as columns of `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBasis {
    dim: usize,
    columns: Vec<Vec<f64>>,
    /// Attained objective per direction; empty for a basis read from disk.
    pub rayleigh: Vec<f64>,
    /// Iterations spent per direction; empty for a basis read from disk.
    pub iterations: Vec<usize>,
    pub converged: bool,
}

impl ProjectionBasis {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let dim = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || dim == 0 {
            return Err(ReachError::Domain("basis needs at least one non-empty column".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != dim) {
            return Err(ReachError::dim("basis column", dim, c.len()));
        }
        Ok(ProjectionBasis {
            dim,
            columns,
            rayleigh: Vec::new(),
            iterations: Vec::new(),
            converged: true,
        })
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of directions `N`.
    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `Aᵀy`.
    pub fn reduce(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim {
            return Err(ReachError::dim("reduce input", self.dim, y.len()));
        }
        Ok(self.columns.iter().map(|a| dot(a, y)).collect())
    }

    /// `Av`.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rank() {
            return Err(ReachError::dim("lift input", self.rank(), v.len()));
        }
        let mut out = vec![0.0; self.dim];
        for (a, coef) in self.columns.iter().zip(v) {
            for (o, x) in out.iter_mut().zip(a) {
                *o += coef * x;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        container::write_header(
            w,
            &[
                "PCA".into(),
                "v1".into(),
                self.dim.to_string(),
                self.rank().to_string(),
            ],
        )?;
        for column in &self.columns {
            container::write_f64s(w, column)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tokens, payload) = container::split_header(bytes)?;
        container::expect_magic(&tokens, "PCA", "v1")?;
        if tokens.len() != 4 {
            return Err(ReachError::MalformedHeader("expected `PCA v1 <n> <N>`".into()));
        }
        let n = container::parse_usize(&tokens[2], "dimension")?;
        let rank = container::parse_usize(&tokens[3], "rank")?;
        let mut payload = Payload::new(payload);
        let columns = (0..rank)
            .map(|_| payload.take(n, "basis column"))
            .collect::<Result<Vec<_>>>()?;
        payload.finish()?;
        Self::from_columns(columns)
    }
}

/// `(1/t) Σ_j z_j (z_jᵀa)` and the objective `(1/t) Σ_j (z_jᵀa)²`; the
/// component sums run in sample order regardless of thread count.
fn moment_product(vectors: &[Vec<f64>], a: &[f64]) -> (Vec<f64>, f64) {
    let t = vectors.len() as f64;
    let coefs: Vec<f64> = vectors.par_iter().map(|z| dot(z, a)).collect();
    let objective = coefs.iter().map(|w| w * w).sum::<f64>() / t;
    const CHUNK: usize = 256;
    let mut out = vec![0.0; a.len()];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
        let start = ci * CHUNK;
        let end = start + chunk.len();
        for (z, w) in vectors.iter().zip(&coefs) {
            for (o, x) in chunk.iter_mut().zip(&z[start..end]) {
                *o += w * x;
            }
        }
        for o in chunk.iter_mut() {
            *o /= t;
        }
    });
    (out, objective)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
}

fn initial_direction(vectors: &[Vec<f64>], previous: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    for z in vectors {
        for (s, x) in sum.iter_mut().zip(z) {
            *s += x;
        }
    }
    orthogonalize(&mut sum, previous);
    let scale = vectors.iter().map(|z| norm(z)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let s = norm(&sum);
    if s > 1e-14 * scale * vectors.len() as f64 {
        return sum.into_iter().map(|x| x / s).collect();
    }
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        orthogonalize(&mut e, previous);
        let s = norm(&e);
        if s > 0.5 {
            return e.into_iter().map(|x| x / s).collect();
        }
    }
    unreachable!("fewer than n previous directions always leave a free axis")
}

fn fix_sign(a: &mut [f64]) {
    let mut best = 0;
    for (i, v) in a.iter().enumerate() {
        if v.abs() > a[best].abs() {
            best = i;
        }
    }
    if a[best] < 0.0 {
        a.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Extracts `num_components` principal directions of `train_vectors`.
///
/// Directions that hit `max_iters` are still returned; `converged` is then
/// false.
pub fn deflate<T: AsRef<[f64]>>(
    train_vectors: &[T],
    num_components: usize,
    opts: &DeflationOptions,
) -> Result<ProjectionBasis> {
    let t = train_vectors.len();
    let n = train_vectors.first().map_or(0, |v| v.as_ref().len());
    if num_components == 0 || num_components > n.min(t) {
        return Err(ReachError::Domain(format!(
            "number of components must lie in 1..={}, got {num_components}",
            n.min(t)
        )));
    }
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(t);
    for v in train_vectors {
        let v = v.as_ref();
        if v.len() != n {
            return Err(ReachError::dim("training vector", n, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ReachError::InvalidData("non-finite training vector".into()));
        }
        vectors.push(v.to_vec());
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(num_components);
    let mut rayleigh = Vec::with_capacity(num_components);
    let mut iterations = Vec::with_capacity(num_components);
    let mut all_converged = true;
    let mut null_level = None;

    for _ in 0..num_components {
        let mut a = initial_direction(&vectors, &columns, n);
        let (mut grad, mut j) = moment_product(&vectors, &a);
        let null = *null_level.get_or_insert(1e-28 * j.max(f64::MIN_POSITIVE));
        let mut iters = 0;
        let mut converged = j <= null;
        while !converged && iters < opts.max_iters {
            iters += 1;
            let eta = opts.step_size / j;
            let mut next: Vec<f64> = a.iter().zip(&grad).map(|(x, g)| x + eta * g).collect();
            orthogonalize(&mut next, &columns);
            let s = norm(&next);
            if !(s > 0.0) || !s.is_finite() {
                return Err(ReachError::Numerical("deflation step collapsed".into()));
            }
            next.iter_mut().for_each(|x| *x /= s);
            let (next_grad, next_j) = moment_product(&vectors, &next);
            let moved = a.iter().zip(&next).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            converged = (next_j - j).abs() <= opts.tol * next_j.abs() && moved <= opts.direction_tol;
            a = next;
            grad = next_grad;
            j = next_j;
            if j <= null {
                converged = true;
            }
        }
        all_converged &= converged;
        fix_sign(&mut a);
        let (_, j) = moment_product(&vectors, &a);
        for z in &mut vectors {
            let p = dot(&a, z);
            for (x, y) in z.iter_mut().zip(&a) {
                *x -= p * y;
            }
        }
        rayleigh.push(j);
        iterations.push(iters);
        columns.push(a);
    }

    Ok(ProjectionBasis {
        dim: n,
        columns,
        rayleigh,
        iterations,
        converged: all_converged,
    })
}
