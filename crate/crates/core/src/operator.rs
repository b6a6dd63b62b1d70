//! Green operator of the fractional Laplacian on (-1, 1).
//!
//! The kernel is
//! G(x,y) = kappa |x-y|^(2s-1) int_0^r t^(s-1) (1+t)^(-1/2) dt,
//! r = (1-x^2)(1-y^2)/|x-y|^2, kappa = 1/(4^s Gamma(s)^2),
//! and the inner integral equals B(s,1/2-s) I_{r/(1+r)}(s, 1/2-s).
//! Writing G = |x-y|^(2s-1) H(x,y), the factor H is bounded and continuous
//! with H(x,x) = kappa B(s,1/2-s). Near the diagonal H is split as
//! kappa B - |x-y|^(1-2s) P(x,y) with P given by the complementary incomplete
//! beta function, which is smooth up to y = x.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grading, Grid};
use crate::gridfn::GridFunction;
use crate::special::{beta, beta_reg, gamma, gauss_legendre};

/// Number of cells on each side of the target node treated with the tail split.
const LOCAL_CELLS: usize = 1;
const GAUSS_POINTS: usize = 8;

/// kappa = 1 / (2^(2s) Gamma(s)^2).
pub fn kernel_constant(s: f64) -> f64 {
    1.0 / (2f64.powf(2.0 * s) * gamma(s).powi(2))
}

/// Bounded factor H(x,y) = G(x,y) |x-y|^(1-2s); valid also on the diagonal.
fn regular_part(x: f64, y: f64, s: f64, kappa_b: f64) -> f64 {
    let rho = (1.0 - x * x) * (1.0 - y * y);
    if rho <= 0.0 {
        return 0.0;
    }
    let d2 = (x - y) * (x - y);
    if d2 == 0.0 {
        return kappa_b;
    }
    kappa_b * beta_reg(s, 0.5 - s, rho / (rho + d2))
}

/// Tail P(x,y) = kappa B |x-y|^(2s-1) I_{d^2/(d^2+rho)}(1/2-s, s), so that
/// G = kappa B |x-y|^(2s-1) - P.
fn tail_part(x: f64, y: f64, s: f64, kappa: f64, kappa_b: f64) -> f64 {
    let rho = (1.0 - x * x) * (1.0 - y * y);
    let d2 = (x - y) * (x - y);
    if d2 == 0.0 {
        return kappa / (0.5 - s) * (1.0 - x * x).powf(2.0 * s - 1.0);
    }
    kappa_b * d2.powf(s - 0.5) * beta_reg(0.5 - s, s, d2 / (d2 + rho))
}

/// Pointwise Green function G_s(x, y) for distinct interior points.
pub fn green_kernel(x: f64, y: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 0.5) {
        return Err(Error::domain(format!(
            "order s must lie in (0, 1/2), got {s}"
        )));
    }
    if !(x.abs() < 1.0 && y.abs() < 1.0) {
        return Err(Error::domain(format!(
            "points ({x}, {y}) must lie in (-1, 1)"
        )));
    }
    if x == y {
        return Err(Error::domain(
            "the kernel is singular on the diagonal; use the assembled operator",
        ));
    }
    let kappa_b = kernel_constant(s) * beta(s, 0.5 - s);
    Ok((x - y).abs().powf(2.0 * s - 1.0) * regular_part(x, y, s, kappa_b))
}

/// Integrals of |x-y|^expo against the two linear hats of the cell [a, b]:
/// (int (b-y)/L |x-y|^expo dy, int (y-a)/L |x-y|^expo dy), with x outside (a, b).
fn hat_moments(x: f64, a: f64, b: f64, expo: f64, gl: &(Vec<f64>, Vec<f64>)) -> (f64, f64) {
    let len = b - a;
    if expo == 0.0 {
        return (0.5 * len, 0.5 * len);
    }
    let dist = if x <= a { a - x } else { x - b };
    if dist >= len {
        // smooth integrand: Gauss-Legendre avoids cancellation
        let (nodes, weights) = gl;
        let (mut wa, mut wb) = (0.0, 0.0);
        for (t, w) in nodes.iter().zip(weights) {
            let y = 0.5 * (a + b) + 0.5 * len * t;
            let v = 0.5 * len * w * (x - y).abs().powf(expo);
            wa += v * (b - y) / len;
            wb += v * (y - a) / len;
        }
        return (wa, wb);
    }
    let p = expo + 1.0;
    let (u1, u2) = if x <= a {
        (a - x, b - x)
    } else {
        (x - b, x - a)
    };
    let i0 = (u2.powf(p) - u1.powf(p)) / p;
    let i1 = (u2.powf(p + 1.0) - u1.powf(p + 1.0)) / (p + 1.0);
    let (wa, wb) = if x <= a {
        let wb = (i1 - u1 * i0) / len;
        (i0 - wb, wb)
    } else {
        let wb = (u2 * i0 - i1) / len;
        (i0 - wb, wb)
    };
    (wa, wb)
}

/// One row of the unsymmetrized product-integration matrix.
fn assemble_row(i: usize, ext: &[f64], s: f64, gl: &(Vec<f64>, Vec<f64>)) -> Vec<f64> {
    let n = ext.len() - 2;
    let kappa = kernel_constant(s);
    let kappa_b = kappa * beta(s, 0.5 - s);
    let xi = ext[i + 1];
    let expo = 2.0 * s - 1.0;
    let local_lo = (i + 1).saturating_sub(LOCAL_CELLS).max(1);
    let local_hi = (i + 1 + LOCAL_CELLS).min(n);

    let regular: Vec<f64> = ext
        .iter()
        .map(|&y| regular_part(xi, y, s, kappa_b))
        .collect();
    let mut row = vec![0.0; n + 2];
    for c in 0..=n {
        let (a, b) = (ext[c], ext[c + 1]);
        let (wa, wb) = hat_moments(xi, a, b, expo, gl);
        if c >= local_lo && c < local_hi {
            let (ta, tb) = (
                tail_part(xi, a, s, kappa, kappa_b),
                tail_part(xi, b, s, kappa, kappa_b),
            );
            let (pa, pb) = hat_moments(xi, a, b, 0.0, gl);
            row[c] += kappa_b * wa - pa * ta;
            row[c + 1] += kappa_b * wb - pb * tb;
        } else {
            row[c] += wa * regular[c];
            row[c + 1] += wb * regular[c + 1];
        }
    }
    row[1..=n].to_vec()
}

/// Options for [`GreenOperator::assemble_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Largest accepted relative sup error of K(1) against the torsion function.
    pub max_torsion_error: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            max_torsion_error: 0.05,
        }
    }
}

/// Discrete solution operator g -> K g with K = S diag(mass), S symmetric.
///
/// The stiffness form A = S^(-1) is applied through a cached Cholesky factor
/// of S; the continuous energy norm of z is approximated by z^T A z.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    grid: Grid,
    s: f64,
    sym: DMatrix<f64>,
    kernel: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    torsion_error: f64,
    stiffness: OnceLock<DMatrix<f64>>,
}

/// Closed-form torsion function (1-x^2)^s / Gamma(1+2s).
pub fn torsion_exact(x: f64, s: f64) -> f64 {
    (1.0 - x * x).max(0.0).powf(s) / gamma(1.0 + 2.0 * s)
}

impl GreenOperator {
    pub fn assemble(grid: &Grid, s: f64) -> Result<Self> {
        Self::assemble_with(grid, s, AssemblyOptions::default())
    }

    pub fn assemble_with(grid: &Grid, s: f64, opts: AssemblyOptions) -> Result<Self> {
        if !(s > 0.0 && s < 0.5) {
            return Err(Error::config(format!(
                "order s must lie in (0, 1/2), got {s}"
            )));
        }
        let n = grid.len();
        let ext = grid.extended_nodes();
        let gl = gauss_legendre(GAUSS_POINTS);
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| assemble_row(i, &ext, s, &gl))
            .collect();
        let mass = grid.mass();
        let mut sym = DMatrix::<f64>::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for j in 0..n {
                sym[(i, j)] = row[j] / mass[j];
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        Self::from_symmetric(grid.clone(), s, sym, opts)
    }

    fn from_symmetric(
        grid: Grid,
        s: f64,
        sym: DMatrix<f64>,
        opts: AssemblyOptions,
    ) -> Result<Self> {
        let n = grid.len();
        if let Some(v) = sym.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Assembly(format!(
                "kernel entry {v} is negative or not finite"
            )));
        }
        let mass = DVector::from_column_slice(grid.mass());
        let kernel = DMatrix::from_fn(n, n, |i, j| sym[(i, j)] * mass[j]);
        let chol = Cholesky::new(sym.clone())
            .ok_or_else(|| Error::Assembly("symmetrized kernel is not positive definite".into()))?;
        let mut op = GreenOperator {
            grid,
            s,
            sym,
            kernel,
            chol,
            torsion_error: f64::NAN,
            stiffness: OnceLock::new(),
        };
        op.torsion_error = op.torsion_check();
        if !(op.torsion_error <= opts.max_torsion_error) {
            return Err(Error::Assembly(format!(
                "torsion self-check error {:e} exceeds bound {:e} (N = {}, s = {s})",
                op.torsion_error, opts.max_torsion_error, n
            )));
        }
        Ok(op)
    }

    /// Relative sup error of K(1) against the closed-form torsion function.
    fn torsion_check(&self) -> f64 {
        let one = GridFunction::constant(self.len(), 1.0);
        let t = self.apply(&one);
        let exact = GridFunction::from_fn(self.grid.nodes(), |x| torsion_exact(x, self.s));
        t.sup_distance(&exact) / exact.sup_norm()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn mass(&self) -> &[f64] {
        self.grid.mass()
    }

    /// Relative torsion error recorded at assembly.
    pub fn torsion_error(&self) -> f64 {
        self.torsion_error
    }

    /// The matrix K with (K g)_i = sum_j K_ij g_j.
    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// The symmetric factor S = K diag(mass)^(-1).
    pub fn symmetric_kernel(&self) -> &DMatrix<f64> {
        &self.sym
    }

    /// Explicit stiffness matrix A = S^(-1), computed on first use.
    pub fn stiffness(&self) -> &DMatrix<f64> {
        self.stiffness.get_or_init(|| {
            let a = self.chol.inverse();
            // enforce exact symmetry
            (&a + a.transpose()) * 0.5
        })
    }

    fn check(&self, g: &GridFunction) -> Result<()> {
        if g.len() != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                got: g.len(),
            });
        }
        Ok(())
    }

    /// K g.
    pub fn apply(&self, g: &GridFunction) -> GridFunction {
        assert_eq!(g.len(), self.len(), "grid function size mismatch");
        let v = &self.kernel * DVector::from_column_slice(g.values());
        GridFunction::new(v.as_slice().to_vec())
    }

    pub fn try_apply(&self, g: &GridFunction) -> Result<GridFunction> {
        self.check(g)?;
        Ok(self.apply(g))
    }

    /// A z = S^(-1) z.
    pub fn apply_stiffness(&self, z: &GridFunction) -> GridFunction {
        let v = self.chol.solve(&DVector::from_column_slice(z.values()));
        GridFunction::new(v.as_slice().to_vec())
    }

    /// Discrete energy norm squared, z^T A z.
    pub fn energy_norm_sq(&self, z: &GridFunction) -> f64 {
        let az = self.apply_stiffness(z);
        dot(z.values(), az.values())
    }

    /// Mass-weighted inner product sum_i mass_i u_i v_i.
    pub fn inner(&self, u: &GridFunction, v: &GridFunction) -> f64 {
        self.mass()
            .iter()
            .zip(u.values().iter().zip(v.values()))
            .map(|(m, (a, b))| m * a * b)
            .sum()
    }

    pub fn torsion(&self) -> GridFunction {
        self.apply(&GridFunction::constant(self.len(), 1.0))
    }

    /// Nodal indicator of [-radius, radius].
    pub fn indicator(&self, radius: f64) -> GridFunction {
        GridFunction::from_fn(
            self.grid.nodes(),
            |x| if x.abs() <= radius { 1.0 } else { 0.0 },
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constants built from K applied to indicator and constant forcings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OperatorConstants {
    /// (min over [-R, R] of K(chi_R))^(-1).
    pub m2: f64,
    /// (max of K(1))^(-1).
    pub m3: f64,
    /// max of K(chi_R).
    pub c1: f64,
    pub radius: f64,
    pub inradius: f64,
}

/// Computes the indicator and torsion constants for ball radius `radius`.
///
/// The minimum defining `m2` is taken over nodes of [-R, R]: K(chi_R) decays
/// like delta^s at the boundary, so a minimum over the whole interval would
/// vanish under refinement.
pub fn constants(op: &GreenOperator, radius: f64) -> Result<OperatorConstants> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(Error::domain(format!(
            "radius must lie in (0, 1), got {radius}"
        )));
    }
    let chi = op.indicator(radius);
    if chi.max() <= 0.0 {
        return Err(Error::domain(format!(
            "no grid node lies in [-{radius}, {radius}]"
        )));
    }
    let kchi = op.apply(&chi);
    let inner_min = op
        .grid()
        .nodes()
        .iter()
        .zip(kchi.values())
        .filter(|(x, _)| x.abs() <= radius)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let torsion_max = op.torsion().max();
    Ok(OperatorConstants {
        m2: 1.0 / inner_min,
        m3: 1.0 / torsion_max,
        c1: kchi.max(),
        radius,
        inradius: 1.0,
    })
}

/// An eigenvalue with its eigenfunction.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: GridFunction,
}

const EIGEN_MAX_ITERS: usize = 20_000;

/// Principal Dirichlet eigenpair by power iteration on K.
///
/// Iterates on the symmetric similar matrix D^(1/2) S D^(1/2); the returned
/// eigenfunction is positive with sup norm 1 and `value` = 1/mu for the top
/// eigenvalue mu of K.
pub fn principal_eigenpair(op: &GreenOperator) -> Result<EigenPair> {
    let n = op.len();
    let sqrt_mass: Vec<f64> = op.mass().iter().map(|m| m.sqrt()).collect();
    let b = DMatrix::from_fn(n, n, |i, j| sqrt_mass[i] * op.sym[(i, j)] * sqrt_mass[j]);
    let mut y = DVector::from_iterator(
        n,
        op.torsion()
            .values()
            .iter()
            .zip(&sqrt_mass)
            .map(|(t, m)| t * m),
    );
    y /= y.norm();
    let mut mu = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..EIGEN_MAX_ITERS {
        let by = &b * &y;
        mu = y.dot(&by);
        residual = (&by - &y * mu).norm();
        if residual <= 1e-14 * mu {
            break;
        }
        y = &by / by.norm();
    }
    if !(residual <= 1e-12 * mu) {
        return Err(Error::Convergence {
            what: "principal eigenpair power iteration",
            iterations: EIGEN_MAX_ITERS,
            residual,
        });
    }
    let mut phi: Vec<f64> = y.iter().zip(&sqrt_mass).map(|(v, m)| v / m).collect();
    let sign = if phi.iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut phi {
        *v *= sign / scale;
    }
    let vector = GridFunction::new(phi);
    if vector.min() <= 0.0 {
        return Err(Error::LinearAlgebra(
            "principal eigenfunction is not positive".into(),
        ));
    }
    Ok(EigenPair {
        value: 1.0 / mu,
        vector,
    })
}

/// Smallest eigenvalue of the pencil (A - p diag(mass v0^(p-1)), diag(mass)).
///
/// Works with C = D^(-1/2) A D^(-1/2) - p diag(v0^(p-1)) and runs shifted
/// inverse iteration, starting from shift 0 when C is positive definite and
/// from a Gershgorin lower bound otherwise.
pub fn linearized_eigenvalue(op: &GreenOperator, v0: &GridFunction, p: f64) -> Result<EigenPair> {
    if v0.len() != op.len() {
        return Err(Error::GridMismatch {
            expected: op.len(),
            got: v0.len(),
        });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "exponent p must lie in (0, 1), got {p}"
        )));
    }
    if v0.min() <= 0.0 {
        return Err(Error::domain("linearization point must be positive"));
    }
    let weight = v0.map(|v| p * v.powf(p - 1.0));
    pencil_smallest(op, weight.values())
}

/// Smallest eigenvalue of (A - diag(mass * weight), diag(mass)).
pub(crate) fn pencil_smallest(op: &GreenOperator, weight: &[f64]) -> Result<EigenPair> {
    let n = op.len();
    let a = op.stiffness();
    let inv_sqrt: Vec<f64> = op.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut c = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]);
    for i in 0..n {
        c[(i, i)] -= weight[i];
    }
    let mut shift = 0.0;
    let chol = match Cholesky::new(c.clone()) {
        Some(ch) => ch,
        None => {
            let gersh = (0..n)
                .map(|i| {
                    let off: f64 = (0..n).filter(|&j| j != i).map(|j| c[(i, j)].abs()).sum();
                    c[(i, i)] - off
                })
                .fold(f64::INFINITY, f64::min);
            shift = gersh - 1.0;
            let mut shifted = c.clone();
            for i in 0..n {
                shifted[(i, i)] -= shift;
            }
            Cholesky::new(shifted).ok_or_else(|| {
                Error::LinearAlgebra("shifted pencil is not positive definite".into())
            })?
        }
    };
    let mut y = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut value = f64::NAN;
    let mut residual = f64::INFINITY;
    for _ in 0..EIGEN_MAX_ITERS {
        let z = chol.solve(&y);
        let y_new = &z / z.norm();
        let cy = &c * &y_new;
        value = y_new.dot(&cy);
        residual = (&cy - &y_new * value).norm();
        y = y_new;
        if residual <= 1e-11 * value.abs().max(1.0) {
            break;
        }
    }
    if !(residual <= 1e-9 * value.abs().max(1.0)) {
        return Err(Error::Convergence {
            what: "pencil inverse iteration",
            iterations: EIGEN_MAX_ITERS,
            residual,
        });
    }
    let _ = shift;
    let mut psi: Vec<f64> = y.iter().zip(&inv_sqrt).map(|(v, m)| v * m).collect();
    let sign = if psi.iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let scale = psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut psi {
        *v *= sign / scale;
    }
    Ok(EigenPair {
        value,
        vector: GridFunction::new(psi),
    })
}

/// Rayleigh quotient (z^T A z - sum mass weight z^2) / sum mass z^2.
pub fn pencil_rayleigh(op: &GreenOperator, weight: &[f64], z: &GridFunction) -> f64 {
    let num = op.energy_norm_sq(z)
        - op.mass()
            .iter()
            .zip(weight)
            .zip(z.values())
            .map(|((m, w), v)| m * w * v * v)
            .sum::<f64>();
    num / op.inner(z, z)
}

const CACHE_MAGIC: &[u8; 8] = b"FSGKERN\0";
const CACHE_VERSION: u32 = 1;

/// File name of the cache entry for (N, s, grading).
pub fn cache_file_name(n: usize, s: f64, grading: Grading) -> String {
    format!(
        "kernel-{grading}-n{n}-s{:016x}-v{CACHE_VERSION}.bin",
        s.to_bits()
    )
}

/// Default cache directory under the system temporary directory.
pub fn default_cache_dir() -> PathBuf {
    std::env::temp_dir().join("fracsing-cache")
}

impl GreenOperator {
    /// Writes the symmetric kernel to `path` with a versioned header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.len();
        let mut buf = Vec::with_capacity(40 + 8 * n * n);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.push(self.grid.grading().code());
        buf.extend_from_slice(&[0u8; 3]);
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&self.s.to_le_bytes());
        for v in self.sym.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so concurrent readers never see a partial file
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Reads a kernel written by [`GreenOperator::save`] for the given grid and order.
    pub fn load(path: &Path, grid: &Grid, s: f64) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let n = grid.len();
        let bad = |msg: &str| Error::Format(format!("kernel cache {}: {msg}", path.display()));
        if bytes.len() != 32 + 8 * n * n {
            return Err(bad("unexpected size"));
        }
        if &bytes[..8] != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
        let u64_at = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
        if u32_at(8) != CACHE_VERSION {
            return Err(bad("version mismatch"));
        }
        if bytes[12] != grid.grading().code() || u64_at(16) != n as u64 || u64_at(24) != s.to_bits()
        {
            return Err(bad("key mismatch"));
        }
        let sym = DMatrix::from_iterator(
            n,
            n,
            bytes[32..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        );
        Self::from_symmetric(grid.clone(), s, sym, AssemblyOptions::default())
    }

    /// Loads from `dir` when a matching entry exists, otherwise assembles and stores.
    pub fn assemble_cached(grid: &Grid, s: f64, dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Self::assemble(grid, s);
        };
        let path = dir.join(cache_file_name(grid.len(), s, grid.grading()));
        if path.exists() {
            if let Ok(op) = Self::load(&path, grid, s) {
                return Ok(op);
            }
        }
        let op = Self::assemble(grid, s)?;
        // a failed cache write only costs a reassembly next time
        let _ = op.save(&path);
        Ok(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use approx::assert_relative_eq;

    fn op(n: usize) -> GreenOperator {
        GreenOperator::assemble(&make_grid(n, Grading::Chebyshev).unwrap(), 0.25).unwrap()
    }

    #[test]
    fn kernel_is_symmetric_and_vanishes_at_boundary() {
        let s = 0.25;
        assert_eq!(
            green_kernel(0.0, 0.5, s).unwrap(),
            green_kernel(0.5, 0.0, s).unwrap()
        );
        let near = green_kernel(1.0 - 1e-12, 0.2, s).unwrap();
        assert!(near < 1e-2 * green_kernel(0.5, 0.2, s).unwrap());
        assert!(green_kernel(0.1, 0.1, s).is_err());
        assert!(green_kernel(0.1, 1.0, s).is_err());
    }

    #[test]
    fn diagonal_limit_of_kernel() {
        let s = 0.3;
        let limit = kernel_constant(s) * beta(s, 0.5 - s);
        let x = 0.2;
        for h in [1e-10, 1e-12] {
            let v = green_kernel(x, x + h, s).unwrap() * h.powf(1.0 - 2.0 * s);
            assert_relative_eq!(v, limit, max_relative = 1e-3);
        }
    }

    #[test]
    fn tail_split_matches_kernel() {
        let s = 0.2;
        let kappa = kernel_constant(s);
        let kb = kappa * beta(s, 0.5 - s);
        for &(x, y) in &[(0.1, 0.3), (-0.9, -0.85), (0.99, 0.5)] {
            let g = green_kernel(x, y, s).unwrap();
            let split =
                kb * ((x - y) as f64).abs().powf(2.0 * s - 1.0) - tail_part(x, y, s, kappa, kb);
            assert_relative_eq!(g, split, max_relative = 1e-10);
        }
    }

    #[test]
    fn hat_moments_match_quadrature() {
        let gl = gauss_legendre(GAUSS_POINTS);
        let expo = -0.5;
        for &(x, a, b) in &[
            (0.0, 0.0, 0.1),
            (0.0, -0.2, 0.0),
            (0.0, 0.05, 0.1),
            (0.0, 0.3, 0.31),
        ] {
            let (wa, wb) = hat_moments(x, a, b, expo, &gl);
            // oracle: substitution u = t^2 removes the endpoint singularity
            let m = 20_000;
            let (mut qa, mut qb) = (0.0, 0.0);
            let far = if x <= a { a - x } else { x - b };
            let span = (far + (b - a)).sqrt() - far.sqrt();
            for k in 0..m {
                let t = far.sqrt() + span * (k as f64 + 0.5) / m as f64;
                let u = t * t;
                let y = if x <= a { x + u } else { x - u };
                let v = 2.0 * t * u.powf(expo) * span / m as f64;
                qa += v * (b - y) / (b - a);
                qb += v * (y - a) / (b - a);
            }
            assert_relative_eq!(wa, qa, max_relative = 1e-6);
            assert_relative_eq!(wb, qb, max_relative = 1e-6);
        }
    }

    #[test]
    fn assembled_kernel_properties() {
        let op = op(64);
        assert!(op.kernel_matrix().iter().all(|&v| v >= 0.0));
        let s = op.symmetric_kernel();
        assert_eq!(s, &s.transpose());
        assert!(op.torsion_error() < 5e-3);
        let zero = GridFunction::zeros(64);
        assert_eq!(op.apply(&zero).sup_norm(), 0.0);
        let g = GridFunction::from_fn(op.grid().nodes(), |x| 1.0 + x.sin());
        let kg = op.apply(&g);
        let back = op.apply(
            &op.apply_stiffness(&g)
                .zip_map(&GridFunction::new(op.mass().to_vec()), |a, m| a / m),
        );
        assert!(back.sup_distance(&g) < 1e-9);
        assert!(op.apply(&g.scale(-1.0)).sup_distance(&kg.scale(-1.0)) < 1e-15);
    }

    #[test]
    fn torsion_peaks_at_centre() {
        let op = op(64);
        let t = op.torsion();
        let mid = t.values().iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(mid, t[31].max(t[32]));
    }

    #[test]
    fn constants_are_consistent() {
        let op = op(64);
        let c = constants(&op, 0.5).unwrap();
        assert!(c.m2 >= c.m3 && c.m3 > 0.0);
        assert_relative_eq!(c.m3, gamma(1.5), max_relative = 5e-3);
        assert!(c.c1 >= 1.0 / c.m2);
        assert!(constants(&op, 1.0).is_err());
        let wide = constants(&op, 0.999_999).unwrap();
        let t = op.torsion();
        assert_relative_eq!(wide.m2, 1.0 / t.min(), max_relative = 1e-12);
    }

    #[test]
    fn eigenpair_relation() {
        let op = op(64);
        let e = principal_eigenpair(&op).unwrap();
        assert!(e.vector.min() > 0.0);
        assert_relative_eq!(e.vector.max(), 1.0);
        let k_phi = op.apply(&e.vector);
        assert!(k_phi.sup_distance(&e.vector.scale(1.0 / e.value)) < 1e-10);
        // zero weight reduces the pencil to the principal problem
        let tiny = linearized_eigenvalue(&op, &GridFunction::constant(64, 1.0), 1e-12).unwrap();
        assert_relative_eq!(tiny.value, e.value, max_relative = 1e-8);
        let w = vec![0.0; 64];
        assert_relative_eq!(
            pencil_rayleigh(&op, &w, &e.vector),
            e.value,
            max_relative = 1e-8
        );
    }

    #[test]
    fn cache_round_trip() {
        let grid = make_grid(16, Grading::Chebyshev).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = GreenOperator::assemble_cached(&grid, 0.25, Some(dir.path())).unwrap();
        let path = dir
            .path()
            .join(cache_file_name(16, 0.25, Grading::Chebyshev));
        assert!(path.exists());
        let second = GreenOperator::assemble_cached(&grid, 0.25, Some(dir.path())).unwrap();
        assert_eq!(first.symmetric_kernel(), second.symmetric_kernel());
        assert!(matches!(
            GreenOperator::load(&path, &grid, 0.3),
            Err(Error::Format(_))
        ));
        std::fs::write(&path, b"junk").unwrap();
        assert!(GreenOperator::load(&path, &grid, 0.25).is_err());
    }
}
