//! Proximity operators and projections for the split lifted energy.
//!
//! Every operator here acts on the free planes `1..k` of a lifted field
//! ([`PlaneStack`]) or on a matching [`GradientField`]. Gradients are forward
//! differences with a replicate (Neumann) boundary: the difference leaving the
//! last row or column is zero.

use std::sync::Arc;

use rayon::prelude::*;
use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::field::{cdf_of, Histogram, LiftedShape, PlaneStack};
use crate::transport::{CostFamily, CostMatrix};

/// Residual bound accepted from the spectral coupling solve.
pub const COUPLING_RESIDUAL_TOL: f64 = 1e-10;
/// Stopping tolerance of the conjugate-gradient fallback.
pub const CG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TvKind {
    /// `ℓ1` norm of each gradient component.
    #[default]
    Anisotropic,
    /// Euclidean norm of the gradient vector per pixel and plane.
    Isotropic,
}

/// Weights of the three energy terms and the prox step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxWeights {
    pub lambda: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl ProxWeights {
    pub fn new(lambda: f64, nu: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("nu", nu), ("gamma", gamma)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { lambda, nu, gamma })
    }
}

/// Forward-difference gradient of each free plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    shape: LiftedShape,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn new(shape: LiftedShape, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if gx.len() != shape.free_len() || gy.len() != shape.free_len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient components need {} values each",
                shape.free_len()
            )));
        }
        if gx.iter().chain(&gy).any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("gradient has non-finite entries".into()));
        }
        Ok(Self { shape, gx, gy })
    }

    pub fn zeros(shape: LiftedShape) -> Self {
        Self {
            shape,
            gx: vec![0.0; shape.free_len()],
            gy: vec![0.0; shape.free_len()],
        }
    }

    pub fn shape(&self) -> LiftedShape {
        self.shape
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.gx, &mut self.gy)
    }

    pub fn l1_norm(&self) -> f64 {
        self.gx.iter().chain(&self.gy).map(|v| v.abs()).sum()
    }

    pub fn isotropic_norm(&self) -> f64 {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(a, b)| a.hypot(*b))
            .sum()
    }

    pub fn norm(&self, kind: TvKind) -> f64 {
        match kind {
            TvKind::Anisotropic => self.l1_norm(),
            TvKind::Isotropic => self.isotropic_norm(),
        }
    }

    pub fn max_abs_diff(&self, other: &GradientField) -> f64 {
        self.gx
            .iter()
            .zip(&other.gx)
            .chain(self.gy.iter().zip(&other.gy))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn shrink_scalar(a: f64, t: f64) -> f64 {
    (a.abs() - t).max(0.0) * a.signum()
}

/// Componentwise soft-thresholding `(|a| − t)₊ · sign(a)`.
pub fn shrink(a: &[f64], t: f64) -> Vec<f64> {
    a.iter().map(|&v| shrink_scalar(v, t)).collect()
}

pub(crate) fn grad_plane(u: &[f64], width: usize, height: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..height {
        let row = r * width;
        for c in 0..width {
            let i = row + c;
            gx[i] = if c + 1 < width { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if r + 1 < height { u[i + width] - u[i] } else { 0.0 };
        }
    }
}

/// Adjoint of [`grad_plane`] (a negative divergence).
pub(crate) fn grad_adjoint_plane(
    gx: &[f64],
    gy: &[f64],
    width: usize,
    height: usize,
    out: &mut [f64],
) {
    for r in 0..height {
        let row = r * width;
        for c in 0..width {
            let i = row + c;
            let mut v = 0.0;
            if c + 1 < width {
                v -= gx[i];
            }
            if c > 0 {
                v += gx[i - 1];
            }
            if r + 1 < height {
                v -= gy[i];
            }
            if r > 0 {
                v += gy[i - width];
            }
            out[i] = v;
        }
    }
}

pub fn gradient(stack: &PlaneStack) -> GradientField {
    let shape = stack.shape();
    let n = shape.pixels();
    let mut g = GradientField::zeros(shape);
    for l in 0..shape.free_planes() {
        let range = l * n..(l + 1) * n;
        grad_plane(
            &stack.data()[range.clone()],
            shape.width,
            shape.height,
            &mut g.gx[range.clone()],
            &mut g.gy[range],
        );
    }
    g
}

pub fn gradient_adjoint(g: &GradientField) -> PlaneStack {
    let shape = g.shape();
    let n = shape.pixels();
    let mut out = PlaneStack::zeros(shape);
    for l in 0..shape.free_planes() {
        let range = l * n..(l + 1) * n;
        grad_adjoint_plane(
            &g.gx[range.clone()],
            &g.gy[range.clone()],
            shape.width,
            shape.height,
            &mut out.data_mut()[range],
        );
    }
    out
}

/// Prox of `t·‖g‖₁` (anisotropic).
pub fn prox_l1(g: &GradientField, t: f64) -> GradientField {
    GradientField {
        shape: g.shape,
        gx: shrink(&g.gx, t),
        gy: shrink(&g.gy, t),
    }
}

/// Prox of `t·Σ|(gx, gy)|₂`, the isotropic group shrink.
pub fn prox_l1_isotropic(g: &GradientField, t: f64) -> GradientField {
    let mut out = g.clone();
    shrink_isotropic_in_place(&mut out.gx, &mut out.gy, t);
    out
}

pub(crate) fn shrink_in_place(v: &mut [f64], t: f64) {
    for a in v {
        *a = shrink_scalar(*a, t);
    }
}

pub(crate) fn shrink_isotropic_in_place(gx: &mut [f64], gy: &mut [f64], t: f64) {
    for (a, b) in gx.iter_mut().zip(gy.iter_mut()) {
        let norm = a.hypot(*b);
        let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
        *a *= scale;
        *b *= scale;
    }
}

/// Pool-adjacent-violators state, reused across columns.
#[derive(Default)]
pub(crate) struct Pav {
    // blocks as (sum, count, mean)
    blocks: Vec<(f64, usize, f64)>,
}

impl Pav {
    /// Projects free-plane values of one pixel onto `1 ≥ w₁ ≥ … ≥ w_{k-1} ≥ 0`:
    /// pool-adjacent-violators for the ordering, then a clamp to the box.
    pub(crate) fn project(&mut self, values: &mut [f64]) {
        if values.windows(2).all(|w| w[0] >= w[1])
            && values.first().is_none_or(|&v| v <= 1.0)
            && values.last().is_none_or(|&v| v >= 0.0)
        {
            return;
        }
        let blocks = &mut self.blocks;
        blocks.clear();
        for &v in values.iter() {
            let mut block = (v, 1usize, v);
            // merge while the previous block has a smaller mean
            while let Some(&(s, c, mean)) = blocks.last() {
                if mean >= block.2 {
                    break;
                }
                blocks.pop();
                let (sum, count) = (s + block.0, c + block.1);
                block = (sum, count, sum / count as f64);
            }
            blocks.push(block);
        }
        let mut pos = 0;
        for &(_, c, mean) in blocks.iter() {
            values[pos..pos + c].fill(mean.clamp(0.0, 1.0));
            pos += c;
        }
    }
}

/// Euclidean projection of the column `v − shift` onto the feasible column
/// set (`w₀ = 1`, `w_k = 0`, non-increasing, inside `[0,1]`). Both slices
/// hold `k + 1` entries; the endpoint entries of `v` and `shift` are ignored.
pub fn project_monotone_column(v: &[f64], shift: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 3 || shift.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "column of length {} with shift of length {}",
            v.len(),
            shift.len()
        )));
    }
    let k = v.len() - 1;
    let mut interior: Vec<f64> = (1..k).map(|l| v[l] - shift[l]).collect();
    Pav::default().project(&mut interior);
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    out.extend(interior);
    out.push(0.0);
    Ok(out)
}

/// Projects every pixel column of `stack` (after subtracting `shift`, if
/// given) onto the feasible set.
pub fn project_columns(stack: &mut PlaneStack, shift: Option<&[f64]>) {
    let shape = stack.shape();
    project_columns_raw(stack.data_mut(), shape, shift);
}

/// [`project_columns`] on a raw plane-major buffer of free planes.
pub(crate) fn project_columns_raw(data: &mut [f64], shape: LiftedShape, shift: Option<&[f64]>) {
    let n = shape.pixels();
    let m = shape.free_planes();
    let mut pav = Pav::default();
    // gather a block of pixels at a time so the plane reads stay contiguous
    const BLOCK: usize = 64;
    let mut cols = vec![0.0; BLOCK * m];
    for start in (0..n).step_by(BLOCK) {
        let len = BLOCK.min(n - start);
        for l in 0..m {
            let row = &data[l * n + start..l * n + start + len];
            match shift {
                Some(s) => {
                    let srow = &s[l * n + start..l * n + start + len];
                    for (j, (v, sv)) in row.iter().zip(srow).enumerate() {
                        cols[j * m + l] = v - sv;
                    }
                }
                None => {
                    for (j, v) in row.iter().enumerate() {
                        cols[j * m + l] = *v;
                    }
                }
            }
        }
        for col in cols[..len * m].chunks_exact_mut(m) {
            pav.project(col);
        }
        for l in 0..m {
            for (j, v) in data[l * n + start..l * n + start + len].iter_mut().enumerate() {
                *v = cols[j * m + l];
            }
        }
    }
}

/// Solves `(I + ∇ᵀ∇) u = rhs` plane by plane. The Neumann forward-difference
/// Laplacian is diagonal in the type-II cosine basis, so the primary path is
/// two DCTs and a pointwise division; a conjugate-gradient solver is kept as
/// a fallback and cross-check.
#[derive(Clone)]
pub struct CouplingSolver {
    width: usize,
    height: usize,
    dct_row: Arc<dyn TransformType2And3<f64>>,
    dct_col: Arc<dyn TransformType2And3<f64>>,
    // 1 / (1 + eigenvalues of ∇ᵀ∇), column-major to match the transposed pass
    inv_denom: Vec<f64>,
    scratch_len: usize,
}

impl std::fmt::Debug for CouplingSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CouplingSolver")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl CouplingSolver {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = DctPlanner::new();
        let dct_row = planner.plan_dct2(width);
        let dct_col = planner.plan_dct2(height);
        let eig = |i: usize, n: usize| 2.0 - 2.0 * (std::f64::consts::PI * i as f64 / n as f64).cos();
        let mut inv_denom = vec![0.0; width * height];
        for c in 0..width {
            for r in 0..height {
                inv_denom[c * height + r] = 1.0 / (1.0 + eig(c, width) + eig(r, height));
            }
        }
        let scratch_len = dct_row.get_scratch_len().max(dct_col.get_scratch_len());
        Self {
            width,
            height,
            dct_row,
            dct_col,
            inv_denom,
            scratch_len,
        }
    }

    fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// `out = (I + ∇ᵀ∇) u` for one plane.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.pixels();
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        grad_plane(u, self.width, self.height, &mut gx, &mut gy);
        grad_adjoint_plane(&gx, &gy, self.width, self.height, out);
        for (o, v) in out.iter_mut().zip(u) {
            *o += v;
        }
    }

    pub fn residual(&self, u: &[f64], rhs: &[f64]) -> f64 {
        let mut au = vec![0.0; self.pixels()];
        self.apply(u, &mut au);
        au.iter()
            .zip(rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Spectral solve of one plane in place.
    pub fn solve_spectral(&self, plane: &mut [f64]) {
        let mut work = vec![0.0; self.pixels()];
        let mut scratch = vec![0.0; self.scratch_len];
        self.solve_spectral_with(plane, &mut work, &mut scratch);
    }

    fn solve_spectral_with(&self, plane: &mut [f64], transposed: &mut [f64], scratch: &mut [f64]) {
        let (w, h) = (self.width, self.height);
        for row in plane.chunks_exact_mut(w) {
            self.dct_row.process_dct2_with_scratch(row, scratch);
        }
        transpose(plane, transposed, h, w);
        for (col, inv) in transposed.chunks_exact_mut(h).zip(self.inv_denom.chunks_exact(h)) {
            self.dct_col.process_dct2_with_scratch(col, scratch);
            for (v, d) in col.iter_mut().zip(inv) {
                *v *= d;
            }
            self.dct_col.process_dct3_with_scratch(col, scratch);
        }
        transpose(transposed, plane, w, h);
        let scale = 4.0 / (w * h) as f64;
        for row in plane.chunks_exact_mut(w) {
            self.dct_row.process_dct3_with_scratch(row, scratch);
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Conjugate-gradient solve of one plane, starting from zero.
    pub fn solve_cg(&self, rhs: &[f64], max_iter: usize) -> Result<Vec<f64>> {
        let n = self.pixels();
        let mut u = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for _ in 0..max_iter {
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= CG_TOL * scale {
                return Ok(u);
            }
            self.apply(&p, &mut ap);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        let residual = self.residual(&u, rhs);
        if residual <= CG_TOL * scale {
            Ok(u)
        } else {
            Err(Error::NotConverged { residual })
        }
    }

    /// Projection of `(phi, g)` onto `{(u, v) : v = ∇u}`, writing `u` into
    /// `phi_out` and `∇u` into `g_out`.
    pub(crate) fn project_into(
        &self,
        phi: &[f64],
        gx: &[f64],
        gy: &[f64],
        phi_out: &mut [f64],
        gx_out: &mut [f64],
        gy_out: &mut [f64],
    ) -> Result<()> {
        let n = self.pixels();
        let (w, h) = (self.width, self.height);
        phi_out
            .par_chunks_mut(n)
            .zip(gx_out.par_chunks_mut(n))
            .zip(gy_out.par_chunks_mut(n))
            .enumerate()
            .map_init(
                || (vec![0.0; n], vec![0.0; n], vec![0.0; self.scratch_len]),
                |(rhs, work, scratch), (l, ((u, ox), oy))| {
                    let range = l * n..(l + 1) * n;
                    grad_adjoint_plane(&gx[range.clone()], &gy[range.clone()], w, h, rhs);
                    for (v, p) in rhs.iter_mut().zip(&phi[range]) {
                        *v += p;
                    }
                    u.copy_from_slice(rhs);
                    self.solve_spectral_with(u, work, scratch);
                    grad_plane(u, w, h, ox, oy);
                    // residual of (I + ∇ᵀ∇)u = rhs, reusing the gradient
                    grad_adjoint_plane(ox, oy, w, h, work);
                    let mut residual = 0.0f64;
                    let mut scale = 1.0f64;
                    for ((a, v), b) in work.iter().zip(u.iter()).zip(rhs.iter()) {
                        residual = residual.max((a + v - b).abs());
                        scale = scale.max(b.abs());
                    }
                    if residual > COUPLING_RESIDUAL_TOL * scale {
                        let cg = self.solve_cg(rhs, 10 * n + 100)?;
                        u.copy_from_slice(&cg);
                        grad_plane(u, w, h, ox, oy);
                    }
                    Ok(())
                },
            )
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    pub fn project(
        &self,
        phi: &PlaneStack,
        g: &GradientField,
    ) -> Result<(PlaneStack, GradientField)> {
        let shape = check_pair(phi, g)?;
        if shape.width != self.width || shape.height != self.height {
            return Err(Error::ShapeMismatch("solver built for another size".into()));
        }
        let mut out = PlaneStack::zeros(shape);
        let mut gout = GradientField::zeros(shape);
        let (ox, oy) = gout.parts_mut();
        self.project_into(phi.data(), g.gx(), g.gy(), out.data_mut(), ox, oy)?;
        Ok((out, gout))
    }

    /// Same projection using only conjugate gradients.
    pub fn project_cg(
        &self,
        phi: &PlaneStack,
        g: &GradientField,
    ) -> Result<(PlaneStack, GradientField)> {
        let shape = check_pair(phi, g)?;
        let n = shape.pixels();
        let adj = gradient_adjoint(g);
        let mut out = PlaneStack::zeros(shape);
        for l in 1..shape.k {
            let rhs: Vec<f64> = phi
                .plane(l)
                .iter()
                .zip(adj.plane(l))
                .map(|(a, b)| a + b)
                .collect();
            let u = self.solve_cg(&rhs, 10 * n + 100)?;
            out.plane_mut(l).copy_from_slice(&u);
        }
        let gout = gradient(&out);
        Ok((out, gout))
    }
}

/// `dst[c * rows + r] = src[r * cols + c]`.
fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn check_pair(phi: &PlaneStack, g: &GradientField) -> Result<LiftedShape> {
    if phi.shape() != g.shape() {
        return Err(Error::ShapeMismatch(format!(
            "planes {:?} vs gradient {:?}",
            phi.shape(),
            g.shape()
        )));
    }
    Ok(phi.shape())
}

/// Euclidean projection onto the graph of the gradient operator.
pub fn project_gradient_coupling(
    phi: &PlaneStack,
    g: &GradientField,
) -> Result<(PlaneStack, GradientField)> {
    let shape = check_pair(phi, g)?;
    CouplingSolver::new(shape.width, shape.height).project(phi, g)
}

/// Prox of `t · W1(μ^φ, prior)` for the cost `|γ₁ − γ₂|`.
///
/// The `W1` term only sees the mean of each plane, so each plane is shifted
/// by a constant: the mean moves toward `1 − F_prior(g_l)` by at most
/// `t·Δγ / N` and lands on it when closer than that.
pub fn prox_wasserstein(phi: &PlaneStack, prior: &Histogram, t: f64) -> Result<PlaneStack> {
    let mut out = phi.clone();
    prox_wasserstein_in_place(&mut out, prior, t)?;
    Ok(out)
}

/// [`prox_wasserstein`] with an explicit cost; only the `ℓ1` cost has a
/// closed form.
pub fn prox_wasserstein_with_cost(
    phi: &PlaneStack,
    prior: &Histogram,
    cost: &CostMatrix,
    t: f64,
) -> Result<PlaneStack> {
    if cost.family() != CostFamily::Power(1.0) {
        return Err(Error::UnsupportedCost(
            "the Wasserstein prox has a closed form only for |γ₁ − γ₂|".into(),
        ));
    }
    prior.grid().ensure_same(&cost.grid())?;
    prox_wasserstein(phi, prior, t)
}

pub(crate) fn prox_wasserstein_in_place(
    phi: &mut PlaneStack,
    prior: &Histogram,
    t: f64,
) -> Result<()> {
    let shape = phi.shape();
    prox_wasserstein_raw(phi.data_mut(), shape, prior, t)
}

/// Wasserstein prox on a raw plane-major buffer of free planes.
pub(crate) fn prox_wasserstein_raw(
    data: &mut [f64],
    shape: LiftedShape,
    prior: &Histogram,
    t: f64,
) -> Result<()> {
    if prior.grid().k() != shape.k {
        return Err(Error::GridMismatch(prior.grid().k(), shape.k));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("prox weight {t} must be >= 0")));
    }
    let pixels = shape.pixels();
    let n = pixels as f64;
    let cdf = cdf_of(prior);
    let thresh = t * prior.grid().step() / n;
    for l in 1..shape.k {
        let plane = &mut data[(l - 1) * pixels..l * pixels];
        let mean = plane.iter().sum::<f64>() / n;
        let target_gap = 1.0 - mean - cdf.values()[l - 1];
        let c = target_gap - shrink_scalar(target_gap, thresh);
        if c != 0.0 {
            for v in plane.iter_mut() {
                *v += c;
            }
        }
    }
    Ok(())
}
