//! Four-directional 2D selective scan with learned fusion.
//!
//! A `(H, W, C)` grid is linearized four ways:
//!
//! | direction | order |
//! |-----------|-------|
//! | 0 | row-major |
//! | 1 | reverse of 0 |
//! | 2 | column-major |
//! | 3 | reverse of 2 |
//!
//! Each sequence is scanned, re-indexed back to grid order, and the four grids
//! are blended with `softmax(logits)`.
//!
//! [`iss2d_forward`] with shared SSM parameters takes a shortcut: the `Δ`, `B`,
//! `C` projections are per token, so they are computed once on the grid and
//! the kernel scans all four orders over them, writing results straight back
//! in grid order. [`iss2d_literal`] performs the expand, scan, merge steps one
//! by one and is kept as the reference.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ssm::{scan_op, selective_scan, ScanMode, SsmVars};
use crate::tensor::{cst, Float, Tensor};

pub const DIRECTIONS: usize = 4;

/// For each direction, `order[t]` is the row-major grid position visited at
/// step `t`.
pub fn traversal_orders(h: usize, w: usize) -> [Vec<usize>; DIRECTIONS] {
    let row: Vec<usize> = (0..h * w).collect();
    let col: Vec<usize> = (0..w).flat_map(|x| (0..h).map(move |y| y * w + x)).collect();
    let row_rev = row.iter().rev().copied().collect();
    let col_rev = col.iter().rev().copied().collect();
    [row, row_rev, col, col_rev]
}

fn grid_dims<T: Float>(grid: &Var<'_, T>) -> Result<(usize, usize, usize)> {
    match grid.shape()[..] {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::shape("iss2d", s, &[0, 0, 0])),
    }
}

/// `(H, W, C)` → `(4, L, C)`, sequence `d` in traversal order `d`.
pub fn scan_expand<'t, T: Float>(grid: Var<'t, T>) -> Result<Var<'t, T>> {
    let (h, w, c) = grid_dims(&grid)?;
    let orders = traversal_orders(h, w);
    let index: Vec<usize> = orders
        .iter()
        .flat_map(|o| o.iter().flat_map(move |&p| p * c..(p + 1) * c))
        .collect();
    grid.gather(Arc::new(index), &[DIRECTIONS, h * w, c])
}

/// `softmax(logits)`, shape `(4)`.
pub fn fusion_weights<'t, T: Float>(logits: Var<'t, T>) -> Result<Var<'t, T>> {
    if logits.shape() != [DIRECTIONS] {
        return Err(Error::shape("fusion_weights", &logits.shape(), &[DIRECTIONS]));
    }
    logits.softmax(0)
}

/// Weights used when fusion is not learned: `softmax(0) = 1/4` each.
pub fn uniform_weights<T: Float>(tape: &Tape<T>) -> Var<'_, T> {
    tape.constant(Tensor::full(&[DIRECTIONS], cst(0.25)))
}

/// `(4, L, C)` traversal-ordered outputs → `(H, W, C)` weighted grid.
pub fn scan_merge<'t, T: Float>(ys: Var<'t, T>, weights: Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let s = ys.shape();
    let l = h * w;
    if s.len() != 3 || s[0] != DIRECTIONS || s[1] != l {
        return Err(Error::shape("scan_merge", &s, &[DIRECTIONS, l, 0]));
    }
    let c = s[2];
    let orders = traversal_orders(h, w);
    // Slab d, grid position p, comes from step t with order_d[t] = p.
    let mut index = vec![0usize; DIRECTIONS * l * c];
    for (d, o) in orders.iter().enumerate() {
        for (t, &p) in o.iter().enumerate() {
            for k in 0..c {
                index[(d * l + p) * c + k] = (d * l + t) * c + k;
            }
        }
    }
    let grids = ys.gather(Arc::new(index), &[DIRECTIONS, h, w, c])?;
    grids.mix(weights)
}

/// SSM parameters for a module: one set shared by all directions, or one per
/// direction.
#[derive(Clone, Copy)]
pub enum DirectionParams<'a, 't, T: Float> {
    Shared(&'a SsmVars<'t, T>),
    PerDirection(&'a [SsmVars<'t, T>; DIRECTIONS]),
}

impl<'t, T: Float> DirectionParams<'_, 't, T> {
    fn get(&self, d: usize) -> &SsmVars<'t, T> {
        match self {
            DirectionParams::Shared(p) => p,
            DirectionParams::PerDirection(ps) => &ps[d],
        }
    }
}

/// Expand, scan each direction, merge. `weights` is the `(4)` fusion vector.
pub fn iss2d_literal<'t, T: Float>(
    grid: Var<'t, T>,
    params: DirectionParams<'_, 't, T>,
    weights: Var<'t, T>,
    mode: ScanMode,
) -> Result<Var<'t, T>> {
    let (h, w, c) = grid_dims(&grid)?;
    let seqs = scan_expand(grid)?;
    let mut ys = Vec::with_capacity(DIRECTIONS);
    for d in 0..DIRECTIONS {
        let seq = seqs.slice(0, d, d + 1)?.reshape(&[h * w, c])?;
        ys.push(selective_scan(seq, params.get(d), mode)?.reshape(&[1, h * w, c])?);
    }
    let stacked = Var::concat(&ys, 0)?;
    scan_merge(stacked, weights, h, w)
}

/// Same map as [`iss2d_literal`], evaluated without materializing the four
/// re-ordered sequences.
pub fn iss2d_forward<'t, T: Float>(
    grid: Var<'t, T>,
    params: DirectionParams<'_, 't, T>,
    weights: Var<'t, T>,
    mode: ScanMode,
) -> Result<Var<'t, T>> {
    let (h, w, c) = grid_dims(&grid)?;
    let l = h * w;
    let tokens = grid.reshape(&[l, c])?;
    let orders = traversal_orders(h, w);
    let ys = match params {
        DirectionParams::Shared(p) => {
            let proj = p.project(tokens)?;
            scan_op(tokens, &proj, p.d_skip, Arc::new(orders.to_vec()), mode)?
        }
        DirectionParams::PerDirection(ps) => {
            let mut parts = Vec::with_capacity(DIRECTIONS);
            for (p, o) in ps.iter().zip(orders) {
                let proj = p.project(tokens)?;
                parts.push(scan_op(tokens, &proj, p.d_skip, Arc::new(vec![o]), mode)?);
            }
            Var::concat(&parts, 0)?
        }
    };
    ys.reshape(&[DIRECTIONS, h, w, c])?.mix(weights)
}

#[cfg(test)]
mod tests;
