//! Rate-1/2 quasi-cyclic LDPC code with a systematic encoder and a
//! normalized min-sum decoder.
//!
//! Codewords are laid out as `[info bits | parity bits]`. LLRs use the
//! convention `log P(bit = 0) / P(bit = 1)`: positive values favor zero and
//! the hard decision is `1` iff the LLR is negative.

use std::path::Path;

use crate::error::{Error, Result};

/// Default 8×16 base matrix. Entries are circulant shifts (reduced modulo
/// the lifting size), `-1` marks an all-zero block. Columns 0..8 carry
/// information, columns 8..16 form a dual-diagonal parity part. The shifts
/// leave the Tanner graph free of 4-cycles for every lifting size in
/// 24..=128 that the simulator uses.
pub const DEFAULT_BASE: [[i32; 16]; 8] = [
    [-1, 112, 60, 124, -1, -1, -1, -1, 1, 0, -1, -1, -1, -1, -1, -1],
    [-1, -1, -1, -1, 92, 19, -1, 27, -1, 0, 0, -1, -1, -1, -1, -1],
    [27, -1, -1, 1, -1, 126, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1],
    [-1, 27, -1, -1, 15, -1, 38, -1, -1, -1, -1, 0, 0, -1, -1, -1],
    [108, 117, 54, 127, -1, -1, -1, -1, 0, -1, -1, -1, 0, 0, -1, -1],
    [-1, -1, 38, -1, 107, -1, 60, -1, -1, -1, -1, -1, -1, 0, 0, -1],
    [119, -1, -1, -1, -1, 17, 89, 19, -1, -1, -1, -1, -1, -1, 0, 0],
    [15, -1, -1, -1, 67, -1, -1, 112, 1, -1, -1, -1, -1, -1, -1, 0],
];

/// Lifting size of the default code: n = 1024, k = 512.
pub const DEFAULT_LIFTING: usize = 64;

pub const DEFAULT_LLR_CLIP: f64 = 20.0;
pub const DEFAULT_MAX_ITERS: usize = 20;
pub const MIN_SUM_SCALE: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct QcLdpcCode {
    base: Vec<Vec<i32>>,
    lifting: usize,
    n: usize,
    k: usize,
    /// Check-node adjacency in CSR form.
    check_start: Vec<usize>,
    edge_var: Vec<u32>,
    /// Variable-node adjacency: edge indices per variable.
    var_start: Vec<usize>,
    var_edges: Vec<u32>,
    /// Row `r` is the set of info bits whose XOR gives parity bit `r`.
    parity_rows: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub info_bits: Vec<u8>,
    pub codeword: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl QcLdpcCode {
    pub fn default_code() -> Self {
        Self::with_lifting(DEFAULT_LIFTING).expect("default base matrix is valid")
    }

    /// Default base matrix at another lifting size (n = 16·z).
    pub fn with_lifting(lifting: usize) -> Result<Self> {
        let base = DEFAULT_BASE.iter().map(|r| r.to_vec()).collect();
        Self::from_base(base, lifting)
    }

    /// Expands `base` with circulants of size `lifting`. The last `rows`
    /// block columns must form an invertible parity part.
    pub fn from_base(base: Vec<Vec<i32>>, lifting: usize) -> Result<Self> {
        let rows = base.len();
        let cols = base.first().map_or(0, |r| r.len());
        if rows == 0 || cols <= rows || base.iter().any(|r| r.len() != cols) {
            return Err(Error::contract(
                "ldpc",
                format!("base matrix must be rectangular with more columns than rows, got {rows}×{cols}"),
            ));
        }
        if lifting == 0 {
            return Err(Error::contract("ldpc", "lifting size must be positive"));
        }
        if base.iter().flatten().any(|&s| s < -1) {
            return Err(Error::contract("ldpc", "shift entries must be >= -1"));
        }
        let z = lifting;
        let m = rows * z;
        let n = cols * z;
        let k = n - m;

        let mut check_vars: Vec<Vec<u32>> = vec![Vec::new(); m];
        for (br, row) in base.iter().enumerate() {
            for (bc, &s) in row.iter().enumerate() {
                if s < 0 {
                    continue;
                }
                let s = s as usize % z;
                for i in 0..z {
                    check_vars[br * z + i].push((bc * z + (i + s) % z) as u32);
                }
            }
        }
        let mut check_start = Vec::with_capacity(m + 1);
        let mut edge_var = Vec::new();
        check_start.push(0);
        for vars in &mut check_vars {
            vars.sort_unstable();
            edge_var.extend_from_slice(vars);
            check_start.push(edge_var.len());
        }
        let mut per_var: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (e, &v) in edge_var.iter().enumerate() {
            per_var[v as usize].push(e as u32);
        }
        let mut var_start = Vec::with_capacity(n + 1);
        let mut var_edges = Vec::with_capacity(edge_var.len());
        var_start.push(0);
        for edges in per_var {
            var_edges.extend(edges);
            var_start.push(var_edges.len());
        }

        let parity_rows = Self::solve_parity(&check_start, &edge_var, m, k)?;
        Ok(QcLdpcCode {
            base,
            lifting,
            n,
            k,
            check_start,
            edge_var,
            var_start,
            var_edges,
            parity_rows,
        })
    }

    /// Gauss-Jordan over GF(2) on `[B | A]` where `H = [A | B]`, yielding
    /// `B⁻¹A` so that `parity = B⁻¹A · info`.
    fn solve_parity(check_start: &[usize], edge_var: &[u32], m: usize, k: usize) -> Result<Vec<Vec<u64>>> {
        // augmented row: m bits for B, then k bits for A
        let width = words(m + k);
        let mut rows: Vec<Vec<u64>> = (0..m)
            .map(|r| {
                let mut bits = vec![0u64; width];
                for &v in &edge_var[check_start[r]..check_start[r + 1]] {
                    let v = v as usize;
                    let col = if v >= k { v - k } else { m + v };
                    bits[col / 64] ^= 1 << (col % 64);
                }
                bits
            })
            .collect();
        for col in 0..m {
            let pivot = (col..m)
                .find(|&r| rows[r][col / 64] >> (col % 64) & 1 == 1)
                .ok_or_else(|| Error::contract("ldpc", "parity part of H is singular over GF(2)"))?;
            rows.swap(col, pivot);
            let pivot_row = rows[col].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != col && row[col / 64] >> (col % 64) & 1 == 1 {
                    row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
                }
            }
        }
        // Extract the A-part bits of each (now identity-pivoted) row.
        Ok(rows
            .iter()
            .map(|row| {
                let mut out = vec![0u64; words(k)];
                for j in 0..k {
                    let col = m + j;
                    if row[col / 64] >> (col % 64) & 1 == 1 {
                        out[j / 64] |= 1 << (j % 64);
                    }
                }
                out
            })
            .collect())
    }

    /// Reads a whitespace-separated integer grid (one base row per line,
    /// `#` comments allowed).
    pub fn parse_base(text: &str) -> Result<Vec<Vec<i32>>> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<i32>().map_err(|_| Error::Config {
                        line: lineno + 1,
                        detail: format!("not an integer shift: `{s}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn load(path: &Path, lifting: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_base(Self::parse_base(&text)?, lifting)
    }

    pub fn base(&self) -> &[Vec<i32>] {
        &self.base
    }

    pub fn lifting(&self) -> usize {
        self.lifting
    }

    /// Codeword length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Information length.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn num_checks(&self) -> usize {
        self.n - self.k
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k {
            return Err(Error::contract(
                "ldpc encode",
                format!("expected {} info bits, got {}", self.k, info.len()),
            ));
        }
        let mut packed = vec![0u64; words(self.k)];
        for (i, &b) in info.iter().enumerate() {
            if b > 1 {
                return Err(Error::contract("ldpc encode", format!("bit {i} is {b}, not 0/1")));
            }
            packed[i / 64] |= (b as u64) << (i % 64);
        }
        let mut cw = Vec::with_capacity(self.n);
        cw.extend_from_slice(info);
        cw.extend(self.parity_rows.iter().map(|row| {
            let ones: u32 = row.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            (ones & 1) as u8
        }));
        Ok(cw)
    }

    /// True iff `H · cᵀ = 0`.
    pub fn syndrome_ok(&self, codeword: &[u8]) -> bool {
        codeword.len() == self.n
            && (0..self.num_checks()).all(|c| {
                self.edge_var[self.check_start[c]..self.check_start[c + 1]]
                    .iter()
                    .fold(0u8, |acc, &v| acc ^ codeword[v as usize])
                    == 0
            })
    }

    /// Normalized min-sum flooding decoder with early exit on a zero
    /// syndrome. Inputs are clipped to `±clip`; the input slice is not
    /// modified.
    pub fn decode(&self, llrs: &[f64], max_iters: usize, clip: f64) -> Result<DecodeOutcome> {
        if llrs.len() != self.n {
            return Err(Error::contract(
                "ldpc decode",
                format!("expected {} LLRs, got {}", self.n, llrs.len()),
            ));
        }
        if max_iters == 0 {
            return Err(Error::contract("ldpc decode", "max_iters must be at least 1"));
        }
        let channel: Vec<f64> = llrs
            .iter()
            .map(|&l| if l.is_nan() { 0.0 } else { l.clamp(-clip, clip) })
            .collect();
        let num_edges = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&v| channel[v as usize]).collect();
        let mut c2v = vec![0.0f64; num_edges];
        let mut total = channel.clone();
        let mut hard = vec![0u8; self.n];

        for iter in 1..=max_iters {
            for c in 0..self.num_checks() {
                let edges = self.check_start[c]..self.check_start[c + 1];
                let mut sign_prod = 1.0f64;
                let (mut min1, mut min2, mut argmin) = (f64::INFINITY, f64::INFINITY, usize::MAX);
                for e in edges.clone() {
                    let m = v2c[e];
                    if m < 0.0 {
                        sign_prod = -sign_prod;
                    }
                    let a = m.abs();
                    if a < min1 {
                        min2 = min1;
                        min1 = a;
                        argmin = e;
                    } else if a < min2 {
                        min2 = a;
                    }
                }
                for e in edges {
                    let mag = if e == argmin { min2 } else { min1 };
                    let sign = if v2c[e] < 0.0 { -sign_prod } else { sign_prod };
                    c2v[e] = MIN_SUM_SCALE * sign * mag;
                }
            }
            for v in 0..self.n {
                let edges = &self.var_edges[self.var_start[v]..self.var_start[v + 1]];
                let sum: f64 = channel[v] + edges.iter().map(|&e| c2v[e as usize]).sum::<f64>();
                total[v] = sum;
                for &e in edges {
                    v2c[e as usize] = sum - c2v[e as usize];
                }
                hard[v] = (sum < 0.0) as u8;
            }
            if self.syndrome_ok(&hard) {
                return Ok(DecodeOutcome {
                    info_bits: hard[..self.k].to_vec(),
                    codeword: hard,
                    converged: true,
                    iterations: iter,
                });
            }
        }
        Ok(DecodeOutcome {
            info_bits: hard[..self.k].to_vec(),
            codeword: hard,
            converged: false,
            iterations: max_iters,
        })
    }

    /// Number of length-4 cycles in the Tanner graph.
    pub fn count_four_cycles(&self) -> usize {
        let mut count = 0;
        let m = self.num_checks();
        let mut seen = vec![u32::MAX; self.n];
        for c1 in 0..m {
            let vars1 = &self.edge_var[self.check_start[c1]..self.check_start[c1 + 1]];
            for &v in vars1 {
                seen[v as usize] = c1 as u32;
            }
            for c2 in c1 + 1..m {
                let shared = self.edge_var[self.check_start[c2]..self.check_start[c2 + 1]]
                    .iter()
                    .filter(|&&v| seen[v as usize] == c1 as u32)
                    .count();
                count += shared * shared.saturating_sub(1) / 2;
            }
        }
        count
    }
}
