//! Exact linear algebra over the two-element field.
//!
//! Addition is XOR and multiplication is AND, so a matrix fits in one `u64`
//! per column and every operation below is a handful of word ops. Layout
//! algorithms walk columns (a column is the image of one input bit), which is
//! why storage is column-major.
//!
//! All solvers are deterministic: Gaussian elimination always pivots on the
//! first usable row, and free variables are fixed to zero, so among all
//! solutions with that pivot choice the returned one has minimal Hamming
//! weight.

use std::fmt;

use thiserror::Error;

/// Hard cap on matrix dimensions; one `u64` per column must suffice.
pub const MAX_BITS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("dimension mismatch: left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    DimensionMismatch {
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("matrix is not surjective: unit vector for row {row} is outside the column span")]
    NotSurjective { row: usize },
    #[error("block-diagonal structure violated at row {row}, column {col}")]
    NotBlockDiagonal { row: usize, col: usize },
    #[error("right-hand side column {col} is outside the column span")]
    UnsolvableColumn { col: usize },
    #[error("vectors are not linearly independent")]
    DependentBasis,
    #[error("ambient dimension mismatch: {lhs} vs {rhs}")]
    AmbientMismatch { lhs: usize, rhs: usize },
}

/// A vector in F2^len, bit `i` of `bits` being coordinate `i` (LSB first).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    len: usize,
    bits: u64,
}

impl BitVector {
    #[must_use]
    pub fn new(len: usize, bits: u64) -> Self {
        assert!(len <= MAX_BITS, "vector length {len} exceeds {MAX_BITS}");
        if len < MAX_BITS {
            assert!(bits < (1 << len), "value {bits:#x} does not fit in {len} bits");
        }
        Self { len, bits }
    }

    #[must_use]
    pub fn zero(len: usize) -> Self {
        Self::new(len, 0)
    }

    /// The standard basis vector e_i.
    #[must_use]
    pub fn unit(len: usize, i: usize) -> Self {
        assert!(i < len, "unit index {i} out of range for length {len}");
        Self::new(len, 1 << i)
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.len
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[must_use]
    pub fn value(&self) -> u64 {
        self.bits
    }

    #[must_use]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        (self.bits >> i) & 1 == 1
    }

    #[must_use]
    pub fn with_bit(&self, i: usize, value: bool) -> Self {
        assert!(i < self.len);
        let bits = if value { self.bits | (1 << i) } else { self.bits & !(1 << i) };
        Self { len: self.len, bits }
    }

    #[must_use]
    pub fn xor(&self, other: &Self) -> Self {
        assert_eq!(self.len, other.len, "xor of different lengths");
        Self { len: self.len, bits: self.bits ^ other.bits }
    }

    #[must_use]
    pub fn weight(&self) -> u32 {
        self.bits.count_ones()
    }

    #[must_use]
    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }
}

impl fmt::Display for BitVector {
    /// LSB-first bit string: coordinate 0 prints first, so `"101"` is 5.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

/// Parse an LSB-first bit string (the `Display` form).
pub fn parse_bit_vector(s: &str) -> Result<BitVector, String> {
    if s.len() > MAX_BITS {
        return Err(format!("bit string longer than {MAX_BITS}: {s:?}"));
    }
    let mut bits = 0u64;
    for (i, ch) in s.chars().enumerate() {
        match ch {
            '0' => {}
            '1' => bits |= 1 << i,
            _ => return Err(format!("invalid bit character {ch:?} in {s:?}")),
        }
    }
    Ok(BitVector::new(s.len(), bits))
}

/// A dense matrix over F2, stored one `u64` per column.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    col_bits: Vec<u64>,
}

impl BitMatrix {
    #[must_use]
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows <= MAX_BITS && cols <= MAX_BITS, "matrix {rows}x{cols} exceeds {MAX_BITS} bits");
        Self { rows, cols, col_bits: vec![0; cols] }
    }

    #[must_use]
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.col_bits[i] = 1 << i;
        }
        m
    }

    /// Build from column values, bit `r` of `cols[c]` being entry (r, c).
    #[must_use]
    pub fn from_cols(rows: usize, cols: &[u64]) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (c, &bits) in cols.iter().enumerate() {
            if rows < MAX_BITS {
                assert!(bits < (1 << rows), "column {c} does not fit in {rows} rows");
            }
            m.col_bits[c] = bits;
        }
        m
    }

    #[must_use]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.rows && col < self.cols);
        (self.col_bits[col] >> row) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        assert!(row < self.rows && col < self.cols);
        if value {
            self.col_bits[col] |= 1 << row;
        } else {
            self.col_bits[col] &= !(1 << row);
        }
    }

    #[must_use]
    pub fn col(&self, col: usize) -> BitVector {
        BitVector::new(self.rows, self.col_bits[col])
    }

    #[must_use]
    pub fn col_value(&self, col: usize) -> u64 {
        self.col_bits[col]
    }

    pub fn set_col(&mut self, col: usize, bits: u64) {
        if self.rows < MAX_BITS {
            assert!(bits < (1 << self.rows), "column value does not fit in {} rows", self.rows);
        }
        self.col_bits[col] = bits;
    }

    #[must_use]
    pub fn row_value(&self, row: usize) -> u64 {
        let mut bits = 0u64;
        for c in 0..self.cols {
            bits |= ((self.col_bits[c] >> row) & 1) << c;
        }
        bits
    }

    #[must_use]
    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            t.col_bits[r] = self.row_value(r);
        }
        t
    }

    #[must_use]
    pub fn is_identity(&self) -> bool {
        self.rows == self.cols && (0..self.cols).all(|c| self.col_bits[c] == 1 << c)
    }

    #[must_use]
    pub fn is_zero(&self) -> bool {
        self.col_bits.iter().all(|&c| c == 0)
    }

    /// Apply to a packed input vector: XOR of the columns selected by `x`.
    #[must_use]
    pub fn apply(&self, x: u64) -> u64 {
        if self.cols < MAX_BITS {
            assert!(x < (1 << self.cols), "input {x:#x} does not fit in {} columns", self.cols);
        }
        let mut acc = 0u64;
        let mut rest = x;
        while rest != 0 {
            let c = rest.trailing_zeros() as usize;
            acc ^= self.col_bits[c];
            rest &= rest - 1;
        }
        acc
    }

    /// Matrix product; column j of the result is `self.apply` of column j of `rhs`.
    pub fn mul(&self, rhs: &Self) -> Result<Self, Gf2Error> {
        if self.cols != rhs.rows {
            return Err(Gf2Error::DimensionMismatch {
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            out.col_bits[j] = self.apply(rhs.col_bits[j]);
        }
        Ok(out)
    }

    #[must_use]
    pub fn rank(&self) -> usize {
        rank_of(&self.col_bits)
    }

    /// Solve `self * X = rhs` column by column, minimizing the Hamming weight
    /// of each solution column.
    ///
    /// The pivot solution (free variables zero) is refined by searching the
    /// affine solution space: with k free variables there are 2^k candidates
    /// per column, and all of them are tried when k is at most 16. Beyond
    /// that the pivot solution is returned as is; the layouts this crate
    /// builds only ever have weight-one null vectors, for which the pivot
    /// solution is already minimal. A right-hand column outside the column
    /// span is an error naming that column.
    pub fn solve_min_weight(&self, rhs: &Self) -> Result<Self, Gf2Error> {
        if self.rows != rhs.rows {
            return Err(Gf2Error::DimensionMismatch {
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        // Row-major working copy of the augmented system [self | rhs].
        let mut lhs_rows: Vec<u64> = (0..self.rows).map(|r| self.row_value(r)).collect();
        let mut rhs_rows: Vec<u64> = (0..self.rows).map(|r| rhs.row_value(r)).collect();
        let mut pivots: Vec<(usize, usize)> = Vec::new();
        let mut next = 0usize;
        for col in 0..self.cols {
            let Some(p) = (next..self.rows).find(|&r| (lhs_rows[r] >> col) & 1 == 1) else {
                continue;
            };
            lhs_rows.swap(next, p);
            rhs_rows.swap(next, p);
            for r in 0..self.rows {
                if r != next && (lhs_rows[r] >> col) & 1 == 1 {
                    lhs_rows[r] ^= lhs_rows[next];
                    rhs_rows[r] ^= rhs_rows[next];
                }
            }
            pivots.push((next, col));
            next += 1;
        }
        for j in 0..rhs.cols {
            for &row in &rhs_rows[next..self.rows] {
                if (row >> j) & 1 == 1 {
                    return Err(Gf2Error::UnsolvableColumn { col: j });
                }
            }
        }
        let pivot_cols: u64 = pivots.iter().fold(0, |m, &(_, pc)| m | (1 << pc));
        let null_basis: Vec<u64> = (0..self.cols)
            .filter(|&c| (pivot_cols >> c) & 1 == 0)
            .map(|free| {
                let mut v = 1u64 << free;
                for &(pr, pc) in &pivots {
                    v |= ((lhs_rows[pr] >> free) & 1) << pc;
                }
                v
            })
            .collect();

        let mut x = Self::zeros(self.cols, rhs.cols);
        for j in 0..rhs.cols {
            let mut bits = 0u64;
            for &(pr, pc) in &pivots {
                bits |= ((rhs_rows[pr] >> j) & 1) << pc;
            }
            if null_basis.len() <= 16 {
                let mut best = bits;
                for combo in 1u64..1 << null_basis.len() {
                    let cand = null_basis
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| (combo >> i) & 1 == 1)
                        .fold(bits, |acc, (_, v)| acc ^ v);
                    if cand.count_ones() < best.count_ones() {
                        best = cand;
                    }
                }
                bits = best;
            }
            x.col_bits[j] = bits;
        }
        Ok(x)
    }

    /// A right inverse: `self * inv = I`. Exists iff the matrix is surjective.
    pub fn right_inverse(&self) -> Result<Self, Gf2Error> {
        self.solve_min_weight(&Self::identity(self.rows)).map_err(|e| match e {
            Gf2Error::UnsolvableColumn { col } => Gf2Error::NotSurjective { row: col },
            other => other,
        })
    }

    /// If `self` is exactly `blockdiag(m1, m2)`, return `m2`.
    ///
    /// The scan reports the first offending entry in row-major order.
    pub fn left_divide(&self, m1: &Self) -> Result<Self, Gf2Error> {
        if m1.rows > self.rows || m1.cols > self.cols {
            return Err(Gf2Error::DimensionMismatch {
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: m1.rows,
                rhs_cols: m1.cols,
            });
        }
        for row in 0..self.rows {
            for col in 0..self.cols {
                let expected = if row < m1.rows && col < m1.cols {
                    m1.get(row, col)
                } else if row < m1.rows || col < m1.cols {
                    false
                } else {
                    continue;
                };
                if self.get(row, col) != expected {
                    return Err(Gf2Error::NotBlockDiagonal { row, col });
                }
            }
        }
        let mut m2 = Self::zeros(self.rows - m1.rows, self.cols - m1.cols);
        for col in m1.cols..self.cols {
            m2.col_bits[col - m1.cols] = self.col_bits[col] >> m1.rows;
        }
        Ok(m2)
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                write!(f, "{}", u8::from(self.get(r, c)))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Rank of a list of packed vectors.
#[must_use]
pub fn rank_of(vectors: &[u64]) -> usize {
    let mut echelon: Vec<u64> = Vec::with_capacity(vectors.len());
    for &v in vectors {
        let mut v = v;
        for &e in &echelon {
            let high = 63 - e.leading_zeros() as usize;
            if (v >> high) & 1 == 1 {
                v ^= e;
            }
        }
        if v != 0 {
            echelon.push(v);
            echelon.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    echelon.len()
}

/// Whether `v` lies in the span of `vectors`.
#[must_use]
pub fn span_contains(vectors: &[u64], v: u64) -> bool {
    let mut echelon: Vec<u64> = Vec::new();
    for &u in vectors {
        let mut u = u;
        for &e in &echelon {
            let high = 63 - e.leading_zeros() as usize;
            if (u >> high) & 1 == 1 {
                u ^= e;
            }
        }
        if u != 0 {
            echelon.push(u);
            echelon.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    let mut v = v;
    for &e in &echelon {
        let high = 63 - e.leading_zeros() as usize;
        if (v >> high) & 1 == 1 {
            v ^= e;
        }
    }
    v == 0
}

/// An ordered, linearly independent set of nonzero vectors in F2^dim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    dim: usize,
    vectors: Vec<BitVector>,
}

impl Basis {
    pub fn new(dim: usize, vectors: Vec<BitVector>) -> Result<Self, Gf2Error> {
        assert!(dim <= MAX_BITS);
        for v in &vectors {
            if v.len() != dim {
                return Err(Gf2Error::AmbientMismatch { lhs: dim, rhs: v.len() });
            }
        }
        let packed: Vec<u64> = vectors.iter().map(BitVector::value).collect();
        if rank_of(&packed) != vectors.len() {
            return Err(Gf2Error::DependentBasis);
        }
        Ok(Self { dim, vectors })
    }

    #[must_use]
    pub fn empty(dim: usize) -> Self {
        Self { dim, vectors: Vec::new() }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    #[must_use]
    pub fn vectors(&self) -> &[BitVector] {
        &self.vectors
    }

    #[must_use]
    pub fn values(&self) -> Vec<u64> {
        self.vectors.iter().map(BitVector::value).collect()
    }

    #[must_use]
    pub fn contains(&self, v: &BitVector) -> bool {
        span_contains(&self.values(), v.value())
    }

    /// Extend to a full basis of F2^dim by greedily appending the lowest-index
    /// standard basis vectors that stay independent. The original vectors come
    /// first, in their original order.
    #[must_use]
    pub fn complete(&self) -> Self {
        let mut vectors = self.vectors.clone();
        let mut packed = self.values();
        for i in 0..self.dim {
            if packed.len() == self.dim {
                break;
            }
            let candidate = 1u64 << i;
            if !span_contains(&packed, candidate) {
                packed.push(candidate);
                vectors.push(BitVector::unit(self.dim, i));
            }
        }
        Self { dim: self.dim, vectors }
    }

    /// The vectors `complete` appends, without the originals.
    #[must_use]
    pub fn completion(&self) -> Vec<BitVector> {
        self.complete().vectors[self.vectors.len()..].to_vec()
    }
}

/// dim(span(u) ∩ span(v)) via the rank identity
/// dim(U) + dim(V) - dim(U + V).
pub fn span_intersection_dim(u: &Basis, v: &Basis) -> Result<usize, Gf2Error> {
    if u.dim() != v.dim() {
        return Err(Gf2Error::AmbientMismatch { lhs: u.dim(), rhs: v.dim() });
    }
    let mut joint = u.values();
    joint.extend(v.values());
    Ok(u.len() + v.len() - rank_of(&joint))
}
