//! Sobol low-discrepancy sequence, Gray-code construction.
//!
//! Supports up to [`MAX_DIMS`] dimensions with standard primitive-polynomial
//! direction numbers, which covers the uncertainty-box sizes the learning
//! loop is practical for. Points are random-access: `point(i)` is computed
//! directly from the Gray code of `i`, so candidate pools can be sliced out
//! of the sequence at any offset without replaying state.

pub const MAX_DIMS: usize = 21;

/// (s, a, m[..s]) per dimension after the first (van der Corput) dimension.
const DIRECTIONS: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

const BITS: usize = 32;

#[derive(Debug, Clone)]
pub struct SobolSeq {
    dirs: Vec<[u32; BITS]>,
}

#[derive(Debug, thiserror::Error)]
#[error("sobol sequence supports at most {MAX_DIMS} dimensions, requested {0}")]
pub struct TooManyDims(pub usize);

impl SobolSeq {
    pub fn new(dims: usize) -> Result<Self, TooManyDims> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(TooManyDims(dims));
        }
        let mut dirs = Vec::with_capacity(dims);
        // first dimension: v_k = 2^(31-k)
        let mut v0 = [0u32; BITS];
        for (k, v) in v0.iter_mut().enumerate() {
            *v = 1 << (31 - k);
        }
        dirs.push(v0);
        for d in 1..dims {
            let (s, a, m) = DIRECTIONS[d - 1];
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..BITS {
                if k < s {
                    v[k] = m[k] << (31 - k);
                } else {
                    let mut val = v[k - s] ^ (v[k - s] >> s);
                    for j in 1..s {
                        if (a >> (s - 1 - j)) & 1 == 1 {
                            val ^= v[k - j];
                        }
                    }
                    v[k] = val;
                }
            }
            dirs.push(v);
        }
        Ok(SobolSeq { dirs })
    }

    pub fn dims(&self) -> usize {
        self.dirs.len()
    }

    /// The `index`-th point of the sequence in `[0, 1)^dims`.
    pub fn point(&self, index: u32) -> Vec<f64> {
        let gray = index ^ (index >> 1);
        self.dirs
            .iter()
            .map(|v| {
                let mut acc = 0u32;
                let mut g = gray;
                let mut k = 0;
                while g != 0 {
                    if g & 1 == 1 {
                        acc ^= v[k];
                    }
                    g >>= 1;
                    k += 1;
                }
                acc as f64 / 4294967296.0
            })
            .collect()
    }

    /// `count` consecutive points starting at `start`.
    pub fn points(&self, start: u32, count: usize) -> Vec<Vec<f64>> {
        (0..count as u32).map(|i| self.point(start + i)).collect()
    }
}
