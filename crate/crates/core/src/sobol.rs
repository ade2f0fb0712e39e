//! Sobol low-discrepancy sequence with a random digital shift.
//!
//! Direction numbers follow the Joe–Kuo construction for the first
//! [`MAX_DIM`] dimensions: dimension 0 is the van der Corput sequence, every
//! further dimension is defined by a primitive polynomial over GF(2) and
//! its initial odd direction integers.

use rand::Rng;

const BITS: usize = 32;

/// `(degree s, polynomial coefficients a, initial direction integers m)`.
const PRIMITIVES: &[(u32, u32, &[u32])] = &[
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
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
];

/// Highest supported dimension.
pub const MAX_DIM: usize = PRIMITIVES.len() + 1;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = PRIMITIVES[dim - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Gray-code Sobol generator over `[0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// Unshifted sequence. The first point is the origin.
    pub fn new(dim: usize) -> Option<Self> {
        if dim == 0 || dim > MAX_DIM {
            return None;
        }
        Some(Self {
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            shift: vec![0; dim],
            index: 0,
        })
    }

    /// Sequence XOR-shifted by random integers drawn from `rng`; the shift
    /// preserves the net structure.
    pub fn shifted<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Option<Self> {
        let mut s = Self::new(dim)?;
        for v in s.shift.iter_mut() {
            *v = rng.random();
        }
        Some(s)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let out = self
            .state
            .iter()
            .zip(&self.shift)
            .map(|(x, s)| (x ^ s) as f64 / 4_294_967_296.0)
            .collect();
        // Gray-code update: flip the direction number of the lowest zero bit.
        let c = (!self.index).trailing_zeros() as usize;
        if c < BITS {
            for (x, d) in self.state.iter_mut().zip(&self.directions) {
                *x ^= d[c];
            }
        }
        self.index += 1;
        out
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

/// `n` low-discrepancy points in `[0, 1)^dim`, falling back to uniform
/// random draws for dimensions beyond [`MAX_DIM`].
pub fn unit_points<R: Rng + ?Sized>(dim: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    match Sobol::shifted(dim, rng) {
        Some(mut s) => s.take_points(n),
        None => (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect(),
    }
}
