//! Dense NCHW tensors and the PXT1 interchange format.
//!
//! PXT1 layout (all little-endian):
//!
//! | offset | size      | content                         |
//! |--------|-----------|---------------------------------|
//! | 0      | 4         | magic `b"PXT1"`                 |
//! | 4      | 16        | `N`, `C`, `H`, `W` as `u32`     |
//! | 20     | 4·N·C·H·W | `f32` payload in NCHW order     |

use std::fmt;
use std::fs;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::path::Path;

use num_traits::{Float, FromPrimitive};

use crate::rng::{Prng, RngSeed};
use crate::{Error, Result};

pub const PXT_MAGIC: &[u8; 4] = b"PXT1";
const PXT_HEADER_LEN: usize = 20;

/// Floating point element type. `f32` is the working precision, `f64` is
/// used for gradient checking.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in a float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one sample (`C·H·W`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    fn checked_len(&self) -> Option<usize> {
        self.n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Dims {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Dims { n, c, h, w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Uniform on `[-1, 1)`.
    Uniform,
    /// Standard normal.
    Normal,
}

/// Rank-4 row-major tensor; `(n, c, h, w)` lives at `((n·C + c)·H + h)·W + w`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        let dims = dims.into();
        Tensor {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn filled(dims: impl Into<Dims>, value: T) -> Self {
        let dims = dims.into();
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        if dims.len() != data.len() {
            return Err(Error::shape(
                "tensor construction",
                format!("{} elements for dims {}", dims.len(), dims),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let dims = dims.into();
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.dims.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.dims.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous `C·H·W` slice for sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.dims.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.dims.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copies sample `n` into a standalone `(1, C, H, W)` tensor.
    pub fn sample_tensor(&self, n: usize) -> Tensor<T> {
        Tensor {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.sample(n).to_vec(),
        }
    }

    /// Concatenates equally shaped single-sample tensors along N.
    pub fn stack(samples: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Precondition("cannot stack zero tensors".into()))?
            .dims;
        let mut data = Vec::with_capacity(first.len() * samples.len());
        let mut n = 0;
        for s in samples {
            if (s.dims.c, s.dims.h, s.dims.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("stack", first, s.dims));
            }
            n += s.dims.n;
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor {
            dims: Dims::new(n, first.c, first.h, first.w),
            data,
        })
    }

    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims.spatial();
        let start = (n * self.dims.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: T) -> Tensor<T> {
        self.map(|v| v * alpha)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().expect("real to f64")).expect("f64 to real"))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.dims, other.dims, "max_abs_diff on different dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Tensor<T>> {
        let dims = dims.into();
        if dims.len() != self.data.len() {
            return Err(Error::shape("reshape", self.dims, dims));
        }
        Ok(Tensor {
            dims,
            data: self.data,
        })
    }
}

/// Deterministic tensor for fixed `(dims, seed, dist)`. Elements are drawn in
/// NCHW order, one generator call (two for normal) per element.
pub fn random_tensor<T: Real>(dims: impl Into<Dims>, seed: RngSeed, dist: Distribution) -> Tensor<T> {
    let dims = dims.into();
    let mut rng = Prng::new(seed);
    let data = (0..dims.len())
        .map(|_| {
            let v = match dist {
                Distribution::Uniform => rng.uniform(-1.0, 1.0),
                Distribution::Normal => rng.normal(),
            };
            T::lit(v)
        })
        .collect();
    Tensor { dims, data }
}

impl Tensor<f32> {
    pub fn to_pxt_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PXT_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(PXT_MAGIC);
        for d in [self.dims.n, self.dims.c, self.dims.h, self.dims.w] {
            let d = u32::try_from(d).expect("PXT1 dimensions are 32-bit");
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a PXT1 image; `origin` is used only for error messages.
    pub fn from_pxt_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != PXT_MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_path_buf(),
            });
        }
        let corrupt = |detail: String| Error::Corrupt {
            path: origin.to_path_buf(),
            detail,
        };
        if bytes.len() < PXT_HEADER_LEN {
            return Err(corrupt(format!(
                "header truncated ({} of {PXT_HEADER_LEN} bytes)",
                bytes.len()
            )));
        }
        let mut d = [0usize; 4];
        for (i, slot) in d.iter_mut().enumerate() {
            let at = 4 + 4 * i;
            *slot = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        let dims = Dims::new(d[0], d[1], d[2], d[3]);
        let count = dims
            .checked_len()
            .ok_or_else(|| corrupt(format!("dims {dims} overflow")))?;
        let payload = &bytes[PXT_HEADER_LEN..];
        if payload.len() as u128 != count as u128 * 4 {
            return Err(corrupt(format!(
                "payload is {} bytes, dims {dims} need {}",
                payload.len(),
                count as u128 * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }
}

pub fn read_pxt(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_pxt_bytes(&bytes, path)
}

pub fn write_pxt(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_pxt_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smallest_tensor_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pxt");
        let t = Tensor::<f32>::zeros((1, 1, 1, 1));
        write_pxt(&t, &path).unwrap();
        let back = read_pxt(&path).unwrap();
        assert_eq!(back.dims(), Dims::new(1, 1, 1, 1));
        assert_eq!(back.data(), &[0.0]);
        assert_eq!(fs::read(&path).unwrap().len(), 24);
    }

    #[test]
    fn empty_tensor_is_a_valid_file() {
        let t = Tensor::<f32>::zeros((0, 0, 0, 0));
        let bytes = t.to_pxt_bytes();
        assert_eq!(bytes.len(), 20);
        let back = Tensor::from_pxt_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn counting_tensor_obeys_indexing_law() {
        let dims = Dims::new(2, 3, 4, 5);
        let t = Tensor::from_vec(dims, (0..dims.len()).map(|i| i as f32).collect()).unwrap();
        let back = Tensor::from_pxt_bytes(&t.to_pxt_bytes(), Path::new("mem")).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        let expected = (((n * 3 + c) * 4 + h) * 5 + w) as f32;
                        assert_eq!(back.get(n, c, h, w), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let t = random_tensor::<f32>((1, 12, 5, 5), RngSeed(1), Distribution::Uniform);
        let bytes = t.to_pxt_bytes();
        let err = Tensor::from_pxt_bytes(&bytes[..bytes.len() - 4], Path::new("x.pxt")).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            Tensor::from_pxt_bytes(&extra, Path::new("x.pxt")),
            Err(Error::Corrupt { .. })
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = Tensor::<f32>::zeros((1, 1, 1, 1)).to_pxt_bytes();
        bytes[3] = b'2';
        assert!(matches!(
            Tensor::from_pxt_bytes(&bytes, Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            Tensor::from_pxt_bytes(b"PX", Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn missing_file_carries_path() {
        let err = read_pxt("/nonexistent/dir/t.pxt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/t.pxt"));
    }

    #[test]
    fn edge_case_floats_round_trip_bit_exact() {
        let values = [
            -0.0f32,
            f32::MIN_POSITIVE / 2.0,
            -f32::MIN_POSITIVE / 8.0,
            f32::from_bits(1),
            -f32::MAX,
            f32::EPSILON,
            -1.5e-42,
        ];
        let t = Tensor::from_vec((1, 1, 1, values.len()), values.to_vec()).unwrap();
        let back = Tensor::from_pxt_bytes(&t.to_pxt_bytes(), Path::new("mem")).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn random_tensor_is_deterministic() {
        let a = random_tensor::<f32>((1, 4, 8, 8), RngSeed(9), Distribution::Normal);
        let b = random_tensor::<f32>((1, 4, 8, 8), RngSeed(9), Distribution::Normal);
        let c = random_tensor::<f32>((1, 4, 8, 8), RngSeed(10), Distribution::Normal);
        assert_eq!(a, b);
        assert!(a.data().iter().zip(c.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn uniform_sample_mean_is_centered() {
        let t = random_tensor::<f64>((1, 1, 100, 100), RngSeed(2024), Distribution::Uniform);
        let mean = t.data().iter().sum::<f64>() / t.data().len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(t.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    proptest! {
        #[test]
        fn pxt_round_trip_is_identity(
            dims in (0usize..3, 0usize..4, 0usize..5, 0usize..5),
            bits in proptest::collection::vec(any::<u32>(), 300),
        ) {
            let dims = Dims::from(dims);
            let data: Vec<f32> = bits.iter().cycle().take(dims.len()).map(|&b| f32::from_bits(b)).collect();
            let t = Tensor { dims, data };
            let bytes = t.to_pxt_bytes();
            let back = Tensor::from_pxt_bytes(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.dims(), dims);
            prop_assert_eq!(back.to_pxt_bytes(), bytes);
        }
    }
}
